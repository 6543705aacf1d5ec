"""Grammar-guided, neural-guided Monte-Carlo tree search for equation
discovery: derive candidate equations from a context-free grammar, score
them against tabular data, and optionally steer the search with a small
policy/value network."""

from importlib import resources

from .backend import BACKEND
from .dataset import TabularDataset, load_csv, save_csv, scale_y, sort_split
from .expression import (
    EvaluationError,
    SearchState,
    SyntaxTree,
    evaluate,
    from_prefix,
    initial_state,
    metrics,
    to_prefix,
)
from .fitting import FitConfig, fit_constants
from .grammar import (
    Grammar,
    GrammarError,
    IllegalActionError,
    apply_rule,
    legal_actions,
    load_grammar,
    parse_grammar,
    sample_rule,
)
from .mcts import MctsConfig, puct_score, run_mcts, sim_schedule
from .reward import RewardConfig, compute_reward, relative_rmse

__version__ = "0.1.0"


def packaged_grammar(name):
    """Load one of the bundled grammars: "a", "b", or "c"."""
    ref = resources.files("eqsearch.data") / f"grammar_{name.lower()}.cfg"
    return parse_grammar(ref.read_text(encoding="utf-8"))
