"""Search guidance: priors P(s,a) and values V(s).

The baseline is a uniform prior over legal actions.  The trainable model
is a small policy/value network: optional dataset encoder (flat-mlp over
the first rows, or a permutation-invariant pooled set encoder), optional
tree encoder (prefix tokens one-hot, padded to a fixed position count),
a shared fully connected trunk, a policy head over all rule ids and a
tanh value head.  Everything runs in float64.

At prediction time the policy is always masked to the legal actions and
renormalized.  Inside the training loss the mask is applied only when a
tree encoder is present; without one the network cannot know which rules
are legal, and its unmasked prior keeps mass on impossible rules.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from .dataset import scale_y
from .expression import SearchState, SyntaxTree, initial_state
from .grammar import Kind

DATASET_ENCODERS = ("none", "flat-mlp", "pooled-set")
TREE_ENCODERS = ("none", "padded-onehot-mlp")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GuidanceConfig:
    dataset_encoder: str = "none"
    tree_encoder: str = "none"
    hidden: int = 64
    embed_dim: int = 32
    n_rows: int = 100  # flat-mlp input rows (pad / truncate)
    max_positions: int = 25  # tree-encoder token positions
    lr: float = 1e-3

    def __post_init__(self):
        if self.dataset_encoder not in DATASET_ENCODERS:
            raise ValueError(f"unknown dataset encoder {self.dataset_encoder!r}")
        if self.tree_encoder not in TREE_ENCODERS:
            raise ValueError(f"unknown tree encoder {self.tree_encoder!r}")


@dataclass(frozen=True)
class ReplayRecord:
    prefix: str  # state tokens, space separated
    dataset: object  # TabularDataset
    legal_mask: np.ndarray  # bool over rule ids
    target_policy: np.ndarray  # distribution over rule ids
    target_value: float
    source: str  # mcts | supervised | uniform


class ReplayBuffer:
    def __init__(self, capacity=10000):
        self.records = collections.deque(maxlen=capacity)

    def __len__(self):
        return len(self.records)

    @property
    def capacity(self):
        return self.records.maxlen

    def append(self, records):
        if isinstance(records, ReplayRecord):
            records = [records]
        self.records.extend(records)

    def sample(self, n, rng):
        if len(self.records) < n:
            raise ValueError(f"buffer holds {len(self.records)} records, need {n}")
        idx = rng.choice(len(self.records), size=n, replace=False)
        return [self.records[i] for i in idx]


class UniformGuidance:
    """Static uniform prior over legal actions, value 0."""

    def predict(self, state, dataset, legal_mask):
        legal_mask = np.asarray(legal_mask, dtype=bool)
        total = legal_mask.sum()
        prior = legal_mask / total if total else legal_mask.astype(np.float64)
        return prior, 0.0

    def prior_fn(self, dataset):
        return None  # run_mcts interprets None as uniform


def _mlp(n_in, hidden, n_out):
    return nn.Sequential(
        nn.Linear(n_in, hidden), nn.ReLU(), nn.Linear(hidden, n_out)
    ).double()


class GuidanceModel(nn.Module):
    """Policy/value network over (dataset, partial tree) inputs."""

    def __init__(self, grammar, config=GuidanceConfig(), n_vars=None):
        super().__init__()
        self.grammar = grammar
        self.config = config
        self.n_rules = grammar.n_rules
        self.n_vars = n_vars if n_vars is not None else max(grammar.n_variables, 1)
        self.vocab = list(grammar.symbols)  # token name -> one-hot position

        parts = 0
        row_dim = self.n_vars + 1  # x columns plus scaled y
        if config.dataset_encoder == "flat-mlp":
            self.ds_net = _mlp(config.n_rows * row_dim, config.hidden, config.embed_dim)
            parts += config.embed_dim
        elif config.dataset_encoder == "pooled-set":
            self.ds_net = _mlp(row_dim, config.hidden, config.embed_dim)
            parts += config.embed_dim
        else:
            self.ds_net = None
        if config.tree_encoder == "padded-onehot-mlp":
            token_dim = len(self.vocab) + 1  # one-hot plus a padding slot
            self.tree_net = _mlp(
                config.max_positions * token_dim, config.hidden, config.embed_dim
            )
            parts += config.embed_dim
        else:
            self.tree_net = None
        if parts == 0:
            # constant input: predictions do not depend on (state, dataset)
            self.const_embed = nn.Parameter(torch.zeros(config.embed_dim, dtype=torch.float64))
            parts = config.embed_dim
        else:
            self.const_embed = None

        self.trunk = nn.Sequential(
            nn.Linear(parts, config.hidden), nn.ReLU(),
            nn.Linear(config.hidden, config.hidden), nn.ReLU(),
        ).double()
        self.policy_head = nn.Linear(config.hidden, self.n_rules).double()
        self.value_head = nn.Linear(config.hidden, 1).double()

    # ---- input encoding -------------------------------------------------

    def _dataset_rows(self, ds):
        rows = np.column_stack([ds.xs[:, : self.n_vars], scale_y(ds)])
        if rows.shape[1] < self.n_vars + 1:  # dataset narrower than the model
            pad = np.zeros((rows.shape[0], self.n_vars + 1 - rows.shape[1]))
            rows = np.column_stack([rows[:, :-1], pad, rows[:, -1]])
        return torch.from_numpy(np.ascontiguousarray(rows, dtype=np.float64))

    def embed_dataset(self, ds):
        if self.config.dataset_encoder == "none":
            raise ValueError("model has no dataset encoder")
        rows = self._dataset_rows(ds)
        if self.config.dataset_encoder == "pooled-set":
            return self.ds_net(rows).mean(dim=0)
        flat = torch.zeros(self.config.n_rows, rows.shape[1], dtype=torch.float64)
        take = min(self.config.n_rows, rows.shape[0])
        flat[:take] = rows[:take]
        return self.ds_net(flat.reshape(-1))

    def _tree_input(self, prefix_tokens):
        token_dim = len(self.vocab) + 1
        onehot = torch.zeros(
            self.config.max_positions, token_dim, dtype=torch.float64
        )
        lookup = {name: i for i, name in enumerate(self.vocab)}
        for pos, name in enumerate(prefix_tokens[: self.config.max_positions]):
            onehot[pos, lookup.get(name, token_dim - 1)] = 1.0
        for pos in range(len(prefix_tokens), self.config.max_positions):
            onehot[pos, token_dim - 1] = 1.0  # padding slot
        return onehot.reshape(-1)

    def _embed(self, prefix_tokens, ds):
        parts = []
        if self.ds_net is not None:
            parts.append(self.embed_dataset(ds))
        if self.tree_net is not None:
            parts.append(self.tree_net(self._tree_input(prefix_tokens)))
        if not parts:
            parts.append(self.const_embed)
        return torch.cat(parts) if len(parts) > 1 else parts[0]

    def forward(self, prefix_tokens, ds):
        h = self.trunk(self._embed(prefix_tokens, ds))
        return self.policy_head(h), torch.tanh(self.value_head(h))[0]

    # ---- inference ------------------------------------------------------

    @torch.no_grad()
    def predict(self, state, dataset, legal_mask):
        """Masked prior over rule ids plus the critic's value."""
        tokens = state.prefix.split() if isinstance(state, SearchState) else list(state)
        logits, value = self.forward(tokens, dataset)
        mask = torch.from_numpy(np.asarray(legal_mask, dtype=bool))
        masked = torch.where(mask, logits, torch.tensor(-torch.inf, dtype=torch.float64))
        prior = torch.softmax(masked, dim=0).numpy()
        return prior, float(value)

    def prior_fn(self, dataset):
        def fn(state, legal_mask):
            return self.predict(state, dataset, legal_mask)[0]
        return fn


def make_optimizer(model, lr=None):
    return torch.optim.Adam(model.parameters(), lr=lr or model.config.lr)


def train_step(model, batch, optimizer):
    """One policy+value update; returns {policy_ce, value_mse, total}."""
    if not batch:
        raise ValueError("empty batch")
    mask_in_loss = model.tree_net is not None
    policy_ce = torch.zeros((), dtype=torch.float64)
    value_mse = torch.zeros((), dtype=torch.float64)
    for rec in batch:
        logits, value = model.forward(rec.prefix.split(), rec.dataset)
        if mask_in_loss:
            mask = torch.from_numpy(np.asarray(rec.legal_mask, dtype=bool))
            logits = torch.where(
                mask, logits, torch.tensor(-torch.inf, dtype=torch.float64)
            )
        log_probs = torch.log_softmax(logits, dim=0)
        target = torch.from_numpy(np.asarray(rec.target_policy, dtype=np.float64))
        finite = torch.isfinite(log_probs)
        policy_ce = policy_ce - (target[finite] * log_probs[finite]).sum()
        value_mse = value_mse + (value - rec.target_value) ** 2
    policy_ce = policy_ce / len(batch)
    value_mse = value_mse / len(batch)
    total = policy_ce + value_mse
    if not torch.isfinite(total):
        raise RuntimeError(f"non-finite training loss {float(total)}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return {
        "policy_ce": float(policy_ce.detach()),
        "value_mse": float(value_mse.detach()),
        "total": float(total.detach()),
    }


# ---- training targets ---------------------------------------------------


class UnderivableTreeError(ValueError):
    pass


def derivation_rules(tree, grammar):
    """Rule ids of the leftmost derivation producing `tree`, or raise."""
    target = [s.name for s in tree.tokens]

    def search(state, applied):
        # state is a list of token names; expand its leftmost nonterminal
        if len(state) > len(target):
            return None
        for i, name in enumerate(state):
            sym = grammar.symbols.get(name)
            if sym is not None and sym.kind is Kind.NONTERMINAL:
                if state[:i] != target[:i]:
                    return None
                for rule_id in grammar.rule_index[name]:
                    rhs = [s.name for s in grammar.rules[rule_id].rhs]
                    found = search(state[:i] + rhs + state[i + 1:], applied + [rule_id])
                    if found is not None:
                        return found
                return None
        return applied if state == target else None

    result = search([grammar.start.name], [])
    if result is None:
        raise UnderivableTreeError(f"{' '.join(target)!r} is not derivable")
    return result


def make_supervised_targets(tree, grammar, dataset, max_nodes=25,
                            max_depth=None):
    """One ReplayRecord per step of the tree's leftmost derivation, with a
    one-hot policy target and value 1 (the tree fits its own data)."""
    from .grammar import legal_actions

    rules = derivation_rules(tree, grammar)
    records = []
    state = initial_state(grammar, dataset.id)
    for rule_id in rules:
        mask = legal_actions(grammar, state, max_nodes, max_depth)
        one_hot = np.zeros(grammar.n_rules)
        one_hot[rule_id] = 1.0
        records.append(ReplayRecord(
            prefix=state.prefix,
            dataset=dataset,
            legal_mask=mask,
            target_policy=one_hot,
            target_value=1.0,
            source="supervised",
        ))
        state = state.expand(grammar.rules[rule_id].rhs)
    return records


def mcts_targets_filter(records, reward):
    """Below reward -0.9 (strictly), replace the visit-count targets with a
    uniform distribution over the legal actions."""
    if reward >= -0.9:
        return list(records)
    out = []
    for rec in records:
        uniform = rec.legal_mask / rec.legal_mask.sum()
        out.append(replace(rec, target_policy=uniform, source=rec.source))
    return out


# ---- contrastive task ---------------------------------------------------


@dataclass
class ContrastiveBatch:
    halves: list  # TabularDataset halves from sort_split
    embeddings: torch.Tensor = None
    similarity: torch.Tensor = None
    target: torch.Tensor = None


def contrastive_targets(halves):
    """Binary positive-pair matrix: same source dataset or same skeleton."""
    n = len(halves)
    t = torch.zeros(n, n, dtype=torch.float64)
    for i in range(n):
        for j in range(n):
            same_source = halves[i].id == halves[j].id
            same_skeleton = (
                halves[i].source_skeleton is not None
                and halves[i].source_skeleton == halves[j].source_skeleton
            )
            t[i, j] = 1.0 if (same_source or same_skeleton) else 0.0
    return t


def contrastive_loss(model, halves, lam=0.1, diagnostics=None):
    """BCE on shifted cosine similarities: positives pulled to 1, negatives
    (scaled by `lam`) pushed to 0.  Off-diagonal pairs only."""
    if len({h.id for h in halves}) < 2:
        raise ValueError("need halves from at least 2 source datasets")
    z = torch.stack([model.embed_dataset(h) for h in halves])
    norms = z.norm(dim=1, keepdim=True)
    zero_norm = norms.squeeze(1) == 0
    if bool(zero_norm.any()) and diagnostics is not None:
        diagnostics["zero_norm_embeddings"] = (
            diagnostics.get("zero_norm_embeddings", 0) + int(zero_norm.sum())
        )
    safe = z / torch.where(norms == 0, torch.ones_like(norms), norms)
    cos = safe @ safe.T  # zero-norm rows yield cosine 0 against everything
    s = (cos + 1.0) / 2.0
    t = contrastive_targets(halves)
    off_diag = ~torch.eye(len(halves), dtype=torch.bool)
    pos = off_diag & (t == 1.0)
    neg = off_diag & (t == 0.0)
    eps = 1e-12
    loss = torch.zeros((), dtype=torch.float64)
    if pos.any():
        loss = loss - torch.log(s[pos].clamp(min=eps)).mean()
    if neg.any():
        loss = loss - lam * torch.log((1.0 - s[neg]).clamp(min=eps)).mean()
    return loss


# ---- checkpointing ------------------------------------------------------


def save_checkpoint(model, path, extra=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": vars(model.config) | {},
        "n_rules": model.n_rules,
        "n_vars": model.n_vars,
        "vocab": model.vocab,
        "state_dict": model.state_dict(),
        "shapes": {k: list(v.shape) for k, v in model.state_dict().items()},
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path, grammar):
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    config = GuidanceConfig(**{
        k: v for k, v in payload["config"].items()
        if k in GuidanceConfig.__dataclass_fields__
    })
    model = GuidanceModel(grammar, config, n_vars=payload["n_vars"])
    if model.vocab != payload["vocab"]:
        raise ValueError("checkpoint vocabulary does not match the grammar")
    model.load_state_dict(payload["state_dict"])
    return model
