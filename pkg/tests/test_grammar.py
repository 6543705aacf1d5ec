"""Grammar parsing, validation, and action-mask tests."""

import numpy as np
import pytest

from eqsearch import packaged_grammar
from eqsearch.expression import initial_state
from eqsearch.grammar import (
    GrammarError,
    IllegalActionError,
    Kind,
    apply_rule,
    classify_token,
    legal_actions,
    parse_grammar,
    sample_rule,
)

TINY = """
start: S
0.5 S -> + S S
0.25 S -> x0
0.25 S -> x1
"""


class TestParsing:
    def test_bundled_rule_counts(self):
        assert packaged_grammar("a").n_rules == 28
        assert packaged_grammar("b").n_rules == 23
        assert packaged_grammar("c").n_rules == 19

    def test_start_header(self):
        g = parse_grammar("start: T\n1.0 S -> x0\n1.0 T -> S")
        assert g.start.name == "T"

    def test_default_start_is_first_lhs(self):
        g = parse_grammar("1.0 S -> x0")
        assert g.start.name == "S"

    def test_pipe_desugaring(self):
        g = parse_grammar("0.25 S -> x0 | x1 | c | ^ 2 x0")
        assert g.n_rules == 4
        assert all(r.weight == 0.25 for r in g.rules)
        assert [r.id for r in g.rules] == [0, 1, 2, 3]

    def test_comments_and_blank_lines(self):
        g = parse_grammar("# header\n\n1.0 S -> x0  # trailing\n")
        assert g.n_rules == 1

    def test_rule_ids_match_file_order(self):
        g = packaged_grammar("b")
        assert g.rules[0].lhs.name == "S"
        assert [s.name for s in g.rules[0].rhs] == ["+", "S", "S"]
        assert [s.name for s in g.rules[11].rhs] == ["c"]

    def test_nonterminal_and_variable_classification(self):
        g = parse_grammar(TINY)
        assert g.symbols["S"].kind is Kind.NONTERMINAL
        assert g.symbols["x1"].index == 1
        assert g.n_variables == 2


class TestValidation:
    def test_weight_sum_must_be_one(self):
        with pytest.raises(GrammarError, match="sum"):
            parse_grammar("0.5 S -> x0\n0.4 S -> x1")

    def test_weight_out_of_range(self):
        with pytest.raises(GrammarError, match="outside"):
            parse_grammar("1.5 S -> x0")

    def test_bad_weight_token(self):
        with pytest.raises(GrammarError, match="bad weight"):
            parse_grammar("abc S -> x0")

    def test_missing_arrow(self):
        with pytest.raises(GrammarError, match="expected"):
            parse_grammar("1.0 S x0")

    def test_unknown_symbol(self):
        with pytest.raises(GrammarError, match="unknown symbol"):
            parse_grammar("1.0 S -> foo")

    def test_rhs_must_be_valid_prefix(self):
        with pytest.raises(GrammarError, match="prefix"):
            parse_grammar("1.0 S -> + S")

    def test_empty_grammar(self):
        with pytest.raises(GrammarError, match="no production"):
            parse_grammar("# nothing\n")

    def test_unreachable_nonterminal(self):
        text = "start: S\n1.0 S -> x0\n1.0 T -> x1"
        with pytest.raises(GrammarError, match="unreachable"):
            parse_grammar(text)

    def test_rhs_nonterminal_without_rules(self):
        # T never appears as a lhs, so it is not a known symbol at all
        with pytest.raises(GrammarError, match="unknown symbol"):
            parse_grammar("1.0 S -> + T T")

    def test_error_carries_line_number(self):
        try:
            parse_grammar("1.0 S -> x0\n1.0 S -> foo")
        except GrammarError as err:
            assert err.line == 2
        else:
            pytest.fail("expected GrammarError")


class TestClassifyToken:
    def test_operator_arity(self):
        assert classify_token("+").arity == 2
        assert classify_token("sin").arity == 1

    def test_variable_index(self):
        assert classify_token("x7").index == 7

    def test_constant_slot(self):
        assert classify_token("c").kind is Kind.CONSTANT

    def test_literal_value(self):
        sym = classify_token("2.5")
        assert sym.kind is Kind.LITERAL
        assert sym.value == 2.5

    def test_rejects_garbage_and_non_finite(self):
        assert classify_token("foo") is None
        assert classify_token("inf") is None


class TestActions:
    def test_initial_mask_covers_start_rules(self):
        g = packaged_grammar("b")
        mask = legal_actions(g, initial_state(g, "d"))
        assert mask[:15].all() and not mask[15:].any()

    def test_node_cap_masks_growing_rules(self):
        g = parse_grammar(TINY)
        state = initial_state(g, "d")
        # node_count 2 -> chains of `+ S S` add 2 nodes each
        while legal_actions(g, state, max_nodes=25)[0]:
            state = apply_rule(g, state, 0, max_nodes=25)
        assert state.tree.node_count + 2 > 25
        assert legal_actions(g, state, max_nodes=25)[1:].all()

    def test_terminal_state_has_empty_mask(self):
        g = parse_grammar(TINY)
        state = apply_rule(g, initial_state(g, "d"), 1)
        assert state.done
        assert not legal_actions(g, state).any()

    def test_apply_rule_expands_leftmost(self):
        g = parse_grammar(TINY)
        state = apply_rule(g, initial_state(g, "d"), 0)
        state = apply_rule(g, state, 1)
        assert state.prefix == "+ x0 S"

    def test_apply_rule_is_pure(self):
        g = parse_grammar(TINY)
        state = initial_state(g, "d")
        apply_rule(g, state, 0)
        assert state.prefix == "S"

    def test_wrong_lhs_raises(self):
        g = packaged_grammar("b")
        state = initial_state(g, "d")
        with pytest.raises(IllegalActionError):
            apply_rule(g, state, 15)  # an Inner rule at an S target

    def test_node_cap_raises_when_enforced(self):
        g = parse_grammar(TINY)
        state = initial_state(g, "d")
        for _ in range(11):
            state = apply_rule(g, state, 0)
        with pytest.raises(IllegalActionError, match="nodes"):
            apply_rule(g, state, 0, max_nodes=25)


class TestSampling:
    def test_sample_rule_follows_weights(self):
        g = packaged_grammar("a")
        rng = np.random.default_rng(0)
        ids = [sample_rule(g, "Variable", rng) for _ in range(10000)]
        counts = np.bincount(ids, minlength=g.n_rules)
        drawn = counts[counts > 0]
        assert drawn.sum() == 10000
        # Variable -> x0 | x1 with equal weight: both near 5000
        assert abs(drawn[0] - 5000) < 300

    def test_sample_rule_deterministic_under_seed(self):
        g = packaged_grammar("b")
        a = [sample_rule(g, "S", np.random.default_rng(3)) for _ in range(50)]
        b = [sample_rule(g, "S", np.random.default_rng(3)) for _ in range(50)]
        assert a == b
