"""Syntax-tree metrics, prefix round-trips, and evaluation semantics."""

import numpy as np
import pytest

from eqsearch import packaged_grammar
from eqsearch.expression import (
    EvaluationError,
    evaluate,
    from_prefix,
    initial_state,
    metrics,
    to_prefix,
)


def tree(text, grammar=None):
    return from_prefix(text.split(), grammar)


class TestTreeMetrics:
    def test_initial_state_counts(self):
        g = packaged_grammar("b")
        m = metrics(initial_state(g, "d").tree)
        assert m == {"node_count": 2, "depth": 1, "n_constants": 0}

    def test_polynomial_counts(self):
        # x0^2 + x0: seven body tokens plus the implicit y root
        m = metrics(tree("+ ^ 2 x0 x0"))
        assert m["node_count"] == 6
        assert m["depth"] == 3
        assert m["n_constants"] == 0

    def test_constant_slots_in_prefix_order(self):
        t = tree("+ c * c x0")
        assert t.n_constants == 2
        assert t.constant_slots == (1, 3)

    def test_depth_of_left_nested_chain(self):
        t = tree("+ + + x0 x0 x0 x0")
        assert t.depth == 4

    def test_done_flag(self):
        g = packaged_grammar("b")
        assert not initial_state(g, "d").done
        assert tree("+ x0 x1").done

    def test_expand_leftmost_replaces_first_nonterminal(self):
        g = packaged_grammar("b")
        state = initial_state(g, "d").expand(g.rules[0].rhs)
        state = state.expand(g.rules[9].rhs)
        assert state.prefix == "+ x0 S"


class TestPrefixRoundTrip:
    def test_round_trip(self):
        names = "+ sin ^ 2 x0 - cos x0 c".split()
        assert to_prefix(from_prefix(names)) == names

    def test_partial_tree_round_trip(self):
        g = packaged_grammar("b")
        names = "+ sin Inner S".split()
        t = from_prefix(names, g)
        assert to_prefix(t) == names
        assert not t.done

    def test_malformed_sequence_rejected(self):
        with pytest.raises(ValueError, match="incomplete"):
            from_prefix("+ x0".split())

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            from_prefix([])


class TestEvaluation:
    xs = np.array([[1.0, 2.0], [3.0, 4.0], [0.5, 0.25]])

    def test_arithmetic(self):
        y = evaluate(tree("+ * x0 x1 x0"), self.xs)
        np.testing.assert_allclose(y, self.xs[:, 0] * self.xs[:, 1] + self.xs[:, 0])

    def test_constants_fill_slots_in_order(self):
        y = evaluate(tree("+ c * c x0"), self.xs, constants=[10.0, 2.0])
        np.testing.assert_allclose(y, 10.0 + 2.0 * self.xs[:, 0])

    def test_power_exponent_comes_first(self):
        # `^ a b` encodes b^a: `^ 2 x0` is x0 squared
        y = evaluate(tree("^ 2 x0"), self.xs)
        np.testing.assert_allclose(y, self.xs[:, 0] ** 2)

    def test_integer_power_of_negative_base(self):
        xs = np.array([[-2.0, 0.0]])
        np.testing.assert_allclose(evaluate(tree("^ 3 x0"), xs), [-8.0])

    def test_general_power_via_variable_exponent(self):
        xs = np.array([[4.0, 0.5]])
        np.testing.assert_allclose(evaluate(tree("^ x1 x0"), xs), [2.0])

    def test_unary_functions(self):
        y = evaluate(tree("+ sin x0 cos x1"), self.xs)
        np.testing.assert_allclose(y, np.sin(self.xs[:, 0]) + np.cos(self.xs[:, 1]))

    def test_log_domain_error_reports_first_offending_row(self):
        xs = np.array([[1.0, 1.0], [-1.0, 1.0], [-2.0, 1.0]])
        with pytest.raises(EvaluationError) as err:
            evaluate(tree("log x0"), xs)
        assert err.value.row == 1
        assert "log" in err.value.cause

    def test_division_by_zero(self):
        xs = np.array([[1.0, 0.0]])
        with pytest.raises(EvaluationError, match="division"):
            evaluate(tree("/ x0 x1"), xs)

    def test_general_power_rejects_nonpositive_base(self):
        xs = np.array([[-4.0, 0.5]])
        with pytest.raises(EvaluationError, match="power"):
            evaluate(tree("^ x1 x0"), xs)

    def test_overflow_detected(self):
        xs = np.array([[1e200, 0.0]])
        with pytest.raises(EvaluationError, match="overflow"):
            evaluate(tree("* x0 x0"), xs)

    def test_literal_leaves(self):
        y = evaluate(tree("+ 2.5 x0"), self.xs)
        np.testing.assert_allclose(y, self.xs[:, 0] + 2.5)

    def test_purity_bitwise(self):
        t = tree("+ sin ^ 2 x0 cos x1")
        a = evaluate(t, self.xs)
        b = evaluate(t, self.xs)
        assert (a == b).all()

    def test_evaluating_incomplete_tree_fails(self):
        g = packaged_grammar("b")
        with pytest.raises(ValueError):
            evaluate(initial_state(g, "d").tree, self.xs)
