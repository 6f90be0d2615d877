"""Linear-arithmetic validity: Fourier-Motzkin core plus box refutation."""

import itertools
import random

from tracelet.fo import (canon_pred, fo_valid, negate_pred, pred_equiv,
                         simplify_or, terms_equal)
from tracelet.lang import Binary, BoolLit, IntLit, ResVar, Unary, Var


def v(name):
    return Var(name)


def atom(op, left, right):
    return Binary(op, left, right)


class TestValidity:
    def test_strict_implies_nonneg(self):
        assert fo_valid([atom(">", v("n'"), IntLit(0))],
                        atom(">=", v("n'"), IntLit(0))).status == "valid"

    def test_identity(self):
        p = atom("==", v("a"), IntLit(3))
        assert fo_valid([p], p).status == "valid"

    def test_invalid_with_counterexample(self):
        verdict = fo_valid([atom(">", v("n'"), IntLit(0))],
                           atom(">", v("n'"), IntLit(1)))
        assert verdict.status == "invalid"
        assert verdict.counterexample == {"n'": 1}

    def test_step_precondition(self):
        # n' >= 0 and n' != 0 entail n' - 1 >= 0
        gamma = [atom(">=", v("n'"), IntLit(0)), atom("!=", v("n'"), IntLit(0))]
        goal = atom(">=", Binary("-", v("n'"), IntLit(1)), IntLit(0))
        assert fo_valid(gamma, goal).status == "valid"

    def test_equality_substitution(self):
        gamma = [atom("==", ResVar(v("k")), Binary("-", v("n'"), IntLit(1)))]
        goal = atom("==", Binary("+", ResVar(v("k")), IntLit(1)), v("n'"))
        assert fo_valid(gamma, goal).status == "valid"

    def test_boolean_goal(self):
        assert fo_valid([], BoolLit(True)).status == "valid"
        assert fo_valid([], BoolLit(False)).status == "invalid"

    def test_nonlinear_unknown(self):
        goal = atom(">=", Binary("*", v("a"), v("a")), IntLit(0))
        assert fo_valid([], goal).status == "unknown"

    def test_exhaustive_agreement_small_systems(self):
        rng = random.Random(6)
        names = ["a", "b"]
        for _ in range(150):
            def rand_atom():
                return atom(rng.choice(["<", "<=", "==", "!=", ">", ">="]),
                            Binary("+", v(rng.choice(names)),
                                   IntLit(rng.randint(-2, 2))),
                            v(rng.choice(names)))
            gamma = [rand_atom() for _ in range(rng.randint(0, 2))]
            goal = rand_atom()
            verdict = fo_valid(gamma, goal)

            def holds(assignment, e):
                from tracelet.traces import State, eval_expr
                return bool(eval_expr(State(assignment), e))

            brute_valid = all(
                holds(dict(zip(names, point)), goal)
                for point in itertools.product(range(-6, 7), repeat=2)
                if all(holds(dict(zip(names, point)), g) for g in gamma))
            if verdict.status == "valid":
                assert brute_valid
            elif verdict.status == "invalid":
                cex = {k: verdict.counterexample.get(k, 0) for k in names}
                assert all(holds(cex, g) for g in gamma)
                assert not holds(cex, goal)


class TestNegation:
    def test_negate_flips_comparisons(self):
        assert negate_pred(atom("!=", v("x"), IntLit(0))) == atom("==", v("x"), IntLit(0))
        assert negate_pred(atom("<", v("x"), IntLit(0))) == atom(">=", v("x"), IntLit(0))

    def test_negate_pushes_through_conjunction(self):
        p = Binary("&&", atom(">", v("x"), IntLit(0)), atom("<", v("y"), IntLit(0)))
        n = negate_pred(p)
        assert n == Binary("||", atom("<=", v("x"), IntLit(0)),
                           atom(">=", v("y"), IntLit(0)))


class TestCanonical:
    def test_strict_and_shifted_bounds_coincide(self):
        assert canon_pred(atom(">", v("n'"), IntLit(0))) == \
            canon_pred(atom(">=", Binary("-", v("n'"), IntLit(1)), IntLit(0)))

    def test_pred_equiv(self):
        assert pred_equiv(atom(">", v("n'"), IntLit(0)),
                          atom(">=", v("n'"), IntLit(1)))
        assert not pred_equiv(atom(">", v("n'"), IntLit(0)),
                              atom(">=", v("n'"), IntLit(0)))

    def test_simplify_or_merges_base_and_step(self):
        merged = simplify_or(atom("==", v("n"), IntLit(0)),
                             atom(">", v("n"), IntLit(0)))
        assert pred_equiv(merged, atom(">=", v("n"), IntLit(0)))
        assert merged == atom(">=", v("n"), IntLit(0))

    def test_simplify_or_fallback(self):
        a = atom("==", v("n"), IntLit(0))
        b = atom("==", v("m"), IntLit(1))
        assert simplify_or(a, b) == Binary("||", a, b)

    def test_terms_equal(self):
        assert terms_equal(Binary("+", Binary("-", v("n'"), IntLit(1)), IntLit(1)),
                           v("n'"))
        assert not terms_equal(v("n'"), Binary("+", v("n'"), IntLit(1)))
