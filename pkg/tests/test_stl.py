import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_boolean, random_formula
from stori.stl import (
    TRUE,
    And,
    FormulaSyntaxError,
    HorizonError,
    LinearPredicate,
    Not,
    Pred,
    StateTrajectory,
    TimeInterval,
    Until,
    boolean_signal,
    eval_boolean,
    eventually,
    globally,
    horizon,
    parse_formula,
    subformulas,
    to_text,
)

V = {"x": 0, "y": 1}


def xge(c):
    return Pred(LinearPredicate((1.0, 0.0), -c))


def xle(c):
    return Pred(LinearPredicate((-1.0, 0.0), c))


def yge(c):
    return Pred(LinearPredicate((0.0, 1.0), -c))


PHI1 = "!(x>=1 & y>=2 & x<=2) U[0,6] (x>=3 & y>=2)"
PHI3_MACROS = {
    "Puddle": "y <= 2.5 & x >= 2 & x <= 3",
    "Charge": "y >= 2 & x >= 4",
    "Carpet": "y <= 1 & x >= 4",
}
PHI3 = "(Puddle -> !Charge U[0,3] Carpet) U[0,10] Charge"


def phi3():
    macros = {k: parse_formula(v, V) for k, v in PHI3_MACROS.items()}
    return parse_formula(PHI3, V, macros)


class TestParse:
    def test_true_literal(self):
        assert parse_formula("T", V) == TRUE

    def test_phi1_structure(self):
        f = parse_formula(PHI1, V)
        obstacle = And(And(xge(1), yge(2)), xle(2))
        goal = And(xge(3), yge(2))
        assert f == Until(TimeInterval(0, 6), Not(obstacle), goal)

    def test_eventually_desugars(self):
        assert parse_formula("F[0,10] (x>=3)", V) == Until(TimeInterval(0, 10), TRUE, xge(3))

    def test_globally_desugars(self):
        assert parse_formula("G[1,2] x>=3", V) == Not(Until(TimeInterval(1, 2), TRUE, Not(xge(3))))

    def test_implication_desugars(self):
        assert parse_formula("x>=1 -> x>=2", V) == Not(And(xge(1), Not(xge(2))))

    def test_precedence(self):
        # ! binds tighter than &, & tighter than ->, -> tighter than U
        f = parse_formula("!x>=1 & x>=2 -> x>=3 U[0,1] x>=4", V)
        lhs = Not(And(And(Not(xge(1)), xge(2)), Not(xge(3))))
        assert f == Until(TimeInterval(0, 1), lhs, xge(4))

    def test_until_right_associative(self):
        f = parse_formula("x>=1 U[0,1] x>=2 U[0,2] x>=3", V)
        assert f == Until(TimeInterval(0, 1), xge(1), Until(TimeInterval(0, 2), xge(2), xge(3)))

    def test_open_intervals(self):
        f = parse_formula("F(0.5,2] x>=0", V)
        assert f.interval == TimeInterval(0.5, 2, lower_open=True, upper_open=False)

    def test_linear_expressions(self):
        f = parse_formula("2*x - y + 1 >= 0.5 * y", V)
        assert f == Pred(LinearPredicate((2.0, -1.5), 1.0))

    def test_parenthesized_expression_atom(self):
        f = parse_formula("(x + y) <= 3", V)
        assert f == Pred(LinearPredicate((-1.0, -1.0), 3.0))

    def test_macros(self):
        f = phi3()
        assert isinstance(f, Until) and f.interval == TimeInterval(0, 10)

    def test_syntax_error_has_position(self):
        with pytest.raises(FormulaSyntaxError) as exc:
            parse_formula("x >= 1 &\n  & y >= 2", V)
        assert (exc.value.line, exc.value.column) == (2, 3)

    def test_unbound_variable(self):
        with pytest.raises(FormulaSyntaxError, match="unbound"):
            parse_formula("z >= 1", V)

    def test_unbound_macro(self):
        with pytest.raises(FormulaSyntaxError, match="unbound"):
            parse_formula("Goal U[0,1] x >= 1", V)

    @pytest.mark.parametrize("text", ["F[3,3] x>=1", "F[4,2] x>=1", "x>=0 U[1,0.5] y>=0"])
    def test_malformed_interval(self, text):
        with pytest.raises(FormulaSyntaxError, match="interval"):
            parse_formula(text, V)

    def test_trailing_garbage(self):
        with pytest.raises(FormulaSyntaxError):
            parse_formula("x >= 1 )", V)


class TestRoundTrip:
    @pytest.mark.parametrize("text", [PHI1, "T", "G[0,5] (x >= 0 & !(y <= -1.25))", "F(0,1) T"])
    def test_examples(self, text):
        f = parse_formula(text, V)
        assert parse_formula(to_text(f, V), V) == f

    def test_phi3(self):
        f = phi3()
        assert parse_formula(to_text(f, V), V) == f

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_random(self, seed):
        f = random_formula(np.random.default_rng(seed), depth=4)
        once = parse_formula(to_text(f, V), V)
        assert once == f
        assert parse_formula(to_text(once, V), V) == once


class TestHorizon:
    def test_predicate(self):
        assert horizon(xge(1)) == 0

    def test_phi1(self):
        assert horizon(parse_formula(PHI1, V)) == 6

    def test_phi3(self):
        assert horizon(phi3()) == 13

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_under_embedding(self, seed):
        f = random_formula(np.random.default_rng(seed), depth=4)
        h = horizon(f)
        assert all(horizon(sub) <= h for sub in subformulas(f))


def _random_traj(rng, n=24, dt=0.25):
    return StateTrajectory(np.arange(n) * dt, rng.normal(size=(n, 2)))


class TestBoolean:
    def test_constant_state_in_goal(self):
        x = StateTrajectory(np.arange(61) * 0.1, np.tile([3.5, 2.5], (61, 1)))
        assert eval_boolean(parse_formula("F[0,6] (x>=3 & y>=2)", V), x)

    def test_globally_is_conjunction_over_window(self):
        rng = np.random.default_rng(3)
        f = globally(TimeInterval(0, 5), xge(0))
        for _ in range(50):
            x = _random_traj(rng)
            in_window = x.times <= 5 + 1e-12
            assert eval_boolean(f, x) == bool(np.all(x.states[in_window, 0] >= 0))

    def test_globally_matches_eventually_dual(self):
        rng = np.random.default_rng(4)
        iv = TimeInterval(0.5, 2.5)
        for _ in range(50):
            x = _random_traj(rng)
            direct = globally(iv, xge(0))
            dual = Not(eventually(iv, Not(xge(0))))
            assert eval_boolean(direct, x) == eval_boolean(dual, x)

    def test_until_requires_left_through_witness(self):
        times = np.arange(5) * 1.0
        # left holds at 0..1, right first holds at 2 where left fails
        states = np.array([[1.0, 0], [1, 0], [-1, 1], [1, 1], [1, 1]])
        f = Until(TimeInterval(0, 3), xge(0), yge(0.5))
        assert not eval_boolean(f, StateTrajectory(times, states))
        states[2, 0] = 1.0
        assert eval_boolean(f, StateTrajectory(times, states))

    def test_open_endpoint_excludes_exact_grid_point(self):
        times = np.arange(4) * 1.0
        states = np.array([[0.0, 0], [0, 0], [1, 0], [0, 0]])
        closed = eventually(TimeInterval(0, 2), xge(0.5))
        opened = eventually(TimeInterval(0, 2, upper_open=True), xge(0.5))
        x = StateTrajectory(times, states)
        assert eval_boolean(closed, x) and not eval_boolean(opened, x)

    def test_horizon_too_short(self):
        x = StateTrajectory(np.arange(10) * 0.1, np.zeros((10, 2)))
        with pytest.raises(HorizonError):
            eval_boolean(eventually(TimeInterval(0, 5), xge(0)), x)

    def test_off_grid_time(self):
        x = StateTrajectory(np.arange(10) * 0.1, np.zeros((10, 2)))
        with pytest.raises(ValueError, match="sample time"):
            eval_boolean(TRUE, x, 0.05)

    def test_brute_force_agreement(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            f = random_formula(rng, depth=3, dt=0.1, max_upper=0.8)
            x = StateTrajectory(np.arange(25) * 0.1, rng.normal(size=(25, 2)))
            sig = boolean_signal(f, x.times, x.states)
            for i in (0, 3, 11):
                assert sig[i] == brute_boolean(f, x.times, x.states, i)

    def test_nonuniform_times(self):
        rng = np.random.default_rng(6)
        times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 0.3, size=29))])
        for _ in range(100):
            f = random_formula(rng, depth=3, dt=0.1, max_upper=0.8)
            states = rng.normal(size=(30, 2))
            assert boolean_signal(f, times, states)[0] == brute_boolean(f, times, states, 0)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(7)
        f = parse_formula(PHI1, V)
        times = np.arange(61) * 0.1
        batch = rng.normal(loc=2, scale=1.5, size=(40, 61, 2))
        sig = boolean_signal(f, times, batch)[:, 0]
        single = [boolean_signal(f, times, b)[0] for b in batch]
        assert list(sig) == single

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_negation(self, seed):
        rng = np.random.default_rng(seed)
        f = random_formula(rng, depth=3, max_upper=0.8)
        x = StateTrajectory(np.arange(30) * 0.1, rng.normal(size=(30, 2)))
        assert eval_boolean(Not(f), x) == (not eval_boolean(f, x))
