import json
from importlib import resources

import numpy as np
import pytest

from stori.belief import Belief, double_integrator
from stori.bench import (
    CS4_BANDS,
    TrialStats,
    benchmark_names,
    load_benchmark,
    monte_carlo_satisfaction,
    run_case_study,
    spearman,
    trial_seeds,
)
from stori.io import parse_formula_source
from stori.planner import PlannerConfig, plan
from stori.stl import And, Not, StateTrajectory, TimeInterval, Until, eval_boolean, parse_formula

PAPER_BENCHES = ("phi1", "phi2", "phi3")

# hand-computed horizons: phi1 = 6, phi2 = max(10, 10), phi3 = 10 + 3
HORIZONS = {"phi1": 6.0, "phi2": 10.0, "phi3": 13.0, "corridor": 6.0, "corridor_lownoise": 6.0}


def test_bundled_names():
    assert set(HORIZONS) <= set(benchmark_names())


@pytest.mark.parametrize("name", sorted(HORIZONS))
class TestBenchmarkFiles:
    def test_horizon(self, name):
        b = load_benchmark(name)
        assert b.horizon == HORIZONS[name]

    def test_workspace_conjunct(self, name):
        b = load_benchmark(name)
        assert isinstance(b.formula, And) and b.formula.left == b.task
        g = b.formula.right
        # G[0,H] w is !(T U[0,H] !w)
        assert isinstance(g, Not) and isinstance(g.child, Until)
        assert g.child.interval == TimeInterval(0.0, HORIZONS[name])

    def test_start_inside_workspace(self, name):
        b = load_benchmark(name)
        lo, hi = b.model.state_bounds[:, 0], b.model.state_bounds[:, 1]
        assert np.all(b.x0.mean >= lo) and np.all(b.x0.mean <= hi)
        assert np.all(b.x0.covariance == 0)
        for (wlo, whi), k in zip(b.workspace, range(2)):
            assert (wlo, whi) == tuple(b.model.state_bounds[k])

    def test_regions_match_macros(self, name):
        b = load_benchmark(name)
        rng = np.random.default_rng(0)
        box = np.array(b.workspace)
        pts = rng.uniform(box[:, 0], box[:, 1], size=(400, 2))
        states = np.hstack([pts, np.zeros((400, 2))])
        for region, bounds in b.regions.items():
            f = parse_formula(region, b.model.variables, _macros(b))
            inside = np.all((pts >= bounds[:, 0]) & (pts <= bounds[:, 1]), axis=1)
            for x, want in zip(states, inside):
                assert eval_boolean(f, StateTrajectory([0.0], [x])) == want


def _macros(b):
    macros = {}
    for line in b.text.splitlines()[:-1]:
        name, body = line.split("=", 1)
        macros[name.strip()] = parse_formula_source(body, b.model.variables, dim=b.model.n)
    return macros


def test_unknown_benchmark():
    with pytest.raises(ValueError, match="unknown benchmark"):
        load_benchmark("phi9")


def test_declared_horizon_checked(tmp_path):
    d = json.loads((resources.files("stori") / "benchmarks" / "phi1.json").read_text())
    d["horizon"] = 7.0
    (tmp_path / "b.json").write_text(json.dumps(d))
    with pytest.raises(ValueError, match="horizon"):
        load_benchmark(str(tmp_path / "b.json"))


class TestMonteCarlo:
    def _plan(self, q):
        m = double_integrator(q, q / 10, [[-1, 1]] * 2, [[0, 5], [0, 2], [-1, 1], [-1, 1]])
        f = parse_formula("F[0,4] x >= 2 & G[0,4] (y >= 0.5 & y <= 1.5)", m.variables)
        sol = plan(m, f, Belief.point([0.5, 1, 0, 0]), PlannerConfig(kappa=0.3, max_iters=5000, seed=1))
        assert sol is not None
        return m, f, sol

    def test_zero_noise_storm_one(self):
        m, f, sol = self._plan(0.0)
        assert sol.storm == 1.0
        assert monte_carlo_satisfaction(m, sol, f, 200, 0) == 1.0

    def test_rate_range_and_seed(self):
        m, f, sol = self._plan(0.05)
        a = monte_carlo_satisfaction(m, sol, f, 300, 4)
        assert 0.0 <= a <= 1.0
        assert monte_carlo_satisfaction(m, sol, f, 300, 4) == a

    def test_short_plan_is_padded(self):
        m = double_integrator(0.01, 0.001, [[-1, 1]] * 2, [[0, 5], [0, 5], [-1, 1], [-1, 1]])
        f = parse_formula("F[0,3] x >= 1.5", m.variables)
        sol = plan(m, f, Belief.point([1, 1, 0, 0]), PlannerConfig(kappa=0.5, max_iters=3000))
        assert sol.trajectory.duration < 3.0
        assert 0.0 <= monte_carlo_satisfaction(m, sol, f, 100, 0) <= 1.0

    def test_rejects_n(self):
        m, f, sol = self._plan(0.0)
        with pytest.raises(ValueError):
            monte_carlo_satisfaction(m, sol, f, 0, 0)

    def test_theorem_one_certain_plan(self):
        b = load_benchmark("corridor_lownoise")
        sol = plan(b.model, b.formula, b.x0, b.config(kappa=1 - 1e-9, max_iters=20000, seed=0))
        assert sol.storm >= 1 - 1e-9
        assert monte_carlo_satisfaction(b.model, sol, b.formula, 1000, 0) >= 0.99


class TestStats:
    def test_from_trials(self):
        s = TrialStats.from_trials([True, False, True, True], [1.0, 3.0, 2.0, 2.0], [0.6, 0.7, 0.8])
        assert s.success_rate == 0.75 and s.mean_time == 2.0
        assert s.std_time == pytest.approx(np.std([1, 3, 2, 2]))

    @pytest.mark.parametrize(
        "kw",
        [
            {"success_rate": 1.5},
            {"success_rate": 0.5, "satisfaction_rates": [1.2]},
            {"success_rate": 0.5, "storm_values": [0.1, 0.2], "satisfaction_rates": [0.3]},
        ],
    )
    def test_rejects(self, kw):
        base = {"mean_time": 0.0, "std_time": 0.0, "storm_values": [0.1]}
        with pytest.raises(ValueError):
            TrialStats(**{**base, **kw})

    def test_seeds(self):
        a = trial_seeds(3, 5)
        assert a == trial_seeds(3, 5) and len(set(a)) == 5
        assert trial_seeds(3, 6)[:5] == a and trial_seeds(4, 5) != a

    def test_spearman(self):
        assert spearman([0.1, 0.5, 0.9], [0.2, 0.3, 0.99]) == pytest.approx(1.0)
        assert spearman([0.1, 0.5], [0.2, 0.3]) is None
        assert spearman([0.5, 0.5, 0.5], [0.2, 0.3, 0.4]) is None


class TestCaseStudies:
    def test_unknown_case(self):
        with pytest.raises(ValueError, match="unknown case"):
            run_case_study(5, trials=1, max_iters=10)

    def test_needs_budget(self):
        with pytest.raises(ValueError, match="budget"):
            run_case_study(1, trials=1, time_budget=None)

    def test_case1_small(self):
        r = run_case_study(1, trials=2, time_budget=None, max_iters=400, kappas=[0.5, 0.95])
        assert list(r.stats) == ["kappa=0.5", "kappa=0.95"]
        assert len(r.trials) == 4 and len(r.times) == 4
        for st in r.stats.values():
            assert 0.0 <= st.success_rate <= 1.0
            assert all(s > 0.5 for s in st.storm_values)
        again = run_case_study(1, trials=2, time_budget=None, max_iters=400, kappas=[0.5, 0.95])
        assert again.trials == r.trials and again.summary()["stats"] == r.summary()["stats"]

    def test_case2_labels(self):
        r = run_case_study(2, trials=1, time_budget=None, max_iters=200)
        assert list(r.stats) == list(PAPER_BENCHES)

    def test_case3_curves_non_decreasing(self):
        r = run_case_study(3, trials=2, time_budget=None, max_iters=3000)
        for trial in (0, 1):
            curve = [c["best_storm"] for c in r.curves if c["trial"] == trial]
            assert all(b > a for a, b in zip(curve, curve[1:]))
            its = [c["iterations"] for c in r.curves if c["trial"] == trial]
            assert all(i <= 3000 for i in its)

    def test_case4_triples_in_range(self):
        r = run_case_study(4, trials=1, time_budget=None, max_iters=1500, n_samples=100)
        assert r.config["bands"] == [list(b) for b in CS4_BANDS]
        for storm, high, rate in r.triples:
            assert 0.0 <= storm <= high <= 1.0 and 0.0 <= rate <= 1.0
        for row in r.trials:
            band = [b for b in CS4_BANDS if b[0] == row["kappa"]][0]
            assert band[0] < row["storm"] <= band[1]
