"""Benchmarks, Monte-Carlo satisfaction rates and the case-study runners.

Benchmark files live in ``stori/benchmarks/*.json``.  Each one carries the
model, its region macros, the task formula, and the workspace box, which is
conjoined as ``G[0,H] workspace`` over the formula horizon ``H``.

Case studies:

1. kappa sweep on phi2 (success rate and planning time per kappa)
2. phi1, phi2, phi3 at kappa = 0.9
3. anytime re-planning on phi3, one best-StoRM curve per seed
4. StoRM against simulated satisfaction rate over several StoRM levels

Everything that depends on the wall clock is kept apart from the rest of a
result (``timing`` fields), so fixed seeds and iteration budgets give equal
outputs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats as _stats

from .belief import Belief, ControlInput, LinearSystemModel, sample_realizations
from .io import model_from_dict, parse_formula_source
from .planner import PlannerConfig, Solution, plan, plan_ao
from .stl import Formula, TimeInterval, boolean_signal, conjunction, globally, horizon, parse_formula

__all__ = [
    "Benchmark",
    "TrialStats",
    "CaseStudyResult",
    "benchmark_names",
    "load_benchmark",
    "monte_carlo_satisfaction",
    "trial_seeds",
    "run_case_study",
    "spearman",
    "DESK_SCALE",
    "PAPER_SCALE",
]

DESK_SCALE = {"trials": 20, "time_budget": 30.0}
PAPER_SCALE = {"trials": 100, "time_budget": 300.0}

CS1_KAPPAS = (0.5, 0.7, 0.9, 0.95)
# (kappa, upper end) StoRM bands for the low, mid and high plans of case 4
CS4_BANDS = ((0.0, 0.3), (0.45, 0.7), (0.85, 1.0))

# planners need some integer cap even when only the wall clock should bind
_UNBOUNDED_ITERS = 10**9


@dataclass(frozen=True, eq=False)
class Benchmark:
    name: str
    model: LinearSystemModel
    formula: Formula
    x0: Belief
    regions: dict
    task: Formula
    text: str
    workspace: tuple
    description: str = ""
    planner: dict = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return horizon(self.formula)

    def config(self, **overrides) -> PlannerConfig:
        """Planner settings of the benchmark file, updated by ``overrides``."""
        return PlannerConfig(**{**self.planner, **overrides})


def benchmark_names() -> list:
    root = resources.files("stori") / "benchmarks"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def _workspace_formula(box, variables) -> Formula:
    names = sorted(variables, key=variables.get)
    parts = []
    for name, (lo, hi) in zip(names, box):
        parts.append(f"{name} >= {lo!r} & {name} <= {hi!r}")
    return parse_formula(" & ".join(parts), variables)


def load_benchmark(name_or_path: str) -> Benchmark:
    """A bundled benchmark by name (``phi1``), or a benchmark JSON file."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.is_file():
        d = json.loads(path.read_text())
    else:
        res = resources.files("stori") / "benchmarks" / f"{name_or_path}.json"
        if not res.is_file():
            raise ValueError(f"unknown benchmark {name_or_path!r}; available: {', '.join(benchmark_names())}")
        d = json.loads(res.read_text())
    model = model_from_dict(d["model"])
    variables = model.variables
    lines = [f"{k} = {v}" for k, v in d.get("macros", [])] + [d["formula"]]
    text = "\n".join(lines)
    task = parse_formula_source(text, variables, dim=model.n)
    H = horizon(task)
    if "horizon" in d and abs(H - d["horizon"]) > 1e-9:
        raise ValueError(f"benchmark {d['name']}: formula horizon {H} differs from declared {d['horizon']}")
    formula = task
    if d.get("workspace"):
        formula = conjunction(task, globally(TimeInterval(0.0, H), _workspace_formula(d["workspace"], variables)))
    x0 = Belief(d["x0"]["mean"], d["x0"].get("covariance", np.zeros((model.n, model.n))))
    return Benchmark(
        name=d["name"],
        model=model,
        formula=formula,
        x0=x0,
        regions={k: np.asarray(v, dtype=float) for k, v in d.get("regions", {}).items()},
        task=task,
        text=text,
        workspace=tuple(map(tuple, d.get("workspace", []))),
        description=d.get("description", ""),
        planner=dict(d.get("planner", {})),
    )


def monte_carlo_satisfaction(
    model: LinearSystemModel,
    solution: Solution,
    formula: Formula,
    n: int = 1000,
    seed: int = 0,
) -> float:
    """Fraction of ``n`` sampled realizations of the plan that satisfy ``formula`` at t = 0.

    Solutions that stop before the formula horizon are padded with zero
    control so every realization covers it.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    traj = solution.trajectory
    controls = list(solution.controls)
    short = horizon(formula) - traj.duration
    if short > 1e-9:
        steps = int(np.ceil(short / traj.dt - 1e-9))
        controls.append(ControlInput(np.zeros(model.m), steps * traj.dt))
    xs = sample_realizations(model, controls, traj[0], n, np.random.default_rng(seed), dt=traj.dt)
    times = np.arange(xs.shape[1]) * traj.dt
    return float(np.mean(boolean_signal(formula, times, xs)[:, 0]))


def trial_seeds(seed: int, trials: int) -> list:
    """Independent per-trial seeds derived from one master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(trials)]


@dataclass
class TrialStats:
    success_rate: float
    mean_time: float
    std_time: float
    storm_values: list
    satisfaction_rates: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError("success_rate must lie in [0, 1]")
        if any(not 0.0 <= r <= 1.0 for r in self.satisfaction_rates):
            raise ValueError("satisfaction rates must lie in [0, 1]")
        if self.satisfaction_rates and len(self.satisfaction_rates) != len(self.storm_values):
            raise ValueError("one satisfaction rate per StoRM value")

    @classmethod
    def from_trials(cls, successes, times, storms, rates=()) -> "TrialStats":
        times = np.asarray(times, dtype=float)
        return cls(
            success_rate=float(np.mean(successes)) if len(successes) else 0.0,
            mean_time=float(times.mean()) if len(times) else 0.0,
            std_time=float(times.std()) if len(times) else 0.0,
            storm_values=[float(s) for s in storms],
            satisfaction_rates=[float(r) for r in rates],
        )

    def deterministic(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "storm_values": self.storm_values,
            "satisfaction_rates": self.satisfaction_rates,
        }

    def timing(self) -> dict:
        return {"mean_time": self.mean_time, "std_time": self.std_time}


@dataclass
class CaseStudyResult:
    """Output of :func:`run_case_study`.

    ``stats`` maps a label (``kappa=0.5``, ``phi2``, ...) to its
    :class:`TrialStats`.  ``trials`` has one row per trial; wall-clock values
    are only in ``times`` and in ``curves`` entries' ``elapsed_s``.
    """

    case: int
    config: dict
    stats: dict
    trials: list
    times: list
    curves: list = field(default_factory=list)
    triples: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "bench",
            "case": self.case,
            "config": self.config,
            "stats": {k: s.deterministic() for k, s in self.stats.items()},
            "extra": self.extra,
            "timing": {k: s.timing() for k, s in self.stats.items()},
        }


def _timed_plan(bench: Benchmark, cfg: PlannerConfig):
    t0 = time.perf_counter()
    sol = plan(bench.model, bench.formula, bench.x0, cfg)
    return sol, time.perf_counter() - t0


def _budget_cfg(bench, kappa, seed, time_budget, max_iters, grid_dt):
    return bench.config(
        kappa=kappa,
        seed=seed,
        max_iters=max_iters if max_iters is not None else _UNBOUNDED_ITERS,
        time_budget=time_budget,
        grid_dt=grid_dt,
    )


def _sweep(case, runs, seeds, time_budget, max_iters, grid_dt, log):
    """``runs`` is a list of (label, benchmark, kappa)."""
    stats, rows, times = {}, [], []
    for label, bench, kappa in runs:
        ok, ts, storms = [], [], []
        for trial, s in enumerate(seeds):
            sol, elapsed = _timed_plan(bench, _budget_cfg(bench, kappa, s, time_budget, max_iters, grid_dt))
            ok.append(sol is not None)
            ts.append(elapsed)
            if sol is not None:
                storms.append(sol.storm)
            rows.append(
                {
                    "label": label,
                    "benchmark": bench.name,
                    "kappa": kappa,
                    "trial": trial,
                    "seed": s,
                    "success": int(sol is not None),
                    "storm": sol.storm if sol else "",
                    "stori_high": sol.stori.high if sol else "",
                    "iterations": sol.iterations_used if sol else "",
                }
            )
            times.append(elapsed)
            log(f"case {case} {label} trial {trial}: {'ok' if sol else 'fail'} in {elapsed:.2f} s")
        stats[label] = TrialStats.from_trials(ok, ts, storms)
    return stats, rows, times


def _case3(bench, seeds, time_budget, max_iters, grid_dt, log):
    found, rows, times, curves = [], [], [], []
    firsts, finals, ts = [], [], []
    total = max_iters if max_iters is not None else None
    for trial, s in enumerate(seeds):
        cfg = bench.config(seed=s, max_iters=_UNBOUNDED_ITERS if total is None else total, grid_dt=grid_dt)
        t0 = time.perf_counter()
        sols = plan_ao(bench.model, bench.formula, bench.x0, cfg, max_total_iters=total, time_budget=time_budget)
        elapsed = time.perf_counter() - t0
        ts.append(elapsed)
        times.append(elapsed)
        for k, sol in enumerate(sols):
            curves.append(
                {"trial": trial, "seed": s, "index": k, "iterations": sol.iterations_used,
                 "elapsed_s": sol.elapsed_s, "best_storm": sol.storm}
            )
        if sols:
            firsts.append(sols[0].storm)
            finals.append(sols[-1].storm)
        found.append(bool(sols))
        rows.append(
            {
                "label": bench.name,
                "benchmark": bench.name,
                "trial": trial,
                "seed": s,
                "solutions": len(sols),
                "first_storm": sols[0].storm if sols else "",
                "final_storm": sols[-1].storm if sols else "",
            }
        )
        log(f"case 3 trial {trial}: {len(sols)} solutions, final {sols[-1].storm if sols else None}")
    st = TrialStats.from_trials(found, ts, finals)
    extra = {
        "first_storms": firsts,
        "final_storms": finals,
        "mean_first_storm": float(np.mean(firsts)) if firsts else None,
        "mean_final_storm": float(np.mean(finals)) if finals else None,
        "seeds_without_solution": int(len(seeds) - len(firsts)),
    }
    return {bench.name: st}, rows, times, curves, extra


def _case4(benches, bands, trials, time_budget, max_iters, grid_dt, n_samples, seed, log):
    """For each benchmark and band (kappa, cap), the first plan with StoRM in (kappa, cap]."""
    stats, rows, times, triples = {}, [], [], []
    mc_seeds = iter(trial_seeds(seed + 1, len(benches) * len(bands)))
    for bi, bench in enumerate(benches):
        storms, rates, ok, ts = [], [], [], []
        for li, (kappa, cap) in enumerate(bands):
            mc_seed = next(mc_seeds)
            level_seeds = [int(q.generate_state(1)[0]) for q in np.random.SeedSequence([seed, bi, li]).spawn(trials)]
            sol = None
            for trial, s in enumerate(level_seeds):
                sol, elapsed = _timed_plan(bench, _budget_cfg(bench, kappa, s, time_budget, max_iters, grid_dt))
                ts.append(elapsed)
                times.append(elapsed)
                if sol is not None and sol.storm <= cap:
                    break
                sol = None
            ok.append(sol is not None)
            if sol is None:
                log(f"case 4 {bench.name} kappa {kappa}: no plan in ({kappa}, {cap}]")
                continue
            rate = monte_carlo_satisfaction(bench.model, sol, bench.formula, n_samples, mc_seed)
            storms.append(sol.storm)
            rates.append(rate)
            rows.append(
                {
                    "label": bench.name,
                    "benchmark": bench.name,
                    "kappa": kappa,
                    "trial": trial,
                    "seed": s,
                    "storm": sol.storm,
                    "stori_high": sol.stori.high,
                    "rate": rate,
                }
            )
            triples.append((sol.storm, sol.stori.high, rate))
            log(f"case 4 {bench.name} kappa {kappa}: storm {sol.storm:.3f} rate {rate:.3f}")
        stats[bench.name] = TrialStats.from_trials(ok, ts, storms, rates)
    extra = {"spearman": spearman([t[0] for t in triples], [t[2] for t in triples])}
    return stats, rows, times, triples, extra


def spearman(a, b):
    """Spearman rank correlation, or None with fewer than three pairs or no variation."""
    if len(a) < 3 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    return float(_stats.spearmanr(a, b).statistic)


def run_case_study(
    case: int,
    trials: int = DESK_SCALE["trials"],
    time_budget: float | None = DESK_SCALE["time_budget"],
    max_iters: int | None = None,
    seed: int = 0,
    kappas=None,
    grid_dt: float | None = None,
    n_samples: int = 1000,
    log=None,
) -> CaseStudyResult:
    """Run case study ``case`` (1 to 4).

    The budget per planning query (per anytime run for case 3) is
    ``time_budget`` seconds and/or ``max_iters`` iterations; at least one is
    required.  Trial seeds come from ``trial_seeds(seed, trials)`` and are
    shared between the configurations of one case.  For case 4, ``trials``
    is the number of seeds tried per StoRM band before giving up; each band
    ``(kappa, cap]`` keeps the first plan planned with that kappa whose
    StoRM is at most ``cap``.  Explicit ``kappas`` for case 4 become the
    adjacent bands ``(kappa_i, kappa_{i+1}]``.
    """
    if case not in (1, 2, 3, 4):
        raise ValueError(f"unknown case study {case!r}; expected 1, 2, 3 or 4")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if time_budget is None and max_iters is None:
        raise ValueError("need a time budget or an iteration budget")
    log = log or (lambda msg: None)
    seeds = trial_seeds(seed, trials)
    config = {
        "case": case,
        "trials": trials,
        "time_budget": time_budget,
        "max_iters": max_iters,
        "seed": seed,
        "grid_dt": grid_dt,
    }
    curves, triples, extra = [], [], {}
    if case == 1:
        kappas = tuple(kappas or CS1_KAPPAS)
        phi2 = load_benchmark("phi2")
        runs = [(f"kappa={k!r}", phi2, float(k)) for k in kappas]
        stats, rows, times = _sweep(1, runs, seeds, time_budget, max_iters, grid_dt, log)
    elif case == 2:
        kappa = float(kappas[0]) if kappas else 0.9
        runs = [(name, load_benchmark(name), kappa) for name in ("phi1", "phi2", "phi3")]
        stats, rows, times = _sweep(2, runs, seeds, time_budget, max_iters, grid_dt, log)
    elif case == 3:
        stats, rows, times, curves, extra = _case3(load_benchmark("phi3"), seeds, time_budget, max_iters, grid_dt, log)
    else:
        if kappas:
            ks = sorted(float(k) for k in kappas)
            bands = tuple(zip(ks, ks[1:] + [1.0]))
        else:
            bands = CS4_BANDS
        benches = [load_benchmark(n) for n in ("phi1", "phi2", "phi3")]
        stats, rows, times, triples, extra = _case4(
            benches, bands, trials, time_budget, max_iters, grid_dt, n_samples, seed, log
        )
        config["bands"] = [list(b) for b in bands]
        config["n_samples"] = n_samples
        kappas = None
    if kappas is not None:
        config["kappas"] = [float(k) for k in kappas]
    return CaseStudyResult(case, config, stats, rows, times, curves, triples, extra)
