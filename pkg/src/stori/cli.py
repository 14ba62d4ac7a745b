"""``stori`` command line: parse, eval, monitor, simulate, plan, ao-plan, bench.

Exit codes: 0 success, 1 no solution, 2 bad input.  Every run echoes its
effective configuration as one JSON line on stderr, which is enough to
replay it exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench as _bench
from .belief import Belief, DynamicsError
from .io import (
    dump_json,
    load_model,
    load_solution,
    load_trajectory,
    parse_formula_source,
    solution_to_dict,
    write_rows,
)
from .planner import PlannerConfig, plan, plan_ao
from .robustness import EvalConfig, monitor, monitor_trace, stori
from .stl import And, FormulaSyntaxError, HorizonError, Not, Pred, TrueF, Until, horizon, predicates, to_text

EXIT_OK, EXIT_NO_SOLUTION, EXIT_INPUT = 0, 1, 2

DEFAULT_VARIABLES = "x,y,vx,vy"


class InputError(Exception):
    pass


class DimensionMismatch(InputError):
    pass


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _echo(args, **resolved):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(resolved)
    print("# config " + json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- shared resolution of model / variables / formula


def _context(args):
    """``(model, variables, benchmark)``; model and benchmark may be None."""
    bench = _bench.load_benchmark(args.benchmark) if getattr(args, "benchmark", None) else None
    model = None
    if getattr(args, "model", None):
        model = load_model(args.model)
    elif bench is not None:
        model = bench.model
    if model is not None:
        variables = dict(model.variables)
    else:
        names = [v.strip() for v in (getattr(args, "vars", None) or DEFAULT_VARIABLES).split(",") if v.strip()]
        variables = {name: i for i, name in enumerate(names)}
    return model, variables, bench


def _formula(args, variables, dim=None, bench=None, fallback=None):
    src = getattr(args, "formula", None)
    if src is None:
        if bench is not None:
            return bench.formula, bench.text
        if fallback is not None:
            return parse_formula_source(fallback, variables, dim=dim), fallback
        raise InputError("--formula is required")
    p = Path(src)
    try:
        text = p.read_text() if p.is_file() else src
    except OSError:
        text = src
    if bench is not None:
        # benchmark region macros are available to a user formula
        macros = "\n".join(line for line in bench.text.splitlines()[:-1])
        text = macros + "\n" + text if macros else text
    return parse_formula_source(text, variables, dim=dim), text


def _name_list(variables, n) -> list:
    inv = {i: name for name, i in variables.items()}
    return [inv.get(i, f"x{i}") for i in range(max(n, len(inv)))]


def _check_dims(formula, n):
    for p in predicates(formula):
        if p.dim != n:
            raise DimensionMismatch(f"formula predicates have dimension {p.dim}, state has {n}")


def _x0(args, model, bench):
    if getattr(args, "x0", None):
        mean = [float(v) for v in args.x0.split(",")]
        if len(mean) != model.n:
            raise DimensionMismatch(f"--x0 has {len(mean)} values, model state has {model.n}")
        return Belief.point(mean)
    if bench is not None:
        return bench.x0
    raise InputError("--x0 is required without --benchmark")


# -- subcommands


def _tree(f, names, depth=0) -> list:
    pad = "  " * depth
    if isinstance(f, TrueF):
        return [pad + "True"]
    if isinstance(f, Pred):
        return [pad + "Pred " + to_text(f, names).strip("()")]
    if isinstance(f, Not):
        return [pad + "Not"] + _tree(f.child, names, depth + 1)
    if isinstance(f, And):
        return [pad + "And"] + _tree(f.left, names, depth + 1) + _tree(f.right, names, depth + 1)
    if isinstance(f, Until):
        return [pad + f"Until {f.interval}"] + _tree(f.left, names, depth + 1) + _tree(f.right, names, depth + 1)
    raise TypeError(f"not a formula: {f!r}")


def cmd_parse(args):
    model, variables, bench = _context(args)
    formula, _ = _formula(args, variables, model.n if model else None, bench)
    _echo(args, variables=variables)
    dim = max((p.dim for p in predicates(formula)), default=0)
    names = _name_list(variables, dim)
    lines = [to_text(formula, names)] + _tree(formula, names) + [f"horizon: {_fmt(horizon(formula))}"]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _load_eval_inputs(args):
    model, variables, bench = _context(args)
    traj = load_trajectory(args.trajectory)
    grid_dt = args.grid_dt
    fallback = None
    complete = True
    if Path(args.trajectory).suffix.lower() == ".json":
        d = json.loads(Path(args.trajectory).read_text())
        complete = d.get("complete", True)
        fallback = d.get("formula")
        if d.get("variables") and model is None and not args.vars:
            variables = {name: i for i, name in enumerate(d["variables"])}
        if grid_dt is None:
            grid_dt = (d.get("config") or {}).get("grid_dt")
    formula, _ = _formula(args, variables, traj.means.shape[1], bench, fallback)
    _check_dims(formula, traj.means.shape[1])
    return formula, traj, grid_dt, variables, complete


def cmd_eval(args):
    """StoRI of the trajectory; the monitor interval for an incomplete plan file."""
    formula, traj, grid_dt, variables, complete = _load_eval_inputs(args)
    _echo(args, grid_dt=grid_dt, variables=variables)
    complete = complete or traj.duration >= horizon(formula) - 1e-9
    iv = (stori if complete else monitor)(formula, traj, EvalConfig(grid_dt=grid_dt))
    step = traj.dt if grid_dt is None else grid_dt
    doc = {
        "schema_version": 1,
        "kind": "stori",
        "low": iv.low,
        "high": iv.high,
        "storm": iv.low,
        "formula": to_text(formula, _name_list(variables, traj.means.shape[1])),
        "grid_dt": step,
        "n_points": int(round(traj.duration / step)) + 1,
        "complete": complete,
    }
    print(f"[{_fmt(iv.low)}, {_fmt(iv.high)}]")
    if args.out:
        dump_json(doc, args.out)
    return EXIT_OK


def cmd_monitor(args):
    formula, traj, grid_dt, variables, _ = _load_eval_inputs(args)
    _echo(args, grid_dt=grid_dt, variables=variables)
    rows = monitor_trace(formula, traj, EvalConfig(grid_dt=grid_dt))
    _emit(write_rows(["t", "low", "high"], rows), args.out)
    return EXIT_OK


def cmd_simulate(args):
    model, variables, bench = _context(args)
    if model is None:
        raise InputError("simulate needs --model or --benchmark")
    sol_doc = load_solution(args.plan)
    formula, _ = _formula(args, variables, model.n, bench, sol_doc.get("formula"))
    _check_dims(formula, model.n)
    _echo(args, variables=variables)
    sol = _SolutionView(sol_doc["trajectory"])
    rate = _bench.monte_carlo_satisfaction(model, sol, formula, args.n, args.seed)
    print(_fmt(rate))
    if args.out:
        dump_json(
            {
                "schema_version": 1,
                "kind": "satisfaction_rate",
                "rate": rate,
                "n": args.n,
                "seed": args.seed,
                "storm": sol_doc["storm"],
                "formula": to_text(formula, variables),
            },
            args.out,
        )
    return EXIT_OK


class _SolutionView:
    """Just enough of a Solution for Monte-Carlo simulation."""

    def __init__(self, traj):
        self.trajectory = traj

    @property
    def controls(self):
        return self.trajectory.control_inputs()


def _planner_config(args, bench) -> PlannerConfig:
    base = dict(bench.planner) if bench is not None else {}
    for key in ("kappa", "max_iters", "state_weight", "time_weight", "max_extend_duration", "grid_dt", "time_budget"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    base["seed"] = args.seed
    return PlannerConfig(**base)


def _plan_inputs(args):
    model, variables, bench = _context(args)
    if model is None:
        raise InputError("planning needs --model or --benchmark")
    formula, _ = _formula(args, variables, model.n, bench)
    _check_dims(formula, model.n)
    x0 = _x0(args, model, bench)
    cfg = _planner_config(args, bench)
    return model, variables, formula, x0, cfg


def _config_dict(cfg: PlannerConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def cmd_plan(args):
    model, variables, formula, x0, cfg = _plan_inputs(args)
    _echo(args, planner=_config_dict(cfg), variables=variables)
    sol = plan(model, formula, x0, cfg)
    if sol is None:
        print("no solution", file=sys.stderr)
        return EXIT_NO_SOLUTION
    doc = solution_to_dict(sol, formula, variables, _config_dict(cfg), cfg.seed)
    _emit(dump_json(doc), args.out)
    print(f"storm {_fmt(sol.storm)} after {sol.iterations_used} iterations", file=sys.stderr)
    return EXIT_OK


def cmd_ao_plan(args):
    model, variables, formula, x0, cfg = _plan_inputs(args)
    _echo(args, planner=_config_dict(cfg), variables=variables)
    sols = plan_ao(
        model,
        formula,
        x0,
        cfg,
        improvement_eps=args.improvement_eps,
        max_total_iters=args.total_iters,
        time_budget=args.total_time,
    )
    if not sols:
        print("no solution", file=sys.stderr)
        return EXIT_NO_SOLUTION
    best = sols[-1]
    doc = solution_to_dict(best, formula, variables, _config_dict(cfg), cfg.seed)
    doc["kind"] = "solution"
    doc["history"] = [
        {"storm": s.storm, "stori": [s.stori.low, s.stori.high], "kappa": s.kappa, "iterations_used": s.iterations_used}
        for s in sols
    ]
    doc["timing"]["history_elapsed_s"] = [s.elapsed_s for s in sols]
    _emit(dump_json(doc), args.out)
    print(f"{len(sols)} solutions, best storm {_fmt(best.storm)}", file=sys.stderr)
    return EXIT_OK


def _rows(dicts, columns):
    return [[d.get(c, "") for c in columns] for d in dicts]


def cmd_bench(args):
    trials = args.trials
    time_budget = args.time_budget
    scale = _bench.PAPER_SCALE if args.paper_scale else _bench.DESK_SCALE
    if trials is None:
        trials = scale["trials"]
    if time_budget is None and args.max_iters is None:
        time_budget = scale["time_budget"]
    kappas = [float(k) for k in args.kappas.split(",")] if args.kappas else None
    _echo(args, trials=trials, time_budget=time_budget)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    res = _bench.run_case_study(
        args.case,
        trials=trials,
        time_budget=time_budget,
        max_iters=args.max_iters,
        seed=args.seed,
        kappas=kappas,
        grid_dt=args.grid_dt,
        n_samples=args.samples,
        log=log,
    )
    summary = res.summary()
    summary["timing"]["trial_times"] = res.times
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        columns = list(dict.fromkeys(c for row in res.trials for c in row))
        write_rows(columns, _rows(res.trials, columns), out / "trials.csv")
        if res.case == 3:
            write_rows(
                ["trial", "seed", "index", "iterations", "best_storm"],
                _rows(res.curves, ["trial", "seed", "index", "iterations", "best_storm"]),
                out / "curves.csv",
            )
            # wall-clock version of the curves; the only timing-dependent CSV
            write_rows(
                ["trial", "elapsed_s", "best_storm"],
                _rows(res.curves, ["trial", "elapsed_s", "best_storm"]),
                out / "curves_elapsed.csv",
            )
        if res.case == 4:
            write_rows(["storm", "stori_high", "rate"], res.triples, out / "triples.csv")
        dump_json(summary, out / "summary.json")
    else:
        sys.stdout.write(dump_json(summary))
    for label, st in res.stats.items():
        print(
            f"{label}: success {st.success_rate:.2f}  mean time {st.mean_time:.2f} s  "
            f"storms {len(st.storm_values)}",
            file=sys.stderr,
        )
    return EXIT_OK


# -- argument parsing


def _common(p, model=True):
    if model:
        p.add_argument("--model", help="model JSON file")
        p.add_argument("--benchmark", help="bundled benchmark name or benchmark JSON")
    p.add_argument("--vars", help=f"comma-separated variable names without a model (default {DEFAULT_VARIABLES})")
    p.add_argument("--formula", help="formula text or a file holding it (macro lines allowed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path")
    p.add_argument("--grid-dt", dest="grid_dt", type=float, help="evaluation grid step (multiple of model dt)")


def _planner_flags(p):
    p.add_argument("--x0", help="initial mean as comma-separated values (zero covariance)")
    p.add_argument("--kappa", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--time-budget", dest="time_budget", type=float, help="seconds per planning query")
    p.add_argument("--max-extend", dest="max_extend_duration", type=float)
    p.add_argument("--state-weight", dest="state_weight", type=float)
    p.add_argument("--time-weight", dest="time_weight", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stori", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="print the formula tree and horizon")
    _common(p)
    p.set_defaults(func=cmd_parse)

    for name, func, helptext in (
        ("eval", cmd_eval, "StoRI of a belief trajectory"),
        ("monitor", cmd_monitor, "monitor interval over every prefix, as t,low,high rows"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--trajectory", required=True, help="trajectory CSV or solution JSON")
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="Monte-Carlo satisfaction rate of a plan")
    _common(p)
    p.add_argument("--plan", required=True, help="solution JSON")
    p.add_argument("-n", type=int, default=1000, help="number of realizations")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="one StoRM-constrained planning query")
    _common(p)
    _planner_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("ao-plan", help="anytime StoRM maximization")
    _common(p)
    _planner_flags(p)
    p.add_argument("--improvement-eps", dest="improvement_eps", type=float, default=1e-3)
    p.add_argument("--total-iters", dest="total_iters", type=int, help="iteration budget over all calls")
    p.add_argument("--total-time", dest="total_time", type=float, help="seconds over all calls")
    p.set_defaults(func=cmd_ao_plan)

    p = sub.add_parser("bench", help="run a case study")
    p.add_argument("--case", type=int, required=True, choices=[1, 2, 3, 4])
    p.add_argument("--trials", type=int)
    p.add_argument("--time-budget", dest="time_budget", type=float, help="seconds per query")
    p.add_argument("--max-iters", dest="max_iters", type=int, help="iterations per query")
    p.add_argument("--paper-scale", action="store_true", help="100 trials and 300 s per query")
    p.add_argument("--kappas", help="comma-separated kappa levels (cases 1 and 4)")
    p.add_argument("--samples", type=int, default=1000, help="realizations per plan (case 4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-dt", dest="grid_dt", type=float)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormulaSyntaxError as e:
        print(f"parse error: {e}", file=sys.stderr)
    except HorizonError as e:
        print(f"horizon too short: {e}", file=sys.stderr)
    except DimensionMismatch as e:
        print(f"dimension mismatch: {e}", file=sys.stderr)
    except DynamicsError as e:
        print(f"dynamics error: {e}", file=sys.stderr)
    except (InputError, ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        print(f"input error: {e}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
