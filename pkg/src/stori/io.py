"""File formats: model JSON, trajectory CSV, formula text, solution JSON.

Floats are written with ``repr`` precision so every file round-trips exactly.
Anything nondeterministic (wall-clock durations, timestamps) is kept under a
top-level ``timing`` key, which replay comparisons ignore.
"""

from __future__ import annotations

import csv
import io as _io
import json
import re
from pathlib import Path

import numpy as np

from .belief import Belief, BeliefTrajectory, ControlInput, LinearSystemModel
from .robustness import RobustnessInterval
from .stl import Formula, parse_formula, to_text

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "model_to_dict",
    "model_from_dict",
    "load_model",
    "save_model",
    "trajectory_to_csv",
    "trajectory_from_csv",
    "load_trajectory",
    "save_trajectory",
    "parse_formula_source",
    "read_formula",
    "solution_to_dict",
    "load_solution",
    "dump_json",
    "write_rows",
]


def model_to_dict(model: LinearSystemModel) -> dict:
    return {
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "G": model.G.tolist(),
        "Q": model.Q.tolist(),
        "dt": model.dt,
        "control_bounds": model.control_bounds.tolist(),
        "state_bounds": model.state_bounds.tolist(),
        "variables": dict(model.variables),
    }


def model_from_dict(d: dict) -> LinearSystemModel:
    missing = {"A", "B", "G", "Q", "control_bounds", "state_bounds"} - set(d)
    if missing:
        raise ValueError(f"model is missing {sorted(missing)}")
    return LinearSystemModel(
        A=d["A"],
        B=d["B"],
        G=d["G"],
        Q=d["Q"],
        control_bounds=d["control_bounds"],
        state_bounds=d["state_bounds"],
        dt=d.get("dt", 0.1),
        variables={str(k): int(v) for k, v in d.get("variables", {}).items()},
    )


def load_model(path) -> LinearSystemModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: LinearSystemModel, path):
    dump_json(model_to_dict(model), path)


def trajectory_to_csv(traj: BeliefTrajectory) -> str:
    n = traj.means.shape[1]
    header = ["t"] + [f"x{i}" for i in range(n)] + [f"P{i}{j}" for i in range(n) for j in range(n)]
    rows = [header]
    for k in range(len(traj)):
        vals = [k * traj.dt] + list(traj.means[k]) + list(traj.covariances[k].ravel())
        rows.append([repr(float(v)) for v in vals])
    buf = _io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def trajectory_from_csv(text: str) -> BeliefTrajectory:
    reader = csv.reader(_io.StringIO(text))
    header = next(reader, None)
    if not header or header[0] != "t":
        raise ValueError("trajectory CSV must start with a 't' column")
    n = sum(1 for h in header if re.fullmatch(r"x\d+", h))
    if len(header) != 1 + n + n * n:
        raise ValueError(f"expected {1 + n + n * n} columns for state dimension {n}, got {len(header)}")
    data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    if len(data) == 0:
        raise ValueError("trajectory CSV has no rows")
    t = data[:, 0]
    dt = t[1] - t[0] if len(t) > 1 else 1.0
    if len(t) > 1 and not np.allclose(np.diff(t), dt, rtol=0, atol=1e-9):
        raise ValueError("trajectory times must be uniformly spaced")
    if abs(t[0]) > 1e-12:
        raise ValueError("trajectory must start at t = 0")
    return BeliefTrajectory(float(dt), data[:, 1 : 1 + n], data[:, 1 + n :].reshape(-1, n, n))


def load_trajectory(path) -> BeliefTrajectory:
    """Trajectory from a CSV file or from the arrays of a solution JSON."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        d = json.loads(text)
        ctrl = d.get("controls_per_step")
        return BeliefTrajectory(d["dt"], d["means"], d["covariances"], ctrl)
    return trajectory_from_csv(text)


def save_trajectory(traj: BeliefTrajectory, path):
    Path(path).write_text(trajectory_to_csv(traj))


_RESERVED = {"F", "G", "U", "T"}
_MACRO = re.compile(r"^\s*([A-Za-z_]\w*)\s*=(?![=<>])\s*(.+?)\s*$")


def parse_formula_source(text: str, variables, dim=None) -> Formula:
    """Formula text, optionally preceded by ``Name = formula`` macro lines.

    Lines starting with ``#`` are comments.  Macros may use earlier macros.
    """
    macros = {}
    body = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _MACRO.match(line)
        if m and not body:
            if m.group(1) in _RESERVED:
                raise ValueError(f"macro name {m.group(1)!r} is reserved")
            macros[m.group(1)] = parse_formula(m.group(2), variables, macros, dim=dim)
        else:
            body.append(line)
    if not body:
        raise ValueError("no formula found")
    return parse_formula("\n".join(body), variables, macros, dim=dim)


def read_formula(source: str, variables, dim=None) -> tuple:
    """``(formula, text)`` from a path if it exists, else from the string itself."""
    p = Path(source)
    try:
        is_file = p.is_file()
    except OSError:
        is_file = False
    text = p.read_text() if is_file else source
    return parse_formula_source(text, variables, dim=dim), text


def _names(variables) -> list:
    if isinstance(variables, dict):
        return sorted(variables, key=variables.get)
    return list(variables)


def solution_to_dict(sol, formula: Formula, variables, config: dict, seed: int) -> dict:
    traj = sol.trajectory
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "solution",
        "formula": to_text(formula, variables),
        "variables": _names(variables),
        "seed": seed,
        "config": config,
        "kappa": sol.kappa,
        "storm": sol.storm,
        "stori": [sol.stori.low, sol.stori.high],
        "complete": sol.complete,
        "iterations_used": sol.iterations_used,
        "tree_size": sol.tree_size,
        "dt": traj.dt,
        "times": traj.times.tolist(),
        "means": traj.means.tolist(),
        "covariances": traj.covariances.tolist(),
        "controls": [{"u": c.u.tolist(), "duration": c.duration} for c in sol.controls],
        "controls_per_step": traj.controls.tolist(),
        "timing": {"elapsed_s": sol.elapsed_s},
    }


def load_solution(path) -> dict:
    """Solution JSON with ``trajectory``, ``controls``, ``x0`` and ``stori`` decoded."""
    with open(path) as fh:
        d = json.load(fh)
    if d.get("kind") != "solution":
        raise ValueError(f"{path} is not a solution file")
    d["trajectory"] = BeliefTrajectory(d["dt"], d["means"], d["covariances"], d.get("controls_per_step"))
    d["controls"] = [ControlInput(c["u"], c["duration"]) for c in d["controls"]]
    d["x0"] = Belief(d["means"][0], d["covariances"][0])
    d["stori"] = RobustnessInterval(*d["stori"])
    return d


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def write_rows(header, rows, path=None) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
