"""Stochastic robustness of belief trajectories against STL formulas.

Every subformula is turned into a pair of signals ``(low, high)`` on the
evaluation grid, bottom-up.  Predicates give the Gaussian probability
``P(h(x) >= 0)`` at each grid point, negation complements and swaps the
bounds, conjunction applies the Boole-Frechet bounds, and until takes the
best grid time in its window of the Frechet combination of the right operand
with the running minimum of the left operand.

The monitor reuses the same recursion on a trajectory prefix with two extra
rules for until, which keep it an enclosure of the interval of every
extension of the prefix:

* the lower bound is 0 while the prefix has not yet reached the window start;
* the upper bound is at least the running minimum of the left operand's upper
  bound over ``[0, min(b, prefix end)]`` (some extension could still satisfy
  the right operand right after the prefix ends).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erfc

from .belief import Belief, BeliefTrajectory
from .stl import (
    TIME_TOL,
    And,
    Formula,
    HorizonError,
    LinearPredicate,
    Not,
    Pred,
    TrueF,
    Until,
    horizon,
    predicates,
    window_offsets,
)

__all__ = [
    "RobustnessInterval",
    "EvalConfig",
    "predicate_probability",
    "predicate_probabilities",
    "Evaluator",
    "stori",
    "storm",
    "monitor",
    "monitor_trace",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class RobustnessInterval:
    low: float
    high: float

    def __post_init__(self):
        low, high = float(self.low), float(self.high)
        if not 0.0 <= low <= high <= 1.0:
            raise ValueError(f"invalid robustness interval [{low}, {high}]")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    def contains(self, other: "RobustnessInterval", tol: float = 0.0) -> bool:
        return self.low <= other.low + tol and other.high <= self.high + tol

    @property
    def width(self) -> float:
        return self.high - self.low

    def __iter__(self):
        yield self.low
        yield self.high

    def __str__(self):
        return f"[{self.low:.6g}, {self.high:.6g}]"


@dataclass(frozen=True)
class EvalConfig:
    """``grid_dt`` must be a multiple of the trajectory step (None: use it)."""

    grid_dt: float | None = None
    prob_tolerance: float = 1e-12


def predicate_probabilities(means, covs, preds, tol: float = 1e-12) -> np.ndarray:
    """``P(h_j(x_k) >= 0)`` for beliefs ``k`` and predicates ``j``, shape (K, J)."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float).reshape(len(means), means.shape[1], means.shape[1])
    if not preds:
        return np.zeros((len(means), 0))
    a = np.array([p.coefficients for p in preds])
    if a.shape[1] != means.shape[1]:
        raise ValueError(f"predicate dimension {a.shape[1]} != state dimension {means.shape[1]}")
    c = np.array([p.offset for p in preds])
    mu = means @ a.T + c
    var = np.einsum("ji,kil,jl->kj", a, covs, a)
    degenerate = var <= tol
    sigma = np.sqrt(np.where(degenerate, 1.0, np.maximum(var, 0.0)))
    prob = 0.5 * erfc(-mu / (sigma * _SQRT2))
    return np.where(degenerate, (mu >= 0).astype(float), prob)


def predicate_probability(b: Belief, p: LinearPredicate, tol: float = 1e-12) -> float:
    """Probability that ``h(x) >= 0`` for ``x ~ b``."""
    return float(predicate_probabilities(b.mean[None], b.covariance[None], [p], tol)[0, 0])


class Evaluator:
    """A formula bound to an evaluation grid step.

    Separating this from :func:`stori` lets callers (the planner) cache
    per-node predicate probabilities and evaluate many prefixes cheaply.
    """

    def __init__(self, formula: Formula, dt: float, prob_tolerance: float = 1e-12):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.formula = formula
        self.dt = float(dt)
        self.prob_tolerance = prob_tolerance
        self.predicates = predicates(formula)
        self._index = {p: j for j, p in enumerate(self.predicates)}
        self.horizon = horizon(formula)
        self._windows = {}
        self._compile()

    def _compile(self):
        # Flatten into a program of unique nodes, children before parents.
        # Not(Not(x)) is an alias of x, so double negation is exact.
        ids, ops = {}, []

        def visit(node):
            if node in ids:
                return ids[node]
            if isinstance(node, Not) and isinstance(node.child, Not):
                k = visit(node.child.child)
            elif isinstance(node, TrueF):
                k = len(ops)
                ops.append(("true",))
            elif isinstance(node, Pred):
                k = len(ops)
                ops.append(("pred", self._index[node.predicate]))
            elif isinstance(node, Not):
                c = visit(node.child)
                k = len(ops)
                ops.append(("not", c))
            elif isinstance(node, And):
                a, b = visit(node.left), visit(node.right)
                k = len(ops)
                ops.append(("and", a, b))
            elif isinstance(node, Until):
                a, b = visit(node.left), visit(node.right)
                k = len(ops)
                ops.append(("until", a, b, node.interval) + self._window(node.interval))
            else:
                raise TypeError(f"not a formula: {node!r}")
            ids[node] = k
            return k

        self._root = visit(self.formula)
        self._ops = ops

    def probabilities(self, means, covs) -> np.ndarray:
        return predicate_probabilities(means, covs, self.predicates, self.prob_tolerance)

    def covers_horizon(self, n_points: int) -> bool:
        return (n_points - 1) * self.dt >= self.horizon - 1e-9

    def stori(self, probs: np.ndarray) -> RobustnessInterval:
        if not self.covers_horizon(len(probs)):
            raise HorizonError(
                f"trajectory spans {(len(probs) - 1) * self.dt:g} s, "
                f"formula horizon is {self.horizon:g} s"
            )
        low, high = self.signals(probs, monitor=False, length=1)
        return RobustnessInterval(low[0], high[0])

    def monitor(self, probs: np.ndarray) -> RobustnessInterval:
        if len(probs) < 1:
            raise ValueError("monitor needs a nonempty prefix")
        low, high = self.signals(probs, monitor=True, length=1)
        return RobustnessInterval(low[0], high[0])

    def signals(self, probs: np.ndarray, monitor: bool = False, length: int | None = None):
        """``(low, high)`` of the root formula at grid indices ``0 .. length-1``.

        Every subformula is only evaluated on the indices its parents read,
        so asking for the root value alone is much cheaper than the full
        signal.
        """
        probs = np.asarray(probs, dtype=float)
        n = len(probs)
        ops = self._ops
        need = [0] * len(ops)
        need[self._root] = n if length is None else min(int(length), n)
        for k in range(len(ops) - 1, -1, -1):
            m = need[k]
            if not m:
                continue
            op = ops[k]
            kind = op[0]
            if kind == "until":
                child = min(n, m + op[5])
                need[op[1]] = max(need[op[1]], child)
                need[op[2]] = max(need[op[2]], child)
            elif kind == "not":
                need[op[1]] = max(need[op[1]], m)
            elif kind == "and":
                need[op[1]] = max(need[op[1]], m)
                need[op[2]] = max(need[op[2]], m)
        out = [None] * len(ops)
        for k, op in enumerate(ops):
            m = need[k]
            if not m:
                continue
            kind = op[0]
            if kind == "true":
                out[k] = (np.ones(m), np.ones(m))
            elif kind == "pred":
                p = probs[:m, op[1]]
                out[k] = (p, p)
            elif kind == "not":
                lo, hi = out[op[1]]
                out[k] = (1.0 - hi[:m], 1.0 - lo[:m])
            elif kind == "and":
                (l1, h1), (l2, h2) = out[op[1]], out[op[2]]
                hi = np.minimum(h1[:m], h2[:m])
                # rounding can lift l1 + l2 - 1 a few ulps above hi
                out[k] = (np.minimum(np.maximum(l1[:m] + l2[:m] - 1.0, 0.0), hi), hi)
            else:
                out[k] = self._until(op, out[op[1]], out[op[2]], n, m, monitor)
        return out[self._root]

    def _window(self, interval):
        w = self._windows.get(interval)
        if w is None:
            offsets = window_offsets(interval, self.dt)
            last = int(math.floor(interval.upper / self.dt + 1e-9))
            w = self._windows[interval] = (offsets, last)
        return w

    @staticmethod
    def _padded(sig, size, fill):
        if len(sig) >= size:
            return sig[:size]
        return np.concatenate([sig, np.full(size - len(sig), fill)])

    @classmethod
    def _rows(cls, sig, size, fill, win):
        x = cls._padded(sig, size, fill)
        # a single row needs no strided view
        return x[None, :] if size == win else sliding_window_view(x, win)

    def _until(self, op, left, right, n, m, monitor):
        _, _, _, interval, offsets, last = op
        (l1, h1), (l2, h2) = left, right
        # Rows are start indices i < m, columns offsets 0..last.  Padding past
        # the data is masked out below and is neutral for the running minimum.
        size = m + last
        win = last + 1
        cm_lo = np.minimum.accumulate(self._rows(l1, size, 1.0, win), axis=1)
        cm_hi = np.minimum.accumulate(self._rows(h1, size, 1.0, win), axis=1)
        r_lo = self._rows(l2, size, 0.0, win)[:, offsets]
        r_hi = self._rows(h2, size, 0.0, win)[:, offsets]
        idx = np.arange(m)
        valid = idx[:, None] + offsets[None, :] <= n - 1
        cand_hi = np.where(valid, np.minimum(r_hi, cm_hi[:, offsets]), 0.0)
        cand_lo = np.where(valid, np.maximum(r_lo + cm_lo[:, offsets] - 1.0, 0.0), 0.0)
        cand_lo = np.minimum(cand_lo, cand_hi)
        low = cand_lo.max(axis=1, initial=0.0)
        high = cand_hi.max(axis=1, initial=0.0)
        if monitor:
            remaining = n - 1 - idx
            low = np.where(remaining * self.dt >= interval.lower - TIME_TOL, low, 0.0)
            tail = cm_hi[idx, np.minimum(remaining, last)]
            high = np.maximum(high, tail)
        return low, high


def _grid(traj: BeliefTrajectory, cfg: EvalConfig | None):
    cfg = cfg or EvalConfig()
    if cfg.grid_dt is None:
        return traj.means, traj.covariances, traj.dt, cfg
    stride = round(cfg.grid_dt / traj.dt)
    if stride < 1 or abs(stride * traj.dt - cfg.grid_dt) > 1e-9:
        raise ValueError(f"grid_dt {cfg.grid_dt} is not a multiple of trajectory dt {traj.dt}")
    return traj.means[::stride], traj.covariances[::stride], stride * traj.dt, cfg


def stori(f: Formula, traj: BeliefTrajectory, cfg: EvalConfig | None = None) -> RobustnessInterval:
    """Stochastic robustness interval of a complete belief trajectory."""
    means, covs, dt, cfg = _grid(traj, cfg)
    ev = Evaluator(f, dt, cfg.prob_tolerance)
    return ev.stori(ev.probabilities(means, covs))


def storm(f: Formula, traj: BeliefTrajectory, cfg: EvalConfig | None = None) -> float:
    """Stochastic robustness measure: the lower end of :func:`stori`."""
    return stori(f, traj, cfg).low


def monitor(f: Formula, prefix: BeliefTrajectory, cfg: EvalConfig | None = None) -> RobustnessInterval:
    """Interval enclosing the StoRI of every extension of ``prefix``."""
    means, covs, dt, cfg = _grid(prefix, cfg)
    ev = Evaluator(f, dt, cfg.prob_tolerance)
    return ev.monitor(ev.probabilities(means, covs))


def monitor_trace(f: Formula, traj: BeliefTrajectory, cfg: EvalConfig | None = None):
    """``[(t, low, high), ...]`` of the monitor over every grid prefix."""
    means, covs, dt, cfg = _grid(traj, cfg)
    ev = Evaluator(f, dt, cfg.prob_tolerance)
    probs = ev.probabilities(means, covs)
    rows = []
    for k in range(1, len(probs) + 1):
        iv = ev.monitor(probs[:k])
        rows.append(((k - 1) * dt, iv.low, iv.high))
    return rows
