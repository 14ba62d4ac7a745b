"""Kinodynamic RRT over Gaussian beliefs with a StoRM constraint.

Each iteration samples a target state and time, extends the nearest node with
a random constant control (edges whose mean leaves the state bounds are
invalid), and keeps the new node only if the monitor of its
root-to-node prefix still leaves room for a StoRM above ``kappa``.  The first
node whose prefix is guaranteed to exceed ``kappa`` is returned.

:func:`plan_ao` turns this into an anytime optimizer by re-planning with the
previous solution's StoRM as the next threshold.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .belief import (
    Belief,
    BeliefTrajectory,
    ControlInput,
    DynamicsError,
    LinearSystemModel,
    propagate_control,
)
from .robustness import Evaluator, RobustnessInterval
from .stl import Formula

__all__ = [
    "PlannerConfig",
    "TreeNode",
    "Solution",
    "Planner",
    "plan",
    "plan_ao",
]


@dataclass(frozen=True)
class PlannerConfig:
    kappa: float = 0.0
    max_iters: int = 5000
    state_weight: float = 1.0
    time_weight: float = 1.0
    max_extend_duration: float = 1.0
    seed: int = 0
    grid_dt: float | None = None
    time_budget: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.kappa < 1.0:
            raise ValueError("kappa must lie in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.state_weight < 0 or self.time_weight < 0 or self.state_weight + self.time_weight == 0:
            raise ValueError("metric weights must be nonnegative and not both zero")
        if not self.max_extend_duration > 0:
            raise ValueError("max_extend_duration must be positive")
        if self.grid_dt is not None and not self.grid_dt > 0:
            raise ValueError("grid_dt must be positive")
        if self.time_budget is not None and not self.time_budget > 0:
            raise ValueError("time_budget must be positive")


@dataclass(eq=False)
class TreeNode:
    belief: Belief
    time: float
    parent: "TreeNode | None" = None
    incoming_control: ControlInput | None = None
    index: int = 0
    # model-step means/covariances of the incoming edge, start excluded
    _seg_means: np.ndarray | None = field(default=None, repr=False)
    _seg_covs: np.ndarray | None = field(default=None, repr=False)
    # predicate probabilities on the evaluation grid, root to this node
    _probs: np.ndarray | None = field(default=None, repr=False)

    def path(self) -> list:
        out, node = [], self
        while node is not None:
            out.append(node)
            node = node.parent
        return out[::-1]


@dataclass(frozen=True, eq=False)
class Solution:
    """Root-to-node belief trajectory meeting the query's threshold.

    ``complete`` is False when the trajectory is shorter than the formula
    horizon; ``stori`` is then the monitor interval, which encloses the StoRI
    of every extension.
    """

    trajectory: BeliefTrajectory
    storm: float
    stori: RobustnessInterval
    iterations_used: int
    complete: bool = True
    kappa: float = 0.0
    tree_size: int = 1
    elapsed_s: float = 0.0

    @property
    def controls(self) -> list:
        return self.trajectory.control_inputs()


class Planner:
    """One planning query.  ``run`` returns a :class:`Solution` or None.

    After ``run``, ``iterations`` and ``nodes`` describe the search, which is
    fully determined by ``cfg.seed`` unless ``cfg.time_budget`` cuts it short.
    """

    def __init__(self, model: LinearSystemModel, formula: Formula, x0: Belief, cfg: PlannerConfig):
        if x0.mean.shape != (model.n,):
            raise DynamicsError(f"x0 has dimension {x0.mean.shape[0]}, model has {model.n}")
        self.model, self.formula, self.cfg = model, formula, cfg
        self.grid_dt = model.dt if cfg.grid_dt is None else float(cfg.grid_dt)
        stride = round(self.grid_dt / model.dt)
        if stride < 1 or abs(stride * model.dt - self.grid_dt) > 1e-9:
            raise ValueError(f"grid_dt {self.grid_dt} is not a multiple of model dt {model.dt}")
        self.stride = stride
        self.evaluator = Evaluator(formula, self.grid_dt)
        self.horizon = self.evaluator.horizon
        self.max_k = max(1, int(np.floor(cfg.max_extend_duration / self.grid_dt + 1e-9)))
        self.iterations = 0
        self.nodes: list = []
        self._means = np.empty((64, model.n))
        self._times = np.empty(64)
        self._xlo, self._xhi = model.state_bounds[:, 0], model.state_bounds[:, 1]

    # -- tree bookkeeping

    def _add(self, node: TreeNode):
        k = len(self.nodes)
        if k == len(self._times):
            self._means = np.concatenate([self._means, np.empty_like(self._means)])
            self._times = np.concatenate([self._times, np.empty_like(self._times)])
        node.index = k
        self._means[k] = node.belief.mean
        self._times[k] = node.time
        self.nodes.append(node)

    def _nearest(self, x, t) -> TreeNode:
        k = len(self.nodes)
        d = self.cfg.state_weight * np.linalg.norm(self._means[:k] - x, axis=1)
        d += self.cfg.time_weight * np.abs(self._times[:k] - t)
        return self.nodes[int(np.argmin(d))]

    def _root(self, x0: Belief) -> TreeNode:
        root = TreeNode(x0, 0.0)
        root._probs = self.evaluator.probabilities(x0.mean[None], x0.covariance[None])
        return root

    def _extend(self, parent: TreeNode, u, k_grid: int) -> TreeNode | None:
        """Child of ``parent`` under control ``u`` for ``k_grid`` grid steps.

        None when the mean leaves the state bounds on the way.
        """
        duration = k_grid * self.grid_dt
        ctrl = ControlInput(u, duration)
        means, covs = propagate_control(self.model, parent.belief, ctrl, self.model.dt)
        if np.any(means < self._xlo) or np.any(means > self._xhi):
            return None
        grid = slice(self.stride - 1, None, self.stride)
        probs = self.evaluator.probabilities(means[grid], covs[grid])
        node = TreeNode(
            Belief(means[-1], covs[-1]),
            parent.time + duration,
            parent,
            ctrl,
            _seg_means=means,
            _seg_covs=covs,
            _probs=np.concatenate([parent._probs, probs]),
        )
        return node

    def trajectory(self, node: TreeNode) -> BeliefTrajectory:
        path = node.path()
        root = path[0].belief
        means = [root.mean[None]] + [p._seg_means for p in path[1:]]
        covs = [root.covariance[None]] + [p._seg_covs for p in path[1:]]
        us = [np.repeat(p.incoming_control.u[None], len(p._seg_means), axis=0) for p in path[1:]]
        ctrl = np.concatenate(us) if us else np.zeros((0, self.model.m))
        return BeliefTrajectory(self.model.dt, np.concatenate(means), np.concatenate(covs), ctrl)

    # -- search

    def run(self, x0: Belief) -> Solution | None:
        cfg, model = self.cfg, self.model
        rng = np.random.default_rng(cfg.seed)
        xlo, xhi = model.state_bounds[:, 0], model.state_bounds[:, 1]
        ulo, uhi = model.control_bounds[:, 0], model.control_bounds[:, 1]
        deadline = None if cfg.time_budget is None else time.perf_counter() + cfg.time_budget
        start = time.perf_counter()
        self._add(self._root(x0))
        for it in range(1, cfg.max_iters + 1):
            if deadline is not None and time.perf_counter() > deadline:
                break
            self.iterations = it
            x_rand = rng.uniform(xlo, xhi)
            t_rand = rng.uniform(0.0, self.horizon)
            near = self._nearest(x_rand, t_rand)
            u = rng.uniform(ulo, uhi)
            k = int(rng.integers(1, self.max_k + 1))
            try:
                node = self._extend(near, u, k)
            except DynamicsError:
                continue
            if node is None:
                continue
            probs = node._probs
            bound = self.evaluator.monitor(probs)
            if bound.high <= cfg.kappa:
                continue
            complete = self.evaluator.covers_horizon(len(probs))
            iv = self.evaluator.stori(probs) if complete else bound
            if iv.low > cfg.kappa:
                self._add(node)
                return Solution(
                    trajectory=self.trajectory(node),
                    storm=iv.low,
                    stori=iv,
                    iterations_used=it,
                    complete=complete,
                    kappa=cfg.kappa,
                    tree_size=len(self.nodes),
                    elapsed_s=time.perf_counter() - start,
                )
            # past the horizon the StoRI no longer changes, so extensions are useless
            if not complete:
                self._add(node)
        return None


def plan(model: LinearSystemModel, formula: Formula, x0: Belief, cfg: PlannerConfig) -> Solution | None:
    """Single StoRM-constrained planning query."""
    return Planner(model, formula, x0, cfg).run(x0)


def plan_ao(
    model: LinearSystemModel,
    formula: Formula,
    x0: Belief,
    cfg: PlannerConfig,
    improvement_eps: float = 1e-3,
    max_total_iters: int | None = None,
    time_budget: float | None = None,
) -> list:
    """Anytime StoRM maximization by repeated planning.

    Call ``k + 1`` uses ``kappa = storm(solution k)``.  The iteration and
    wall-clock budgets are shared across calls; the loop also stops when an
    inner call fails or ``1 - storm < improvement_eps``.  Each inner call
    gets its own seed spawned from ``cfg.seed``.
    """
    if not improvement_eps > 0:
        raise ValueError("improvement_eps must be positive")
    if max_total_iters is None and time_budget is None:
        max_total_iters = cfg.max_iters
    seeds = np.random.SeedSequence(cfg.seed)
    start = time.perf_counter()
    used = 0
    kappa = cfg.kappa
    out = []
    while True:
        iters = cfg.max_iters if max_total_iters is None else min(cfg.max_iters, max_total_iters - used)
        remaining = None if time_budget is None else time_budget - (time.perf_counter() - start)
        if iters < 1 or (remaining is not None and remaining <= 0):
            break
        child = int(seeds.spawn(1)[0].generate_state(1)[0])
        inner = PlannerConfig(
            kappa=kappa,
            max_iters=iters,
            state_weight=cfg.state_weight,
            time_weight=cfg.time_weight,
            max_extend_duration=cfg.max_extend_duration,
            seed=child,
            grid_dt=cfg.grid_dt,
            time_budget=remaining,
        )
        p = Planner(model, formula, x0, inner)
        sol = p.run(x0)
        used += p.iterations
        if sol is None:
            break
        sol = Solution(
            trajectory=sol.trajectory,
            storm=sol.storm,
            stori=sol.stori,
            iterations_used=used,
            complete=sol.complete,
            kappa=kappa,
            tree_size=sol.tree_size,
            elapsed_s=time.perf_counter() - start,
        )
        out.append(sol)
        kappa = sol.storm
        if 1.0 - kappa < improvement_eps:
            break
    return out
