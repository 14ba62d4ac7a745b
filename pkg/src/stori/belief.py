"""Gaussian belief propagation for linear SDEs.

The system is ``dx = (A x + B u) dt + G dw`` with ``w`` a Wiener process of
diffusion ``Q``.  Its belief stays Gaussian, with mean and covariance obeying

    mean' = A mean + B u
    P'    = A P + P A^T + G Q G^T

which we integrate with fixed-step RK4 on a uniform grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .stl import StateTrajectory

__all__ = [
    "PSD_TOL",
    "DynamicsError",
    "LinearSystemModel",
    "Belief",
    "ControlInput",
    "BeliefTrajectory",
    "propagate_belief",
    "propagate_control",
    "rollout",
    "suffix",
    "psd_sqrt",
    "sample_realization",
    "sample_realizations",
    "double_integrator",
]

PSD_TOL = 1e-9


class DynamicsError(ValueError):
    """Inconsistent model data or a divergent integration."""


def _frozen(a, ndim=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DynamicsError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_psd(M: np.ndarray, what: str):
    if not np.allclose(M, M.T, atol=1e-12, rtol=1e-9):
        raise DynamicsError(f"{what} must be symmetric")
    if M.size and np.linalg.eigvalsh(M).min() < -PSD_TOL:
        raise DynamicsError(f"{what} must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class LinearSystemModel:
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    control_bounds: np.ndarray
    state_bounds: np.ndarray
    dt: float = 0.1
    variables: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        A, B, G, Q = (_frozen(m, 2) for m in (self.A, self.B, self.G, self.Q))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DynamicsError(f"A must be square, got {A.shape}")
        if B.shape[0] != n or G.shape[0] != n:
            raise DynamicsError("B and G need one row per state")
        if Q.shape != (G.shape[1], G.shape[1]):
            raise DynamicsError(f"Q must be {G.shape[1]}x{G.shape[1]}, got {Q.shape}")
        _check_psd(Q, "Q")
        ub = _frozen(self.control_bounds, 2)
        xb = _frozen(self.state_bounds, 2)
        if ub.shape != (B.shape[1], 2) or xb.shape != (n, 2):
            raise DynamicsError("bounds must be [[lo, hi], ...] per control / state")
        if np.any(ub[:, 0] > ub[:, 1]) or np.any(xb[:, 0] > xb[:, 1]):
            raise DynamicsError("bounds need lo <= hi")
        if not self.dt > 0:
            raise DynamicsError("dt must be positive")
        for name, idx in dict(self.variables).items():
            if not 0 <= idx < n:
                raise DynamicsError(f"variable {name!r} -> index {idx} out of range")
        for attr, val in zip("ABGQ", (A, B, G, Q)):
            object.__setattr__(self, attr, val)
        object.__setattr__(self, "control_bounds", ub)
        object.__setattr__(self, "state_bounds", xb)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "variables", dict(self.variables))
        object.__setattr__(self, "_W", _frozen(G @ Q @ G.T))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def process_noise(self) -> np.ndarray:
        """G Q G^T."""
        return self._W

    def variable_names(self) -> list:
        inv = {i: k for k, i in self.variables.items()}
        return [inv.get(i, f"x{i}") for i in range(self.n)]


@dataclass(frozen=True, eq=False)
class Belief:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = _frozen(np.ravel(self.mean))
        n = mean.shape[0]
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(n)
        if cov.shape != (n, n):
            raise DynamicsError(f"covariance must be {n}x{n}, got {cov.shape}")
        _check_psd(cov, "covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", _frozen(cov))

    @classmethod
    def point(cls, mean) -> "Belief":
        mean = np.ravel(np.asarray(mean, dtype=float))
        return cls(mean, np.zeros((len(mean), len(mean))))


@dataclass(frozen=True, eq=False)
class ControlInput:
    u: np.ndarray
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(np.ravel(self.u)))
        object.__setattr__(self, "duration", float(self.duration))
        if not self.duration > 0:
            raise DynamicsError("control duration must be positive")

    def steps(self, dt: float) -> int:
        k = round(self.duration / dt)
        if k < 1 or abs(k * dt - self.duration) > 1e-9:
            raise DynamicsError(f"duration {self.duration} is not a multiple of dt={dt}")
        return k


def propagate_belief(model: LinearSystemModel, b: Belief, u, dt: float) -> Belief:
    """One RK4 step of the mean and covariance ODEs under constant ``u``."""
    if not dt > 0:
        raise DynamicsError("dt must be positive")
    u = u.u if isinstance(u, ControlInput) else np.ravel(np.asarray(u, dtype=float))
    if u.shape != (model.m,) or b.mean.shape != (model.n,):
        raise DynamicsError("belief/control dimension does not match the model")
    Tm, SBm, Tp, cp = _rk4_maps(model, dt)
    with np.errstate(over="ignore", invalid="ignore"):
        mean = Tm @ b.mean + SBm @ u
        P = (Tp @ b.covariance.ravel() + cp).reshape(model.n, model.n)
        P = 0.5 * (P + P.T)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(P))):
        raise DynamicsError("belief propagation diverged (non-finite result)")
    return Belief(mean, P)


def _rk4_maps(model: LinearSystemModel, h: float):
    """One RK4 step as affine maps, cached per step size.

    For ``y' = L y + w`` a classical RK4 step is exactly
    ``y+ = T(hL) y + h S(hL) w`` with the truncated series
    ``T = I + hL + (hL)^2/2 + (hL)^3/6 + (hL)^4/24`` and
    ``S = I + hL/2 + (hL)^2/6 + (hL)^3/24``.  The covariance uses the
    row-major vectorization ``L = A (x) I + I (x) A``.
    """
    cache = model.__dict__.setdefault("_rk4_cache", {})
    key = float(h)
    if key not in cache:
        n = model.n

        def series(L):
            hL = h * L
            I = np.eye(len(L))
            hL2 = hL @ hL
            hL3 = hL2 @ hL
            T = I + hL + hL2 / 2 + hL3 / 6 + hL3 @ hL / 24
            S = I + hL / 2 + hL2 / 6 + hL3 / 24
            return T, h * S

        Tm, Sm = series(model.A)
        L = np.kron(model.A, np.eye(n)) + np.kron(np.eye(n), model.A)
        Tp, Sp = series(L)
        cache[key] = (Tm, Sm @ model.B, Tp, Sp @ model.process_noise.ravel())
    return cache[key]


def propagate_control(model, b: Belief, control: ControlInput, dt: float):
    """Means ``(k, n)`` and covariances ``(k, n, n)`` after each of the k steps."""
    k = control.steps(dt)
    n = model.n
    Tm, SBm, Tp, cp = _rk4_maps(model, dt)
    drive = SBm @ control.u
    mean, p = b.mean, b.covariance.ravel()
    means = np.empty((k, n))
    covs = np.empty((k, n, n))
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(k):
            mean = Tm @ mean + drive
            P = (Tp @ p + cp).reshape(n, n)
            P = 0.5 * (P + P.T)
            p = P.ravel()
            means[i], covs[i] = mean, P
    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
        raise DynamicsError("belief propagation diverged (non-finite result)")
    return means, covs


@dataclass(frozen=True, eq=False)
class BeliefTrajectory:
    """Beliefs on the uniform grid 0, dt, 2dt, ...

    ``controls[k]`` is the control applied on ``[k dt, (k+1) dt)``; it may be
    empty for trajectories read from files that do not carry controls.
    """

    dt: float
    means: np.ndarray
    covariances: np.ndarray
    controls: np.ndarray | None = None

    def __post_init__(self):
        means = _frozen(self.means, 2)
        covs = _frozen(self.covariances, 3)
        if len(means) < 1 or covs.shape != (len(means), means.shape[1], means.shape[1]):
            raise DynamicsError("need a covariance per mean and at least one node")
        if not self.dt > 0:
            raise DynamicsError("dt must be positive")
        if not np.allclose(covs, np.swapaxes(covs, 1, 2), atol=1e-12, rtol=1e-9):
            raise DynamicsError("covariances must be symmetric")
        if np.linalg.eigvalsh(covs).min() < -PSD_TOL:
            raise DynamicsError("covariances must be positive semidefinite")
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        if self.controls is not None:
            ctrl = _frozen(self.controls, 2)
            if len(ctrl) != len(means) - 1:
                raise DynamicsError("need one control per step")
            object.__setattr__(self, "controls", ctrl)

    def __len__(self):
        return len(self.means)

    def __getitem__(self, k) -> Belief:
        return Belief(self.means[k], self.covariances[k])

    @property
    def nodes(self) -> list:
        return [self[k] for k in range(len(self))]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    def prefix(self, k: int) -> "BeliefTrajectory":
        """First ``k`` nodes."""
        if not 1 <= k <= len(self):
            raise DynamicsError(f"prefix length {k} out of range")
        ctrl = None if self.controls is None else self.controls[: k - 1]
        return BeliefTrajectory(self.dt, self.means[:k], self.covariances[:k], ctrl)

    def control_inputs(self) -> list:
        """Controls merged into maximal constant pieces."""
        if self.controls is None:
            raise DynamicsError("trajectory carries no controls")
        pieces = []
        for u in self.controls:
            if pieces and np.array_equal(pieces[-1][0], u):
                pieces[-1][1] += 1
            else:
                pieces.append([u, 1])
        return [ControlInput(u, k * self.dt) for u, k in pieces]


def rollout(model: LinearSystemModel, x0: Belief, controls: Sequence[ControlInput], dt=None):
    """Belief trajectory obtained by applying ``controls`` from ``x0``."""
    dt = model.dt if dt is None else dt
    means, covs, us = [x0.mean[None]], [x0.covariance[None]], []
    cur = x0
    for c in controls:
        m, P = propagate_control(model, cur, c, dt)
        means.append(m)
        covs.append(P)
        us.append(np.repeat(c.u[None], len(m), axis=0))
        cur = Belief(m[-1], P[-1])
    ctrl = np.concatenate(us) if us else np.zeros((0, model.m))
    return BeliefTrajectory(dt, np.concatenate(means), np.concatenate(covs), ctrl)


def suffix(traj: BeliefTrajectory, t: float) -> BeliefTrajectory:
    """The time-shifted suffix ``b^t(s) = b(t + s)``."""
    k = round(t / traj.dt)
    if abs(k * traj.dt - t) > 1e-9:
        raise DynamicsError(f"t = {t} is not on the trajectory grid (dt = {traj.dt})")
    if not 0 <= k < len(traj):
        raise DynamicsError(f"t = {t} outside [0, {traj.duration}]")
    ctrl = None if traj.controls is None else traj.controls[k:]
    return BeliefTrajectory(traj.dt, traj.means[k:], traj.covariances[k:], ctrl)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """L with L L^T = M: Cholesky, falling back to eigh for singular M."""
    M = np.asarray(M, dtype=float)
    if not M.size:
        return M.copy()
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        if w.min() < -PSD_TOL:
            raise DynamicsError("matrix is not positive semidefinite") from None
        return V * np.sqrt(np.clip(w, 0.0, None))


def sample_realizations(
    model: LinearSystemModel,
    controls: Sequence[ControlInput],
    x0: Belief,
    n: int,
    rng: np.random.Generator,
    dt: float | None = None,
    substeps: int = 10,
):
    """``n`` realizations on the belief grid, shape ``(n, steps + 1, dim)``.

    A realization is the propagated mean plus a deviation ``e`` that follows
    ``de = A e dt + G dw``; the deviation is integrated by Euler-Maruyama with
    ``substeps`` sub-steps per grid step.  Splitting off the mean keeps the
    control term exact, so zero noise reproduces the mean trajectory exactly.
    """
    dt = model.dt if dt is None else dt
    if not dt > 0:
        raise DynamicsError("dt must be positive")
    mean_traj = rollout(model, Belief(x0.mean, np.zeros_like(x0.covariance)), controls, dt)
    steps = len(mean_traj) - 1
    h = dt / substeps
    L = psd_sqrt(model.Q)
    GL = model.G @ L
    noisy = bool(np.any(GL))
    A_h = model.A * h
    e = rng.standard_normal((n, model.n)) @ psd_sqrt(x0.covariance).T
    out = np.empty((n, steps + 1, model.n))
    out[:, 0] = e
    scale = math.sqrt(h)
    for k in range(steps):
        for _ in range(substeps):
            de = e @ A_h.T
            if noisy:
                de += rng.standard_normal((n, GL.shape[1])) @ (scale * GL).T
            e = e + de
        out[:, k + 1] = e
    out += mean_traj.means[None]
    return out


def sample_realization(model, controls, x0: Belief, dt=None, seed: int = 0, substeps: int = 10):
    """One seeded realization as a :class:`StateTrajectory`."""
    rng = np.random.default_rng(seed)
    states = sample_realizations(model, controls, x0, 1, rng, dt=dt, substeps=substeps)[0]
    dt = model.dt if dt is None else dt
    return StateTrajectory(np.arange(len(states)) * dt, states)


def double_integrator(
    q_pos: float,
    q_vel: float,
    control_bounds,
    state_bounds,
    dt: float = 0.1,
    variables=None,
) -> LinearSystemModel:
    """Planar double integrator (x, y, vx, vy) driven by accelerations.

    Noise enters all four states with diffusion diag(q_pos, q_pos, q_vel, q_vel).
    """
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = 1.0
    return LinearSystemModel(
        A=A,
        B=B,
        G=np.eye(4),
        Q=np.diag([q_pos, q_pos, q_vel, q_vel]),
        control_bounds=control_bounds,
        state_bounds=state_bounds,
        dt=dt,
        variables=variables or {"x": 0, "y": 1, "vx": 2, "vy": 3},
    )
