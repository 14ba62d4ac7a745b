"""Independent reference implementations used as test oracles.

These follow the recursive definitions literally: explicit suffix indices,
explicit enumeration of every (t, t') pair inside until windows, scalar
``math.erf`` for Gaussian probabilities.  They share nothing with the
vectorized evaluators except the formula dataclasses.
"""

import math
from functools import lru_cache

import numpy as np

from stori.stl import (
    And,
    LinearPredicate,
    Not,
    Pred,
    TimeInterval,
    TrueF,
    Until,
    eventually,
    globally,
)

EPS = 1e-12


def in_interval(t, iv):
    lo_ok = t > iv.lower + EPS if iv.lower_open else t >= iv.lower - EPS
    hi_ok = t < iv.upper - EPS if iv.upper_open else t <= iv.upper + EPS
    return lo_ok and hi_ok


def gauss_prob(mean, cov, pred, tol=1e-12):
    a = np.array(pred.coefficients)
    mu = float(a @ mean) + pred.offset
    var = float(a @ cov @ a)
    if var <= tol:
        return 1.0 if mu >= 0 else 0.0
    return 0.5 * (1.0 + math.erf(mu / math.sqrt(2.0 * var)))


def brute_stori(f, means, covs, dt):
    """Literal recursive StoRI at time 0; raises IndexError if too short."""
    n = len(means)

    @lru_cache(maxsize=None)
    def point(pred, k):
        if k >= n:
            raise IndexError("trajectory too short")
        return gauss_prob(means[k], covs[k], pred)

    @lru_cache(maxsize=None)
    def ev(node, k):
        if isinstance(node, TrueF):
            return 1.0, 1.0
        if isinstance(node, Pred):
            p = point(node.predicate, k)
            return p, p
        if isinstance(node, Not):
            lo, hi = ev(node.child, k)
            return 1.0 - hi, 1.0 - lo
        if isinstance(node, And):
            l1, h1 = ev(node.left, k)
            l2, h2 = ev(node.right, k)
            return max(l1 + l2 - 1.0, 0.0), min(h1, h2)
        if isinstance(node, Until):
            best_lo, best_hi = 0.0, 0.0
            j = 0
            while j * dt <= node.interval.upper + EPS:
                if in_interval(j * dt, node.interval):
                    l2, h2 = ev(node.right, k + j)
                    min_lo = min(ev(node.left, k + jj)[0] for jj in range(j + 1))
                    min_hi = min(ev(node.left, k + jj)[1] for jj in range(j + 1))
                    best_lo = max(best_lo, max(l2 + min_lo - 1.0, 0.0))
                    best_hi = max(best_hi, min(h2, min_hi))
                j += 1
            return best_lo, best_hi
        raise TypeError(node)

    return ev(f, 0)


def rk4_stages(A, B, W, mean, P, u, h):
    """One classical four-stage RK4 step of the mean and covariance ODEs."""

    def fm(x):
        return A @ x + B @ u

    def fp(S):
        return A @ S + S @ A.T + W

    k1, l1 = fm(mean), fp(P)
    k2, l2 = fm(mean + 0.5 * h * k1), fp(P + 0.5 * h * l1)
    k3, l3 = fm(mean + 0.5 * h * k2), fp(P + 0.5 * h * l2)
    k4, l4 = fm(mean + h * k3), fp(P + h * l3)
    return mean + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), P + h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)


def brute_boolean(f, times, states, i=0):
    """Literal Boolean semantics at sample index ``i`` (sample-grid quantifiers)."""
    n = len(times)
    if isinstance(f, TrueF):
        return True
    if isinstance(f, Pred):
        return float(np.dot(f.predicate.coefficients, states[i]) + f.predicate.offset) >= 0
    if isinstance(f, Not):
        return not brute_boolean(f.child, times, states, i)
    if isinstance(f, And):
        return brute_boolean(f.left, times, states, i) and brute_boolean(f.right, times, states, i)
    if isinstance(f, Until):
        for j in range(i, n):
            if not in_interval(times[j] - times[i], f.interval):
                continue
            if brute_boolean(f.right, times, states, j) and all(
                brute_boolean(f.left, times, states, jj) for jj in range(i, j + 1)
            ):
                return True
        return False
    raise TypeError(f)


def closed_form_eventually(sub_lohi, iv, dt):
    """[max low, max high] of the operand over the window (grid offsets)."""
    ks = [k for k in range(len(sub_lohi)) if in_interval(k * dt, iv)]
    return max((sub_lohi[k][0] for k in ks), default=0.0), max((sub_lohi[k][1] for k in ks), default=0.0)


def closed_form_globally(sub_lohi, iv, dt):
    ks = [k for k in range(len(sub_lohi)) if in_interval(k * dt, iv)]
    return min((sub_lohi[k][0] for k in ks), default=1.0), min((sub_lohi[k][1] for k in ks), default=1.0)


# ---------------------------------------------------------------------------
# Random instances


def random_interval(rng, dt, max_upper):
    ticks = int(round(max_upper / dt))
    a = int(rng.integers(0, ticks))
    b = int(rng.integers(a + 1, ticks + 1))
    return TimeInterval(a * dt, b * dt, bool(rng.random() < 0.25), bool(rng.random() < 0.25))


def random_predicate(rng, dim):
    coeffs = rng.normal(size=dim)
    return Pred(LinearPredicate(tuple(coeffs), float(rng.normal(scale=0.5))))


def random_formula(rng, depth, dim=2, dt=0.1, max_upper=0.8, temporal_bias=0.5):
    """Random formula of nesting depth <= ``depth`` mixing every operator."""
    if depth <= 0 or rng.random() < 0.15:
        return TrueF() if rng.random() < 0.08 else random_predicate(rng, dim)
    kind = rng.choice(["not", "and", "until", "F", "G"], p=_op_probs(temporal_bias))
    sub = lambda: random_formula(rng, depth - 1, dim, dt, max_upper, temporal_bias)  # noqa: E731
    if kind == "not":
        return Not(sub())
    if kind == "and":
        return And(sub(), sub())
    iv = random_interval(rng, dt, max_upper)
    if kind == "until":
        return Until(iv, sub(), sub())
    if kind == "F":
        return eventually(iv, sub())
    return globally(iv, sub())


def _op_probs(temporal_bias):
    t = temporal_bias / 3
    r = (1 - temporal_bias) / 2
    return [r, r, t, t, t]


def random_spd(rng, dim, scale):
    M = rng.normal(size=(dim, dim)) * scale
    return M @ M.T


def random_belief_arrays(rng, n_points, dim=2, spread=1.0, noise=0.7):
    """Random-walk means and random PSD covariances (some exactly zero)."""
    steps = rng.normal(scale=spread * 0.3, size=(n_points, dim))
    means = np.cumsum(steps, axis=0) + rng.normal(scale=spread, size=dim)
    covs = np.empty((n_points, dim, dim))
    for k in range(n_points):
        if rng.random() < 0.1:
            covs[k] = 0.0
        else:
            covs[k] = random_spd(rng, dim, noise * rng.random())
    return means, covs


def corridor_storm_cap(q_pos, q_vel, T, half_width):
    """Best StoRM for staying in a corridor of the given half width until T.

    The lateral position of a double integrator started at rest with zero
    covariance has variance q_pos*T + q_vel*T^3/3 at time T.  Even a mean on
    the centre line gives each wall predicate probability Phi(w / sigma), and
    the Frechet bound of the two walls is 2*Phi(w / sigma) - 1.
    """
    sigma = math.sqrt(q_pos * T + q_vel * T**3 / 3.0)
    return math.erf(half_width / (sigma * math.sqrt(2.0)))
