"""The 1/alpha-Tsallis regulariser, its FTRL argmin over the simplex, and
the mirror-map helpers used by the regret diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, NumericFailureError, SimplexPoint

SOLVER_TOL = 1e-12
SOLVER_MAX_ITER = 200
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class FtrlProblem:
    cumulative_loss: tuple
    eta: float
    alpha: float

    def __post_init__(self):
        L = tuple(float(v) for v in self.cumulative_loss)
        object.__setattr__(self, "cumulative_loss", L)
        if len(L) < 2:
            raise InvalidInputError("FTRL needs at least two arms")
        if not all(math.isfinite(v) for v in L):
            raise InvalidInputError("cumulative loss entries must be finite")
        if not (self.eta > 0.0 and math.isfinite(self.eta)):
            raise InvalidInputError(f"eta must be positive, got {self.eta}")
        _check_alpha(self.alpha)


def _check_alpha(alpha):
    if not (1.0 < alpha <= 2.0):
        raise InvalidInputError(f"alpha must lie in (1, 2], got {alpha}")


def theta_alpha(alpha: float) -> float:
    """Skipping-threshold constant: min of the two branches, with the
    alpha -> 2 limit exp(-1/2) substituted for the second one."""
    _check_alpha(alpha)
    first = 1.0 - 2.0 ** (-(alpha - 1.0) / (2.0 * alpha - 1.0))
    if abs(2.0 - alpha) < 1e-9:
        second = math.exp(-0.5)
    else:
        second = math.exp(math.log(2.0 - 2.0 / alpha) / (2.0 - alpha))
    return min(first, second)


def _weights(x) -> np.ndarray:
    return np.asarray(getattr(x, "weights", x), dtype=float)


def tsallis_potential(x, alpha: float) -> float:
    """-alpha * sum_i x_i^(1/alpha). Zeros are fine (one-hot comparators)."""
    w = _weights(x)
    return float(-alpha * np.sum(w ** (1.0 / alpha), axis=-1))


def potential_gradient(x, alpha: float) -> np.ndarray:
    """Componentwise gradient -x_i^(1/alpha - 1); needs x > 0."""
    w = _weights(x)
    if np.any(w <= 0.0):
        raise InvalidInputError("gradient of the potential needs strictly positive entries")
    return -(w ** (1.0 / alpha - 1.0))


def gradient_inverse(theta, alpha: float) -> np.ndarray:
    """Inverse of :func:`potential_gradient` on the negative orthant."""
    th = np.asarray(theta, dtype=float)
    if np.any(th >= 0.0):
        raise NumericFailureError("dual point must be strictly negative")
    return (-th) ** (-alpha / (alpha - 1.0))


def solve_weights(cumulative_loss, eta: float, alpha: float) -> tuple:
    """Unchecked kernel behind :func:`ftrl_argmin`, returning a plain tuple.

    Stationarity gives x_i = (eta*L_i + lam)^(-p) with p = alpha/(alpha-1).
    Shifting u = lam + eta*min(L) puts the root in [1, K^(1/p)]: the smallest
    term alone must not exceed 1, and all K terms are at most u^(-p). Newton
    runs on s(u)^(-1/p), which is exactly linear when the losses tie, with
    bisection whenever a step leaves the bracket.
    """
    p = alpha / (alpha - 1.0)
    m = min(cumulative_loss)
    a = [eta * (v - m) for v in cumulative_loss]
    k = len(a)
    lo, hi = 1.0, k ** (1.0 / p)
    u = lo
    for _ in range(SOLVER_MAX_ITER):
        s = 0.0
        ds = 0.0
        for ai in a:
            b = ai + u
            w = b ** (-p)
            s += w
            ds += w / b
        g = s - 1.0
        if abs(g) <= SOLVER_TOL:
            return tuple(max((ai + u) ** (-p), _TINY) for ai in a)
        if g > 0.0:
            lo = u
        else:
            hi = u
        h = s ** (-1.0 / p)
        step = (h - 1.0) * s / (h * ds)
        nxt = u - step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        u = nxt
    raise NumericFailureError(
        f"FTRL normalisation did not converge in {SOLVER_MAX_ITER} iterations"
    )


def ftrl_argmin(problem: FtrlProblem) -> SimplexPoint:
    """argmin over the simplex of eta*<L, x> - alpha*sum x_i^(1/alpha)."""
    x = solve_weights(problem.cumulative_loss, problem.eta, problem.alpha)
    return SimplexPoint(x)


def conjugate_step(x, eta, alpha: float, v) -> np.ndarray:
    """Mirror step z = grad_inverse(grad(x) - eta*v), not renormalised.

    Broadcasts over leading axes, so a whole trace can be processed at once
    with ``x`` of shape (T, K), ``eta`` of shape (T, 1) and ``v`` (T, K).
    """
    w = _weights(x)
    if np.any(w <= 0.0):
        raise InvalidInputError("conjugate step needs a strictly positive x")
    base = w ** (-(alpha - 1.0) / alpha) + np.asarray(eta, dtype=float) * np.asarray(v, dtype=float)
    if np.any(base <= 0.0):
        raise NumericFailureError("loss vector too large: mirror step left the dual domain")
    return base ** (-alpha / (alpha - 1.0))


def bregman_divergence(x, z, alpha: float):
    """D(x, z) = Psi(x) - Psi(z) - <grad Psi(z), x - z>, along the last axis."""
    xw = _weights(x)
    zw = np.asarray(z, dtype=float)
    if np.any(xw <= 0.0) or np.any(zw <= 0.0):
        raise InvalidInputError("Bregman divergence needs strictly positive arguments")
    q = 1.0 / alpha
    terms = -alpha * xw**q + alpha * zw**q + zw ** (q - 1.0) * (xw - zw)
    d = np.sum(terms, axis=-1)
    return float(d) if np.ndim(d) == 0 else d
