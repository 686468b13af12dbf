"""HTINF, OptTINF, AdaTINF, Ada2TINF and a no-skipping Tsallis-INF baseline.

Every policy follows the same two-call protocol per round::

    x, arm, r = policy.choose()
    record = policy.update(loss)

``choose`` samples from the policy's own generator, so a policy and its
environment never share a random stream.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from itertools import accumulate
from typing import Optional

from .core import HeavyTailParams, InvalidInputError, ProtocolError, RoundRecord, SimplexPoint
from .tsallis import solve_weights, theta_alpha

THETA_2 = 1.0 - 2.0 ** (-1.0 / 3.0)


def _trusted_point(weights: tuple) -> SimplexPoint:
    # The solver already guarantees positivity and unit sum; skip re-validation
    # in the per-round hot path.
    p = object.__new__(SimplexPoint)
    object.__setattr__(p, "weights", weights)
    object.__setattr__(p, "degenerate", False)
    return p


def sample_arm(weights, u: float) -> int:
    """Inverse-CDF arm (1-based) for a uniform draw ``u`` in [0, 1)."""
    i = bisect_right(list(accumulate(weights)), u)
    return min(i, len(weights) - 1) + 1


class TsallisPolicy:
    """FTRL with the 1/alpha-Tsallis regulariser and importance-weighted
    estimates, skipping rounds whose loss exceeds the threshold.

    Subclasses only differ in how the inverse learning rate and the threshold
    are set and in what extra bookkeeping ``update`` performs.
    """

    name = "tsallis"

    def __init__(self, k: int, alpha: float, sigma: float, rng, horizon: Optional[int] = None,
                 skipping: bool = True):
        if k < 1:
            raise InvalidInputError(f"number of arms must be positive, got {k}")
        HeavyTailParams(alpha, sigma)
        self.k = k
        self.alpha = float(alpha)
        self.sigma = float(sigma)
        self.horizon = horizon
        self.skipping = skipping
        self.theta = theta_alpha(self.alpha)
        self.rng = rng
        self.cumulative_estimate = [0.0] * k
        self.t = 1
        self._pending = None

    def eta_inv(self, t: int) -> float:
        return self.sigma * t ** (1.0 / self.alpha)

    def _lam(self) -> float:
        return 1.0

    def choose(self):
        if self._pending is not None:
            raise ProtocolError(f"choose called twice in round {self.t}")
        if self.horizon is not None and self.t > self.horizon:
            raise ProtocolError(f"policy horizon {self.horizon} exhausted")
        t = self.t
        eta_inv = self.eta_inv(t)
        if self.k == 1:
            w = (1.0,)
        else:
            w = solve_weights(self.cumulative_estimate, 1.0 / eta_inv, self.alpha)
        arm = sample_arm(w, self.rng.random())
        if self.skipping:
            r = self.theta * eta_inv * w[arm - 1] ** (1.0 / self.alpha)
        else:
            r = math.inf
        x = _trusted_point(w)
        self._pending = (x, arm, r, eta_inv)
        return x, arm, r

    def update(self, loss: float) -> RoundRecord:
        if self._pending is None:
            raise ProtocolError("update called without a matching choose")
        x, arm, r, eta_inv = self._pending
        loss = float(loss)
        skipped = abs(loss) > r
        if not skipped:
            self.cumulative_estimate[arm - 1] += loss / x.weights[arm - 1]
        rec = self._record(x, arm, loss, r, skipped, eta_inv)
        self._pending = None
        self.t += 1
        return rec

    def _record(self, x, arm, loss, r, skipped, eta_inv) -> RoundRecord:
        return RoundRecord(self.t, x, arm, loss, r, skipped, 1.0, eta_inv)


class HTINF(TsallisPolicy):
    """Heavy-tail Tsallis-INF with known (alpha, sigma)."""

    name = "htinf"

    def __init__(self, k: int, params: HeavyTailParams, rng, horizon: Optional[int] = None):
        super().__init__(k, params.alpha, params.sigma, rng, horizon)


class OptTINF(TsallisPolicy):
    """HTINF run with alpha=2, sigma=1 regardless of the true tail."""

    name = "opttinf"

    def __init__(self, k: int, rng, horizon: Optional[int] = None):
        super().__init__(k, 2.0, 1.0, rng, horizon)
        self.theta = THETA_2


class TsallisINF(TsallisPolicy):
    """1/2-Tsallis-INF without skipping: every loss is used."""

    name = "tsallis_inf"

    def __init__(self, k: int, rng, horizon: Optional[int] = None):
        super().__init__(k, 2.0, 1.0, rng, horizon, skipping=False)


class AdaTINF(TsallisPolicy):
    """Horizon-aware adaptive learning-rate multiplier lambda_t = 2^J.

    The multiplier doubles (or jumps further) whenever the accumulated cost
    of the current epoch exceeds 2^J sqrt(K(T+1)).
    """

    name = "adatinf"

    def __init__(self, k: int, horizon: int, rng):
        if horizon < 0:
            raise InvalidInputError("AdaTINF needs a non-negative horizon")
        super().__init__(k, 2.0, 1.0, rng, horizon)
        self.theta = THETA_2
        self.J = 0
        self.S = 0.0
        self.last_cost: Optional[float] = None
        self.scale = math.sqrt(k * (horizon + 1))

    def _lam(self) -> float:
        return float(2**self.J)

    def eta_inv(self, t: int) -> float:
        return self._lam() * math.sqrt(t)

    def _record(self, x, arm, loss, r, skipped, eta_inv) -> RoundRecord:
        j = self.J
        lam = self._lam()
        if skipped:
            c = loss
        else:
            c = 2.0 / eta_inv * x.weights[arm - 1] ** -0.5 * loss * loss
        self.last_cost = c
        self.S += c
        if 2**self.J * self.scale < self.S:
            self.J = next_epoch(self.J, c, self.scale)
            self.S = c
        return RoundRecord(self.t, x, arm, loss, r, skipped, lam, eta_inv, c, j)


def next_epoch(j: int, cost: float, scale: float) -> int:
    """Epoch index after a doubling triggered by ``cost``.

    max{J+1, ceil(log2(c / scale)) + 1}; a non-positive cost contributes -inf.
    """
    if cost <= 0.0:
        return j + 1
    return max(j + 1, math.ceil(math.log2(cost / scale)) + 1)


class Ada2TINF:
    """Horizon-free wrapper: restarts AdaTINF with horizons 1, 3, 7, 15, ...

    A fresh instance starts at global rounds 1, 2, 5, 12, 27, ..., i.e. right
    after the previous instance has used up its horizon. All instances share
    the wrapper's generator. Records carry global round numbers.
    """

    name = "ada2tinf"

    def __init__(self, k: int, rng, horizon: Optional[int] = None):
        self.k = k
        self.rng = rng
        self.horizon = horizon
        self.t = 1
        self._t0 = 1
        self._end = 0  # last global round covered by the current instance
        self.inner: Optional[AdaTINF] = None
        self.restart_rounds: list = []
        self.alpha, self.sigma = 2.0, 1.0

    def _maybe_restart(self):
        if self.t > self._end:
            self._t0 *= 2
            self._end += self._t0 - 1
            self.inner = AdaTINF(self.k, self._t0 - 1, self.rng)
            self.restart_rounds.append(self.t)

    def choose(self):
        if self.horizon is not None and self.t > self.horizon:
            raise ProtocolError(f"policy horizon {self.horizon} exhausted")
        if self.inner is None or self.inner._pending is None:
            self._maybe_restart()
        return self.inner.choose()

    def update(self, loss: float) -> RoundRecord:
        if self.inner is None:
            raise ProtocolError("update called without a matching choose")
        rec = self.inner.update(loss)
        g = RoundRecord(self.t, rec.x, rec.arm, rec.loss, rec.threshold, rec.skipped,
                        rec.lam, rec.eta_inv, rec.cost, rec.epoch)
        self.t += 1
        return g

    @staticmethod
    def schedule(horizon: int) -> list:
        """(start, inner_horizon) of every instance touching rounds 1..horizon."""
        out, t0, end = [], 1, 0
        while end < horizon:
            t0 *= 2
            out.append((end + 1, t0 - 1))
            end += t0 - 1
        return out
