"""Shared value types and pseudo-regret accounting.

Arms are 1-based everywhere a caller sees them (records, best-arm results,
CSV output). Internal arrays are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class NumericFailureError(ArithmeticError):
    """Raised when a numerical routine cannot produce a trustworthy answer."""


class ProtocolError(RuntimeError):
    """Raised when a policy's choose/update protocol is misused."""


class AuditFailure(AssertionError):
    """Raised when a recorded trace violates a bookkeeping inequality."""


@dataclass(frozen=True)
class HeavyTailParams:
    """Moment exponent ``alpha`` and scale ``sigma``: E|loss|^alpha <= sigma^alpha."""

    alpha: float
    sigma: float

    def __post_init__(self):
        if not (1.0 < self.alpha <= 2.0) or math.isnan(self.alpha):
            raise InvalidInputError(f"alpha must lie in (1, 2], got {self.alpha}")
        if not self.sigma > 0.0 or math.isinf(self.sigma):
            raise InvalidInputError(f"sigma must be a positive finite number, got {self.sigma}")

    @property
    def moment_cap(self) -> float:
        return self.sigma**self.alpha


_SUM_TOL = 1e-9


@dataclass(frozen=True)
class SimplexPoint:
    """A probability vector over the arms.

    Interior points (every weight strictly positive) are what the FTRL step
    produces. One-hot comparators are allowed through :meth:`one_hot` and are
    flagged with ``degenerate=True``.
    """

    weights: tuple
    degenerate: bool = False

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "weights", w)
        if not w:
            raise InvalidInputError("a simplex point needs at least one weight")
        if any(not math.isfinite(v) for v in w):
            raise InvalidInputError("simplex weights must be finite")
        if abs(math.fsum(w) - 1.0) > _SUM_TOL:
            raise InvalidInputError(f"simplex weights sum to {math.fsum(w)!r}, not 1")
        if self.degenerate:
            if any(v < 0.0 for v in w):
                raise InvalidInputError("simplex weights must be non-negative")
        elif any(v <= 0.0 for v in w):
            raise InvalidInputError("interior simplex points need strictly positive weights")

    @classmethod
    def one_hot(cls, k: int, arm: int) -> "SimplexPoint":
        """The vertex e_arm of the k-simplex (``arm`` is 1-based)."""
        if not 1 <= arm <= k:
            raise InvalidInputError(f"arm {arm} outside 1..{k}")
        w = [0.0] * k
        w[arm - 1] = 1.0
        return cls(tuple(w), degenerate=True)

    @classmethod
    def uniform(cls, k: int) -> "SimplexPoint":
        return cls(tuple([1.0 / k] * k))

    @property
    def k(self) -> int:
        return len(self.weights)

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, i):
        return self.weights[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


@dataclass(frozen=True, slots=True)
class RoundRecord:
    """Everything a policy knew and did in one round.

    ``lam`` is the learning-rate multiplier (1 outside AdaTINF), ``eta_inv``
    the inverse learning rate used for the FTRL step. ``cost`` and ``epoch``
    are only populated by AdaTINF-style policies.
    """

    t: int
    x: SimplexPoint
    arm: int
    loss: float
    threshold: float
    skipped: bool
    lam: float = 1.0
    eta_inv: float = 1.0
    cost: Optional[float] = None
    epoch: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.arm <= len(self.x.weights):
            raise InvalidInputError(f"arm {self.arm} outside 1..{len(self.x.weights)}")
        if self.skipped != (abs(self.loss) > self.threshold):
            raise InvalidInputError("skip flag disagrees with |loss| > threshold")


@dataclass(frozen=True)
class RegretSeries:
    """Mean pseudo-regret (and its standard error) at increasing checkpoints."""

    horizon: int
    checkpoints: tuple  # of (t, mean, stderr)
    replicates: int

    def __post_init__(self):
        ts = [c[0] for c in self.checkpoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidInputError("checkpoint rounds must be strictly increasing")
        if ts and ts[-1] != self.horizon:
            raise InvalidInputError("the last checkpoint must be the horizon")

    @property
    def final_mean(self) -> float:
        return self.checkpoints[-1][1] if self.checkpoints else 0.0

    @property
    def final_stderr(self) -> float:
        return self.checkpoints[-1][2] if self.checkpoints else 0.0

    def at(self, t: int) -> tuple:
        for c in self.checkpoints:
            if c[0] == t:
                return c
        raise KeyError(t)


def _as_schedule(mean_schedule) -> np.ndarray:
    m = np.asarray(mean_schedule, dtype=float)
    if m.ndim != 2:
        raise InvalidInputError("mean schedule must be a T x K matrix")
    return m


def best_arm_in_hindsight(mean_schedule) -> int:
    """1-based arm minimising the summed means; lowest index wins ties."""
    m = _as_schedule(mean_schedule)
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise InvalidInputError("mean schedule is empty")
    return int(np.argmin(m.sum(axis=0))) + 1


def cumulative_regret(arms: Sequence[int], mean_schedule) -> np.ndarray:
    """Pseudo-regret of every prefix: entry t-1 covers rounds 1..t.

    The comparator is re-selected for each prefix, so entry ``t-1`` equals
    ``pseudo_regret`` of the trace truncated at round t.
    """
    m = _as_schedule(mean_schedule)
    a = np.asarray(arms, dtype=np.int64)
    if a.shape[0] != m.shape[0]:
        raise InvalidInputError(f"trace has {a.shape[0]} rounds but schedule has {m.shape[0]}")
    if a.size == 0:
        return np.zeros(0)
    if a.min() < 1 or a.max() > m.shape[1]:
        raise InvalidInputError("arm index out of range")
    played = np.cumsum(m[np.arange(a.shape[0]), a - 1])
    best = np.cumsum(m, axis=0).min(axis=1)
    return played - best


def pseudo_regret(trace, mean_schedule) -> float:
    """Sum of true means of the played arms minus the best fixed arm's sum.

    ``trace`` is a sequence of :class:`RoundRecord` (or anything with an
    ``arm`` attribute), or an :class:`~htbandit.runner.EpisodeTrace`.
    """
    records = getattr(trace, "records", trace)
    m = _as_schedule(mean_schedule)
    if len(records) != m.shape[0]:
        raise InvalidInputError(f"trace has {len(records)} rounds but schedule has {m.shape[0]}")
    if not records:
        return 0.0
    arms = [r.arm for r in records]
    if min(arms) < 1 or max(arms) > m.shape[1]:
        raise InvalidInputError("arm index out of range")
    played = math.fsum(m[t, a - 1] for t, a in enumerate(arms))
    star = best_arm_in_hindsight(m)
    return played - math.fsum(m[:, star - 1])
