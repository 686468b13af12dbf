"""Heavy-tailed loss environments built from finite discrete distributions.

Finite support keeps every quantity the analysis talks about exact: moments,
truncated means and the truncated non-negativity check are finite sums.
"""

from __future__ import annotations

import hashlib
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Optional, Sequence

import numpy as np

from .core import HeavyTailParams, InvalidInputError

KINDS = ("stochastic", "constrained", "adversarial")
_GAP_TOL = 1e-12


@dataclass(frozen=True)
class LossDistribution:
    """Finite distribution: ``values[j]`` occurs with probability ``probs[j]``."""

    values: tuple
    probs: tuple
    _cdf: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = tuple(float(a) for a in self.values)
        p = tuple(float(a) for a in self.probs)
        if not v or len(v) != len(p):
            raise InvalidInputError("a distribution needs matching, non-empty values and probs")
        if not all(math.isfinite(a) for a in v):
            raise InvalidInputError("atom values must be finite")
        if any(not q > 0.0 for q in p):
            raise InvalidInputError("atom probabilities must be positive")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise InvalidInputError(f"atom probabilities sum to {math.fsum(p)!r}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_cdf", tuple(accumulate(p)))

    @classmethod
    def from_atoms(cls, atoms) -> "LossDistribution":
        atoms = list(atoms)
        return cls(tuple(a[0] for a in atoms), tuple(a[1] for a in atoms))

    @classmethod
    def point_mass(cls, value: float) -> "LossDistribution":
        return cls((value,), (1.0,))

    @property
    def atoms(self) -> list:
        return list(zip(self.values, self.probs))

    @property
    def mean(self) -> float:
        return math.fsum(p * v for v, p in zip(self.values, self.probs))

    def to_list(self) -> list:
        return [[v, p] for v, p in zip(self.values, self.probs)]


def analytic_moment(dist: LossDistribution, alpha: float) -> float:
    """E|X|^alpha as a finite sum."""
    return math.fsum(p * abs(v) ** alpha for v, p in zip(dist.values, dist.probs))


def truncated_mean(dist: LossDistribution, r: float) -> float:
    """E[X * 1{|X| <= r}]."""
    if r < 0:
        raise InvalidInputError("truncation level must be non-negative")
    return math.fsum(p * v for v, p in zip(dist.values, dist.probs) if abs(v) <= r)


def truncated_means(dist: LossDistribution, r: np.ndarray) -> np.ndarray:
    """:func:`truncated_mean` for an array of truncation levels."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(dist.values)
    pv = np.asarray(dist.probs) * v
    keep = np.abs(v)[None, :] <= r.reshape(-1, 1)
    return (keep * pv[None, :]).sum(axis=1).reshape(r.shape)


def verify_truncated_nonnegative(dist: LossDistribution) -> bool:
    """True iff E[X 1{|X| > M}] >= 0 for every M >= 0.

    The tail expectation is a step function of M that only changes at the
    distinct |atom| values, so it suffices to test M = 0 and M just below each
    distinct positive |value|, i.e. the sums over {|v| >= a} for each a.
    """
    levels = sorted({abs(v) for v in dist.values if v != 0.0})
    for a in levels:
        tail = math.fsum(p * v for v, p in zip(dist.values, dist.probs) if abs(v) >= a)
        if tail < 0.0:
            return False
    return True


def sample_loss(dist: LossDistribution, rng) -> float:
    """One inverse-CDF draw over the atoms in listed order."""
    i = bisect_right(dist._cdf, rng.random())
    return dist.values[min(i, len(dist.values) - 1)]


def sample_losses(dist: LossDistribution, rng, size) -> np.ndarray:
    """Vectorised inverse-CDF draws, same atom ordering as :func:`sample_loss`."""
    u = rng.random(size)
    idx = np.searchsorted(np.asarray(dist._cdf), u, side="right")
    idx = np.minimum(idx, len(dist.values) - 1)
    return np.asarray(dist.values)[idx]


def make_bernoulli_heavy(mu: float, params: HeavyTailParams) -> LossDistribution:
    """Two atoms {0, M} with mean mu whose alpha-moment meets sigma^alpha.

    M = (sigma^alpha / mu)^(1/(alpha-1)) and P(M) = mu / M. The probability is
    nudged down by a few ulps if rounding would push the computed moment over
    the cap, so the boundary case verifies under plain float comparison.
    """
    a, cap = params.alpha, params.moment_cap
    if not 0.0 < mu < params.sigma:
        raise InvalidInputError(f"need 0 < mu < sigma, got mu={mu}, sigma={params.sigma}")
    big = (cap / mu) ** (1.0 / (a - 1.0))
    if big < mu:
        raise InvalidInputError("derived large atom is below the mean")
    p = mu / big
    while p * big**a > cap:
        p = math.nextafter(p, 0.0)
    return LossDistribution((0.0, big), (1.0 - p, p))


@dataclass(frozen=True)
class EnvironmentSpec:
    """An oblivious environment over ``horizon`` rounds and K arms.

    ``rows`` is a cycle of per-round distribution tuples: round t uses
    ``rows[(t - 1) % len(rows)]``. A stochastic environment has one row; an
    arbitrary adversarial schedule has one row per round.
    """

    kind: str
    rows: tuple
    horizon: int
    params: Optional[HeavyTailParams] = None
    optimal_arm: Optional[int] = None
    gaps: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"environment kind must be one of {KINDS}, got {self.kind!r}")
        rows = tuple(tuple(r) for r in self.rows)
        if not rows or not rows[0]:
            raise InvalidInputError("environment needs at least one row of arm distributions")
        k = len(rows[0])
        if any(len(r) != k for r in rows):
            raise InvalidInputError("every row must list the same number of arms")
        if not all(isinstance(d, LossDistribution) for r in rows for d in r):
            raise InvalidInputError("rows must hold LossDistribution objects")
        if self.horizon < 0:
            raise InvalidInputError("horizon must be non-negative")
        object.__setattr__(self, "rows", rows)
        if self.kind == "stochastic" and len(rows) != 1:
            raise InvalidInputError("a stochastic environment has a single row of distributions")
        if self.kind == "constrained":
            self._check_constrained()

    def _check_constrained(self):
        k, star = self.k, self.optimal_arm
        if star is None or self.gaps is None:
            raise InvalidInputError("constrained environments must declare optimal_arm and gaps")
        if not 1 <= star <= k or len(self.gaps) != k:
            raise InvalidInputError("optimal_arm/gaps do not match the number of arms")
        for i, g in enumerate(self.gaps):
            if i + 1 != star and not g > 0.0:
                raise InvalidInputError(f"gap of arm {i + 1} must be positive, got {g}")
        for r in self.rows:
            base = r[star - 1].mean
            for i, d in enumerate(r):
                if i + 1 != star and d.mean - base < self.gaps[i] - _GAP_TOL:
                    raise InvalidInputError(f"arm {i + 1} violates its declared gap")

    @property
    def k(self) -> int:
        return len(self.rows[0])

    @property
    def period(self) -> int:
        return len(self.rows)

    @property
    def is_stochastic(self) -> bool:
        return all(r == self.rows[0] for r in self.rows)

    def row(self, t: int) -> tuple:
        """Distributions in force at 1-based round t."""
        return self.rows[(t - 1) % len(self.rows)]

    def dist(self, t: int, arm: int) -> LossDistribution:
        return self.row(t)[arm - 1]

    def with_horizon(self, horizon: int) -> "EnvironmentSpec":
        return EnvironmentSpec(self.kind, self.rows, horizon, self.params,
                               self.optimal_arm, self.gaps, self.name)

    def row_means(self) -> np.ndarray:
        return np.array([[d.mean for d in r] for r in self.rows])

    def mean_schedule(self, horizon: Optional[int] = None) -> np.ndarray:
        """T x K matrix of true means."""
        n = self.horizon if horizon is None else horizon
        idx = np.arange(n) % self.period
        return self.row_means()[idx]

    def gap_profile(self) -> tuple:
        """Declared gaps for constrained kinds, realised minimum gaps otherwise.

        The optimal arm's entry is 0.
        """
        if self.gaps is not None:
            return tuple(self.gaps)
        m = self.row_means()
        star = int(np.argmin(m.sum(axis=0)))
        g = (m - m[:, [star]]).min(axis=0)
        g[star] = 0.0
        return tuple(float(v) for v in g)

    def best_arm(self) -> int:
        if self.optimal_arm is not None:
            return self.optimal_arm
        from .core import best_arm_in_hindsight

        return best_arm_in_hindsight(self.mean_schedule(max(self.horizon, self.period)))

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "rounds": [[dist.to_list() for dist in r] for r in self.rows],
        }
        if self.params is not None:
            d["alpha"] = self.params.alpha
            d["sigma"] = self.params.sigma
        if self.optimal_arm is not None:
            d["optimal_arm"] = self.optimal_arm
        if self.gaps is not None:
            d["gaps"] = list(self.gaps)
        if self.name:
            d["name"] = self.name
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(f"{blob}|T={self.horizon}".encode()).hexdigest()[:16]


def verify_heavy_tail(env: EnvironmentSpec, params: HeavyTailParams) -> bool:
    """Every distribution's alpha-moment is at most sigma^alpha."""
    cap = params.moment_cap
    return all(analytic_moment(d, params.alpha) <= cap for r in env.rows for d in r)


def make_stochastic(means: Sequence[float], params: HeavyTailParams, horizon: int,
                    name: str = "") -> EnvironmentSpec:
    """Stationary Bernoulli-heavy arms with the given means."""
    row = tuple(make_bernoulli_heavy(mu, params) for mu in means)
    return EnvironmentSpec("stochastic", (row,), horizon, params, name=name)


def make_constrained_schedule(k: int, horizon: int, gaps: Sequence[Optional[float]],
                              drift_pattern: Sequence[float], params: HeavyTailParams,
                              base_mean: float, name: str = "") -> EnvironmentSpec:
    """Stochastically constrained schedule with a drifting optimal-arm mean.

    ``gaps`` lists one entry per arm; the optimal arm is the single entry that
    is ``None`` or 0. Round t has optimal mean ``base_mean + drift[(t-1) % P]``
    and arm i sits exactly ``gaps[i]`` above it.
    """
    if len(gaps) != k:
        raise InvalidInputError(f"expected {k} gap entries, got {len(gaps)}")
    stars = [i for i, g in enumerate(gaps) if g is None or g == 0]
    if len(stars) != 1:
        raise InvalidInputError("exactly one gap entry (the optimal arm) must be None or 0")
    star = stars[0]
    gap_vec = tuple(0.0 if i == star else float(g) for i, g in enumerate(gaps))
    if any(g <= 0.0 for i, g in enumerate(gap_vec) if i != star):
        raise InvalidInputError("gaps of non-optimal arms must be positive")
    drift = tuple(float(d) for d in drift_pattern) or (0.0,)
    if all(d == 0.0 for d in drift):
        drift = (0.0,)
    rows = []
    for d in drift:
        mu_star = base_mean + d
        means = [mu_star + g for g in gap_vec]
        if min(means) <= 0.0 or max(means) >= params.sigma:
            raise InvalidInputError(
                f"drifted means {means} leave the feasible band (0, sigma={params.sigma})"
            )
        rows.append(tuple(make_bernoulli_heavy(mu, params) for mu in means))
    env = EnvironmentSpec("constrained", tuple(rows), horizon, params,
                          optimal_arm=star + 1, gaps=gap_vec, name=name)
    if not verify_heavy_tail(env, params):
        raise InvalidInputError("constructed schedule violates the moment bound")
    return env


def make_switching_adversary(k: int, horizon: int, params: HeavyTailParams,
                             low: float, mid: float, high: float, block: int,
                             name: str = "") -> EnvironmentSpec:
    """Oblivious adversary: arm 1 has mean ``mid`` throughout, and the other
    arms take turns at ``low`` for ``block``-round stretches while the rest
    sit at ``high``. Arm 1 is the best arm in hindsight over whole cycles,
    by a gap of (low + (k-2) high)/(k-1) - mid.
    """
    if k < 2 or block < 1:
        raise InvalidInputError("switching adversary needs k >= 2 and block >= 1")
    if not mid < (low + (k - 2) * high) / (k - 1):
        raise InvalidInputError("mid must beat the cycle average of the other arms")
    good = make_bernoulli_heavy(low, params)
    bad = make_bernoulli_heavy(high, params)
    steady = make_bernoulli_heavy(mid, params)
    rows = []
    for j in range(1, k):
        for _ in range(block):
            row = [steady] + [bad] * (k - 1)
            row[j] = good
            rows.append(tuple(row))
    return EnvironmentSpec("adversarial", tuple(rows), horizon, params, name=name)


def shipped_instances(horizon: int = 50_000) -> dict:
    """Named environments used by the acceptance suite and examples."""
    p2 = HeavyTailParams(2.0, 1.0)
    p15 = HeavyTailParams(1.5, 1.0)
    signed = HeavyTailParams(2.0, math.sqrt(2.5))
    signed_row = (
        LossDistribution((-1.0, 2.0), (0.5, 0.5)),
        make_bernoulli_heavy(0.8, signed),
        make_bernoulli_heavy(0.8, signed),
    )
    return {
        "stochastic-a2": make_stochastic([0.1, 0.3, 0.3, 0.3], p2, horizon, "stochastic-a2"),
        "stochastic-a1.5": make_stochastic([0.1, 0.3, 0.3, 0.3], p15, horizon, "stochastic-a1.5"),
        "constrained-a2": make_constrained_schedule(
            4, horizon, [None, 0.2, 0.2, 0.2], [-0.05, 0.05], p2, 0.1, "constrained-a2"),
        "adversarial-a1.5": make_switching_adversary(
            4, horizon, p15, 0.1, 0.15, 0.5, 256, "adversarial-a1.5"),
        "signed-a2": EnvironmentSpec("stochastic", (signed_row,), horizon, signed,
                                     name="signed-a2"),
    }


# -- JSON form ---------------------------------------------------------------

def _dist_from_json(obj, path: str) -> LossDistribution:
    if not isinstance(obj, list) or not all(isinstance(a, list) and len(a) == 2 for a in obj):
        raise InvalidInputError(f"{path}: a distribution is a list of [value, probability] pairs")
    try:
        return LossDistribution.from_atoms(obj)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None


_ENV_KEYS = {"kind", "rounds", "arms", "means", "base_mean", "drift", "gaps",
             "optimal_arm", "alpha", "sigma", "name", "block", "low", "high"}


def environment_from_dict(d: dict, horizon: int, path: str = "environment") -> EnvironmentSpec:
    """Parse the JSON environment form.

    Explicit form: ``rounds`` (cycle of rows of atom lists) or ``arms`` (one
    row). Shorthand: ``means`` for stationary Bernoulli-heavy arms, or
    ``base_mean``/``drift``/``gaps`` for a constrained schedule; both need
    ``alpha`` and ``sigma``.
    """
    if not isinstance(d, dict):
        raise InvalidInputError(f"{path}: expected an object")
    unknown = set(d) - _ENV_KEYS
    if unknown:
        raise InvalidInputError(f"{path}.{sorted(unknown)[0]}: unknown key")
    kind = d.get("kind", "stochastic")
    params = None
    if "alpha" in d or "sigma" in d:
        try:
            params = HeavyTailParams(float(d.get("alpha", 2.0)), float(d.get("sigma", 1.0)))
        except InvalidInputError as exc:
            raise InvalidInputError(f"{path}.alpha/sigma: {exc}") from None
    name = d.get("name", "")
    if "means" in d:
        if params is None:
            raise InvalidInputError(f"{path}.means: shorthand needs alpha and sigma")
        return make_stochastic(d["means"], params, horizon, name)
    if "base_mean" in d:
        if params is None:
            raise InvalidInputError(f"{path}.base_mean: shorthand needs alpha and sigma")
        gaps = d.get("gaps")
        if gaps is None:
            raise InvalidInputError(f"{path}.gaps: required for a constrained schedule")
        return make_constrained_schedule(len(gaps), horizon, gaps, d.get("drift", [0.0]),
                                         params, float(d["base_mean"]), name)
    if "rounds" in d:
        rows = tuple(
            tuple(_dist_from_json(a, f"{path}.rounds[{t}][{i}]") for i, a in enumerate(r))
            for t, r in enumerate(d["rounds"])
        )
    elif "arms" in d:
        rows = (tuple(_dist_from_json(a, f"{path}.arms[{i}]") for i, a in enumerate(d["arms"])),)
    else:
        raise InvalidInputError(f"{path}: needs one of rounds, arms, means or base_mean")
    gaps = d.get("gaps")
    if gaps is not None:
        gaps = tuple(0.0 if g is None else float(g) for g in gaps)
    try:
        return EnvironmentSpec(kind, rows, horizon, params, d.get("optimal_arm"), gaps, name)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
