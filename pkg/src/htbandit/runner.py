"""Episode execution, replicate orchestration and theorem-bound reports."""

from __future__ import annotations

import math
import os
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import bounds
from .core import (AuditFailure, HeavyTailParams, InvalidInputError, RegretSeries,
                   RoundRecord, cumulative_regret)
from .envs import EnvironmentSpec, truncated_means
from .policies import THETA_2, Ada2TINF, AdaTINF, HTINF, OptTINF, TsallisINF, next_epoch

POLICIES = ("htinf", "opttinf", "adatinf", "ada2tinf", "tsallis_inf")
POLICY_STREAM, ENV_STREAM = 1, 2
_MASK = (1 << 64) - 1
_AUDIT_TOL = 1e-9


# -- seeds -------------------------------------------------------------------

def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(base_seed: int, replicate: int, stream: int) -> int:
    """Counter-based seed for one (replicate, stream) pair."""
    s = splitmix64(base_seed & _MASK)
    s = splitmix64(s ^ (replicate & _MASK))
    return splitmix64(s ^ stream)


def stream_rng(base_seed: int, replicate: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, replicate, stream))


# -- policies ----------------------------------------------------------------

@dataclass(frozen=True)
class PolicySpec:
    """Which policy to run. Only ``htinf`` takes (alpha, sigma)."""

    name: str
    alpha: Optional[float] = None
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.name not in POLICIES:
            raise InvalidInputError(f"unknown policy {self.name!r}; expected one of {POLICIES}")
        if self.name == "htinf":
            if self.alpha is None or self.sigma is None:
                raise InvalidInputError("htinf needs both alpha and sigma")
            HeavyTailParams(self.alpha, self.sigma)
        elif self.alpha is not None or self.sigma is not None:
            raise InvalidInputError(f"{self.name} does not take alpha/sigma")

    @property
    def policy_alpha(self) -> float:
        return self.alpha if self.name == "htinf" else 2.0

    @property
    def policy_sigma(self) -> float:
        return self.sigma if self.name == "htinf" else 1.0

    def build(self, k: int, horizon: int, rng):
        if self.name == "htinf":
            return HTINF(k, HeavyTailParams(self.alpha, self.sigma), rng, horizon)
        if self.name == "opttinf":
            return OptTINF(k, rng, horizon)
        if self.name == "tsallis_inf":
            return TsallisINF(k, rng, horizon)
        if self.name == "adatinf":
            return AdaTINF(k, horizon, rng)
        # Ada2TINF is never told the horizon; the cap only guards the loop.
        return Ada2TINF(k, rng)


def _as_spec(policy) -> PolicySpec:
    if isinstance(policy, PolicySpec):
        return policy
    if isinstance(policy, str):
        return PolicySpec(policy)
    raise InvalidInputError("policy must be a PolicySpec or a policy name")


# -- episodes ----------------------------------------------------------------

@dataclass
class EpisodeTrace:
    records: list
    policy_name: str
    env_fingerprint: str
    seed: int
    k: int = 0
    horizon: int = 0
    alpha: float = 2.0
    sigma: float = 1.0
    replicate: int = 0
    restart_rounds: list = field(default_factory=list)

    def __post_init__(self):
        if any(r.t != i + 1 for i, r in enumerate(self.records)):
            raise InvalidInputError("trace rounds must run 1..T in order")

    def __len__(self) -> int:
        return len(self.records)

    def as_arrays(self) -> dict:
        recs = self.records
        n = len(recs)
        x = np.array([r.x.weights for r in recs], dtype=float).reshape(n, self.k)
        return {
            "t": np.arange(1, n + 1),
            "x": x,
            "arm": np.array([r.arm for r in recs], dtype=np.int64),
            "loss": np.array([r.loss for r in recs], dtype=float),
            "threshold": np.array([r.threshold for r in recs], dtype=float),
            "skipped": np.array([r.skipped for r in recs], dtype=bool),
            "lam": np.array([r.lam for r in recs], dtype=float),
            "eta_inv": np.array([r.eta_inv for r in recs], dtype=float),
            "cost": np.array([np.nan if r.cost is None else r.cost for r in recs], dtype=float),
        }


def run_episode(policy, env: EnvironmentSpec, seed: int, replicate: int = 0) -> EpisodeTrace:
    """Play ``env.horizon`` rounds of ``policy`` against ``env``.

    ``policy`` is a :class:`PolicySpec`, a policy name, or an already built
    policy object (whose arm count must match the environment).
    """
    horizon = env.horizon
    if isinstance(policy, (PolicySpec, str)):
        spec = _as_spec(policy)
        agent = spec.build(env.k, horizon, stream_rng(seed, replicate, POLICY_STREAM))
        name, alpha, sigma = spec.name, spec.policy_alpha, spec.policy_sigma
    else:
        agent = policy
        if agent.k != env.k:
            raise InvalidInputError(f"policy has {agent.k} arms but the environment has {env.k}")
        name, alpha, sigma = agent.name, agent.alpha, agent.sigma
    env_rng = stream_rng(seed, replicate, ENV_STREAM)
    u = env_rng.random(horizon)
    rows = env.rows
    period = len(rows)
    cdfs = [[(d._cdf, d.values) for d in row] for row in rows]
    records = []
    for t in range(1, horizon + 1):
        _, arm, _ = agent.choose()
        cdf, vals = cdfs[(t - 1) % period][arm - 1]
        j = bisect_right(cdf, u[t - 1])
        loss = vals[j if j < len(vals) else len(vals) - 1]
        records.append(agent.update(loss))
    return EpisodeTrace(records, name, env.fingerprint(), seed, env.k, horizon, alpha, sigma,
                        replicate, list(getattr(agent, "restart_rounds", [])))


def default_checkpoints(horizon: int) -> tuple:
    pts = []
    c = 1
    while c < horizon:
        pts.append(c)
        c *= 2
    if horizon > 0:
        pts.append(horizon)
    return tuple(pts)


@dataclass(frozen=True)
class ExperimentConfig:
    policy: PolicySpec
    env: EnvironmentSpec
    horizon: int
    k: int
    replicates: int
    base_seed: int = 0
    checkpoints: Optional[tuple] = None
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 0:
            raise InvalidInputError("T must be non-negative")
        if self.replicates < 1:
            raise InvalidInputError("replicates must be at least 1")
        if self.k != self.env.k:
            raise InvalidInputError(f"K={self.k} but the environment has {self.env.k} arms")
        if self.env.horizon != self.horizon:
            object.__setattr__(self, "env", self.env.with_horizon(self.horizon))
        cps = self.checkpoints
        if cps is not None:
            cps = tuple(int(c) for c in cps if 1 <= int(c) < self.horizon) + (self.horizon,)
            cps = tuple(sorted(set(cps)))
            object.__setattr__(self, "checkpoints", cps)

    @property
    def checkpoint_rounds(self) -> tuple:
        return self.checkpoints if self.checkpoints is not None else default_checkpoints(self.horizon)


@dataclass
class ExperimentResult:
    series: RegretSeries
    regrets: np.ndarray  # replicates x checkpoints
    traces: list
    hook_results: list


def _replicate(args):
    config, r, keep, hook = args
    trace = run_episode(config.policy, config.env, config.base_seed, r)
    cps = config.checkpoint_rounds
    if cps:
        m = config.env.mean_schedule()
        cum = cumulative_regret([rec.arm for rec in trace.records], m)
        reg = np.array([cum[c - 1] for c in cps])
    else:
        reg = np.zeros(0)
    out = hook(trace) if hook is not None else None
    return r, reg, (trace if keep else None), out


def worker_count(replicates: int) -> int:
    raw = os.environ.get("HTBANDIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"HTBANDIT_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(n, replicates))


def run_experiment(config: ExperimentConfig, keep_traces: bool = False,
                   trace_hook: Optional[Callable] = None, order=None) -> ExperimentResult:
    """Run every replicate and aggregate mean regret with standard errors.

    Results are collected by replicate index, so neither the worker count
    nor ``order`` (a permutation of replicate indices) changes the output.
    """
    idx = list(range(config.replicates)) if order is None else list(order)
    if sorted(idx) != list(range(config.replicates)):
        raise InvalidInputError("order must be a permutation of the replicate indices")
    jobs = [(config, r, keep_traces, trace_hook) for r in idx]
    workers = worker_count(config.replicates)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]
    results.sort(key=lambda item: item[0])
    cps = config.checkpoint_rounds
    regrets = np.array([item[1] for item in results]).reshape(config.replicates, len(cps))
    n = config.replicates
    means = regrets.mean(axis=0) if n else np.zeros(len(cps))
    se = regrets.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(cps))
    series = RegretSeries(config.horizon,
                          tuple((int(c), float(m), float(s)) for c, m, s in zip(cps, means, se)),
                          n)
    return ExperimentResult(series, regrets, [item[2] for item in results if item[2] is not None],
                            [item[3] for item in results])


# -- regret decomposition ----------------------------------------------------

def counterfactual_thresholds(trace: EpisodeTrace, arrays: Optional[dict] = None) -> np.ndarray:
    """Threshold each arm would have faced had it been drawn: T x K.

    r_t scales with x_{t,i}^(1/alpha) at fixed t, so r_{t,i} follows from the
    recorded r_t and the ratio of weights.
    """
    a = arrays or trace.as_arrays()
    x, arm, r = a["x"], a["arm"], a["threshold"]
    if x.shape[0] == 0:
        return np.zeros_like(x)
    xi = x[np.arange(x.shape[0]), arm - 1]
    with np.errstate(invalid="ignore"):
        out = r[:, None] * (x / xi[:, None]) ** (1.0 / trace.alpha)
    out[np.isinf(r)] = np.inf
    return out


def decompose_regret(trace: EpisodeTrace, env: EnvironmentSpec) -> tuple:
    """(skipping gap, FTRL error) against the environment's best arm.

    The gap uses analytic truncated means at the realised thresholds; the
    error uses the realised importance-weighted estimates.
    """
    n = len(trace.records)
    if n == 0 or env.k == 1:
        return 0.0, 0.0
    a = trace.as_arrays()
    star = env.best_arm() - 1
    x = a["x"]
    y = np.zeros(env.k)
    y[star] = 1.0
    mu = env.mean_schedule(n)
    rth = counterfactual_thresholds(trace, a)
    mu_trunc = np.empty_like(mu)
    phase = (np.arange(n)) % env.period
    for p, row in enumerate(env.rows):
        sel = phase == p
        for i, d in enumerate(row):
            mu_trunc[sel, i] = truncated_means(d, rth[sel, i])
    gap = float(np.sum((x - y) * (mu - mu_trunc)))
    arm = a["arm"] - 1
    xi = x[np.arange(n), arm]
    est = np.where(a["skipped"], 0.0, a["loss"] / xi)
    err = float(np.sum(est * (xi - (arm == star))))
    return gap, err


# -- AdaTINF epoch audit -----------------------------------------------------

@dataclass(frozen=True)
class EpochAudit:
    final_epoch: int
    epochs: tuple  # (j, gamma, tau, carried, sum_without_tau, sum_all)
    scale: float


def _segment_rows(records, start: int, length: int):
    return records[start - 1:start - 1 + length]


def audit_epochs(trace, k: Optional[int] = None, horizon: Optional[int] = None) -> EpochAudit:
    """Replay the epoch bookkeeping of an AdaTINF trace and check the
    per-epoch cost inequalities.

    ``trace`` is an :class:`EpisodeTrace` or a list of records (anything with
    t, arm, loss, skipped, lam, threshold, cost and optionally x). Each c_t is
    recomputed from the round's other fields, so a tampered cost is caught
    even when the inequalities would still hold.
    """
    records = getattr(trace, "records", trace)
    k = k if k is not None else getattr(trace, "k", None)
    horizon = horizon if horizon is not None else getattr(trace, "horizon", len(records))
    if not k:
        raise InvalidInputError("audit_epochs needs the number of arms")
    scale = math.sqrt(k * (horizon + 1))
    J, S = 0, 0.0
    costs = []
    lams = []
    for rec in records:
        t = rec.t
        lam = float(2**J)
        if rec.lam is None or abs(rec.lam - lam) > _AUDIT_TOL * lam:
            raise AuditFailure(f"round {t}: recorded lambda {rec.lam} but replay gives {lam}")
        if rec.cost is None or not math.isfinite(rec.cost):
            raise AuditFailure(f"round {t}: missing cost")
        if rec.skipped:
            c = rec.loss
        else:
            x_arm = _played_weight(rec, lam)
            c = 2.0 / (lam * math.sqrt(t)) * x_arm**-0.5 * rec.loss**2
        if abs(c - rec.cost) > _AUDIT_TOL * max(1.0, abs(c)):
            raise AuditFailure(f"round {t}: recorded cost {rec.cost!r} but replay gives {c!r}")
        costs.append(rec.cost)
        lams.append(J)
        S += rec.cost
        if 2**J * scale < S:
            J = next_epoch(J, rec.cost, scale)
            S = rec.cost
    epochs = []
    order = sorted(set(lams))
    for j in order:
        idx = [i for i, v in enumerate(lams) if v == j]
        gamma, tau = idx[0] + 1, idx[-1] + 1
        carried = costs[gamma - 2] if gamma > 1 else 0.0
        body = math.fsum(costs[i] for i in idx)
        without_tau = body - costs[tau - 1]
        epochs.append((j, gamma, tau, carried, without_tau, body))
    for j, gamma, tau, carried, without_tau, body in epochs:
        cap = 2**j * scale
        slack = _AUDIT_TOL * max(1.0, cap)
        if j < J:
            if carried + without_tau > cap + slack:
                raise AuditFailure(f"epoch {j}: cost before its last round exceeds {cap}")
            if not body > 2 ** (j - 1) * scale - slack:
                raise AuditFailure(f"epoch {j}: total cost does not exceed {cap / 2}")
        elif carried + body > cap + slack:
            raise AuditFailure(f"final epoch {j}: cost exceeds {cap}")
    if records and (not epochs or epochs[-1][0] != J):
        # Doubling fired on the very last round: the new epoch is empty and
        # only holds the carried cost.
        cap = 2**J * scale
        if costs[-1] > cap + _AUDIT_TOL * max(1.0, cap):
            raise AuditFailure(f"final epoch {J}: carried cost exceeds {cap}")
    return EpochAudit(J, tuple(epochs), scale)


def _played_weight(rec, lam: float) -> float:
    x = getattr(rec, "x", None)
    if x is not None:
        return x.weights[rec.arm - 1]
    return (rec.threshold / (lam * THETA_2 * math.sqrt(rec.t))) ** 2


def restart_segments(trace: EpisodeTrace) -> list:
    """Split an Ada2TINF trace into (inner horizon, records relabelled 1..n)."""
    out = []
    for start, length in Ada2TINF.schedule(len(trace.records)):
        seg = _segment_rows(trace.records, start, length)
        out.append((length, [_relabel(r, r.t - start + 1) for r in seg]))
    return out


def _relabel(rec: RoundRecord, t: int) -> RoundRecord:
    return RoundRecord(t, rec.x, rec.arm, rec.loss, rec.threshold, rec.skipped,
                       rec.lam, rec.eta_inv, rec.cost, rec.epoch)


def audit_trace_epochs(trace: EpisodeTrace) -> list:
    """Epoch audit for AdaTINF, or per restart segment for Ada2TINF."""
    if trace.policy_name == "adatinf":
        return [audit_epochs(trace)]
    if trace.policy_name == "ada2tinf":
        return [audit_epochs(seg, trace.k, h) for h, seg in restart_segments(trace)]
    raise InvalidInputError(f"{trace.policy_name} traces have no epochs")


# -- bound reports -----------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    measured_regret: float
    bound_value: float
    bound_name: str
    satisfied: bool
    horizon: int = 0
    applicable: bool = True
    note: str = ""

    def __post_init__(self):
        if self.applicable and self.satisfied != (self.measured_regret <= self.bound_value):
            raise InvalidInputError("satisfied must equal measured <= bound")

    def to_dict(self) -> dict:
        return {
            "bound_name": self.bound_name,
            "measured_regret": self.measured_regret,
            "bound_value": self.bound_value if math.isfinite(self.bound_value) else None,
            "satisfied": self.satisfied,
            "applicable": self.applicable,
            "horizon": self.horizon,
            "note": self.note,
        }


def _unique_gaps(env: EnvironmentSpec) -> Optional[tuple]:
    if env.kind == "adversarial" and not env.is_stochastic:
        return None
    gaps = env.gap_profile()
    nonzero = [g for g in gaps if g > 0.0]
    if len(nonzero) != len(gaps) - 1:
        return None
    return gaps


def bound_report(series: RegretSeries, env: EnvironmentSpec, policy_kind: str,
                 at: Optional[int] = None) -> list:
    """Compare mean regret + 3 SE with the closed-form bounds for the policy.

    ``at`` selects a checkpoint (default: the horizon). Gap-dependent bounds
    are reported as not applicable when the instance has no unique best arm
    with positive gaps or when alpha < 1.2.
    """
    if env.params is None:
        raise InvalidInputError("bound checks need the environment's true alpha and sigma")
    alpha, sigma = env.params.alpha, env.params.sigma
    t, mean, se = series.at(at) if at is not None else series.checkpoints[-1]
    measured = mean + 3.0 * se
    out = []
    if policy_kind in bounds.ADVERSARIAL:
        name, fn = bounds.ADVERSARIAL[policy_kind]
        b = fn(env.k, alpha, sigma, t)
        out.append(BoundReport(measured, b, name, measured <= b, t))
    if policy_kind in bounds.GAP_DEPENDENT:
        name, fn = bounds.GAP_DEPENDENT[policy_kind]
        gaps = _unique_gaps(env)
        if gaps is None:
            out.append(BoundReport(measured, math.inf, name, False, t, False,
                                   "no unique best arm with positive gaps"))
        elif alpha < bounds.STO_MIN_ALPHA:
            out.append(BoundReport(measured, math.inf, name, False, t, False,
                                   f"alpha below {bounds.STO_MIN_ALPHA}"))
        else:
            b = fn(alpha, sigma, gaps, t)
            out.append(BoundReport(measured, b, name, measured <= b, t))
    return out
