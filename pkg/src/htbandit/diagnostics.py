"""Runtime checks of the auxiliary inequalities behind the regret analysis.

Every audit works on a finished :class:`~htbandit.runner.EpisodeTrace` and
raises :class:`~htbandit.core.AuditFailure` on a violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AuditFailure, HeavyTailParams
from .envs import LossDistribution, sample_losses, truncated_mean
from .tsallis import bregman_divergence, conjugate_step, theta_alpha, tsallis_potential

Z_REL_TOL = 1e-9
DECOMP_REL_TOL = 1e-6


def _kept_arrays(trace):
    a = trace.as_arrays()
    n = a["x"].shape[0]
    arm = a["arm"] - 1
    xi = a["x"][np.arange(n), arm]
    kept = ~a["skipped"]
    est = np.zeros_like(a["x"])
    est[np.arange(n), arm] = np.where(kept, a["loss"] / xi, 0.0)
    drift = np.where(kept, a["loss"], 0.0)[:, None]
    return a, est, est - drift, kept


def mirror_points(trace) -> tuple:
    """(x, z, kept) where z is the mirror step with the drifted estimate."""
    a, _, drifted, kept = _kept_arrays(trace)
    z = conjugate_step(a["x"], 1.0 / a["eta_inv"][:, None], trace.alpha, drifted)
    return a["x"], z, kept


def z_bound_audit(trace) -> float:
    """Check z_{t,i} <= 2^(a/(2a-1)) x_{t,i} on every kept round.

    Returns the largest observed ratio z/x over kept rounds (1.0 when no
    round was kept).
    """
    if len(trace.records) == 0:
        return 1.0
    x, z, kept = mirror_points(trace)
    cap = 2.0 ** (trace.alpha / (2.0 * trace.alpha - 1.0))
    ratio = z[kept] / x[kept]
    if ratio.size == 0:
        return 1.0
    worst = float(ratio.max())
    if worst > cap * (1.0 + Z_REL_TOL):
        t = int(np.nonzero(kept)[0][np.argmax(ratio.max(axis=1))]) + 1
        raise AuditFailure(f"round {t}: z/x = {worst} exceeds {cap}")
    return worst


@dataclass(frozen=True)
class DecompositionAudit:
    lhs: float
    part_a: float
    part_b: float

    @property
    def slack(self) -> float:
        return self.part_a + self.part_b - self.lhs


def _decomposition(records, k, alpha, star, trace_like) -> DecompositionAudit:
    if not records:
        return DecompositionAudit(0.0, 0.0, 0.0)
    a, est, drifted, kept = _kept_arrays(trace_like)
    x = a["x"]
    y = np.zeros(k)
    y[star - 1] = 1.0
    lhs = float(np.sum((x - y) * est))
    eta_inv = a["eta_inv"]
    steps = np.diff(np.concatenate([[0.0], eta_inv]))
    psi_x = -alpha * np.sum(x ** (1.0 / alpha), axis=1)
    part_a = float(np.sum(steps * (tsallis_potential(y, alpha) - psi_x)))
    z = conjugate_step(x, 1.0 / eta_inv[:, None], alpha, drifted)
    div = np.zeros(x.shape[0])
    if kept.any():
        div[kept] = bregman_divergence(x[kept], z[kept], alpha)
    part_b = float(np.sum(eta_inv * div))
    return DecompositionAudit(lhs, part_a, part_b)


class _Segment:
    def __init__(self, records, k):
        self.records = records
        self.k = k

    def as_arrays(self):
        from .runner import EpisodeTrace

        return EpisodeTrace(self.records, "", "", 0, self.k, len(self.records)).as_arrays()


def ftrl_decomposition_audit(trace, best_arm: int) -> list:
    """Check sum <x_t - e*, l_hat_t> <= Part(A) + Part(B) against ``best_arm``.

    Part (A) sums (eta_t^-1 - eta_{t-1}^-1)(Psi(e*) - Psi(x_t)) and Part (B)
    sums eta_t^-1 D(x_t, z_t). Ada2TINF traces are checked once per restart,
    because the learning rate resets there. Returns one audit per segment.
    """
    if trace.policy_name == "ada2tinf":
        from .runner import restart_segments

        segments = [_Segment(seg, trace.k) for _, seg in restart_segments(trace)]
    else:
        segments = [trace]
    out = []
    for seg in segments:
        res = _decomposition(seg.records, trace.k, trace.alpha, best_arm, seg)
        scale = max(1.0, abs(res.part_a) + abs(res.part_b))
        if res.lhs > res.part_a + res.part_b + DECOMP_REL_TOL * scale:
            raise AuditFailure(
                f"FTRL decomposition violated: {res.lhs} > {res.part_a} + {res.part_b}"
            )
        out.append(res)
    return out


def skip_rate_check(trace, env, params: HeavyTailParams, n_sd: float = 5.0) -> tuple:
    """Compare the number of skipped rounds with the summed Markov bounds
    sigma^a / r_t^a (capped at 1). Returns (skips, bound, sd, ok)."""
    a = trace.as_arrays()
    r = a["threshold"]
    with np.errstate(divide="ignore"):
        b = np.minimum(1.0, params.moment_cap / r**params.alpha)
    b[np.isinf(r)] = 0.0
    skips = int(a["skipped"].sum())
    bound = float(b.sum())
    sd = float(math.sqrt(np.sum(b * (1.0 - b))))
    return skips, bound, sd, skips <= bound + n_sd * max(sd, 1.0)


def importance_sampler_check(x, dists, alpha: float, sigma: float, eta_inv: float,
                             n: int, rng, theta: float = None) -> list:
    """Monte-Carlo mean of the skipped importance estimate versus the
    analytic truncated mean, for each arm, with x held fixed.

    Returns (analytic, empirical, standard error) per arm.
    """
    x = np.asarray(getattr(x, "weights", x), dtype=float)
    theta = theta_alpha(alpha) if theta is None else theta
    k = x.size
    u = rng.random(n)
    arms = np.minimum(np.searchsorted(np.cumsum(x), u, side="right"), k - 1)
    losses = np.zeros(n)
    for i, d in enumerate(dists):
        sel = arms == i
        losses[sel] = sample_losses(d, rng, int(sel.sum()))
    thresholds = theta * eta_inv * x ** (1.0 / alpha)
    out = []
    for i, d in enumerate(dists):
        kept = (arms == i) & (np.abs(losses) <= thresholds[i])
        est = np.where(kept, losses / x[i], 0.0)
        out.append((truncated_mean(d, float(thresholds[i])), float(est.mean()),
                    float(est.std(ddof=1) / math.sqrt(n))))
    return out


def max_loss_check(dist: LossDistribution, params: HeavyTailParams, replicates: int,
                   horizon: int, rng) -> tuple:
    """Mean over replicates of max_t |l_t| versus sigma T^(1/a) (1 + 4/sqrt(R)).

    Returns (empirical mean, bound, ok).
    """
    draws = sample_losses(dist, rng, (replicates, horizon))
    emp = float(np.abs(draws).max(axis=1).mean())
    bound = params.sigma * horizon ** (1.0 / params.alpha) * (1.0 + 4.0 / math.sqrt(replicates))
    return emp, bound, emp <= bound
