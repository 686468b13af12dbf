"""Closed-form regret bounds with their explicit constants.

Each function takes the environment's true (alpha, sigma) and, where the bound
is gap dependent, the gaps of the suboptimal arms.
"""

from __future__ import annotations

import math
from typing import Sequence

STO_MIN_ALPHA = 1.2


def thm_a1_adv(k: int, alpha: float, sigma: float, horizon: int) -> float:
    """HTINF, any environment: 30 sigma K^(1-1/a) (T+1)^(1/a)."""
    return 30.0 * sigma * k ** (1.0 - 1.0 / alpha) * (horizon + 1) ** (1.0 / alpha)


def _suboptimal(gaps: Sequence[float]) -> list:
    return [g for g in gaps if g > 0.0]


def thm_a1_sto(alpha: float, sigma: float, gaps: Sequence[float], horizon: int) -> float:
    """HTINF, stochastically constrained: logarithmic gap-dependent bound."""
    a = alpha
    const = ((2 * a - 2) / a) * (a / 2) ** (-1.0 / (a - 1)) * (30 * sigma / a) ** (a / (a - 1))
    s = math.fsum(g ** (-1.0 / (a - 1)) for g in _suboptimal(gaps))
    return const * s * math.log(horizon + 1)


def thm_b1_adv(k: int, alpha: float, sigma: float, horizon: int) -> float:
    """OptTINF, any environment."""
    n = horizon + 1
    return (26.0 * sigma**alpha * k ** ((alpha - 1) / 2) * n ** ((3 - alpha) / 2)
            + 4.0 * math.sqrt(k * n))


def thm_b1_sto(alpha: float, sigma: float, gaps: Sequence[float], horizon: int) -> float:
    """OptTINF, stochastically constrained: three logarithmic terms."""
    a = alpha
    g = _suboptimal(gaps)
    log_t = math.log(horizon + 1)
    s_pow = math.fsum(d ** ((a - 3) / (a - 1)) for d in g)
    s_inv = math.fsum(1.0 / d for d in g)
    sig = sigma ** (2 * a / (a - 1))
    four = 4.0 ** ((3 - a) / (a - 1))
    first = 2.0 * four * 5.0 ** (2 / (a - 1)) * sig * s_pow * log_t
    second = 32.0 * sigma / (a - 1) * s_inv * log_t
    third = 2.0 * 8.0 ** (2 / (a - 1)) * four * sig * s_pow * log_t
    return first + second + third


def thm_c1(k: int, alpha: float, sigma: float, horizon: int) -> float:
    """AdaTINF with known horizon."""
    return (3.0 * math.sqrt(k * (horizon + 1))
            + 204.0 * sigma * k ** (1.0 - 1.0 / alpha) * (horizon + 1) ** (1.0 / alpha)
            + 12.0 * sigma * horizon ** (1.0 / alpha))


def thm_d1(k: int, alpha: float, sigma: float, horizon: int) -> float:
    """Ada2TINF, horizon unknown: 600 sigma K^(1-1/a) T^(1/a)."""
    return 600.0 * sigma * k ** (1.0 - 1.0 / alpha) * horizon ** (1.0 / alpha)


ADVERSARIAL = {
    "htinf": ("ThmA1-adv", thm_a1_adv),
    "opttinf": ("ThmB1-adv", thm_b1_adv),
    "adatinf": ("ThmC1", thm_c1),
    "ada2tinf": ("ThmD1", thm_d1),
}

GAP_DEPENDENT = {
    "htinf": ("ThmA1-sto", thm_a1_sto),
    "opttinf": ("ThmB1-sto", thm_b1_sto),
}
