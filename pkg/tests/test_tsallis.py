import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from htbandit import tsallis
from htbandit.core import InvalidInputError, NumericFailureError, SimplexPoint
from htbandit.tsallis import (FtrlProblem, bregman_divergence, conjugate_step, ftrl_argmin,
                              potential_gradient, theta_alpha, tsallis_potential)

alphas = st.floats(1.05, 2.0)
loss_vectors = st.integers(2, 6).flatmap(
    lambda k: st.lists(st.floats(-50, 50), min_size=k, max_size=k))


def objective(x, L, eta, alpha):
    x = np.asarray(x)
    return eta * x @ np.asarray(L) - alpha * np.sum(x ** (1.0 / alpha), axis=-1)


def test_potential_examples():
    for a in (1.2, 1.5, 2.0):
        assert tsallis_potential(SimplexPoint.one_hot(4, 3), a) == pytest.approx(-a)
    assert tsallis_potential(SimplexPoint.uniform(4), 2.0) == pytest.approx(-4.0)
    for k, a in [(3, 1.3), (7, 1.8), (10, 2.0)]:
        assert tsallis_potential(SimplexPoint.uniform(k), a) == pytest.approx(-a * k ** (1 - 1 / a))


def test_theta_examples():
    assert theta_alpha(2.0) == pytest.approx(1 - 2 ** (-1 / 3))
    assert theta_alpha(2.0) == pytest.approx(0.206299, abs=1e-6)
    assert theta_alpha(1.5) == pytest.approx(0.159104, abs=1e-6)
    grid = np.linspace(1.0, 2.0, 1001)[1:]
    vals = [theta_alpha(a) for a in grid]
    assert all(0.0 < v < 1.0 for v in vals)
    # limit branch is continuous with the raw formula
    assert theta_alpha(2.0 - 1e-6) == pytest.approx(theta_alpha(2.0), abs=1e-5)
    with pytest.raises(InvalidInputError):
        theta_alpha(1.0)
    with pytest.raises(InvalidInputError):
        theta_alpha(2.1)


def test_argmin_zero_losses_uniform():
    for k, a, eta in [(2, 2.0, 1.0), (5, 1.5, 0.3), (9, 1.1, 7.0)]:
        x = ftrl_argmin(FtrlProblem((0.0,) * k, eta, a))
        assert np.allclose(x.weights, 1.0 / k, atol=1e-12)
        assert not x.degenerate


def test_argmin_derived_point_against_grid():
    x = ftrl_argmin(FtrlProblem((0.0, 5.0 / 12.0), 1.0, 2.0))
    assert x.weights == pytest.approx((0.64, 0.36), abs=1e-10)
    grid = np.linspace(1e-6, 1 - 1e-6, 999_999)
    pts = np.stack([grid, 1 - grid], axis=1)
    best = grid[np.argmin(objective(pts, (0.0, 5 / 12), 1.0, 2.0))]
    assert best == pytest.approx(0.64, abs=2e-6)


def test_argmin_rejects_bad_problems():
    with pytest.raises(InvalidInputError):
        FtrlProblem((1.0,), 1.0, 2.0)
    with pytest.raises(InvalidInputError):
        FtrlProblem((1.0, math.inf), 1.0, 2.0)
    with pytest.raises(InvalidInputError):
        FtrlProblem((1.0, 0.0), 0.0, 2.0)
    with pytest.raises(InvalidInputError):
        FtrlProblem((1.0, 0.0), 1.0, 2.5)


def test_argmin_reports_non_convergence(monkeypatch):
    monkeypatch.setattr(tsallis, "SOLVER_MAX_ITER", 0)
    with pytest.raises(NumericFailureError):
        ftrl_argmin(FtrlProblem((0.0, 1.0, 2.0), 1.0, 1.5))


def test_argmin_extreme_spread_stays_interior():
    x = ftrl_argmin(FtrlProblem((0.0, 1e6, 1e12), 1.0, 1.1))
    assert all(w > 0 for w in x.weights)
    assert math.fsum(x.weights) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(loss_vectors, st.floats(0.01, 10.0), alphas)
def test_argmin_is_interior_and_normalised(L, eta, a):
    x = ftrl_argmin(FtrlProblem(tuple(L), eta, a))
    assert all(w > 0 for w in x.weights)
    assert abs(math.fsum(x.weights) - 1.0) <= 1e-9


@settings(max_examples=300, deadline=None)
@given(loss_vectors, st.floats(0.01, 10.0), alphas, st.floats(-10, 10))
def test_translation_invariance(L, eta, a, c):
    x = ftrl_argmin(FtrlProblem(tuple(L), eta, a)).as_array()
    y = ftrl_argmin(FtrlProblem(tuple(v + c for v in L), eta, a)).as_array()
    assert np.max(np.abs(x - y)) <= 1e-8


@settings(max_examples=300, deadline=None)
@given(loss_vectors, st.floats(0.01, 10.0), alphas, st.floats(0.01, 5.0), st.data())
def test_monotonicity(L, eta, a, bump, data):
    i = data.draw(st.integers(0, len(L) - 1))
    x = ftrl_argmin(FtrlProblem(tuple(L), eta, a)).as_array()
    L2 = list(L)
    L2[i] += bump
    y = ftrl_argmin(FtrlProblem(tuple(L2), eta, a)).as_array()
    if 1e-300 < x[i] < 1.0 - 1e-12:
        # otherwise the change is below float resolution of a saturated weight
        assert y[i] < x[i]
    others = np.delete(y - x, i)
    assert np.all(others >= -1e-12)


def _grid_best(L, eta, a, mesh=1e-3):
    n = int(round(1 / mesh))
    if len(L) == 2:
        g = np.arange(1, n) / n
        pts = np.stack([g, 1 - g], axis=1)
    else:
        i, j = np.meshgrid(np.arange(1, n), np.arange(1, n), indexing="ij")
        keep = i + j < n
        pts = np.stack([i[keep] / n, j[keep] / n, (n - i[keep] - j[keep]) / n], axis=1)
    vals = objective(pts, L, eta, a)
    return pts[np.argmin(vals)], vals.min()


def random_problem(rng, min_weight=5e-3):
    """Random K in {2,3} problem whose argmin the 1e-3 grid can resolve.

    Optima closer to a face than a few mesh cells cannot be located by the
    grid, so such draws are rejected.
    """
    while True:
        k = int(rng.integers(2, 4))
        L = rng.uniform(-2, 2, k)
        eta, a = rng.uniform(0.2, 2.0), rng.uniform(1.2, 2.0)
        x = ftrl_argmin(FtrlProblem(tuple(L), eta, a)).as_array()
        if x.min() >= min_weight:
            return L, eta, a, x


@pytest.mark.parametrize("seed", range(20))
def test_oracle_equivalence_small(seed):
    L, eta, a, x = random_problem(np.random.default_rng(seed))
    arg, best = _grid_best(L, eta, a)
    assert objective(x, L, eta, a) <= best + 1e-12
    assert best - objective(x, L, eta, a) <= 1e-4
    assert np.max(np.abs(arg - x)) <= 1e-3


def test_conjugate_step_identity_and_example():
    x = SimplexPoint((0.2, 0.3, 0.5))
    assert np.allclose(conjugate_step(x, 0.7, 1.5, np.zeros(3)), x.weights, rtol=1e-14)
    z = conjugate_step(SimplexPoint((0.5, 0.5)), 1.0, 2.0, np.array([0.1, 0.0]))
    # (0.5^-1/2 + 0.1)^-2 = 1 / 1.5142135...^2
    assert z[0] == pytest.approx(0.4361398, abs=5e-7)
    assert z[1] == pytest.approx(0.5, abs=1e-15)
    # independent check: invert the gradient numerically
    target = -(0.5**-0.5) - 0.1
    root = brentq(lambda w: -(w ** -0.5) - target, 1e-6, 1.0, xtol=1e-15)
    assert z[0] == pytest.approx(root, rel=1e-10)


def test_conjugate_step_rejects_large_losses():
    with pytest.raises(NumericFailureError):
        conjugate_step(SimplexPoint((0.5, 0.5)), 1.0, 2.0, np.array([-5.0, 0.0]))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), alphas, st.floats(0.01, 2.0),
       st.data())
def test_conjugate_round_trip(w, a, eta, data):
    w = np.asarray(w) / np.sum(w)
    v = np.asarray(data.draw(st.lists(st.floats(-0.5, 0.5), min_size=w.size, max_size=w.size)))
    base = w ** (-(a - 1) / a) + eta * v
    if np.any(base <= 0.05):
        return
    z = conjugate_step(w, eta, a, v)
    back = potential_gradient(z, a)
    # z = grad_inverse(grad(x) - eta*v), so the gradient of z sits eta*v below
    assert np.allclose(back, potential_gradient(w, a) - eta * v, atol=1e-9, rtol=1e-9)


def _bregman_direct(x, z, a):
    # second coding: Psi(x) - Psi(z) - <grad Psi(z), x - z> term by term
    psi = lambda v: -a * sum(t ** (1 / a) for t in v)  # noqa: E731
    grad = [-(t ** (1 / a - 1)) for t in z]
    return psi(x) - psi(z) - sum(g * (xi - zi) for g, xi, zi in zip(grad, x, z))


def test_bregman_examples():
    x = SimplexPoint((0.5, 0.5))
    assert bregman_divergence(x, x.as_array(), 2.0) == pytest.approx(0.0, abs=1e-15)
    d = bregman_divergence(x, np.array([0.25, 0.25]), 2.0)
    # closed form: -2*sqrt2 + 2 + 2*0.5 = 3 - 2*sqrt(2)
    assert d == pytest.approx(3 - 2 * math.sqrt(2), rel=1e-12)
    assert d == pytest.approx(_bregman_direct((0.5, 0.5), (0.25, 0.25), 2.0), rel=1e-12)
    with pytest.raises(InvalidInputError):
        bregman_divergence(x, np.array([0.0, 0.5]), 2.0)


def test_bregman_nonnegative_random_pairs():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        a = rng.uniform(1.01, 2.0)
        x = rng.dirichlet(np.ones(k))
        z = rng.uniform(0.01, 1.5, k)
        d = bregman_divergence(x, z, a)
        assert d >= -1e-12
        assert d == pytest.approx(_bregman_direct(x, z, a), rel=1e-9, abs=1e-12)
