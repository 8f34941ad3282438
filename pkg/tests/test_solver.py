import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import cumulative_trapezoid

from fracmv.errors import ContractError, NonConvergenceError
from fracmv.gaussian_noise import NoiseBundle, RngSpec
from fracmv.grid import TimeGrid
from fracmv.model import InitialLaw, expm_series
from fracmv.solver import (LawFlow, pt_functional, rho_process, simulate_ensemble, solve_frozen,
                           solve_particles, solve_picard, stability_sweep)

from conftest import kinetic_model, scalar_model, zero_noise

LAW = InitialLaw((0.0,), (0.1,))


def bundle(n, grid, d=1, seed=1, H=0.7):
    return NoiseBundle.generate(RngSpec(seed), n, grid, d, H, 0.8)


def x0(n, d=1, seed=0):
    return np.random.default_rng(seed).normal(size=(n, d))


def mean_ode(m0, a, c, t):
    return m0 * np.exp(a * t) + c / a * (np.exp(a * t) - 1.0)


# --- frozen-law solver ----------------------------------------------------------


def test_zero_drift_is_initial_point_plus_fbm():
    m = scalar_model(0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    grid = TimeGrid(1.0, 32)
    nb = bundle(20, grid)
    start = x0(20)
    X = solve_frozen(m, LawFlow.constant(grid, start), nb, start)
    np.testing.assert_allclose(X, start[:, None] + nb.B_H, atol=1e-14)


def test_noise_free_ode_error_is_first_order():
    m = scalar_model(-1.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    start = np.ones((1, 1))
    errs = []
    for n in (50, 100, 200):
        grid = TimeGrid(1.0, n)
        X = solve_frozen(m, LawFlow.constant(grid, start), zero_noise(grid, 1, 1), start)
        errs.append(abs(X[0, -1, 0] - np.exp(-1.0)))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)


def test_constant_drift_without_noise():
    m = scalar_model(0.0, 0.0, 1.0, 1.0, 0.3, 0.2)
    grid = TimeGrid(2.0, 10)
    start = x0(4)
    X = solve_frozen(m, LawFlow.constant(grid, start), zero_noise(grid, 4, 1), start)
    np.testing.assert_allclose(X, start[:, None] + grid.times[None, :, None], atol=1e-13)


def test_frozen_contracts():
    m = scalar_model()
    grid = TimeGrid(1.0, 8)
    with pytest.raises(ContractError):
        solve_frozen(m, LawFlow.constant(TimeGrid(1.0, 4), x0(3)), bundle(3, grid), x0(3))
    with pytest.raises(ContractError):
        solve_frozen(m, LawFlow.constant(grid, x0(3)), bundle(3, grid), x0(4))


# --- Picard ----------------------------------------------------------------------------


def test_law_free_model_converges_in_one_iteration():
    m = scalar_model(abar=0.0, s1=0.0)
    grid = TimeGrid(1.0, 32)
    out = solve_picard(m, x0(200), grid, bundle(200, grid))
    assert out.iterations == 1


@pytest.mark.parametrize("H", [0.3, 0.7])
def test_picard_mean_matches_mean_ode(H):
    m = scalar_model(H=H)
    grid = TimeGrid(1.0, 256)
    n = 10_000
    out = solve_picard(m, x0(n) * 0.1, grid, bundle(n, grid, H=H))
    exact = mean_ode(0.0, -0.5, 1.0, grid.times)
    se = out.X[:, :, 0].std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(out.X[:, :, 0].mean(axis=0) - exact) <= 3 * se + 2 * grid.dt)


def test_contraction_ratios_below_one():
    m = scalar_model()
    grid = TimeGrid(1.0, 64)
    out = solve_picard(m, x0(2000), grid, bundle(2000, grid))
    assert out.iterations >= 2
    assert all(r < 1 for r in out.ratios)
    d = out.distances
    assert all(d[i + 1] < d[i] for i in range(len(d) - 1))


def test_fixed_point_reproduces_itself():
    m = scalar_model()
    grid = TimeGrid(1.0, 64)
    nb = bundle(500, grid)
    out = solve_picard(m, x0(500), grid, nb, tol=1e-12)
    again = solve_frozen(m, out.law_flow, nb, out.x0)
    np.testing.assert_allclose(again, out.X, atol=1e-10)


def test_picard_reports_non_convergence():
    m = scalar_model()
    grid = TimeGrid(1.0, 16)
    with pytest.raises(NonConvergenceError):
        solve_picard(m, x0(50), grid, bundle(50, grid), tol=1e-30, max_iter=2)


def test_simulate_ensemble_is_thread_independent():
    m = kinetic_model(A1=((0.1, 0.2),), s1=0.2)
    grid = TimeGrid(1.0, 32)
    law = InitialLaw((0.0, 0.0), (0.1, 0.1))
    a = simulate_ensemble(m, law, grid, 300, 42, "t", threads=1)
    b = simulate_ensemble(m, law, grid, 300, 42, "t", threads=3)
    np.testing.assert_array_equal(a.X, b.X)
    c = simulate_ensemble(m, law, grid, 300, 42, "other", threads=1)
    assert not np.array_equal(a.X, c.X)


# --- particles ------------------------------------------------------------------------


def test_particles_equal_frozen_for_law_free_model():
    m = scalar_model(abar=0.0, s1=0.0)
    grid = TimeGrid(1.0, 32)
    nb = bundle(50, grid)
    start = x0(50)
    part = solve_particles(m, start, grid, noise=nb)
    frozen = solve_frozen(m, LawFlow.constant(grid, start), nb, start)
    np.testing.assert_allclose(part.X, frozen, atol=1e-14)


def test_particle_mean_matches_mean_ode():
    m = scalar_model()
    grid = TimeGrid(1.0, 256)
    out = solve_particles(m, x0(10_000) * 0.1, grid, rng=RngSpec(5))
    assert abs(out.X[:, -1, 0].mean() - mean_ode(0.0, -0.5, 1.0, 1.0)) <= 0.02


def test_duplicate_particles_stay_identical():
    m = scalar_model()
    grid = TimeGrid(1.0, 16)
    nb = bundle(1, grid)
    two = NoiseBundle(grid, np.repeat(nb.dW, 2, 0), np.repeat(nb.dW_tilde, 2, 0),
                      np.repeat(nb.B_H, 2, 0), np.repeat(nb.B_Htilde, 2, 0), 0.7, 0.8)
    out = solve_particles(m, np.zeros((2, 1)), grid, noise=two)
    np.testing.assert_array_equal(out.X[0], out.X[1])


# --- functionals and the measure-driven noise -----------------------------------------------


def test_pt_functional():
    m = scalar_model()
    grid = TimeGrid(1.0, 64)
    out = solve_picard(m, x0(4000) * 0.1, grid, bundle(4000, grid))
    assert pt_functional(lambda x: np.ones(len(x)), out, 0.5) == 1.0
    assert abs(pt_functional(lambda x: np.tanh(x[:, 0]), out, 1.0)) <= 1.0
    val = pt_functional(lambda x: x[:, 0], out, 1.0)
    assert val == pytest.approx(mean_ode(0.0, -0.5, 1.0, 1.0), abs=0.03)


def test_rho_zero_and_identity():
    grid = TimeGrid(1.0, 16)
    nb = bundle(5, grid)
    flow = LawFlow.constant(grid, x0(5))
    zero = scalar_model(s0=0.0, s1=0.0)
    assert not np.any(rho_process(zero, flow, nb.B_Htilde))
    one = scalar_model(s0=1.0, s1=0.0)
    np.testing.assert_allclose(rho_process(one, flow, nb.B_Htilde), nb.B_Htilde, atol=1e-14)


def test_rho_gap_bounded_by_wasserstein_distance():
    # sup_t |rho^mu - rho^nu| in L^2 is at most C W_2(mu, nu), for a few shifts
    m = scalar_model(s1=0.5)
    grid = TimeGrid(1.0, 64)
    nb = bundle(2000, grid)
    ratios = []
    for shift in (0.1, 0.3, 1.0):
        fm = LawFlow.constant(grid, x0(2000))
        fn = LawFlow.constant(grid, x0(2000) + shift)
        gap = rho_process(m, fm, nb.B_Htilde) - rho_process(m, fn, nb.B_Htilde)
        ratios.append(np.sqrt(np.mean(np.max(gap[:, :, 0] ** 2, axis=1))) / shift)
    assert max(ratios) <= 2.0 * m.kappa


# --- degenerate first block -----------------------------------------------------------------


def test_first_block_variation_of_constants():
    a = -0.5
    m = kinetic_model(A0=((0.0, -1.0),), A=a, B=1.0)
    grid = TimeGrid(1.0, 400)
    out = simulate_ensemble(m, InitialLaw((0.5, 0.0), (0.1, 0.1)), grid, 50, 3, "voc")
    t = grid.times
    X1, X2 = out.X[:, :, 0], out.X[:, :, 1]
    # X1_t = e^{ta} X1_0 + int_0^t e^{(t-s)a} X2_s ds by the trapezoid rule
    conv = np.exp(a * t) * cumulative_trapezoid(np.exp(-a * t) * X2, t, axis=1, initial=0)
    np.testing.assert_allclose(X1, np.exp(a * t) * X1[:, :1] + conv, atol=5 * grid.dt)
    np.testing.assert_allclose(expm_series([[a]], [1.0])[0], [[np.exp(a)]])


# --- stability ------------------------------------------------------------------------------


def test_stability_ratio_bounded():
    m = scalar_model()
    rows = stability_sweep(m, LAW, [0.1, 1.0], TimeGrid(1.0, 64), 2000, 7)
    assert {r.shift for r in rows} == {0.1, 1.0}
    assert all(np.isfinite(r.ratio) and r.ratio <= 5.0 for r in rows)
    first = [r for r in rows if r.node == 0]
    assert all(r.ratio == pytest.approx(1.0) for r in first)


@given(st.floats(0.05, 2.0))
def test_translated_law_moves_means(shift):
    m = scalar_model(abar=0.0, s1=0.0)
    grid = TimeGrid(1.0, 8)
    nb = bundle(30, grid)
    a = solve_picard(m, x0(30), grid, nb)
    b = solve_picard(m, x0(30) + shift, grid, nb)
    # without interaction the Euler gap decays like (1 - dt)^k
    gap = np.broadcast_to(shift * (1 - grid.dt) ** np.arange(9)[None, :, None], a.X.shape)
    np.testing.assert_allclose(b.X - a.X, gap, rtol=1e-10)
