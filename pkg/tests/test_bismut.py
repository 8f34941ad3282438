import numpy as np
import pytest
from scipy.linalg import expm
from hypothesis import given
from hypothesis import strategies as st

from fracmv.bismut import (bismut_check, bismut_weight, degenerate_weights,
                           estimate_lions_derivative, estimate_lions_derivative_degenerate,
                           lambda_process, named_f, named_phi, tangent_process, upsilon_weight,
                           weight_for)
from fracmv.errors import ContractError, ParameterError
from fracmv.grid import TimeGrid
from fracmv.harnack import mean_with_se
from fracmv.model import InitialLaw
from fracmv.solver import simulate_ensemble

from conftest import kinetic_model, scalar_model

LAW1 = InitialLaw((0.0,), (0.1,))
LAW2 = InitialLaw((0.0, 0.0), (0.1, 0.1))
ZERO_DRIFT = dict(a=0.0, abar=0.0, c=0.0, sigma=1.0, s0=0.3, s1=0.0)


def solve(model, law=LAW1, n=2000, steps=64, T=1.0, seed=1, tag="b"):
    return simulate_ensemble(model, law, TimeGrid(T, steps), n, seed, tag)


# --- tangent process ------------------------------------------------------------------


def test_zero_generator_keeps_direction():
    sol = solve(scalar_model(**ZERO_DRIFT))
    tan = tangent_process(scalar_model(**ZERO_DRIFT), sol, named_phi("identity"))
    np.testing.assert_array_equal(tan.G, np.broadcast_to(sol.x0[:, None], tan.G.shape))
    assert not np.any(tan.Lambda)


def test_tangent_mean_follows_linear_ode():
    model = scalar_model(s1=0.0)
    sol = solve(model, steps=256)
    tan = tangent_process(model, sol, named_phi("const"))
    t = sol.grid.times
    np.testing.assert_allclose(tan.G[:, :, 0].mean(axis=0), np.exp(-0.5 * t), atol=3e-3)


def test_zero_direction_gives_zero_tangent():
    model = scalar_model()
    sol = solve(model)
    tan = tangent_process(model, sol, named_phi("zero"))
    assert not np.any(tan.G) and not np.any(tan.Lambda)


@given(st.floats(-3, 3))
def test_lambda_linear_in_direction(a):
    model = scalar_model(s1=0.4)
    sol = solve(model, n=200, steps=32)
    base = tangent_process(model, sol, named_phi("identity"))
    scaled = tangent_process(model, sol, lambda x: a * x)
    np.testing.assert_allclose(scaled.Lambda, a * base.Lambda, atol=1e-12)
    np.testing.assert_allclose(lambda_process(model, scaled, sol, sol.noise.B_Htilde),
                               scaled.Lambda, atol=1e-12)


def test_lambda_vanishes_for_law_free_noise():
    model = scalar_model(s1=0.0)
    sol = solve(model, n=100)
    tan = tangent_process(model, sol, named_phi("const"))
    assert not np.any(lambda_process(model, tan, sol, sol.noise.B_Htilde))


def test_named_families():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(named_phi("last")(x), [[0.0, 1.0]])
    np.testing.assert_array_equal(named_phi("first")(x), [[1.0, 0.0]])
    assert named_f("sum")(x)[0] == 3.0
    with pytest.raises(ParameterError):
        named_phi("nope")
    with pytest.raises(ParameterError):
        named_f("nope")


# --- non-degenerate weights ----------------------------------------------------------------


def test_upsilon_without_drift_is_constant():
    model = scalar_model(**ZERO_DRIFT)
    sol = solve(model, n=50)
    tan = tangent_process(model, sol, named_phi("identity"))
    ups = upsilon_weight(model, tan, sol, 0.5)
    np.testing.assert_allclose(ups, np.broadcast_to(sol.x0[:, None] / 0.5, ups.shape), atol=1e-14)


def test_upsilon_direct_assembly_linear_model():
    model = scalar_model()
    sol = solve(model, n=300, steps=32)
    tan = tangent_process(model, sol, named_phi("identity"))
    t0 = 0.5
    k0 = sol.grid.node_index(t0)
    ups = upsilon_weight(model, tan, sol, t0)
    r = sol.grid.times[: k0 + 1][None, :, None]
    phi = sol.x0[:, None]
    lam = tan.Lambda[:, : k0 + 1]
    v = (t0 - r) / t0 * phi - r / t0 * lam[:, -1:] + lam
    EG = tan.G[:, : k0 + 1].mean(axis=0)[None]
    ref = (phi + lam[:, -1:]) / t0 + model.A0[0, 0] * v + model.A1[0, 0] * EG
    np.testing.assert_allclose(ups, ref, atol=1e-12)


def test_zero_upsilon_has_zero_weight():
    grid = TimeGrid(1.0, 32)
    dW = np.random.default_rng(0).normal(size=(5, 32, 1))
    w = bismut_weight(np.zeros((5, 33, 1)), 1.0, 0.7, dW, 1.0, grid)
    assert not np.any(w.M)


def test_brownian_weight_is_classical():
    model = brownian_model()
    sol = solve(model, n=500, steps=64)
    t0 = 0.5
    w = weight_for(model, sol, named_phi("identity"), t0)
    k0 = sol.grid.node_index(t0)
    W = sol.noise.dW[:, :k0, 0].sum(axis=1)
    np.testing.assert_allclose(w.M, sol.x0[:, 0] * W / t0, atol=1e-10)


def brownian_model():
    return scalar_model(H=0.5, **ZERO_DRIFT)


@pytest.mark.parametrize("H", [0.3, 0.7])
def test_weight_has_zero_mean(H):
    model = scalar_model(H=H)
    sol = solve(model, n=10_000, steps=64)
    w = weight_for(model, sol, named_phi("const"), 1.0)
    m, se = mean_with_se(w.M)
    assert abs(m) <= 3 * se


def test_weight_contract():
    grid = TimeGrid(1.0, 32)
    with pytest.raises(ContractError):
        bismut_weight(np.zeros((2, 10, 1)), 1.0, 0.7, np.zeros((2, 32, 1)), 1.0, grid)


# --- non-degenerate estimator ------------------------------------------------------------------


def test_estimate_without_drift_is_mean_direction():
    model = scalar_model(**ZERO_DRIFT)
    est, se = estimate_lions_derivative(model, LAW1, named_phi("const"), named_f("x"), 1.0,
                                        10_000, TimeGrid(1.0, 64), seed=3)
    assert abs(est - 1.0) <= 3 * se


def test_constant_functional_has_zero_derivative():
    model = scalar_model()
    est, se = estimate_lions_derivative(model, LAW1, named_phi("const"), named_f("one"), 1.0,
                                        10_000, TimeGrid(1.0, 64), seed=4)
    assert abs(est) <= 3 * se


def test_linear_model_matches_finite_differences():
    model = scalar_model()
    rep = bismut_check(model, LAW1, "const", "x", 1.0, 10_000, TimeGrid(1.0, 128), seed=5)
    assert rep.passed
    # for f(x) = x the exact value is E[phi] e^{(a + abar) T}
    assert rep.fd_value == pytest.approx(np.exp(-0.5), rel=0.02)


def test_estimator_linear_in_direction():
    model = scalar_model()
    grid = TimeGrid(1.0, 64)
    kw = dict(grid=grid, seed=6)
    f = named_f("tanh")
    a = estimate_lions_derivative(model, LAW1, lambda x: np.ones_like(x), f, 1.0, 4000, **kw)
    b = estimate_lions_derivative(model, LAW1, lambda x: x, f, 1.0, 4000, **kw)
    c = estimate_lions_derivative(model, LAW1, lambda x: 2 + 3 * x, f, 1.0, 4000, **kw)
    assert abs(c[0] - (2 * a[0] + 3 * b[0])) <= 3 * c[1]


def test_gradient_norm_scaling():
    # bounded f: |estimate| over small t0 decays no faster than t0^{-H}
    model = scalar_model()
    H = model.hurst.H
    ts = np.array([0.1, 0.2, 0.4, 0.8])
    grid = TimeGrid(0.8, 128)
    vals = []
    for t0 in ts:
        est, _ = estimate_lions_derivative(model, LAW1, named_phi("const"), named_f("tanh"),
                                           t0, 10_000, grid, seed=7)
        vals.append(abs(est))
    slope = np.polyfit(np.log(ts), np.log(vals), 1)[0]
    assert slope >= -H - 0.3


# --- degenerate weights ---------------------------------------------------------------------


def free_kinetic():
    return kinetic_model()


def test_degenerate_zero_direction():
    deg = free_kinetic()
    sol = solve(deg, LAW2, n=100)
    out = degenerate_weights(deg, tangent_process(deg, sol, named_phi("zero")), sol, None, 1.0)
    for key in ("Xi", "hbar", "Theta"):
        assert not np.any(out[key])


def test_degenerate_closed_form_theta():
    # A = 0, B = 1, b = 0, sigma~ constant: U = t0/6 and
    # Xi(s) = -(s/t0) phi2 - 6 s (t0 - s)/t0^3 (phi1 + t0 phi2 / 2), Theta = -Xi'
    deg = free_kinetic()
    sol = solve(deg, LAW2, n=20, steps=64)
    t0 = 0.5
    tan = tangent_process(deg, sol, named_phi("identity"))
    out = degenerate_weights(deg, tan, sol, named_phi("identity"), t0)
    k0 = sol.grid.node_index(t0)
    s = sol.grid.times[: k0 + 1][None, :]
    p1, p2 = sol.x0[:, :1], sol.x0[:, 1:]
    xi = -(s / t0) * p2 - 6 * s * (t0 - s) / t0**3 * (p1 + t0 * p2 / 2)
    dxi = -p2 / t0 - 6 * (t0 - 2 * s) / t0**3 * (p1 + t0 * p2 / 2)
    np.testing.assert_allclose(out["U"], [[t0 / 6]], rtol=1e-12)
    np.testing.assert_allclose(out["Xi"][:, :, 0], xi, atol=1e-12)
    np.testing.assert_allclose(out["Theta"][:, :, 0], -dxi, atol=1e-12)
    np.testing.assert_array_equal(out["Xi"][:, 0], 0.0)
    # the steered tangent vanishes at t0 in both blocks
    assert np.max(np.abs(out["hbar"][:, k0])) <= 1e-8


def test_degenerate_endpoint_with_drift():
    deg = kinetic_model(A0=((-0.2, -0.5),), A1=((0.1, 0.2),), c=(0.5,), s1=0.2, A=-0.3)
    sol = solve(deg, LAW2, n=200)
    tan = tangent_process(deg, sol, named_phi("const"))
    out = degenerate_weights(deg, tan, sol, named_phi("const"), 0.5)
    assert np.max(np.abs(out["hbar"][:, sol.grid.node_index(0.5)])) <= 1e-8


def test_degenerate_weights_need_degenerate_spec():
    model = scalar_model()
    sol = solve(model, n=50)
    with pytest.raises(ContractError):
        degenerate_weights(model, tangent_process(model, sol, named_phi("const")), sol, None, 1.0)
    with pytest.raises(ContractError):
        estimate_lions_derivative_degenerate(model, LAW1, named_phi("const"), named_f("x"), 1.0, 10)


# --- degenerate estimator --------------------------------------------------------------------


def test_degenerate_constant_functional():
    deg = free_kinetic()
    est, se = estimate_lions_derivative_degenerate(deg, LAW2, named_phi("const"), named_f("one"),
                                                   1.0, 10_000, TimeGrid(1.0, 64), seed=8)
    assert abs(est) <= 3 * se


def test_free_kinetic_matches_finite_differences():
    rep = bismut_check(free_kinetic(), LAW2, "const", "last", 1.0, 10_000, TimeGrid(1.0, 64),
                       seed=9)
    assert rep.passed
    # b = 0: the velocity does not see the initial position, so D^L_phi = E[phi_2] = 1
    assert rep.fd_value == pytest.approx(1.0, abs=1e-8)


def test_first_block_direction_small_time():
    # without mean-field coupling the position-to-velocity response is the
    # (2, 1) entry of the mean flow exp(M t0)
    deg = kinetic_model(A0=((-0.2, -0.5),))
    t0 = 0.25
    exact = expm(np.array([[0.0, 1.0], [-0.2, -0.5]]) * t0)[1, 0]
    rep = bismut_check(deg, LAW2, "first", "last", t0, 10_000, TimeGrid(t0, 128), seed=10)
    assert rep.passed
    np.testing.assert_allclose(rep.fd_value, exact, rtol=1e-2)
    assert abs(rep.estimate - exact) <= 3 * rep.combined_se