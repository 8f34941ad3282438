import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad_vec

from fracmv.errors import ContractError, DegeneracyError, HypothesisViolation, ParameterError
from fracmv.grid import HurstPair
from fracmv.measures import lions_derivative_fd
from fracmv.model import (DegenerateSpec, InitialLaw, LinearMeanFieldModel, cloud_mean,
                          expm_series, gramian_U, kalman_index, kalman_rank,
                          validate_hypotheses)

from conftest import kinetic_model, scalar_model

CHAIN_A = np.array([[0.0, 1.0], [0.0, 0.0]])
CHAIN_B = np.array([[0.0], [1.0]])


def model2(A0, A1, S1=((0.0, 0.0), (0.0, 0.0)), c=(0.0, 0.0)):
    return LinearMeanFieldModel(A0, A1, c, np.eye(2), 0.3 * np.eye(2), S1, HurstPair(0.7, 0.8))


# --- hypothesis probes -----------------------------------------------------------


def test_zero_model_has_zero_ratios():
    rep = validate_hypotheses(scalar_model(0.0, 0.0, 0.0, 1.0, 0.3, 0.0))
    for k in ("grad_b", "lions_b", "b_law_lipschitz", "sigma_tilde_lipschitz",
              "lions_sigma_tilde", "sigma_inv_holder"):
        assert rep.ratios[k] == 0.0


def test_scalar_matrix_gradient_ratio():
    a = -1.7
    m = LinearMeanFieldModel(a * np.eye(2), np.zeros((2, 2)), [0, 0], np.eye(2), np.eye(2),
                             np.zeros((2, 2)), HurstPair(0.7, 0.8), kappa=3.0)
    rep = validate_hypotheses(m)
    assert rep.ratios["grad_b"] == pytest.approx(abs(a) / 3.0)
    assert rep.ratios["sigma_tilde_lipschitz"] == 0.0


def test_declared_constant_too_small_is_a_violation():
    m = LinearMeanFieldModel([[-1.0]], [[0.5]], [1.0], [[0.5]], [[0.3]], [[0.2]],
                             HurstPair(0.7, 0.8), kappa=0.1)
    with pytest.raises(HypothesisViolation):
        validate_hypotheses(m)


def test_default_constants_pass(linear_model):
    rep = validate_hypotheses(linear_model)
    assert rep.worst <= 1.0 + 1e-12
    assert len(rep.lines()) == len(rep.ratios)


# --- derivatives of the linear family -------------------------------------------------


def test_lions_derivative_of_drift_is_A1():
    A1 = np.array([[0.3, -0.2], [0.1, 0.4]])
    m = model2(-np.eye(2), A1)
    x = np.zeros((1, 2))
    y = np.random.default_rng(0).normal(size=(7, 2))
    np.testing.assert_array_equal(m.lions_b(0.0, x, y, y)[0, 3], A1)
    v = np.array([1.0, 2.0])
    for e in np.eye(2):
        fd = lions_derivative_fd(lambda mu: float(m.drift(0.0, x, mu.points)[0] @ v), y,
                                 lambda z: np.broadcast_to(e, z.shape))
        assert fd == pytest.approx(v @ A1 @ e, abs=1e-6)


def test_lions_expectations_match_finite_differences():
    S1 = np.array([[0.2, 0.0], [0.1, 0.3]])
    m = model2(-np.eye(2), 0.5 * np.eye(2), S1=S1)
    rng = np.random.default_rng(1)
    law = rng.normal(size=(50, 2)) + 0.3
    G = rng.normal(size=(50, 2))
    x = rng.normal(size=(4, 2))
    eps = 1e-6
    fd_b = (m.drift(0, x, law + eps * G) - m.drift(0, x, law - eps * G)) / (2 * eps)
    np.testing.assert_allclose(m.lions_b_expect(0, x, law, G), fd_b, atol=1e-8)
    fd_s = (m.sigma_tilde(0, law + eps * G) - m.sigma_tilde(0, law - eps * G)) / (2 * eps)
    np.testing.assert_allclose(m.lions_sigma_tilde_expect(0, law, G), fd_s, atol=1e-8)


def test_gradient_and_sigma_inverse(linear_model):
    x = np.zeros((3, 1))
    assert linear_model.grad_b(0.0, x, x).shape == (3, 1, 1)
    np.testing.assert_allclose(linear_model.sigma_inv(0.0) @ linear_model.sigma(0.0), [[1.0]])


def test_depends_on_law():
    assert scalar_model().depends_on_law()
    assert not scalar_model(abar=0.0, s1=0.0).depends_on_law()


def test_singular_sigma_rejected():
    with pytest.raises(ParameterError):
        scalar_model(sigma=0.0)


def test_cloud_mean():
    x = np.arange(12.0).reshape(6, 2)
    np.testing.assert_allclose(cloud_mean(x), x.mean(axis=0), rtol=1e-15)


# --- Kalman rank and Gramian ----------------------------------------------------------


def test_gramian_identity_block():
    for t in (0.1, 1.0, 3.0):
        U, lam = gramian_U(t, np.zeros((2, 2)), np.eye(2))
        np.testing.assert_allclose(U, t / 6 * np.eye(2), rtol=1e-12)
        assert lam == pytest.approx(t / 6)


def test_gramian_against_adaptive_quadrature():
    t = 0.8
    A = np.array([[0.3, 1.0], [-0.4, 0.1]])
    E = lambda s: expm_series(-A, [s])[0] @ CHAIN_B
    ref = quad_vec(lambda s: s * (t - s) / t**2 * E(s) @ E(s).T, 0, t, epsabs=1e-13)[0]
    np.testing.assert_allclose(gramian_U(t, A, CHAIN_B)[0], ref, rtol=1e-10, atol=1e-14)


def test_chain_gramian_positive_definite():
    for t in (0.05, 0.5, 2.0):
        U, lam = gramian_U(t, CHAIN_A, CHAIN_B)
        assert lam > 0
        np.testing.assert_allclose(U, U.T)


def test_gramian_min_eig_power_law():
    ts = np.geomspace(0.05, 1.0, 8)
    ev = [gramian_U(t, CHAIN_A, CHAIN_B)[1] for t in ts]
    slope = np.polyfit(np.log(ts), np.log(ev), 1)[0]
    assert abs(slope - (2 * kalman_index(CHAIN_A, CHAIN_B) + 1)) <= 0.3


def test_zero_control_is_degenerate():
    with pytest.raises(DegeneracyError, match="Kalman rank 0"):
        gramian_U(1.0, np.zeros((1, 1)), np.zeros((1, 1)))


def test_kalman_rank():
    assert kalman_rank(np.zeros((2, 2)), np.eye(2)) == 2
    assert kalman_rank(CHAIN_A, CHAIN_B) == 2
    assert kalman_rank(CHAIN_A, np.zeros((2, 1))) == 0
    assert kalman_index(np.zeros((2, 2)), np.eye(2)) == 0
    assert kalman_index(CHAIN_A, CHAIN_B) == 1
    assert kalman_index(CHAIN_A, np.zeros((2, 1))) is None


@given(st.floats(-2, 2))
def test_expm_of_nilpotent(s):
    np.testing.assert_allclose(expm_series(CHAIN_A, [s])[0], np.eye(2) + s * CHAIN_A, atol=1e-12)


def test_degenerate_spec_contract():
    inner = scalar_model()
    with pytest.raises(ContractError):
        DegenerateSpec(1, 1, [[0.0]], [[1.0]], inner)
    deg = kinetic_model()
    assert deg.dim == 2 and deg.hurst.H == 0.7


# --- initial laws ----------------------------------------------------------------------


def test_initial_law():
    law = InitialLaw((0.0, 1.0), (0.5,))
    assert law.std == (0.5, 0.5)
    assert law.shifted([1.0, 1.0]).mean == (1.0, 2.0)
    z = np.ones((3, 2))
    np.testing.assert_allclose(law.from_normals(z), [[0.5, 1.5]] * 3)
    with pytest.raises(ParameterError):
        InitialLaw((0.0,), (-1.0,))
