import numpy as np
import pytest

from npcgp import grad as G
from npcgp.errors import ParameterError
from npcgp.kernels import (
    DseKernel,
    EqArdKernel,
    PeriodicEqKernel,
    cov_matrix,
    dse_eval,
    dse_matrix,
    eq_ard_eval,
    eq_ard_matrix,
    sample_frequencies,
)


def test_eq_ard_diagonal_and_symmetry():
    k = EqArdKernel(2.3, [0.5, 1.7])
    x, y = np.array([0.1, -0.4]), np.array([1.2, 0.3])
    assert eq_ard_eval(k, x, x) == pytest.approx(2.3)
    assert eq_ard_eval(k, x, y) == eq_ard_eval(k, y, x)


def test_eq_ard_hand_value():
    assert eq_ard_eval(EqArdKernel(1.0, [1.0]), [0.0], [1.0]) == pytest.approx(0.6065306597, abs=1e-9)


def test_eq_ard_rejects_bad_lengthscale_and_dims():
    with pytest.raises(ParameterError):
        EqArdKernel(1.0, [1.0, -1.0])
    with pytest.raises(ParameterError):
        eq_ard_eval(EqArdKernel(1.0, [1.0]), [0.0, 1.0], [0.0, 1.0])


def test_dse_values():
    k = DseKernel(1.0, 1.0, 0.5)
    assert dse_eval(k, 0.0, 0.0) == pytest.approx(1.0)
    assert dse_eval(k, 0.0, 1.0) == pytest.approx(np.exp(-1.0), abs=1e-9)
    diag = [dse_eval(k, t, t) for t in np.linspace(0, 3, 10)]
    np.testing.assert_allclose(diag, np.exp(-2 * 0.5 * np.linspace(0, 3, 10) ** 2))
    assert np.all(np.diff(diag) < 0)
    assert dse_eval(k, 40.0, 0.3) < 1e-100


def test_dse_rejects_nonpositive():
    with pytest.raises(ParameterError):
        DseKernel(1.0, 1.0, 0.0)
    with pytest.raises(ParameterError):
        DseKernel(1.0, -1.0, 1.0)


def test_dse_matrix_matches_eval_and_psd():
    k = DseKernel(1.3, 0.7, 0.2)
    z = np.random.default_rng(0).uniform(-3, 3, 15)
    K = dse_matrix(k, z).value
    np.testing.assert_allclose(K[3, 7], dse_eval(k, z[3], z[7]))
    np.testing.assert_allclose(K, K.T)
    assert np.linalg.eigvalsh(K + 1e-6 * np.eye(15)).min() >= -1e-8


def test_periodic_factor_repeats():
    per = PeriodicEqKernel(1.0, [1e6, 1e6], [1.8, 2.1])
    x = np.array([0.3, -0.2])
    assert per.eval(x, x + np.array([1.8, 0.0])) == pytest.approx(per.eval(x, x), abs=1e-9)
    assert per.eval(x, x + np.array([0.0, 2.1])) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_kernel_matrices_psd(seed):
    rng = np.random.default_rng(seed)
    M = rng.integers(2, 31)
    P = rng.integers(1, 4)
    X = rng.normal(size=(M, P))
    for K in (
        eq_ard_matrix(EqArdKernel(rng.uniform(0.5, 2), rng.uniform(0.2, 2, P)), X).value,
        dse_matrix(DseKernel(rng.uniform(0.5, 2), rng.uniform(0.2, 2), rng.uniform(0.05, 1)), X[:, 0]).value,
        PeriodicEqKernel(1.0, rng.uniform(0.5, 2, P), rng.uniform(1, 3, P)).matrix(X),
    ):
        assert np.linalg.eigvalsh(K).min() > -1e-8


def rff_cov(theta, beta, var, x, xp):
    B = len(beta)
    phi_x = np.sqrt(2 * var / B) * np.cos(theta @ x + beta)
    phi_xp = np.sqrt(2 * var / B) * np.cos(theta @ xp + beta)
    return float(phi_x @ phi_xp)


def test_rff_covariance_matches_kernel():
    k = EqArdKernel(1.4, [0.8, 1.3])
    theta, beta, w = sample_frequencies(k, 100_000, np.random.default_rng(1))
    for x, xp in [([0, 0], [0.5, -0.3]), ([1.0, 0.2], [1.0, 0.2]), ([-1, 1], [0.4, 0.9])]:
        x, xp = np.array(x, float), np.array(xp, float)
        assert abs(rff_cov(theta, beta, 1.4, x, xp) - eq_ard_eval(k, x, xp)) < 0.02


def test_rff_long_lengthscale_is_flat():
    k = EqArdKernel(1.0, [1e6])
    theta, beta, w = sample_frequencies(k, 256, np.random.default_rng(2))
    assert np.abs(theta).max() < 1e-4
    xs = np.linspace(-5, 5, 50)[:, None]
    f = np.sqrt(2 / 256) * np.cos(xs @ theta.T + beta) @ w
    assert f.var() < 0.01


def test_rff_deterministic_per_seed():
    k = DseKernel(1.0, 0.5, 0.3)
    a = sample_frequencies(k, 16, np.random.default_rng(3))
    b = sample_frequencies(k, 16, np.random.default_rng(3))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)


def test_rff_zero_bases_rejected():
    with pytest.raises(ParameterError):
        sample_frequencies(EqArdKernel(1.0, [1.0]), 0, np.random.default_rng(0))


def test_rff_error_decreases_with_B():
    k = EqArdKernel(1.0, [1.0])
    x, xp = np.array([0.0]), np.array([0.7])
    exact = eq_ard_eval(k, x, xp)
    medians = []
    for B in (100, 1000, 10000):
        errs = []
        for seed in range(20):
            th, be, _ = sample_frequencies(k, B, np.random.default_rng(seed))
            errs.append(abs(rff_cov(th, be, 1.0, x, xp) - exact))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]
    # 1/sqrt(B) rate: a hundredfold increase in B should shrink the error about tenfold
    assert 3 < medians[0] / medians[2] < 30


def test_cov_matrix_single_point():
    K, L = cov_matrix(EqArdKernel(1.7, [1.0]), np.array([[0.3]]), jitter=1e-6)
    np.testing.assert_allclose(K, [[1.7 + 1e-6]])


def test_cov_matrix_duplicates_factorise():
    X = np.array([[0.1], [0.1], [0.1], [0.5]])
    K, L = cov_matrix(EqArdKernel(1.0, [1.0]), X, jitter=1e-6)
    assert np.all(np.isfinite(L))
    assert np.isfinite(np.linalg.cond(K))


def test_cov_matrix_factor_identity():
    X = np.random.default_rng(4).normal(size=(10, 3))
    K, L = cov_matrix(EqArdKernel(1.0, [0.7, 1.1, 2.0]), X, jitter=1e-8)
    np.testing.assert_allclose(L @ L.T, K, atol=1e-10)
    assert np.allclose(L, np.tril(L))


def test_eq_matrix_gradient_in_lengthscale():
    X = np.random.default_rng(5).normal(size=(6, 2))

    def f(ls):
        return G.sum_(G.square(eq_ard_matrix(EqArdKernel(1.3, ls), X)))

    assert G.finite_diff_check(f, [0.6, 1.4], h=1e-6) < 1e-6
