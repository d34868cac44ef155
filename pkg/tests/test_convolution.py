import numpy as np
import pytest

from npcgp import grad as G
from npcgp import quadrature as quad
from npcgp.convolution import (
    GPath,
    PathCoefficients,
    UPath,
    covariance_given_kernels,
    g_fourier,
    g_path_eval,
    g_smoothed,
    g_smoothed_reference,
    i1a,
    i1b,
    i2a,
    i2b,
    layer_output_sample,
    u_path_eval,
)
from npcgp.errors import NumericError, StructuralError
from npcgp.kernels import eq_ard_eval, EqArdKernel


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def random_tuple(rng):
    return dict(
        x=rng.uniform(-2, 2),
        alpha=rng.uniform(0.2, 3),
        theta=rng.normal(0, 2),
        beta=rng.uniform(0, 2 * np.pi),
        rho=rng.uniform(0.2, 3),
        z=rng.uniform(-2, 2),
        theta2=rng.normal(0, 2),
        rho2=rng.uniform(0.2, 3),
        z2=rng.uniform(-2, 2),
    )


# ------------------------------------------------------------------ integrals


def test_i1a_special_cases():
    a, t1, b, x = 0.7, 1.3, 0.4, -0.6
    want = np.sqrt(np.pi / a) * np.exp(-(t1**2) / (4 * a)) * np.cos(t1 * x + b)
    assert rel(i1a(x, a, t1, b, 0.0), want) < 1e-12
    t2 = -0.9
    want = np.sqrt(np.pi / a) * np.exp(-(t2**2) / (4 * a)) * np.exp(1j * t2 * x)
    assert rel(i1a(x, a, 0.0, 0.0, t2), want) < 1e-12


def test_i1b_special_cases():
    a, r = 0.8, 1.7
    assert rel(i1b(0.4, a, 0.4, r, 0.0), np.sqrt(np.pi / (a + r))) < 1e-12
    xs = np.linspace(-1, 2, 31)
    vals = np.array([i1b(x, a, 0.5, r, 0.0) for x in xs])
    assert np.all(np.abs(np.imag(vals)) == 0)
    assert np.argmax(np.real(vals)) == np.argmin(np.abs(xs - 0.5))


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_i2a_special_cases():
    a, r, x, z = 0.6, 1.1, 0.3, -0.5
    want = np.sqrt(np.pi / (a + r)) * np.exp(-a * r * (x - z) ** 2 / (a + r))
    assert rel(i2a(x, a, 0.0, 0.0, r, z), want) < 1e-12
    # odd integrand at x = z = 0 with a sine phase
    assert abs(i2a(0.0, a, 1.7, np.pi / 2, r, 0.0)) < 1e-14
    assert abs(i2a(0.0, a, 1.7, np.pi / 2, r, 0.0) - quad.i2a_quad(0.0, a, 1.7, np.pi / 2, r, 0.0)) < 1e-12


def test_i2b_special_cases():
    a, r2 = 0.9, 1.4
    assert rel(i2b(0.0, a, 1.2, 0.0, r2, 0.0), np.sqrt(np.pi / (a + 1.2 + r2))) < 1e-12
    x, z2 = 0.3, -0.8
    assert rel(i2b(x, a, 1e-10, 5.0, r2, z2), i1b(x, a, z2, r2, 0.0).real) < 1e-6


def test_i1a_matches_quadrature():
    rng = np.random.default_rng(0)
    for _ in range(100):
        t = random_tuple(rng)
        want = quad.i1a_quad(t["x"], t["alpha"], t["theta"], t["beta"], t["theta2"])
        assert rel(i1a(t["x"], t["alpha"], t["theta"], t["beta"], t["theta2"]), want) < 1e-8


def test_i1b_matches_quadrature():
    rng = np.random.default_rng(1)
    for _ in range(100):
        t = random_tuple(rng)
        want = quad.i1b_quad(t["x"], t["alpha"], t["z"], t["rho"], t["theta"])
        assert rel(i1b(t["x"], t["alpha"], t["z"], t["rho"], t["theta"]), want) < 1e-8


def test_i2a_matches_quadrature():
    rng = np.random.default_rng(2)
    for _ in range(100):
        t = random_tuple(rng)
        args = (t["x"], t["alpha"], t["theta"], t["beta"], t["rho"], t["z"])
        want = quad.i2a_quad(*args)
        # relative error is meaningless at a zero crossing of the cosine
        assert abs(i2a(*args) - want) < 1e-8 * max(abs(want), 1e-3 * np.sqrt(np.pi / (t["alpha"] + t["rho"])))


def test_i2b_matches_quadrature():
    rng = np.random.default_rng(3)
    for _ in range(100):
        t = random_tuple(rng)
        args = (t["x"], t["alpha"], t["rho"], t["z"], t["rho2"], t["z2"])
        assert rel(i2b(*args), quad.i2b_quad(*args)) < 1e-8


def test_integrals_broadcast_and_differentiate():
    th = np.linspace(-2, 2, 5)
    v = i1a(0.3, 0.8, th[:, None], 0.2, th[None, :])
    assert v.shape == (5, 5)

    def f(p):
        a, r = p[0], p[1]
        out = i2b(0.2, a, r, -0.3, 0.5, 0.4) + i2a(0.1, a, 1.2, 0.3, r, 0.5)
        out = out + G.real(i1b(0.0, a, 0.4, r, -1.1)) + G.imag(i1a(0.2, a, 0.7, 0.3, r))
        return out

    assert G.finite_diff_check(f, [0.7, 1.3], h=1e-6) < 1e-6


# ------------------------------------------------------------------ random paths


def random_gpath(rng, B=12, M=6):
    alpha = rng.uniform(0.3, 1.5)
    return GPath(
        weights=rng.normal(size=B),
        freqs=rng.normal(size=B) / rng.uniform(0.4, 1.2),
        phases=rng.uniform(0, 2 * np.pi, B),
        scale=np.sqrt(2 * 0.8 / B),
        decay=alpha,
        coef=rng.normal(size=M),
        centers=np.linspace(-2, 2, M),
        precision=rng.uniform(0.5, 2.0),
    )


def random_upath(rng, P, B=20, M=7):
    return UPath(
        weights=rng.normal(size=B),
        freqs=rng.normal(size=(B, P)) / rng.uniform(0.3, 1.5, P),
        phases=rng.uniform(0, 2 * np.pi, B),
        scale=np.sqrt(2 / B),
        coef=rng.normal(size=M),
        centers=rng.uniform(-2, 2, (M, P)),
        precisions=rng.uniform(0.3, 2.0, P),
    )


def random_paths(rng, P=2, D=2, Q=2, variant="full"):
    rows = D if variant == "full" else 1
    g = [[random_gpath(rng) for _ in range(P)] for _ in range(rows)]
    u = [random_upath(rng, P) for _ in range(Q)]
    mixing = rng.normal(size=Q) if variant == "full" else rng.normal(size=(D, Q))
    return PathCoefficients(u=u, g=g, mixing=mixing, variant=variant)


def test_g_fourier_matches_quadrature():
    rng = np.random.default_rng(4)
    g = random_gpath(rng)
    om = np.array([-2.1, -0.3, 0.0, 0.9, 3.0])
    got = g_fourier(g, om).value
    for w, v in zip(om, got):
        f = lambda s: g_path_eval(g, np.array([s])).value[0] * np.exp(-1j * w * s)
        want = quad.quad_complex(f, -14 / np.sqrt(g.decay), 14 / np.sqrt(g.decay))
        assert abs(v - want) < 1e-8 * max(1.0, abs(want))


def test_g_smoothed_factored_matches_reference():
    rng = np.random.default_rng(5)
    for _ in range(5):
        g = random_gpath(rng)
        x, z = rng.uniform(-3, 3, 9), rng.uniform(-3, 3, 4)
        rho = rng.uniform(0.2, 3.0)
        np.testing.assert_allclose(g_smoothed(g, rho, x, z).value, g_smoothed_reference(g, rho, x, z).value, rtol=1e-10, atol=1e-12)


def test_g_smoothed_extreme_precisions_stay_finite():
    rng = np.random.default_rng(6)
    g = random_gpath(rng)
    g.precision = 200.0
    x, z = np.linspace(-8, 8, 7), np.linspace(-5, 5, 3)
    got = g_smoothed(g, 300.0, x, z).value
    ref = g_smoothed_reference(g, 300.0, x, z).value
    assert np.all(np.isfinite(got))
    np.testing.assert_allclose(got, ref, rtol=1e-8, atol=1e-12)


# ------------------------------------------------------------------ assembly


def test_output_matches_numerical_convolution():
    rng = np.random.default_rng(7)
    paths = random_paths(rng, P=1, D=1, Q=1)
    g, u = paths.g[0][0], paths.u[0]
    xs = np.linspace(-3, 3, 200)
    got = layer_output_sample(paths, xs[:, None]).value[:, 0]
    half = 12 / np.sqrt(g.decay)
    tau = np.linspace(-3 - half, 3 + half, 60001)
    uv = u_path_eval(u, tau[:, None]).value
    want = np.array([np.trapezoid(g_path_eval(g, x - tau).value * uv, tau) for x in xs]) * paths.mixing[0]
    scale = np.abs(want).max()
    np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-4 * scale)


def test_output_2d_matches_reference_assembly():
    rng = np.random.default_rng(8)
    for variant in ("full", "fast"):
        paths = random_paths(rng, P=2, D=3, Q=2, variant=variant)
        X = rng.uniform(-2, 2, (15, 2))
        fast = layer_output_sample(paths, X).value
        ref = layer_output_sample(paths, X, reference=True).value
        assert fast.shape == (15, 3)
        np.testing.assert_allclose(fast, ref, rtol=1e-9, atol=1e-12)


def test_output_2d_matches_cubature():
    rng = np.random.default_rng(9)
    paths = random_paths(rng, P=2, D=1, Q=1)
    g0, g1 = paths.g[0]
    u = paths.u[0]
    x = np.array([0.4, -0.3])
    t0 = np.linspace(x[0] - 10 / np.sqrt(g0.decay), x[0] + 10 / np.sqrt(g0.decay), 1201)
    t1 = np.linspace(x[1] - 10 / np.sqrt(g1.decay), x[1] + 10 / np.sqrt(g1.decay), 1201)
    T0, T1 = np.meshgrid(t0, t1, indexing="ij")
    uv = u_path_eval(u, np.column_stack([T0.ravel(), T1.ravel()])).value.reshape(T0.shape)
    kern = np.outer(g_path_eval(g0, x[0] - t0).value, g_path_eval(g1, x[1] - t1).value)
    want = np.trapezoid(np.trapezoid(kern * uv, t1, axis=1), t0) * paths.mixing[0]
    got = layer_output_sample(paths, x[None, :]).value[0, 0]
    assert abs(got - want) < 1e-6 * max(1.0, abs(want))


def test_zero_u_gives_zero_output():
    rng = np.random.default_rng(10)
    paths = random_paths(rng)
    for u in paths.u:
        u.weights = np.zeros_like(u.weights)
        u.coef = np.zeros_like(u.coef)
    out = layer_output_sample(paths, rng.normal(size=(8, 2))).value
    assert np.all(out == 0)


def test_output_linear_in_u_coefficients():
    rng = np.random.default_rng(11)
    paths = random_paths(rng)
    X = rng.normal(size=(10, 2))
    base = layer_output_sample(paths, X).value
    for u in paths.u:
        u.weights = 2.5 * u.weights
        u.coef = 2.5 * u.coef
    np.testing.assert_allclose(layer_output_sample(paths, X).value, 2.5 * base, rtol=1e-12, atol=1e-14)


def test_full_and_fast_coincide_for_single_output():
    rng = np.random.default_rng(12)
    full = random_paths(rng, P=2, D=1, Q=3, variant="full")
    fast = PathCoefficients(u=full.u, g=full.g, mixing=full.mixing[None, :], variant="fast")
    X = rng.normal(size=(12, 2))
    np.testing.assert_allclose(
        layer_output_sample(full, X).value, layer_output_sample(fast, X).value, rtol=0, atol=1e-10
    )


def test_dimension_mismatch_raises():
    rng = np.random.default_rng(13)
    paths = random_paths(rng, P=2)
    with pytest.raises(StructuralError):
        layer_output_sample(paths, np.zeros((3, 3)))
    with pytest.raises(StructuralError):
        layer_output_sample(paths, np.zeros((3, 2)), variant="fast")
    paths.mixing = np.ones(5)
    with pytest.raises(StructuralError):
        layer_output_sample(paths, np.zeros((3, 2)))


def test_imaginary_residue_is_detected():
    rng = np.random.default_rng(14)
    paths = random_paths(rng, P=1, D=1, Q=1)
    # a complex kernel coefficient breaks the conjugate pairing
    paths.g[0][0].coef = paths.g[0][0].coef + 0.5j
    with pytest.raises(NumericError):
        layer_output_sample(paths, np.zeros((3, 1)))


def test_output_gradient_matches_finite_differences():
    rng = np.random.default_rng(15)
    paths = random_paths(rng, P=2, D=1, Q=1)
    X = rng.normal(size=(5, 2))

    def f(p):
        g = paths.g[0][0]
        g.decay, g.precision = p[0], p[1]
        paths.u[0].precisions = G.stack([p[2], p[3]])
        return G.sum_(G.square(layer_output_sample(paths, X)))

    assert G.finite_diff_check(f, [0.7, 1.2, 0.8, 1.5], h=1e-6) < 1e-5


# ------------------------------------------------------------------ covariance


def test_covariance_lag_zero_positive_and_symmetric():
    rng = np.random.default_rng(16)
    paths = random_paths(rng, P=2, D=2, Q=2)
    lags = np.array([[0.0, 0.0], [0.5, 0.0], [-0.5, 0.0], [0.0, 1.2], [0.0, -1.2]])
    cov = covariance_given_kernels(paths, [1.0, 0.5], [[0.7, 1.1], [1.5, 0.4]], lags)
    assert np.all(cov[0] > 0)
    np.testing.assert_allclose(cov[1], cov[2], rtol=1e-12)
    np.testing.assert_allclose(cov[3], cov[4], rtol=1e-12)


def test_covariance_matches_double_integral():
    rng = np.random.default_rng(17)
    paths = random_paths(rng, P=1, D=1, Q=1)
    g = paths.g[0][0]
    var, ls = 0.9, 0.8
    t = np.linspace(-12, 12, 1601)
    K = var * np.exp(-((t[:, None] - t[None, :]) ** 2) / (2 * ls**2))
    g0 = g_path_eval(g, -t).value
    scale = covariance_given_kernels(paths, [var], [[ls]], [[0.0]])[0, 0]
    for lag in (0.0, 0.7, 2.0):
        # Cov[f(0), f(lag)] = a^2 int int G(-s) k(s - s') G(lag - s') ds ds'
        g1 = g_path_eval(g, lag - t).value
        want = paths.mixing[0] ** 2 * np.trapezoid(np.trapezoid(g0[:, None] * K * g1[None, :], t, axis=1), t)
        got = covariance_given_kernels(paths, [var], [[ls]], [[lag]], n_freq=2001)[0, 0]
        assert abs(got - want) < 1e-6 * scale


def narrow_kernel_paths(rng, alpha):
    g = GPath(
        weights=np.zeros(4),
        freqs=np.zeros(4),
        phases=np.zeros(4),
        scale=0.0,
        decay=alpha,
        coef=np.array([1.0]),
        centers=np.array([0.0]),
        precision=1.0,
    )
    u = random_upath(rng, 1)
    return PathCoefficients(u=[u], g=[[g]], mixing=np.array([1.0]), variant="full")


def test_near_delta_kernel_recovers_input_covariance():
    rng = np.random.default_rng(18)
    paths = narrow_kernel_paths(rng, alpha=400.0)
    lags = np.linspace(0, 3, 40)[:, None]
    ls = 0.7
    cov = covariance_given_kernels(paths, [1.0], [[ls]], lags)[:, 0]
    ref = np.array([eq_ard_eval(EqArdKernel(1.0, [ls]), [0.0], l) for l in lags])
    assert np.corrcoef(cov, ref)[0, 1] > 0.95


def test_output_covariance_approaches_input_as_lengthscale_grows():
    lags = np.linspace(0, 4, 60)[:, None]
    for seed in range(3):
        paths = random_paths(np.random.default_rng(100 + seed), P=1, D=1, Q=1)
        dist = []
        for ls in (0.1, 1.0, 10.0):
            cov = covariance_given_kernels(paths, [1.0], [[ls]], lags)[:, 0]
            ref = np.exp(-lags[:, 0] ** 2 / (2 * ls**2))
            dist.append(np.abs(cov / cov[0] - ref).max())
        assert dist[0] >= dist[1] >= dist[2]
