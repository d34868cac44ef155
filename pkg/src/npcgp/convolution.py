"""Closed-form convolution of sampled smoothing-kernel and input paths.

A sampled smoothing-kernel path along one input dimension is

    G(t) = exp(-alpha t^2) [ c_G sum_i w_i cos(theta_i t + beta_i)
                             + sum_j q_j exp(-rho_G (t - z_j)^2) ]

and a sampled input path is

    u(x) = c_u sum_k w_k cos(theta_k . x + beta_k)
           + sum_l q_l prod_p exp(-rho_p (x_p - z_lp)^2).

The layer output ``f(x) = int G(x - tau) u(tau) dtau`` then reduces to the
four one-dimensional integrals below: the cosine terms of ``u`` need the
Fourier transform of ``G`` (``i1a``/``i1b`` at ``x = 0``) and the Gaussian
terms need ``G`` smoothed by a Gaussian (``i2a``/``i2b``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import grad as G
from .errors import NumericError, StructuralError

IMAG_TOL = 1e-8
SQRT_PI = np.sqrt(np.pi)
# largest exponent magnitude allowed in the separable Gaussian-sum split
SPLIT_LIMIT = 150.0


def _n(x):
    if isinstance(x, G.Node):
        return x
    x = np.asarray(x)
    return G.const(x if np.iscomplexobj(x) else x.astype(float))


def _ret(out: G.Node, *args):
    if any(isinstance(a, G.Node) for a in args):
        return out
    v = out.value
    return v.item() if v.ndim == 0 else v


# ------------------------------------------------------------------ integrals


def i1a(x, alpha, theta1, beta, theta2):
    """``int exp(-alpha (x - t)^2) cos(theta1 t + beta) exp(i theta2 t) dt``."""
    X, A, T1, B, T2 = map(_n, (x, alpha, theta1, beta, theta2))
    pref = 0.5 * G.sqrt(np.pi / A)
    s, d = T1 + T2, T2 - T1
    plus = G.expi(B + s * X) * G.exp(-G.square(s) / (4.0 * A))
    minus = G.expi(d * X - B) * G.exp(-G.square(d) / (4.0 * A))
    return _ret(pref * (plus + minus), x, alpha, theta1, beta, theta2)


def i1b(x, alpha, z, rho, theta):
    """``int exp(-alpha (x - t)^2) exp(-rho (t - z)^2) exp(i theta t) dt``."""
    X, A, Z, R, T = map(_n, (x, alpha, z, rho, theta))
    tot = A + R
    mag = G.exp(-(G.square(T) + 4.0 * A * R * G.square(X - Z)) / (4.0 * tot))
    phase = G.expi(T * (A * X + R * Z) / tot)
    return _ret(SQRT_PI / G.sqrt(tot) * mag * phase, x, alpha, z, rho, theta)


def i2a(x, alpha, theta, beta, rho, z):
    """``int exp(-alpha (x - t)^2) cos(theta t + beta) exp(-rho (t - z)^2) dt``."""
    X, A, T, B, R, Z = map(_n, (x, alpha, theta, beta, rho, z))
    tot = A + R
    mag = G.exp(-(A * R * G.square(X - Z) + 0.25 * G.square(T)) / tot)
    out = SQRT_PI / G.sqrt(tot) * mag * G.cos(T * (A * X + R * Z) / tot + B)
    return _ret(out, x, alpha, theta, beta, rho, z)


def i2b(x, alpha, rho1, z1, rho2, z2):
    """``int exp(-alpha (x - t)^2) exp(-rho1 (t - z1)^2) exp(-rho2 (t - z2)^2) dt``."""
    X, A, R1, Z1, R2, Z2 = map(_n, (x, alpha, rho1, z1, rho2, z2))
    tot = A + R1 + R2
    quad = A * R1 * G.square(X - Z1) + A * R2 * G.square(X - Z2) + R1 * R2 * G.square(Z1 - Z2)
    out = SQRT_PI / G.sqrt(tot) * G.exp(-quad / tot)
    return _ret(out, x, alpha, rho1, z1, rho2, z2)


# ------------------------------------------------------------------ path containers


@dataclass
class GPath:
    """One sampled smoothing-kernel factor ``G^{(p)}`` (1-D)."""

    weights: Any  # [B]
    freqs: Any  # [B]
    phases: Any  # [B]
    scale: Any  # sqrt(2 var / B)
    decay: Any  # alpha
    coef: Any  # [M_G]  (kernel variance and window at z_j absorbed)
    centers: Any  # [M_G]
    precision: Any  # rho_G


@dataclass
class UPath:
    """One sampled input process ``u_q`` (P-dimensional)."""

    weights: Any  # [B]
    freqs: Any  # [B, P]
    phases: Any  # [B]
    scale: Any
    coef: Any  # [M_u]  (cross-covariance prefactor absorbed)
    centers: Any  # [M_u, P]
    precisions: Any  # [P], smoothed precision of the cross-covariance


@dataclass
class PathCoefficients:
    u: list  # Q UPaths
    g: list  # rows of P GPaths: D rows (full) or 1 row (fast)
    mixing: Any  # [Q] (full) or [D, Q] (fast)
    variant: str = "full"

    @property
    def num_latent(self) -> int:
        return len(self.u)

    @property
    def input_dim(self) -> int:
        return len(self.g[0])

    @property
    def output_dim(self) -> int:
        if self.variant == "fast":
            return int(np.shape(_val(self.mixing))[0])
        return len(self.g)

    def validate(self):
        if self.variant not in ("full", "fast"):
            raise StructuralError(f"unknown variant {self.variant!r}")
        P = self.input_dim
        if any(len(row) != P for row in self.g):
            raise StructuralError("every smoothing-kernel row needs one factor per input dimension")
        Q = self.num_latent
        shape = np.shape(_val(self.mixing))
        if self.variant == "full" and (len(self.g) < 1 or shape != (Q,)):
            raise StructuralError(f"full variant expects mixing of shape ({Q},), got {shape}")
        if self.variant == "fast" and (len(self.g) != 1 or len(shape) != 2 or shape[1] != Q):
            raise StructuralError("fast variant expects one shared kernel row and [D, Q] mixing")
        for u in self.u:
            if np.shape(_val(u.freqs))[1] != P or np.shape(_val(u.centers))[1] != P:
                raise StructuralError("input-process dimension does not match smoothing kernels")


def _val(x):
    return x.value if isinstance(x, G.Node) else np.asarray(x)


# ------------------------------------------------------------------ pointwise evaluation


def g_path_eval(g: GPath, t) -> G.Node:
    t = G.reshape(_n(np.ravel(_val(t))) if not isinstance(t, G.Node) else t, (-1, 1))
    rff = g.scale * (G.cos(t * G.reshape(_n(g.freqs), (1, -1)) + G.reshape(_n(g.phases), (1, -1))) @ _n(g.weights))
    canon = G.exp(-g.precision * G.square(t - G.reshape(_n(g.centers), (1, -1)))) @ _n(g.coef)
    return G.exp(-g.decay * G.square(G.reshape(t, (-1,)))) * (rff + canon)


def u_path_eval(u: UPath, X) -> G.Node:
    X = _n(np.atleast_2d(_val(X))) if not isinstance(X, G.Node) else X
    rff = u.scale * (G.cos(X @ G.transpose(_n(u.freqs)) + _n(u.phases)) @ _n(u.weights))
    C = _n(u.centers)
    diff = G.reshape(X, (X.shape[0], 1, X.shape[1])) - G.reshape(C, (1,) + C.shape)
    canon = G.exp(-G.sum_(G.square(diff) * _n(u.precisions), axis=-1)) @ _n(u.coef)
    return rff + canon


# ------------------------------------------------------------------ transforms of G


def g_fourier(g: GPath, omega) -> G.Node:
    """``G^(omega) = int G(s) exp(-i omega s) ds`` for a vector of frequencies."""
    om = G.reshape(_n(omega), (1, -1))
    th = G.reshape(_n(g.freqs), (-1, 1))
    be = G.reshape(_n(g.phases), (-1, 1))
    rff = i1a(0.0, g.decay, th, be, -om)  # [B_G, K]
    canon = i1b(0.0, g.decay, G.reshape(_n(g.centers), (-1, 1)), g.precision, -om)  # [M_G, K]
    return g.scale * (G.transpose(rff) @ _n(g.weights)) + G.transpose(canon) @ _n(g.coef)


def g_smoothed(g: GPath, rho, x, z) -> G.Node:
    """``H[n, l] = int G(s) exp(-rho (s - (x_n - z_l))^2) ds``.

    The sums over the smoothing-kernel bases are contracted with matrix
    products instead of materialising ``[N, M, B]`` integral tables.
    """
    x = G.reshape(_n(x), (-1, 1))  # [N, 1]
    z = G.reshape(_n(z), (1, -1))  # [1, M]
    y = x - z
    alpha = g.decay
    # cosine part: sum_i w_i c I2A(0; alpha, theta_i, beta_i, rho, y)
    tot = alpha + rho
    kappa = rho / tot
    th = _n(g.freqs)
    amp = g.scale * _n(g.weights) * G.exp(-0.25 * G.square(th) / tot)
    left = G.expi(x * G.reshape(th * kappa, (1, -1)))  # [N, B]
    right = G.expi(-G.reshape(th * kappa, (-1, 1)) * z + G.reshape(_n(g.phases), (-1, 1)))
    right = right * G.reshape(amp, (-1, 1))  # [B, M]
    cos_sum = G.real(left @ right)
    part_a = SQRT_PI / G.sqrt(tot) * G.exp(-(alpha * rho / tot) * G.square(y)) * cos_sum
    # Gaussian part: sum_j q_j I2B(0; alpha, rho_G, z_j, rho, y)
    rg = g.precision
    tot_b = alpha + rg + rho
    zc = _n(g.centers)
    kap = 2.0 * rg * rho / tot_b
    span = float(np.abs(_val(kap)).max() * np.abs(zc.value).max() * (np.abs(x.value).max() + np.abs(z.value).max()))
    if span > SPLIT_LIMIT:
        # the separable split would leave the floating-point range
        b = i2b(0.0, alpha, rg, G.reshape(zc, (1, 1, -1)), rho, G.reshape(y, y.shape + (1,)))
        return part_a + G.einsum("nmj,j->nm", b, _n(g.coef))
    coef = _n(g.coef) * G.exp(-(rg * (alpha + rho) / tot_b) * G.square(zc))  # [M_G]
    ex_left = kap * x * G.reshape(zc, (1, -1))  # [N, M_G]
    ex_right = -kap * G.reshape(zc, (-1, 1)) * z  # [M_G, M]
    # constant shifts keep the factored exponentials in range; they cancel exactly
    s_left = ex_left.value.max(axis=1, keepdims=True)
    s_right = ex_right.value.max(axis=0, keepdims=True)
    gauss_sum = G.exp(ex_left - s_left) @ (G.reshape(coef, (-1, 1)) * G.exp(ex_right - s_right))
    part_b = (
        SQRT_PI
        / G.sqrt(tot_b)
        * G.exp(-(rho * (alpha + rg) / tot_b) * G.square(y) + (s_left + s_right))
        * gauss_sum
    )
    return part_a + part_b


def g_smoothed_reference(g: GPath, rho, x, z) -> G.Node:
    """Direct ``[N, M, B]`` evaluation of ``g_smoothed`` from the integrals."""
    y = G.reshape(G.reshape(_n(x), (-1, 1)) - G.reshape(_n(z), (1, -1)), (len(np.ravel(_val(x))), -1, 1))
    a = i2a(0.0, g.decay, _n(g.freqs), _n(g.phases), rho, y)
    b = i2b(0.0, g.decay, g.precision, _n(g.centers), rho, y)
    return g.scale * G.einsum("nmb,b->nm", a, _n(g.weights)) + G.einsum("nmj,j->nm", b, _n(g.coef))


def _real_checked(z: G.Node, what: str) -> G.Node:
    v = z.value
    scale = max(1.0, float(np.abs(v).max()) if v.size else 1.0)
    resid = float(np.abs(v.imag).max()) if v.size else 0.0
    if resid > IMAG_TOL * scale:
        raise NumericError(f"{what}: imaginary residue {resid:.3e}")
    return G.real(z)


# ------------------------------------------------------------------ assembly


def _latent_response(u: UPath, grow, X: G.Node, reference=False) -> G.Node:
    """``int G(x - tau) u(tau) dtau`` for one input process and one kernel row."""
    N, P = X.shape
    th = _n(u.freqs)
    plus = None
    minus = None
    canon = None
    smooth = g_smoothed_reference if reference else g_smoothed
    for p, g in enumerate(grow):
        tp = th[:, p]
        fp, fm = g_fourier(g, tp), g_fourier(g, -tp)
        plus = fp if plus is None else plus * fp
        minus = fm if minus is None else minus * fm
        h = smooth(g, _n(u.precisions)[p], X[:, p], _n(u.centers)[:, p])
        canon = h if canon is None else canon * h
    phase = X @ G.transpose(th) + G.reshape(_n(u.phases), (1, -1))  # [N, B_u]
    pair = 0.5 * (G.expi(phase) * G.reshape(plus, (1, -1)) + G.expi(-phase) * G.reshape(minus, (1, -1)))
    rff = u.scale * (_real_checked(pair, "layer output") @ _n(u.weights))
    return rff + canon @ _n(u.coef)


def layer_output_sample(paths: PathCoefficients, X, variant: str | None = None, reference=False) -> G.Node:
    """Sampled layer outputs ``[N, D]`` at inputs ``X [N, P]``."""
    if variant is not None and variant != paths.variant:
        raise StructuralError(f"paths were drawn for the {paths.variant!r} variant")
    paths.validate()
    X = X if isinstance(X, G.Node) else G.const(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] != paths.input_dim:
        raise StructuralError(f"inputs have {X.shape[1]} dims, layer expects {paths.input_dim}")
    mix = _n(paths.mixing)
    cols = []
    if paths.variant == "fast":
        resp = [_latent_response(u, paths.g[0], X, reference) for u in paths.u]
        for d in range(paths.output_dim):
            col = None
            for q, r in enumerate(resp):
                term = mix[d, q] * r
                col = term if col is None else col + term
            cols.append(col)
    else:
        for grow in paths.g:
            col = None
            for q, u in enumerate(paths.u):
                term = mix[q] * _latent_response(u, grow, X, reference)
                col = term if col is None else col + term
            cols.append(col)
    return G.stack(cols, axis=1)


# ------------------------------------------------------------------ covariance


def spectral_grid(lengthscale: float, n: int = 801, width: float = 8.0):
    """Trapezoid nodes/weights for expectations under ``N(0, 1/l^2)``."""
    sd = 1.0 / lengthscale
    theta = np.linspace(-width * sd, width * sd, n)
    dens = np.exp(-0.5 * (theta / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
    w = dens * (theta[1] - theta[0])
    w[[0, -1]] *= 0.5
    return theta, w


def covariance_given_kernels(
    paths: PathCoefficients, u_variances, u_lengthscales, lags, n_freq: int = 801
) -> np.ndarray:
    """Output covariance ``k_f(lag)`` implied by the sampled smoothing kernels.

    The input processes are integrated out under their stationary priors:
    ``k_fd(lag) = sum_q a_dq^2 var_q prod_p E_theta[cos(theta lag_p) |G^_dp(theta)|^2]``
    with ``theta ~ N(0, 1/l_qp^2)``.  Returns ``[n_lags, D]``.
    """
    lags = np.atleast_2d(np.asarray(lags, dtype=float))
    P = paths.input_dim
    if lags.shape[1] != P:
        raise StructuralError("lag vectors must have one entry per input dimension")
    mix = _val(paths.mixing)
    D = paths.output_dim
    out = np.zeros((lags.shape[0], D))
    rows = paths.g if paths.variant == "full" else [paths.g[0]] * D
    for d in range(D):
        for q in range(paths.num_latent):
            a = mix[q] if paths.variant == "full" else mix[d, q]
            ls = np.atleast_1d(u_lengthscales[q])
            curve = np.full(lags.shape[0], float(a) ** 2 * float(u_variances[q]))
            for p in range(P):
                theta, w = spectral_grid(float(ls[p]), n_freq)
                power = np.abs(g_fourier(rows[d][p], theta).value) ** 2
                curve *= np.cos(np.outer(lags[:, p], theta)) @ (w * power)
            out[:, d] += curve
    return out


def estimate_output_covariance(layer, lags, S: int, rng: np.random.Generator, n_freq: int = 801):
    """Monte Carlo summary of the learned output covariance over ``S`` kernel draws.

    Returns ``(mean, std, stderr)`` arrays of shape ``[n_lags, D]``.
    """
    from .model import draw_path

    if S < 2:
        raise StructuralError("need at least two samples to estimate spread")
    curves = []
    for _ in range(S):
        paths = draw_path(layer, rng)
        var = [float(_val(k.variance)) for k in layer.u_kernels()]
        ls = [np.atleast_1d(_val(k.lengthscales)) for k in layer.u_kernels()]
        curves.append(covariance_given_kernels(paths, var, ls, lags, n_freq))
    curves = np.array(curves)
    mean = curves.mean(0)
    std = curves.std(0, ddof=1)
    return mean, std, std / np.sqrt(S)
