"""Pathwise (Matheron) sampling with random Fourier feature priors.

Same-domain updates condition a sampled prior path on inducing values at
``Z``; interdomain updates condition on values of the Gaussian-smoothed
process ``u~(z) = int g(x, z) u(x) dx`` with
``g(x, z) = a * exp(-sum_p alpha_p (x_p - z_p)^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import grad as G
from .errors import NumericError, ParameterError, StructuralError
from .kernels import (
    DEFAULT_JITTER,
    EqArdKernel,
    add_jitter_and_factor,
    eq_ard_matrix,
    sample_rff_noise,
)

IMAG_TOL = 1e-8


def _node(x):
    return x if isinstance(x, G.Node) else G.const(np.asarray(x, dtype=float))


def _val(x):
    return x.value if isinstance(x, G.Node) else np.asarray(x, dtype=float)


@dataclass
class RffBasis:
    """``f(x) = sum_i w_i sqrt(2 var / B) cos(theta_i . x + beta_i)``."""

    weights: Any
    frequencies: Any
    phases: Any
    variance: Any = 1.0

    def __post_init__(self):
        B = np.shape(_val(self.weights))[0]
        if np.shape(_val(self.frequencies))[0] != B or np.shape(_val(self.phases))[0] != B:
            raise StructuralError("RFF weights, frequencies and phases disagree on B")

    @property
    def num_bases(self) -> int:
        return int(np.shape(_val(self.weights))[0])

    @property
    def input_dim(self) -> int:
        return int(np.shape(_val(self.frequencies))[1])

    @property
    def scale(self):
        return G.sqrt(2.0 * _node(self.variance) / self.num_bases)

    @classmethod
    def sample(cls, variance, lengthscales, B: int, rng: np.random.Generator, input_dim=None):
        """Draw a basis for an EQ(-factor) kernel; frequencies stay
        differentiable in ``lengthscales``."""
        P = input_dim if input_dim is not None else int(np.size(_val(lengthscales)))
        eps, beta, w = sample_rff_noise(P, B, rng)
        theta = G.const(eps) / G.reshape(_node(lengthscales), (1, P))
        return cls(G.const(w), theta, G.const(beta), variance)


@dataclass
class GaussianWindow:
    amplitude: Any
    precisions: Any

    def __post_init__(self):
        if np.any(_val(self.precisions) <= 0):
            raise ParameterError("window precisions must be positive")

    @classmethod
    def normalized(cls, precisions):
        """Unit-mass window: ``a = prod_p sqrt(alpha_p / pi)``."""
        prec = _node(precisions)
        amp = G.exp(0.5 * G.sum_(G.log(prec / np.pi)))
        return cls(amp, prec)

    def mass(self) -> float:
        alpha = _val(self.precisions)
        return float(_val(self.amplitude) * np.prod(np.sqrt(np.pi / alpha)))


@dataclass
class InducingSet:
    """Inducing inputs and a Gaussian ``N(mean, chol chol^T)`` over their values."""

    inputs: Any
    mean: Any
    chol: Any

    def __post_init__(self):
        M = np.shape(_val(self.inputs))[0]
        if np.shape(_val(self.mean)) != (M,) or np.shape(_val(self.chol)) != (M, M):
            raise StructuralError("inducing inputs, mean and factor disagree on M")

    @property
    def num_inducing(self) -> int:
        return int(np.shape(_val(self.inputs))[0])

    @staticmethod
    def chol_from_unconstrained(raw):
        """Lower factor with strictly positive diagonal via softplus."""
        raw = _node(raw)
        n = raw.shape[0]
        off = G.tril(raw, -1)
        diag = G.softplus(G.diag_part(raw)) + 1e-12
        return off + G.diag_matrix(diag)

    @staticmethod
    def unconstrained_from_chol(L):
        L = np.array(_val(L), dtype=float)
        d = np.clip(np.diagonal(L), 1e-12, None)
        raw = np.tril(L, -1)
        raw[np.diag_indices_from(raw)] = np.where(d > 30, d, np.log(np.expm1(d)))
        return raw

    def covariance(self) -> np.ndarray:
        L = _val(self.chol)
        return L @ L.T


# ------------------------------------------------------------------ same domain


def prior_sample_eval(basis: RffBasis, X) -> G.Node:
    X = _node(np.atleast_2d(_val(X))) if not isinstance(X, G.Node) else X
    if X.shape[1] != basis.input_dim:
        raise StructuralError("input dimension does not match RFF frequencies")
    arg = X @ G.transpose(_node(basis.frequencies)) + _node(basis.phases)
    return basis.scale * (G.cos(arg) @ _node(basis.weights))


def matheron_coefficients(Kzz: G.Node, prior_at_z: G.Node, v_sample, jitter=DEFAULT_JITTER):
    """``(K + jitter I)^{-1} (v - f(Z))`` via a Cholesky solve."""
    _, L = add_jitter_and_factor(Kzz, jitter)
    return G.cho_solve(L, _node(v_sample) - prior_at_z)


def matheron_update(basis: RffBasis, Z, kernel: EqArdKernel, v_sample, X, jitter=DEFAULT_JITTER):
    """Posterior path at ``X`` given inducing values ``v_sample`` at ``Z``."""
    Z, X = _as2d(Z), _as2d(X)
    coef = matheron_coefficients(eq_ard_matrix(kernel, Z), prior_sample_eval(basis, Z), v_sample, jitter)
    return prior_sample_eval(basis, X) + eq_ard_matrix(kernel, X, Z) @ coef


def _as2d(X):
    if isinstance(X, G.Node):
        return X if X.ndim == 2 else G.reshape(X, (-1, 1))
    X = np.asarray(X, dtype=float)
    return G.const(X if X.ndim == 2 else X.reshape(-1, 1))


# ------------------------------------------------------------------ interdomain


def _gauss_ft(x, omega, alpha):
    """``int exp(-alpha (t - x)^2) exp(i omega t) dt`` (complex Node)."""
    return G.sqrt(np.pi / alpha) * G.exp(-G.square(omega) / (4.0 * alpha)) * G.expi(omega * x)


def _real_part_checked(z: G.Node, what: str) -> G.Node:
    v = z.value
    scale = max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    resid = float(np.max(np.abs(v.imag))) if v.size else 0.0
    if resid > IMAG_TOL * scale:
        raise NumericError(f"{what}: imaginary residue {resid:.3e} exceeds tolerance")
    return G.real(z)


def transformed_basis(basis: RffBasis, win: GaussianWindow, Z) -> G.Node:
    """``Phi~[m, i] = int g(x, z_m) phi_i(x) dx`` as an ``M x B`` matrix.

    Uses the pairing ``cos(t) = (e^{it} + e^{-it}) / 2`` so each term
    factorises across input dimensions.
    """
    Z = _as2d(Z)
    M, P = Z.shape
    theta = _node(basis.frequencies)
    alpha = G.reshape(_node(win.precisions), (1, 1, P))
    z = G.reshape(Z, (M, 1, P))
    th = G.reshape(theta, (1, basis.num_bases, P))
    plus = _prod_last(_gauss_ft(z, th, alpha))
    minus = _prod_last(_gauss_ft(z, -th, alpha))
    beta = _node(basis.phases)
    pair = 0.5 * (G.expi(beta) * plus + G.expi(-beta) * minus)
    return _node(win.amplitude) * basis.scale * _real_part_checked(pair, "transformed basis")


def _prod_last(x: G.Node) -> G.Node:
    out = x[..., 0]
    for p in range(1, x.shape[-1]):
        out = out * x[..., p]
    return out


def cross_cov_matrix(kernel: EqArdKernel, win: GaussianWindow, X, Z) -> G.Node:
    """``k_{u, u~}(x, z) = int k(x, x') g(x', z) dx'`` for all pairs."""
    X, Z = _as2d(X), _as2d(Z)
    rho = _node(kernel.precisions)
    alpha = _node(win.precisions)
    tot = rho + alpha
    const = kernel.variance * _node(win.amplitude) * G.exp(0.5 * G.sum_(G.log(np.pi / tot)))
    prec = rho * alpha / tot
    diff = G.reshape(X, (X.shape[0], 1, X.shape[1])) - G.reshape(Z, (1,) + Z.shape)
    return const * G.exp(-G.sum_(G.square(diff) * prec, axis=-1))


def interdomain_cov_matrix(kernel: EqArdKernel, win: GaussianWindow, Z1, Z2=None, win2=None) -> G.Node:
    """``k_{u~, u~}(z, z') = int int k(x, x') g(x, z) g'(x', z') dx dx'``."""
    Z1 = _as2d(Z1)
    Z2 = Z1 if Z2 is None else _as2d(Z2)
    win2 = win if win2 is None else win2
    rho = _node(kernel.precisions)
    a1, a2 = _node(win.precisions), _node(win2.precisions)
    denom = rho * a2 + rho * a1 + a1 * a2
    const = (
        kernel.variance
        * _node(win.amplitude)
        * _node(win2.amplitude)
        * G.exp(G.sum_(np.log(np.pi) - 0.5 * G.log(denom)))
    )
    prec = rho * a1 * a2 / denom
    diff = G.reshape(Z1, (Z1.shape[0], 1, Z1.shape[1])) - G.reshape(Z2, (1,) + Z2.shape)
    return const * G.exp(-G.sum_(G.square(diff) * prec, axis=-1))


def cross_cov(kernel: EqArdKernel, win: GaussianWindow, x, zp) -> float:
    return float(cross_cov_matrix(kernel, win, np.atleast_2d(x), np.atleast_2d(zp)).value[0, 0])


def interdomain_cov(kernel: EqArdKernel, win: GaussianWindow, win2: GaussianWindow, z, zp) -> float:
    return float(
        interdomain_cov_matrix(kernel, win, np.atleast_2d(z), np.atleast_2d(zp), win2).value[0, 0]
    )


def interdomain_coefficients(basis, win, Z, kernel, v_sample, jitter=DEFAULT_JITTER):
    """``K~^{-1} (v - Phi~ w)`` for the interdomain update."""
    Z = _as2d(Z)
    Kt = interdomain_cov_matrix(kernel, win, Z)
    prior_t = transformed_basis(basis, win, Z) @ _node(basis.weights)
    return matheron_coefficients(Kt, prior_t, v_sample, jitter)


def interdomain_matheron_sample(basis, win, ind: InducingSet | Any, kernel, v_sample, X, jitter=DEFAULT_JITTER):
    """Path of ``u`` at ``X`` conditioned on smoothed values at the inducing inputs."""
    Z = ind.inputs if isinstance(ind, InducingSet) else ind
    coef = interdomain_coefficients(basis, win, Z, kernel, v_sample, jitter)
    return prior_sample_eval(basis, X) + cross_cov_matrix(kernel, win, X, Z) @ coef


def smoothed_sample_eval(basis, win, Z, kernel, v_sample, Xs, jitter=DEFAULT_JITTER):
    """The smoothed path ``int g(x, x*) u(x) dx`` at points ``Xs``."""
    coef = interdomain_coefficients(basis, win, Z, kernel, v_sample, jitter)
    return transformed_basis(basis, win, Xs) @ _node(basis.weights) + interdomain_cov_matrix(
        kernel, win, Xs, Z
    ) @ coef


def sample_inducing_values(ind: InducingSet, rng: np.random.Generator, eps=None) -> G.Node:
    """Reparameterised draw ``mean + chol @ eps``."""
    M = ind.num_inducing
    eps = rng.standard_normal(M) if eps is None else np.asarray(eps, dtype=float)
    return _node(ind.mean) + _node(ind.chol) @ G.const(eps)
