"""Stationary covariance functions and covariance-matrix assembly.

Kernel hyperparameters may be plain floats/arrays or tape ``Node`` objects;
the matrix builders always return ``Node`` values so that they can sit
inside a differentiable objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import grad as G
from .errors import NumericError, ParameterError

MAX_JITTER = 1e-4
DEFAULT_JITTER = 1e-6


def _val(x):
    return x.value if isinstance(x, G.Node) else np.asarray(x, dtype=float)


@dataclass
class EqArdKernel:
    variance: Any
    lengthscales: Any

    def __post_init__(self):
        if np.any(_val(self.lengthscales) <= 0):
            raise ParameterError("EQ lengthscales must be positive")
        if np.any(_val(self.variance) <= 0):
            raise ParameterError("kernel variance must be positive")

    @property
    def input_dim(self) -> int:
        return int(np.size(_val(self.lengthscales)))

    @property
    def precisions(self):
        """Per-dimension ``1 / (2 l^2)``."""
        ls = self.lengthscales
        return 0.5 / G.square(ls) if isinstance(ls, G.Node) else 0.5 / np.square(_val(ls))


@dataclass
class DseKernel:
    variance: Any
    lengthscale: Any
    decay: Any

    def __post_init__(self):
        if np.any(_val(self.lengthscale) <= 0) or np.any(_val(self.decay) <= 0):
            raise ParameterError("DSE lengthscale and decay must be positive")
        if np.any(_val(self.variance) <= 0):
            raise ParameterError("kernel variance must be positive")

    @property
    def precision(self):
        ls = self.lengthscale
        return 0.5 / G.square(ls) if isinstance(ls, G.Node) else 0.5 / float(_val(ls)) ** 2


@dataclass
class PeriodicEqKernel:
    """EQ times a periodic factor, both ARD; used only for toy ground truth."""

    variance: float
    lengthscales: Any
    periods: Any

    def matrix(self, X1, X2=None) -> np.ndarray:
        X1 = np.atleast_2d(X1)
        X2 = X1 if X2 is None else np.atleast_2d(X2)
        ls = np.asarray(self.lengthscales, dtype=float)
        per = np.asarray(self.periods, dtype=float)
        diff = X1[:, None, :] - X2[None, :, :]
        eq = np.exp(-0.5 * np.sum((diff / ls) ** 2, axis=-1))
        periodic = np.exp(-2.0 * np.sum(np.sin(np.pi * diff / per) ** 2 / ls**2, axis=-1))
        return self.variance * eq * periodic

    def eval(self, x, xp) -> float:
        return float(self.matrix(np.atleast_2d(x), np.atleast_2d(xp))[0, 0])


# ------------------------------------------------------------------ evaluation


def eq_ard_eval(k: EqArdKernel, x, xp) -> float:
    x, xp = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(xp, float))
    ls = np.atleast_1d(_val(k.lengthscales))
    if x.shape != ls.shape or xp.shape != ls.shape:
        raise ParameterError("input dimension does not match lengthscale count")
    return float(_val(k.variance) * np.exp(-0.5 * np.sum(((x - xp) / ls) ** 2)))


def eq_ard_matrix(k: EqArdKernel, X1, X2=None) -> G.Node:
    X1 = X1 if isinstance(X1, G.Node) else G.const(np.atleast_2d(X1))
    X2 = X1 if X2 is None else (X2 if isinstance(X2, G.Node) else G.const(np.atleast_2d(X2)))
    diff = G.reshape(X1, (X1.shape[0], 1, X1.shape[1])) - G.reshape(X2, (1,) + X2.shape)
    r2 = G.sum_(G.square(diff) * k.precisions, axis=-1)
    return k.variance * G.exp(-r2)


def dse_eval(k: DseKernel, x: float, xp: float) -> float:
    v, ls, a = float(_val(k.variance)), float(_val(k.lengthscale)), float(_val(k.decay))
    return v * np.exp(-a * x * x) * np.exp(-((x - xp) ** 2) / (2 * ls * ls)) * np.exp(-a * xp * xp)


def dse_matrix(k: DseKernel, z1, z2=None) -> G.Node:
    z1 = z1 if isinstance(z1, G.Node) else G.const(np.ravel(z1))
    z2 = z1 if z2 is None else (z2 if isinstance(z2, G.Node) else G.const(np.ravel(z2)))
    a = z1.reshape(-1, 1)
    b = z2.reshape(1, -1)
    window = G.exp(-k.decay * (G.square(a) + G.square(b)))
    return k.variance * window * G.exp(-k.precision * G.square(a - b))


# ------------------------------------------------------------------ RFF sampling


def sample_rff_noise(input_dim: int, B: int, rng: np.random.Generator):
    """Standardised RFF draws ``(eps, phases, weights)``; frequencies are ``eps / l``."""
    if B < 1:
        raise ParameterError("number of basis functions must be at least 1")
    eps = rng.standard_normal((B, input_dim))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=B)
    weights = rng.standard_normal(B)
    return eps, phases, weights


def sample_frequencies(k, B: int, rng: np.random.Generator):
    """Frequencies from the spectral density of an EQ(-factor) kernel.

    Returns ``(theta [B, P], beta [B], w [B])``; basis functions are
    ``sqrt(2 var / B) cos(theta_i . x + beta_i)``.
    """
    if isinstance(k, DseKernel):
        ls = np.atleast_1d(_val(k.lengthscale))
    else:
        ls = np.atleast_1d(_val(k.lengthscales))
    eps, beta, w = sample_rff_noise(ls.size, B, rng)
    return eps / ls, beta, w


# ------------------------------------------------------------------ matrices


def add_jitter_and_factor(K: G.Node, jitter: float = DEFAULT_JITTER):
    """Add ``jitter * I`` and factor, escalating jitter tenfold up to ``MAX_JITTER``."""
    if jitter < 0:
        raise ParameterError("jitter must be nonnegative")
    n = K.shape[0]
    j = jitter
    while True:
        Kj = K + j * np.eye(n)
        try:
            return Kj, G.cholesky(Kj)
        except NumericError:
            if j >= MAX_JITTER:
                raise NumericError(f"Cholesky failed even with jitter {j:g}") from None
            j = max(j * 10.0, 1e-10)
            j = min(j, MAX_JITTER)


def cov_matrix(kernel, X, jitter: float = DEFAULT_JITTER):
    """Covariance matrix with jitter and its lower Cholesky factor (numpy)."""
    if isinstance(kernel, EqArdKernel):
        K = eq_ard_matrix(kernel, np.atleast_2d(np.asarray(X, float)))
    elif isinstance(kernel, DseKernel):
        K = dse_matrix(kernel, np.ravel(X))
    elif isinstance(kernel, PeriodicEqKernel):
        K = G.const(kernel.matrix(np.atleast_2d(X)))
    else:
        raise ParameterError(f"unsupported kernel {type(kernel).__name__}")
    Kj, L = add_jitter_and_factor(K, jitter)
    return Kj.value, L.value
