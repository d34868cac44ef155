"""Adaptive-quadrature oracles used by the self-check and the test-suite.

These evaluate the defining integrals directly with scipy's QUADPACK
(Gauss-Kronrod) routines and never touch the closed forms they check.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate

TOL = 1e-10


def quad_real(f, lo, hi, points=None):
    val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=TOL, limit=500, points=points)
    return val


def quad_complex(f, lo, hi, points=None):
    re = quad_real(lambda t: np.real(f(t)), lo, hi, points)
    im = quad_real(lambda t: np.imag(f(t)), lo, hi, points)
    return re + 1j * im


def window(center, sigma, width=12.0):
    return center - width * sigma, center + width * sigma


# integrands of the four convolution integrals


def i1a_quad(x, alpha, theta1, beta, theta2):
    f = lambda t: np.exp(-alpha * (x - t) ** 2) * np.cos(theta1 * t + beta) * np.exp(1j * theta2 * t)
    return quad_complex(f, *window(x, 1 / np.sqrt(alpha)))


def i1b_quad(x, alpha, z, rho, theta):
    f = lambda t: np.exp(-alpha * (x - t) ** 2) * np.exp(-rho * (t - z) ** 2) * np.exp(1j * theta * t)
    c = (alpha * x + rho * z) / (alpha + rho)
    return quad_complex(f, *window(c, 1 / np.sqrt(alpha + rho)))


def i2a_quad(x, alpha, theta, beta, rho, z):
    f = lambda t: np.exp(-alpha * (x - t) ** 2) * np.cos(theta * t + beta) * np.exp(-rho * (t - z) ** 2)
    c = (alpha * x + rho * z) / (alpha + rho)
    return quad_real(f, *window(c, 1 / np.sqrt(alpha + rho)))


def i2b_quad(x, alpha, rho1, z1, rho2, z2):
    f = lambda t: np.exp(-alpha * (x - t) ** 2 - rho1 * (t - z1) ** 2 - rho2 * (t - z2) ** 2)
    a = alpha + rho1 + rho2
    c = (alpha * x + rho1 * z1 + rho2 * z2) / a
    return quad_real(f, *window(c, 1 / np.sqrt(a)))


# interdomain quantities for a 1-D EQ kernel and Gaussian windows


def cross_cov_quad(variance, lengthscale, amp, alpha, x, z):
    f = lambda t: variance * np.exp(-((x - t) ** 2) / (2 * lengthscale**2)) * amp * np.exp(-alpha * (t - z) ** 2)
    return quad_real(f, *window(z, 1 / np.sqrt(alpha)))


def interdomain_cov_quad(variance, lengthscale, amp1, alpha1, amp2, alpha2, z1, z2):
    def inner(t):
        g = lambda s: np.exp(-((t - s) ** 2) / (2 * lengthscale**2)) * amp2 * np.exp(-alpha2 * (s - z2) ** 2)
        return quad_real(g, *window(z2, 1 / np.sqrt(alpha2)))

    f = lambda t: variance * amp1 * np.exp(-alpha1 * (t - z1) ** 2) * inner(t)
    return quad_real(f, *window(z1, 1 / np.sqrt(alpha1)))


def interdomain_cov_dblquad(variance, lengthscale, amp1, alpha1, amp2, alpha2, z1, z2):
    """Same double integral through ``scipy.integrate.dblquad``."""
    lo1, hi1 = window(z1, 1 / np.sqrt(alpha1))
    lo2, hi2 = window(z2, 1 / np.sqrt(alpha2))
    f = lambda s, t: (
        variance
        * np.exp(-((t - s) ** 2) / (2 * lengthscale**2))
        * amp1
        * np.exp(-alpha1 * (t - z1) ** 2)
        * amp2
        * np.exp(-alpha2 * (s - z2) ** 2)
    )
    val, _ = integrate.dblquad(f, lo1, hi1, lo2, hi2, epsabs=0.0, epsrel=1e-10)
    return val


def transformed_basis_quad(amp, alpha, theta, beta, x):
    """``int amp exp(-alpha (z - x)^2) cos(theta z + beta) dz`` (1-D, unit scale)."""
    f = lambda z: amp * np.exp(-alpha * (z - x) ** 2) * np.cos(theta * z + beta)
    return quad_real(f, *window(x, 1 / np.sqrt(alpha)))
