"""Verification harness behind ``npcgp selfcheck``.

Every category compares a closed form or an analytic gradient against an
independent oracle (adaptive quadrature, exact Gaussian algebra, central
differences) and reports the worst error against a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import convolution as C
from . import grad as G
from . import quadrature as quad
from .kernels import EqArdKernel, eq_ard_matrix
from .pathwise import (
    GaussianWindow,
    InducingSet,
    RffBasis,
    cross_cov,
    interdomain_cov,
    matheron_update,
    transformed_basis,
)


@dataclass
class Category:
    name: str
    max_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error < self.threshold)


@dataclass
class Report:
    categories: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.categories)

    def lines(self):
        out = [
            f"{'PASS' if c.passed else 'FAIL'}  {c.name:<24} max err {c.max_error:.3e}  (threshold {c.threshold:.0e})"
            for c in self.categories
        ]
        out.append("selfcheck " + ("passed" if self.passed else "FAILED"))
        return out


def _rel(a, b, floor=0.0):
    return abs(a - b) / max(abs(b), floor, 1e-300)


def check_integrals(rng, n=100, fns=None) -> float:
    f = dict(i1a=C.i1a, i1b=C.i1b, i2a=C.i2a, i2b=C.i2b)
    f.update(fns or {})
    worst = 0.0
    for _ in range(n):
        x, z, z2 = rng.uniform(-2, 2, 3)
        a, r, r2 = rng.uniform(0.2, 3, 3)
        t1, t2 = rng.normal(0, 2, 2)
        b = rng.uniform(0, 2 * np.pi)
        worst = max(worst, _rel(f["i1a"](x, a, t1, b, t2), quad.i1a_quad(x, a, t1, b, t2)))
        worst = max(worst, _rel(f["i1b"](x, a, z, r, t1), quad.i1b_quad(x, a, z, r, t1)))
        # cosine factor can cross zero: measure against the envelope there
        env = 1e-3 * np.sqrt(np.pi / (a + r))
        worst = max(worst, _rel(f["i2a"](x, a, t1, b, r, z), quad.i2a_quad(x, a, t1, b, r, z), env))
        worst = max(worst, _rel(f["i2b"](x, a, r, z, r2, z2), quad.i2b_quad(x, a, r, z, r2, z2)))
    return worst


def check_interdomain(rng, n=10) -> float:
    worst = 0.0
    for _ in range(n):
        var, ls = rng.uniform(0.5, 2), rng.uniform(0.3, 1.5)
        a1, a2 = rng.uniform(0.3, 2, 2)
        w1, w2 = GaussianWindow(1.3, [a1]), GaussianWindow(0.7, [a2])
        k = EqArdKernel(var, [ls])
        x, z1, z2 = rng.uniform(-1.5, 1.5, 3)
        worst = max(worst, _rel(cross_cov(k, w1, [x], [z1]), quad.cross_cov_quad(var, ls, 1.3, a1, x, z1)))
        worst = max(
            worst,
            _rel(interdomain_cov(k, w1, w2, [z1], [z2]), quad.interdomain_cov_quad(var, ls, 1.3, a1, 0.7, a2, z1, z2)),
        )
        th, be = rng.normal(0, 1.5), rng.uniform(0, 2 * np.pi)
        basis = RffBasis(np.ones(1), np.array([[th]]), np.array([be]), 0.5)  # unit scale sqrt(2 var / B)
        got = transformed_basis(basis, w1, np.array([[z1]])).value[0, 0]
        env = 1e-3 * 1.3 * np.sqrt(np.pi / a1)
        worst = max(worst, _rel(got, quad.transformed_basis_quad(1.3, a1, th, be, z1), env))
    return worst


def check_matheron(rng) -> float:
    """Mean path of a same-domain update against the exact posterior mean."""
    k = EqArdKernel(1.2, [0.7, 1.1])
    Z = rng.normal(size=(6, 2))
    X = rng.normal(size=(9, 2))
    v = rng.normal(size=6)
    basis = RffBasis.sample(1.2, [0.7, 1.1], 32, rng)
    basis.weights = G.const(np.zeros(32))
    got = matheron_update(basis, Z, k, v, X, jitter=1e-10).value
    Kzz = eq_ard_matrix(k, Z).value + 1e-10 * np.eye(6)
    want = eq_ard_matrix(k, X, Z).value @ np.linalg.solve(Kzz, v)
    return float(np.max(np.abs(got - want)) / np.max(np.abs(want)))


def check_gradients(rng) -> float:
    from . import model as M

    Z = rng.normal(size=(4, 2))
    m = M.build_model(2, 1, Z, num_inducing_g=4, num_bases=8, noise_variance=0.1)
    for name, p in m.named_params().items():
        if name.endswith(".mu"):
            p.value = rng.normal(size=p.shape) * 0.3
    X = rng.normal(size=(5, 2))
    Y = np.sin(X[:, :1])
    names = list(m.named_params())
    vals = [m.named_params()[n].value for n in names]
    x0 = np.concatenate([v.ravel() for v in vals])

    def f(vec):
        out, i = {}, 0
        for n, v in zip(names, vals):
            out[n] = G.reshape(vec[i:i + v.size], v.shape)
            i += v.size
        m.set_params(out)
        return M.elbo(m, X, Y, 5, 1, np.random.default_rng(3))

    _, ad, fd = G.finite_diff_check(f, x0, h=1e-6, return_details=True)
    return float(np.linalg.norm(ad - fd) / np.linalg.norm(fd))


def check_kl(rng, n=20) -> float:
    from .model import kl_inducing

    worst = 0.0
    for _ in range(n):
        m = int(rng.integers(1, 6))
        A = rng.normal(size=(m, m))
        K = A @ A.T + 0.1 * np.eye(m)
        L = np.tril(rng.normal(size=(m, m)))
        L[np.diag_indices(m)] = np.abs(np.diag(L)) + 0.1
        mu = rng.normal(size=m)
        S = L @ L.T
        Ki = np.linalg.inv(K)
        want = 0.5 * (np.trace(Ki @ S) + mu @ Ki @ mu - m + np.linalg.slogdet(K)[1] - np.linalg.slogdet(S)[1])
        got = kl_inducing(InducingSet(np.zeros((m, 1)), mu, L), K).value
        worst = max(worst, _rel(got, want, 1e-12))
    return worst


def run_selfcheck(seed: int = 0, overrides: dict | None = None) -> Report:
    """``overrides`` replaces integral implementations (used for fault injection)."""
    rng = np.random.default_rng(seed)
    rep = Report()
    rep.categories.append(Category("integral quadrature", check_integrals(rng, fns=overrides), 1e-8))
    rep.categories.append(Category("interdomain quadrature", check_interdomain(rng), 1e-6))
    rep.categories.append(Category("matheron posterior", check_matheron(rng), 1e-6))
    rep.categories.append(Category("elbo gradient", check_gradients(rng), 1e-4))
    rep.categories.append(Category("kl divergence", check_kl(rng), 1e-8))
    return rep
