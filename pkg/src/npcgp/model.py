"""Nonparametric convolved GP layers, deep composition and the variational bound.

A layer maps ``P`` inputs to ``D`` outputs through ``Q`` latent input
processes ``u_q`` (EQ prior, interdomain inducing points behind a Gaussian
window) and separable smoothing kernels ``G = prod_p G^(p)`` with DSE
priors.  The full variant keeps one kernel per output, the fast variant
shares one kernel and mixes with ``a[d, q]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grad as G
from .convolution import GPath, PathCoefficients, UPath, layer_output_sample
from .errors import NumericError, ParameterError, StructuralError
from .kernels import DEFAULT_JITTER, DseKernel, EqArdKernel, add_jitter_and_factor, dse_matrix, eq_ard_matrix
from .pathwise import (
    GaussianWindow,
    InducingSet,
    RffBasis,
    interdomain_coefficients,
    interdomain_cov_matrix,
    prior_sample_eval,
    sample_inducing_values,
)

LOG_2PI = np.log(2.0 * np.pi)


def _pos(raw: G.Node) -> G.Node:
    return G.exp(raw)


@dataclass
class LayerState:
    """Parameters of one layer, stored unconstrained in ``params``.

    Positive quantities are kept as logs; Cholesky factors are kept in the
    softplus-diagonal parametrisation of ``InducingSet``.  With ``whiten``
    the variational parameters describe ``e`` in ``v = L_K e``, where
    ``L_K`` is the prior Cholesky factor, so that ``q(e)`` has prior
    ``N(0, I)``.
    """

    input_dim: int
    output_dim: int
    num_latent: int
    variant: str = "full"
    num_bases: int = 16
    jitter: float = DEFAULT_JITTER
    whiten: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("full", "fast"):
            raise StructuralError(f"unknown layer variant {self.variant!r}")
        if min(self.input_dim, self.output_dim, self.num_latent, self.num_bases) < 1:
            raise ParameterError("layer sizes must be positive")

    # -------------------------------------------------------------- structure

    @property
    def num_kernel_rows(self) -> int:
        return self.output_dim if self.variant == "full" else 1

    @property
    def num_inducing_u(self) -> int:
        return self.params["u0.Z"].shape[0]

    @property
    def num_inducing_g(self) -> int:
        return self.params["g0.0.Z"].shape[0]

    def u_kernels(self):
        return [EqArdKernel(1.0, _pos(self.params[f"u{q}.log_ls"])) for q in range(self.num_latent)]

    def u_windows(self):
        return [GaussianWindow.normalized(_pos(self.params[f"u{q}.log_win"])) for q in range(self.num_latent)]

    def u_inducing(self, q):
        p = self.params
        return InducingSet(p[f"u{q}.Z"], p[f"u{q}.mu"], InducingSet.chol_from_unconstrained(p[f"u{q}.L"]))

    def g_kernel(self, r, d):
        p = self.params
        k = f"g{r}.{d}"
        return DseKernel(_pos(p[k + ".log_var"]), _pos(p[k + ".log_ls"]), _pos(p[k + ".log_decay"]))

    def g_inducing(self, r, d):
        p = self.params
        k = f"g{r}.{d}"
        return InducingSet(p[k + ".Z"], p[k + ".mu"], InducingSet.chol_from_unconstrained(p[k + ".L"]))

    def u_prior_cov(self, q):
        return interdomain_cov_matrix(self.u_kernels()[q], self.u_windows()[q], self.params[f"u{q}.Z"])

    def g_prior_cov(self, r, d):
        return dse_matrix(self.g_kernel(r, d), self.params[f"g{r}.{d}.Z"])

    def _effective(self, ind: InducingSet, K: G.Node) -> InducingSet:
        if not self.whiten:
            return ind
        _, Lk = add_jitter_and_factor(K, self.jitter)
        return InducingSet(ind.inputs, Lk @ ind.mean, Lk @ ind.chol)

    def u_inducing_effective(self, q) -> InducingSet:
        """``q(v)`` over the inducing values themselves."""
        return self._effective(self.u_inducing(q), self.u_prior_cov(q))

    def g_inducing_effective(self, r, d) -> InducingSet:
        return self._effective(self.g_inducing(r, d), self.g_prior_cov(r, d))

    def kl(self) -> G.Node:
        blocks = [(self.u_inducing(q), self.u_prior_cov, (q,)) for q in range(self.num_latent)]
        blocks += [
            (self.g_inducing(r, d), self.g_prior_cov, (r, d))
            for r in range(self.num_kernel_rows)
            for d in range(self.input_dim)
        ]
        total = None
        for ind, cov, args in blocks:
            if self.whiten:
                term = kl_inducing(ind, np.eye(ind.num_inducing))
            else:
                Kj, _ = add_jitter_and_factor(cov(*args), self.jitter)
                term = kl_inducing(ind, Kj)
            total = term if total is None else total + term
        return total

    def validate(self):
        P, Q = self.input_dim, self.num_latent
        for q in range(Q):
            if self.params[f"u{q}.Z"].shape[1] != P:
                raise StructuralError(f"u{q} inducing inputs are not {P}-dimensional")
            self.u_inducing(q)
        for r in range(self.num_kernel_rows):
            for d in range(P):
                self.g_inducing(r, d)
        want = (Q,) if self.variant == "full" else (self.output_dim, Q)
        if self.params["mix"].shape != want:
            raise StructuralError(f"mixing has shape {self.params['mix'].shape}, expected {want}")


def init_layer(
    input_dim: int,
    output_dim: int,
    num_latent: int,
    Z_u: np.ndarray,
    num_inducing_g: int = 15,
    variant: str = "full",
    num_bases: int = 16,
    u_lengthscale: float = 0.5,
    window_precision: float = 0.5,
    g_lengthscale: float = 0.5,
    g_decay: float = 0.5,
    jitter: float = DEFAULT_JITTER,
    whiten: bool = True,
) -> LayerState:
    """Layer with prior-shaped initial variational factors.

    The smoothing-kernel variance is chosen so that the prior output
    variance is about one, and the kernel inducing inputs cover twice the
    window scale ``1 / sqrt(2 alpha)`` on either side of the origin.
    """
    Z_u = np.atleast_2d(np.asarray(Z_u, dtype=float))
    if Z_u.shape[1] != input_dim:
        raise StructuralError("inducing inputs do not match the layer input dimension")
    layer = LayerState(input_dim, output_dim, num_latent, variant, num_bases, jitter, whiten)
    p = layer.params
    for q in range(num_latent):
        p[f"u{q}.log_ls"] = G.param(np.full(input_dim, np.log(u_lengthscale)))
        p[f"u{q}.log_win"] = G.param(np.full(input_dim, np.log(window_precision)))
        p[f"u{q}.Z"] = G.param(Z_u.copy())
        M = Z_u.shape[0]
        p[f"u{q}.mu"] = G.param(np.zeros(M))
        p[f"u{q}.L"] = G.param(np.zeros((M, M)))
    gamma = 0.5 / g_lengthscale**2 + 0.5 / u_lengthscale**2
    g_var = np.sqrt(g_decay * (g_decay + 2 * gamma)) / np.pi
    r_span = 2.0 / np.sqrt(2.0 * g_decay)
    grid = np.linspace(-r_span, r_span, num_inducing_g)
    for r in range(layer.num_kernel_rows):
        for d in range(input_dim):
            k = f"g{r}.{d}"
            p[k + ".log_var"] = G.param(np.array(np.log(g_var)))
            p[k + ".log_ls"] = G.param(np.array(np.log(g_lengthscale)))
            p[k + ".log_decay"] = G.param(np.array(np.log(g_decay)))
            p[k + ".Z"] = G.param(grid.copy())
            p[k + ".mu"] = G.param(np.zeros(num_inducing_g))
            p[k + ".L"] = G.param(np.zeros((num_inducing_g, num_inducing_g)))
    if variant == "full":
        p["mix"] = G.param(np.full(num_latent, 1.0 / np.sqrt(num_latent)))
    else:
        p["mix"] = G.param(np.full((output_dim, num_latent), 1.0 / np.sqrt(num_latent)))
    # variational factors start at 0.1 * chol(K_prior), which is 0.1 * I when whitened
    blocks = [(f"u{q}", layer.u_prior_cov, (q,)) for q in range(num_latent)]
    blocks += [
        (f"g{r}.{d}", layer.g_prior_cov, (r, d)) for r in range(layer.num_kernel_rows) for d in range(input_dim)
    ]
    for key, cov, args in blocks:
        K = cov(*args)
        if whiten:
            L = 0.1 * np.eye(K.shape[0])
        else:
            L = 0.1 * add_jitter_and_factor(K, jitter)[1].value
        p[key + ".L"] = G.param(InducingSet.unconstrained_from_chol(L))
    return layer


# ------------------------------------------------------------------ sampling


def draw_path(
    layer: LayerState, rng: np.random.Generator, deterministic: bool = False, basis_rng=None
) -> PathCoefficients:
    """Sample one set of path coefficients for ``layer``.

    With ``deterministic`` the RFF weights and the inducing noise are zero,
    which leaves the posterior mean path.  ``basis_rng``, when given,
    supplies the random features so they can be held fixed across calls.
    """
    B = layer.num_bases
    brng = rng if basis_rng is None else basis_rng
    us = []
    for q, (kern, win) in enumerate(zip(layer.u_kernels(), layer.u_windows())):
        ind = layer.u_inducing_effective(q)
        basis = RffBasis.sample(1.0, kern.lengthscales, B, brng, input_dim=layer.input_dim)
        eps = rng.standard_normal(ind.num_inducing)
        if deterministic:
            basis.weights = G.const(np.zeros(B))
            eps = np.zeros_like(eps)
        v = sample_inducing_values(ind, rng, eps)
        coef = interdomain_coefficients(basis, win, ind.inputs, kern, v, layer.jitter)
        rho, alpha = kern.precisions, win.precisions
        tot = rho + alpha
        const = kern.variance * win.amplitude * G.exp(0.5 * G.sum_(G.log(np.pi / tot)))
        us.append(
            UPath(
                weights=basis.weights,
                freqs=basis.frequencies,
                phases=basis.phases,
                scale=basis.scale,
                coef=const * coef,
                centers=ind.inputs,
                precisions=rho * alpha / tot,
            )
        )
    rows = []
    for r in range(layer.num_kernel_rows):
        row = []
        for d in range(layer.input_dim):
            kern = layer.g_kernel(r, d)
            ind = layer.g_inducing(r, d)
            _, L = add_jitter_and_factor(dse_matrix(kern, ind.inputs), layer.jitter)
            basis = RffBasis.sample(kern.variance, G.reshape(kern.lengthscale, (1,)), B, brng, input_dim=1)
            eps = rng.standard_normal(ind.num_inducing)
            if deterministic:
                basis.weights = G.const(np.zeros(B))
                eps = np.zeros_like(eps)
            v = sample_inducing_values(ind, rng, eps)
            if layer.whiten:
                v = L @ v
            Z = ind.inputs
            win_z = G.exp(-kern.decay * G.square(Z))
            prior_z = win_z * prior_sample_eval(basis, G.reshape(Z, (-1, 1)))
            coef = G.cho_solve(L, v - prior_z)
            row.append(
                GPath(
                    weights=basis.weights,
                    freqs=basis.frequencies[:, 0],
                    phases=basis.phases,
                    scale=basis.scale,
                    decay=kern.decay,
                    coef=kern.variance * win_z * coef,
                    centers=Z,
                    precision=kern.precision,
                )
            )
        rows.append(row)
    return PathCoefficients(u=us, g=rows, mixing=layer.params["mix"], variant=layer.variant)


# ------------------------------------------------------------------ model


@dataclass
class Model:
    layers: list
    params_extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise StructuralError("a model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.output_dim != b.input_dim:
                raise StructuralError("layer output and input dimensions do not chain")
        self.params_extra.setdefault("log_noise", G.param(np.array(np.log(0.01))))

    @property
    def noise_variance(self) -> G.Node:
        return _pos(self.params_extra["log_noise"])

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def named_params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                out[f"layer{i}.{k}"] = v
        out.update(self.params_extra)
        return out

    def set_params(self, values: dict):
        """Replace parameters by name (values may be Nodes or arrays)."""
        for name, v in values.items():
            node = v if isinstance(v, G.Node) else G.param(np.asarray(v, dtype=float))
            if name in self.params_extra:
                self.params_extra[name] = node
                continue
            head, _, key = name.partition(".")
            idx = int(head[len("layer"):])
            if key not in self.layers[idx].params:
                raise StructuralError(f"unknown parameter {name!r}")
            self.layers[idx].params[key] = node

    def param_list(self) -> list:
        return list(self.named_params().values())


def build_model(
    input_dim: int,
    output_dim: int,
    Z_u: np.ndarray,
    num_latent: int = 1,
    num_layers: int = 1,
    variant: str = "full",
    noise_variance: float = 0.01,
    **layer_kw,
) -> Model:
    """Shallow model, or a deep stack of fast layers with hidden width ``input_dim``."""
    if num_layers < 1:
        raise ParameterError("need at least one layer")
    if num_layers > 1:
        variant = "fast"
    layers = []
    for i in range(num_layers):
        d_out = output_dim if i == num_layers - 1 else input_dim
        # every layer places its u inducing inputs on the same k-means centres
        layers.append(init_layer(input_dim, d_out, num_latent, Z_u, variant=variant, **layer_kw))
    m = Model(layers)
    m.params_extra["log_noise"] = G.param(np.array(np.log(noise_variance)))
    return m


def forward_deep(
    model: Model, X, S: int, rng: np.random.Generator, deterministic: bool = False, basis_seed=None
) -> list:
    """``S`` output samples ``[N, D_L]`` with fresh paths per layer and sample.

    With ``basis_seed`` the random features of sample ``s`` in layer ``i``
    come from a generator seeded by ``(basis_seed, i, s)``, so they repeat
    across calls while the inducing draws stay fresh.
    """
    X = X if isinstance(X, G.Node) else G.const(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] != model.input_dim:
        raise StructuralError(f"inputs have {X.shape[1]} columns, model expects {model.input_dim}")
    outs = []
    for s in range(S):
        H = X
        for i, layer in enumerate(model.layers):
            brng = None if basis_seed is None else np.random.default_rng([basis_seed, i, s])
            H = layer_output_sample(draw_path(layer, rng, deterministic, brng), H)
            if not np.all(np.isfinite(H.value)):
                raise NumericError(f"non-finite output in layer {i}")
        outs.append(H)
    return outs


# ------------------------------------------------------------------ objective


def kl_inducing(ind: InducingSet, prior_K) -> G.Node:
    """``KL(N(mu, L L^T) || N(0, K))`` for a jittered prior matrix ``K``."""
    K = prior_K if isinstance(prior_K, G.Node) else G.const(np.asarray(prior_K, dtype=float))
    L_q = ind.chol if isinstance(ind.chol, G.Node) else G.const(np.asarray(ind.chol, dtype=float))
    mu = ind.mean if isinstance(ind.mean, G.Node) else G.const(np.asarray(ind.mean, dtype=float))
    if np.any(np.diagonal(L_q.value) <= 0):
        raise NumericError("variational factor must have a positive diagonal")
    L_k = G.cholesky(K)
    M = K.shape[0]
    A = G.solve_triangular(L_k, L_q)
    b = G.solve_triangular(L_k, mu)
    logdet_q = 2.0 * G.sum_(G.log(G.diag_part(L_q)))
    return 0.5 * (G.sum_(G.square(A)) + G.sum_(G.square(b)) - M + G.logdet_chol(L_k) - logdet_q)


def kl_total(model: Model) -> G.Node:
    total = None
    for layer in model.layers:
        term = layer.kl()
        total = term if total is None else total + term
    return total


def gaussian_loglik(Y, F: G.Node, noise: G.Node) -> G.Node:
    """Per-row ``sum_d log N(y_d; f_d, noise)``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    D = Y.shape[1]
    return -0.5 * (G.sum_(G.square(Y - F), axis=1) / noise + D * (LOG_2PI + G.log(noise)))


def expected_loglik(model: Model, X, Y, S: int, rng: np.random.Generator, basis_seed=None) -> G.Node:
    """Per-row MC average of the log-likelihood, shape ``[N]``."""
    total = None
    for F in forward_deep(model, X, S, rng, basis_seed=basis_seed):
        ll = gaussian_loglik(Y, F, model.noise_variance)
        total = ll if total is None else total + ll
    return total / float(S)


def elbo(model: Model, X, Y, N_total: int, S: int, rng: np.random.Generator, basis_seed=None) -> G.Node:
    """Doubly stochastic bound: rescaled minibatch likelihood minus all KL terms."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ParameterError("empty batch")
    ell = G.sum_(expected_loglik(model, X, Y, S, rng, basis_seed)) * (N_total / X.shape[0])
    out = ell - kl_total(model)
    if not np.isfinite(out.value):
        raise NumericError("non-finite ELBO")
    return out


def predict(model: Model, X, S: int, rng: np.random.Generator, deterministic: bool = False):
    """Predictive mean, variance (plus noise) and MC standard error of the mean."""
    if S < 2:
        raise ParameterError("need S >= 2 samples for a predictive variance")
    samples = np.stack([F.value for F in forward_deep(model, X, S, rng, deterministic)])
    mean = samples.mean(0)
    var = samples.var(0) + float(model.noise_variance.value)
    stderr = samples.std(0, ddof=1) / np.sqrt(S)
    return mean, var, stderr


# ------------------------------------------------------------------ training


def fit(
    model: Model, X, Y, iterations: int, batch_size: int, S: int, lr: float, rng, callback=None, fixed_bases=False
):
    """Adam on the minibatch ELBO; ``callback(iteration, elbo_value)`` after each step.

    Random features are redrawn for every sample unless ``fixed_bases``,
    in which case one set per layer and sample is kept for the whole run.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    N = X.shape[0]
    batch_size = min(batch_size, N)
    names = list(model.named_params())
    opt = G.Adam([model.named_params()[n] for n in names], lr=lr)
    basis_seed = int(rng.integers(2**31)) if fixed_bases else None
    for it in range(1, iterations + 1):
        idx = rng.choice(N, batch_size, replace=False) if batch_size < N else np.arange(N)
        grads = None
        try:
            obj = elbo(model, X[idx], Y[idx], N, S, rng, basis_seed)
            grads = G.backward(-obj, opt.params)
            opt.step([grads[p] for p in opt.params])
        except NumericError as e:
            raise NumericError(f"iteration {it}: {e} ({_diagnose(names, opt.params, grads)})") from None
        if callback is not None:
            callback(it, float(obj.value))
    return model


def _diagnose(names, params, grads=None):
    """Name the parameter group most likely responsible for a numeric failure."""
    bad = [n for n, p in zip(names, params) if not np.all(np.isfinite(p.value))]
    if bad:
        return "non-finite values in " + ", ".join(bad)
    if grads is not None:
        bad = [n for n, p in zip(names, params) if not np.all(np.isfinite(grads[p]))]
        if bad:
            return "non-finite gradient in " + ", ".join(bad)
    name, _ = max(zip(names, params), key=lambda t: float(np.max(np.abs(t[1].value))))
    return f"largest parameter magnitude in {name}"


# ------------------------------------------------------------------ serialisation


def model_to_dict(model: Model) -> tuple[dict, dict]:
    """``(arrays, meta)`` describing the model completely."""
    arrays = {k: np.asarray(v.value) for k, v in model.named_params().items()}
    meta = {
        "layers": [
            dict(
                input_dim=l.input_dim,
                output_dim=l.output_dim,
                num_latent=l.num_latent,
                variant=l.variant,
                num_bases=l.num_bases,
                jitter=l.jitter,
                whiten=l.whiten,
            )
            for l in model.layers
        ]
    }
    return arrays, meta


def model_from_dict(arrays: dict, meta: dict) -> Model:
    layers = []
    for i, spec in enumerate(meta["layers"]):
        layer = LayerState(**spec)
        prefix = f"layer{i}."
        for k, v in arrays.items():
            if k.startswith(prefix):
                layer.params[k[len(prefix):]] = G.param(np.array(v, dtype=float))
        layer.validate()
        layers.append(layer)
    extra = {k: G.param(np.array(v, dtype=float)) for k, v in arrays.items() if not k.startswith("layer")}
    return Model(layers, extra)


# ------------------------------------------------------------------ SVGP baseline


@dataclass
class SvgpModel:
    """Single-output sparse variational GP with an EQ-ARD kernel.

    The variational factor is whitened by default: ``u = L_K v`` with
    ``q(v) = N(mu, L L^T)`` and prior ``N(0, I)``, which conditions the
    optimisation far better than parametrising ``q(u)`` directly.
    """

    params: dict
    whiten: bool = True

    @classmethod
    def init(cls, Z, noise_variance=0.01, lengthscale=1.0, variance=1.0, whiten=True, jitter=DEFAULT_JITTER):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        M, P = Z.shape
        if whiten:
            L0 = np.eye(M)
        else:
            K = eq_ard_matrix(EqArdKernel(variance, np.full(P, lengthscale)), Z).value
            L0 = np.linalg.cholesky(K + jitter * np.eye(M))
        return cls(
            {
                "log_var": G.param(np.array(np.log(variance))),
                "log_ls": G.param(np.full(P, np.log(lengthscale))),
                "Z": G.param(Z.copy()),
                "mu": G.param(np.zeros(M)),
                "L": G.param(InducingSet.unconstrained_from_chol(L0)),
                "log_noise": G.param(np.array(np.log(noise_variance))),
            },
            whiten,
        )

    @property
    def kernel(self):
        return EqArdKernel(_pos(self.params["log_var"]), _pos(self.params["log_ls"]))

    @property
    def inducing(self):
        p = self.params
        return InducingSet(p["Z"], p["mu"], InducingSet.chol_from_unconstrained(p["L"]))

    @property
    def noise_variance(self):
        return _pos(self.params["log_noise"])

    def elbo(self, X, Y, N_total):
        return svgp_baseline_elbo(self.kernel, self.inducing, X, Y, N_total, self.noise_variance, whiten=self.whiten)


def svgp_marginals(kernel: EqArdKernel, ind: InducingSet, X, jitter=DEFAULT_JITTER, whiten=False):
    """Mean and variance of ``q(f(x))`` at the rows of ``X``."""
    X = G.const(np.atleast_2d(np.asarray(X, dtype=float)))
    _, Lk = add_jitter_and_factor(eq_ard_matrix(kernel, ind.inputs), jitter)
    Kzx = eq_ard_matrix(kernel, ind.inputs, X)
    A = G.solve_triangular(Lk, Kzx)  # L^{-1} K_zx
    W = A if whiten else G.solve_triangular(Lk, A, trans=True)  # K^{-1} K_zx
    mean = G.transpose(W) @ ind.mean
    SW = G.transpose(ind.chol) @ W
    var = kernel.variance - G.sum_(G.square(A), axis=0) + G.sum_(G.square(SW), axis=0)
    return mean, var


def svgp_baseline_elbo(
    kernel: EqArdKernel, ind: InducingSet, X, Y, N_total: int, noise, jitter=DEFAULT_JITTER, whiten=False
):
    """Minibatch bound ``N/b sum_i E_q log N(y_i; f_i, noise) - KL``."""
    y = np.ravel(np.asarray(Y, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != y.size:
        raise StructuralError("the baseline is single-output: Y must have one column")
    noise = noise if isinstance(noise, G.Node) else G.const(np.asarray(noise, dtype=float))
    mean, var = svgp_marginals(kernel, ind, X, jitter, whiten)
    ell = -0.5 * (LOG_2PI + G.log(noise)) - 0.5 * (G.square(y - mean) + var) / noise
    if whiten:
        prior = np.eye(ind.num_inducing)
    else:
        prior, _ = add_jitter_and_factor(eq_ard_matrix(kernel, ind.inputs), jitter)
    out = G.sum_(ell) * (N_total / y.size) - kl_inducing(ind, prior)
    if not np.isfinite(out.value):
        raise NumericError("non-finite baseline ELBO")
    return out


def svgp_fit(model: SvgpModel, X, Y, iterations: int, batch_size: int, lr: float, rng, callback=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.ravel(np.asarray(Y, dtype=float))
    N = X.shape[0]
    batch_size = min(batch_size, N)
    opt = G.Adam(list(model.params.values()), lr=lr)
    for it in range(1, iterations + 1):
        idx = rng.choice(N, batch_size, replace=False) if batch_size < N else np.arange(N)
        obj = model.elbo(X[idx], y[idx], N)
        grads = G.backward(-obj, opt.params)
        opt.step([grads[p] for p in opt.params])
        if callback is not None:
            callback(it, float(obj.value))
    return model


def svgp_predict(model: SvgpModel, X):
    mean, var = svgp_marginals(model.kernel, model.inducing, X, whiten=model.whiten)
    return mean.value[:, None], var.value[:, None] + float(model.noise_variance.value)


def exact_gp_log_evidence(kernel: EqArdKernel, X, y, noise: float) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.ravel(y)
    K = eq_ard_matrix(kernel, X).value + noise * np.eye(len(y))
    L = np.linalg.cholesky(K)
    a = np.linalg.solve(L, y)
    return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * len(y) * LOG_2PI)
