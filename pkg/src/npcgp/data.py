"""Dataset ingestion, standardisation, splitting, k-means and toy data."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, ParameterError
from .kernels import EqArdKernel, PeriodicEqKernel, eq_ard_matrix


@dataclass
class Stats:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    x_names: list = field(default_factory=list)
    y_names: list = field(default_factory=list)
    stats: Stats | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X.shape[0] != self.Y.shape[0]:
            raise DataError("X and Y have different row counts")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise DataError("dataset contains NaN or infinite values")

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def D(self) -> int:
        return self.Y.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], Y=self.Y[idx])


def load_csv(path, output_columns) -> Dataset:
    """Read a headed numeric CSV.

    ``output_columns`` is either a list of column names or an integer ``k``
    meaning the last ``k`` columns.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise ConfigError(f"data file not found: {path}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    if isinstance(output_columns, (int, np.integer)):
        k = int(output_columns)
        if not 0 < k < len(header):
            raise ConfigError(f"cannot take {k} output columns from {len(header)}")
        y_names = header[-k:]
    else:
        y_names = [str(c) for c in output_columns]
        missing = [c for c in y_names if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing output columns {missing}")
    values = np.empty((len(body), len(header)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
        for j, c in enumerate(r):
            try:
                values[i, j] = float(c)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {c!r} at row {i + 2}, column {j + 1}") from None
    y_idx = [header.index(c) for c in y_names]
    x_idx = [j for j in range(len(header)) if j not in y_idx]
    if not x_idx:
        raise ConfigError("no input columns left after selecting outputs")
    return Dataset(values[:, x_idx], values[:, y_idx], [header[j] for j in x_idx], y_names)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def standardize(ds: Dataset, stats: Stats | None = None) -> Dataset:
    """Zero-mean unit-std columns; pass ``stats`` to reuse training statistics."""
    if stats is None:
        xs, ys = ds.X.std(0), ds.Y.std(0)
        if np.any(xs == 0) or np.any(ys == 0):
            raise DataError("constant column cannot be standardised")
        stats = Stats(ds.X.mean(0), xs, ds.Y.mean(0), ys)
    X = (ds.X - stats.x_mean) / stats.x_std
    Y = (ds.Y - stats.y_mean) / stats.y_std
    return replace(ds, X=X, Y=Y, stats=stats)


def destandardize_predictions(stats: Stats, mean, var=None):
    mean = np.asarray(mean) * stats.y_std + stats.y_mean
    if var is None:
        return mean
    return mean, np.asarray(var) * stats.y_std**2


def destandardize_inputs(stats: Stats, X):
    return np.asarray(X) * stats.x_std + stats.x_mean


def split(ds: Dataset, train_fraction: float, seed: int):
    """Shuffled train/test split, deterministic in ``seed``."""
    if not 0 < train_fraction < 1:
        raise ParameterError("train fraction must lie strictly between 0 and 1")
    n_train = int(round(train_fraction * ds.N))
    if n_train == 0 or n_train == ds.N:
        raise ParameterError(f"fraction {train_fraction} leaves one side of the split empty")
    perm = np.random.default_rng(seed).permutation(ds.N)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def kmeans(X, K: int, seed: int = 0, max_iter: int = 100, return_history: bool = False):
    """Lloyd's algorithm from a k-means++ start.

    scipy's ``kmeans2`` does not expose the per-iteration objective or the
    K = N edge case cleanly, so the loop is written out here.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    if K < 1 or K > N:
        raise ParameterError(f"need 1 <= K <= N, got K={K}, N={N}")
    rng = np.random.default_rng(seed)
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(N)]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for k in range(1, K):
        tot = d2.sum()
        i = rng.choice(N, p=d2 / tot) if tot > 0 else rng.integers(N)
        centers[k] = X[i]
        d2 = np.minimum(d2, ((X - centers[k]) ** 2).sum(1))
    history = []
    for _ in range(max_iter):
        dist = ((X[:, None, :] - centers[None]) ** 2).sum(-1)
        assign = dist.argmin(1)
        history.append(float(dist[np.arange(N), assign].sum()))
        new = centers.copy()
        for k in range(K):
            members = X[assign == k]
            if len(members):
                new[k] = members.mean(0)
        if np.allclose(new, centers, rtol=0, atol=1e-12):
            break
        centers = new
    dist = ((X[:, None, :] - centers[None]) ** 2).sum(-1)
    history.append(float(dist.min(1).sum()))
    return (centers, history) if return_history else centers


# ------------------------------------------------------------------ toy data

TOY_LENGTHSCALE = 1.5
TOY_PERIODS = (1.8, 2.1)
TOY_MIX = np.array([[0.9, 0.1], [0.5, 0.5]])
TOY_NOISE = 0.01


def toy_kernels():
    eq = EqArdKernel(1.0, [TOY_LENGTHSCALE] * 2)
    per = PeriodicEqKernel(1.0, [TOY_LENGTHSCALE] * 2, list(TOY_PERIODS))
    return eq, per


def toy_output_covariance(lags: np.ndarray) -> np.ndarray:
    """Ground-truth covariance ``[n_lags, 2]`` of the two toy outputs at lag vectors."""
    lags = np.atleast_2d(lags)
    eq, per = toy_kernels()
    origin = np.zeros((1, 2))
    k_eq = eq_ard_matrix(eq, lags, origin).value[:, 0]
    k_p = per.matrix(lags, origin)[:, 0]
    return np.column_stack([a * a * k_eq + b * b * k_p for a, b in TOY_MIX])


def toy_latents(X, rng: np.random.Generator, jitter: float = 1e-6) -> np.ndarray:
    """Exact joint draw of ``[u_EQ, u_P]`` at ``X``, shape ``[N, 2]``."""
    X = np.atleast_2d(X)
    eq, per = toy_kernels()
    cols = []
    for K in (eq_ard_matrix(eq, X).value, per.matrix(X)):
        L = np.linalg.cholesky(K + jitter * np.eye(len(X)))
        cols.append(L @ rng.standard_normal(len(X)))
    return np.column_stack(cols)


def toy_generate(N: int, seed: int, noise_seed: int | None = None, jitter: float = 1e-6) -> Dataset:
    """Two outputs mixing an EQ draw and a weakly periodic draw on 2-D inputs."""
    if N > 4000:
        raise ParameterError("exact toy sampling is cubic; keep N <= 4000")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, 2))
    F = toy_latents(X, rng, jitter) @ TOY_MIX.T
    nrng = rng if noise_seed is None else np.random.default_rng(noise_seed)
    Y = F + TOY_NOISE * nrng.standard_normal(F.shape)
    return Dataset(X, Y, ["x1", "x2"], ["y1", "y2"])
