"""Command-line interface: ``train``, ``eval``, ``covariance``, ``toygen``, ``selfcheck``."""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import data as D
from . import model as M
from .convolution import estimate_output_covariance
from .errors import ConfigError, DataError, NpcgpError, NumericError, StructuralError

FORMAT_VERSION = 1
MODEL_KINDS = ("npcgp", "fnpcgp", "npdgp", "svgp")
SELFCHECK_FAILED = 7


# ------------------------------------------------------------------ configuration


@dataclass
class RunConfig:
    data: str = ""
    outputs: str = "1"
    model: str = "npcgp"
    layers: int = 1
    latents: int = 1
    inducing_u: int = 100
    inducing_g: int = 15
    bases: int = 16
    fixed_bases: int = 0
    samples: int = 2
    batch_size: int = 1000
    iterations: int = 40000
    lr: float = 0.001
    seed: int = 0
    noise_init: float = 0.01
    inducing_init: str = "kmeans"
    train_fraction: float = 0.9
    checkpoint_every: int = 1000
    eval_samples: int = 100
    output_dir: str = "run"

    def validate(self):
        if not self.data:
            raise ConfigError("config key 'data' is required")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        for name in ("layers", "latents", "inducing_u", "inducing_g", "bases", "samples", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.iterations < 0 or self.checkpoint_every < 1 or self.eval_samples < 2:
            raise ConfigError("iterations >= 0, checkpoint_every >= 1 and eval_samples >= 2 are required")
        if self.lr <= 0 or self.noise_init <= 0:
            raise ConfigError("lr and noise_init must be positive")
        if self.layers > 1 and self.model != "npdgp":
            raise ConfigError("layers > 1 is only valid for model = npdgp")
        if self.fixed_bases not in (0, 1):
            raise ConfigError("fixed_bases must be 0 or 1")
        if self.inducing_init not in ("kmeans", "random"):
            raise ConfigError("inducing_init must be 'kmeans' or 'random'")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        return self

    def output_spec(self):
        s = self.outputs.strip()
        if s.isdigit():
            return int(s)
        return [c.strip() for c in s.split(",") if c.strip()]


def parse_config(text: str) -> RunConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    types = {f.name: f.type for f in fields(RunConfig)}
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in kw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        conv = {"int": int, "float": float, "str": str}[types[key]]
        try:
            kw[key] = conv(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: cannot read {value!r} as {types[key]} for {key!r}") from None
    return RunConfig(**kw).validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    cfg = parse_config(text)
    # relative paths are taken relative to the config file
    base = Path(path).resolve().parent
    for key in ("data", "output_dir"):
        value = getattr(cfg, key)
        if not os.path.isabs(value):
            setattr(cfg, key, str(base / value))
    return cfg


def seed_streams(seed: int) -> dict:
    """Independent generators for split, initialisation, training and evaluation."""
    names = ("split", "init", "train", "eval")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


# ------------------------------------------------------------------ files


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_csv(path, header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) for v in r) + "\n")
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def save_model(path, mdl, stats: D.Stats, cfg: RunConfig, y_names, x_names):
    """Versioned ``.npz``: parameter arrays plus a JSON ``__meta__`` entry."""
    if isinstance(mdl, M.SvgpModel):
        arrays = {k: np.asarray(v.value) for k, v in mdl.params.items()}
        struct = {"whiten": mdl.whiten}
    else:
        arrays, struct = M.model_to_dict(mdl)
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": cfg.model,
        "structure": struct,
        "config": dataclasses.asdict(cfg),
        "x_names": list(x_names),
        "y_names": list(y_names),
    }
    for k in ("x_mean", "x_std", "y_mean", "y_std"):
        arrays["__stats__." + k] = getattr(stats, k)
    arrays["__meta__"] = np.array(json.dumps(meta))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_model(path):
    """Returns ``(model, stats, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {path}") from None
    if "__meta__" not in arrays:
        raise StructuralError(f"{path} is not a model file")
    meta = json.loads(str(arrays.pop("__meta__")))
    if meta.get("format_version") != FORMAT_VERSION:
        raise StructuralError(f"unsupported model format version {meta.get('format_version')}")
    stats = D.Stats(*(arrays.pop("__stats__." + k) for k in ("x_mean", "x_std", "y_mean", "y_std")))
    if meta["kind"] == "svgp":
        from . import grad as G

        mdl = M.SvgpModel({k: G.param(np.array(v, dtype=float)) for k, v in arrays.items()}, meta["structure"]["whiten"])
    else:
        mdl = M.model_from_dict(arrays, meta["structure"])
    return mdl, stats, meta


# ------------------------------------------------------------------ commands


def build_from_config(cfg: RunConfig, train: D.Dataset, rng):
    M_u = min(cfg.inducing_u, train.N)
    if cfg.inducing_init == "kmeans":
        Z = D.kmeans(train.X, M_u, seed=int(rng.integers(2**31)))
    else:
        Z = train.X[rng.choice(train.N, M_u, replace=False)]
    if cfg.model == "svgp":
        if train.D != 1:
            raise StructuralError("the svgp baseline is single-output")
        return M.SvgpModel.init(Z, noise_variance=cfg.noise_init)
    variant = "fast" if cfg.model in ("fnpcgp", "npdgp") else "full"
    return M.build_model(
        train.P,
        train.D,
        Z,
        num_latent=cfg.latents,
        num_layers=cfg.layers if cfg.model == "npdgp" else 1,
        variant=variant,
        noise_variance=cfg.noise_init,
        num_inducing_g=cfg.inducing_g,
        num_bases=cfg.bases,
    )


def predict_any(mdl, X, S, rng):
    if isinstance(mdl, M.SvgpModel):
        return M.svgp_predict(mdl, X)
    mean, var, _ = M.predict(mdl, X, S, rng)
    return mean, var


def regression_metrics(y, mean, var):
    """Per-output RMSE and mean negative log predictive density."""
    y, mean, var = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (y, mean, var))
    rmse = np.sqrt(np.mean((y - mean) ** 2, axis=0))
    mnll = np.mean(0.5 * np.log(2 * np.pi * var) + 0.5 * (y - mean) ** 2 / var, axis=0)
    return rmse, mnll


def cmd_train(cfg: RunConfig, log=print):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = seed_streams(cfg.seed)
    raw = D.load_csv(cfg.data, cfg.output_spec())
    log(f"loaded {raw.N} rows: {raw.P} inputs, {raw.D} outputs")
    train_raw, test_raw = D.split(raw, cfg.train_fraction, int(streams["split"].integers(2**31)))
    train = D.standardize(train_raw)
    test = D.standardize(test_raw, train.stats)
    mdl = build_from_config(cfg, train, streams["init"])
    model_path = out / "model.npz"
    save_model(model_path, mdl, train.stats, cfg, raw.y_names, raw.x_names)
    trace = []
    t0 = time.perf_counter()

    def callback(it, value):
        trace.append((it, value, time.perf_counter() - t0))
        if it % cfg.checkpoint_every == 0 or it == cfg.iterations:
            save_model(model_path, mdl, train.stats, cfg, raw.y_names, raw.x_names)
            atomic_write_csv(out / "metrics.csv", ["iteration", "elbo", "wall_seconds"], trace)
            log(f"iteration {it}: elbo {value:.4f}")

    try:
        if cfg.model == "svgp":
            M.svgp_fit(mdl, train.X, train.Y, cfg.iterations, cfg.batch_size, cfg.lr, streams["train"], callback)
        else:
            M.fit(
                mdl,
                train.X,
                train.Y,
                cfg.iterations,
                cfg.batch_size,
                cfg.samples,
                cfg.lr,
                streams["train"],
                callback,
                fixed_bases=bool(cfg.fixed_bases),
            )
    except NumericError as e:
        atomic_write_csv(out / "metrics.csv", ["iteration", "elbo", "wall_seconds"], trace)
        last = trace[-1][0] if trace else 0
        raise NumericError(f"training aborted after iteration {last}: {e}; last checkpoint kept in {model_path}") from None
    atomic_write_csv(out / "metrics.csv", ["iteration", "elbo", "wall_seconds"], trace)
    save_model(model_path, mdl, train.stats, cfg, raw.y_names, raw.x_names)
    rmse, mnll = evaluate(mdl, train.stats, test_raw, cfg.eval_samples, streams["eval"])
    # outputs are written by index so the file stays numeric and reloadable
    atomic_write_csv(out / "summary.csv", ["output", "rmse", "mnll"], list(zip(range(raw.D), rmse, mnll)))
    for name, r, n in zip(raw.y_names, rmse, mnll):
        log(f"test {name}: rmse {r:.4f} mnll {n:.4f}")
    return mdl, rmse, mnll


def evaluate(mdl, stats: D.Stats, ds_raw: D.Dataset, S: int, rng):
    """RMSE and MNLL on the original output scale."""
    n_in = mdl.params["Z"].shape[1] if isinstance(mdl, M.SvgpModel) else mdl.input_dim
    if ds_raw.P != n_in:
        raise StructuralError(f"data has {ds_raw.P} inputs, model expects {n_in}")
    Xs = (ds_raw.X - stats.x_mean) / stats.x_std
    mean, var = predict_any(mdl, Xs, S, rng)
    if mean.shape[1] != ds_raw.D:
        raise StructuralError(f"data has {ds_raw.D} outputs, model predicts {mean.shape[1]}")
    mean, var = D.destandardize_predictions(stats, mean, var)
    return regression_metrics(ds_raw.Y, mean, var)


def cmd_eval(model_path, data_path, S=100, seed=0, out=None, log=print):
    mdl, stats, meta = load_model(model_path)
    ds = D.load_csv(data_path, meta["y_names"])
    rmse, mnll = evaluate(mdl, stats, ds, S, seed_streams(seed)["eval"])
    if out:
        atomic_write_csv(out, ["output", "rmse", "mnll"], list(zip(range(len(rmse)), rmse, mnll)))
    for n, r, m in zip(meta["y_names"], rmse, mnll):
        log(f"{n}: rmse {r:.4f} mnll {m:.4f}")
    return rmse, mnll


def covariance_curves(mdl, stats: D.Stats, lag_range: float, grid: int, S: int, rng):
    """Rows ``(input_dim, lag, output, mean, lower, upper)`` in original units."""
    if isinstance(mdl, M.SvgpModel) or len(mdl.layers) != 1:
        raise StructuralError("covariance curves are defined for single-layer convolution models")
    layer = mdl.layers[0]
    lags = np.linspace(-lag_range, lag_range, grid)
    rows = []
    for p in range(layer.input_dim):
        L = np.zeros((grid, layer.input_dim))
        L[:, p] = lags / stats.x_std[p]
        mean, sd, _ = estimate_output_covariance(layer, L, S, rng)
        scale = stats.y_std**2
        for i, lag in enumerate(lags):
            for d in range(layer.output_dim):
                m, s = mean[i, d] * scale[d], sd[i, d] * scale[d]
                rows.append((p, lag, d, m, m - 2 * s, m + 2 * s))
    return rows


def cmd_covariance(model_path, lag_range, grid, S=50, seed=0, out=None, log=print):
    mdl, stats, _ = load_model(model_path)
    rows = covariance_curves(mdl, stats, lag_range, grid, S, seed_streams(seed)["eval"])
    header = ["input_dim", "lag", "output", "mean", "lower", "upper"]
    if out:
        atomic_write_csv(out, header, rows)
    else:
        log(",".join(header))
        for r in rows:
            log(",".join(_fmt(v) for v in r))
    return rows


def cmd_toygen(n, seed, out, log=print):
    ds = D.toy_generate(n, seed)
    atomic_write_csv(out, ds.x_names + ds.y_names, np.column_stack([ds.X, ds.Y]))
    log(f"wrote {n} rows to {out}")


def cmd_selfcheck(log=print, overrides=None) -> bool:
    from .selfcheck import run_selfcheck

    report = run_selfcheck(overrides=overrides)
    for line in report.lines():
        log(line)
    return report.passed


# ------------------------------------------------------------------ entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="npcgp", description="Nonparametric convolved Gaussian processes")
    sub = ap.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    e = sub.add_parser("eval", help="RMSE and MNLL of a trained model on a CSV file")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--samples", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    c = sub.add_parser("covariance", help="learned output covariance along each input dimension")
    c.add_argument("--model", required=True)
    c.add_argument("--range", type=float, required=True, dest="lag_range")
    c.add_argument("--grid", type=int, required=True)
    c.add_argument("--samples", type=int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    g = sub.add_parser("toygen", help="write the two-output toy dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    sub.add_parser("selfcheck", help="run the numerical verification suites")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cmd_train(load_config(args.config))
        elif args.command == "eval":
            cmd_eval(args.model, args.data, args.samples, args.seed, args.out)
        elif args.command == "covariance":
            if args.grid < 2 or args.lag_range <= 0:
                raise ConfigError("--grid must be at least 2 and --range positive")
            cmd_covariance(args.model, args.lag_range, args.grid, args.samples, args.seed, args.out)
        elif args.command == "toygen":
            cmd_toygen(args.n, args.seed, args.out)
        elif args.command == "selfcheck":
            return 0 if cmd_selfcheck() else SELFCHECK_FAILED
    except NpcgpError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
