"""Command-line driver: ``fried {train,eval,sweep,cmi,audit,gen-data}``.

Every command reads one JSON experiment config, validates all of it before
doing any work, computes its outputs in memory and only then writes them
into ``--out``. A failing command leaves no files behind.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence. ``FRIED_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .audit import AuditConfig, feature_indirect_influence, indirect_influence_report, linear_model
from .data import Dataset, SchemaConfig, bow_dataset, load_csv, sprites_dataset, synth_bias_dataset
from .errors import ConfigurationError, DataError, FriedError
from .fairness import evaluate_representation, pareto_front, points_to_csv, sweep_tradeoff
from .infotheory import EstimatorConfig, separability_check
from .model import TrainConfig, dumps_model, encode, load_model, train
from .numkit import STREAM_PERMUTE, make_rng
from .presets import DATASETS, PRESETS

log = logging.getLogger("fried")

COMMANDS = ("train", "eval", "sweep", "cmi", "audit", "gen-data")
DATASET_KINDS = ("synth_bias", "sprites", "bow", "csv")
TOP_KEYS = {"dataset", "preset", "train", "estimator", "eval", "sweep", "cmi", "audit", "model", "seed"}


@dataclass
class ExperimentConfig:
    dataset: dict
    train: TrainConfig
    estimator: EstimatorConfig
    seed: int = 0
    model_path: str | None = None
    folds: int = 5
    beta_grid: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0])
    lambda_grid: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0])
    cross_fit: bool = False
    n_permutations: int = 20
    margin: float = 0.02
    control: bool = True
    audit: AuditConfig = field(default_factory=AuditConfig)
    target: dict | None = None
    per_feature: bool = False
    raw: dict = field(default_factory=dict)


def _section(d: dict, key: str, allowed: set) -> dict:
    sec = d.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigurationError(f"config section {key!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {key!r}: {sorted(unknown)}")
    return sec


def _check_dataset(spec: dict, base: Path) -> dict:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigurationError("dataset must be an object with a 'kind'")
    kind = spec["kind"]
    if kind not in DATASET_KINDS:
        raise ConfigurationError(f"unknown dataset kind {kind!r}; choose from {DATASET_KINDS}")
    spec = dict(spec)
    if kind == "csv":
        if "path" not in spec or ("schema" not in spec and "schema_path" not in spec):
            raise ConfigurationError("csv datasets need 'path' and 'schema' or 'schema_path'")
        spec["path"] = str((base / spec["path"]).resolve())
        if "schema_path" in spec:
            spec["schema_path"] = str((base / spec["schema_path"]).resolve())
            schema = SchemaConfig.from_json(spec["schema_path"]) if Path(spec["schema_path"]).exists() else None
            if schema is None:
                raise ConfigurationError(f"schema file not found: {spec['schema_path']}")
        else:
            SchemaConfig.from_dict(spec["schema"])
    else:
        allowed = {"synth_bias": {"n", "bias", "label_noise"},
                   "sprites": {"n", "size", "protected", "bias", "min_scale", "pixel_noise"},
                   "bow": {"n", "vocab", "bias", "doc_length"}}[kind]
        unknown = set(spec) - allowed - {"kind", "seed"}
        if unknown:
            raise ConfigurationError(f"unknown {kind} dataset keys: {sorted(unknown)}")
    return spec


def parse_config(d: dict, seed: int | None, base: Path = Path(".")) -> ExperimentConfig:
    """Validate a raw config dict completely; raises ConfigurationError."""
    if not isinstance(d, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = set(d) - TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    run_seed = int(seed if seed is not None else d.get("seed", 0))
    if not 0 <= run_seed < 2**64:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")

    name = d.get("preset", "adult")
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    overrides = d.get("train", {})
    if not isinstance(overrides, dict):
        raise ConfigurationError("config section 'train' must be an object")
    train_cfg = TrainConfig.from_dict({**PRESETS[name].to_dict(), **overrides, "seed": run_seed})

    estimator = EstimatorConfig.from_dict(d.get("estimator", {}))
    dataset = _check_dataset(d.get("dataset", DATASETS[name]), base)

    ev = _section(d, "eval", {"folds"})
    sw = _section(d, "sweep", {"beta_grid", "lambda_grid", "folds", "cross_fit"})
    cm = _section(d, "cmi", {"n_permutations", "margin", "control"})
    au = _section(d, "audit", {"target", "n_instances", "n_samples", "background_rows", "mode", "per_feature"})
    folds = int(sw.get("folds", ev.get("folds", 5)))
    if folds < 2:
        raise ConfigurationError("folds must be at least 2")
    grids = [list(map(float, sw.get(k, [0.0, 0.25, 0.5, 1.0]))) for k in ("beta_grid", "lambda_grid")]
    if not grids[0] or not grids[1] or any(v < 0 for g in grids for v in g):
        raise ConfigurationError("sweep grids must be non-empty lists of non-negative numbers")
    target = au.get("target")
    if target is not None:
        if not isinstance(target, dict) or target.get("kind") != "linear" or "weights" not in target:
            raise ConfigurationError("audit target must be {'kind': 'linear', 'weights': [...], 'bias': b}")
    audit_cfg = AuditConfig(**{k: au[k] for k in ("n_instances", "n_samples", "background_rows", "mode") if k in au})
    if audit_cfg.mode not in ("auto", "exhaustive", "monte_carlo"):
        raise ConfigurationError(f"unknown audit mode {audit_cfg.mode!r}")
    n_perm = int(cm.get("n_permutations", 20))
    if n_perm < 1:
        raise ConfigurationError("n_permutations must be positive")
    model_path = d.get("model")
    if model_path is not None:
        model_path = str((base / model_path).resolve())
    return ExperimentConfig(dataset, train_cfg, estimator, run_seed, model_path, folds, grids[0], grids[1],
                            bool(sw.get("cross_fit", False)), n_perm, float(cm.get("margin", 0.02)),
                            bool(cm.get("control", True)), audit_cfg, target, bool(au.get("per_feature", False)), d)


def build_dataset(spec: dict, seed: int) -> Dataset:
    kind = spec["kind"]
    args = {k: v for k, v in spec.items() if k not in ("kind", "seed")}
    data_seed = int(spec.get("seed", seed))
    if kind == "synth_bias":
        return synth_bias_dataset(seed=data_seed, **{"n": 5000, **args})
    if kind == "sprites":
        if "protected" in args:
            args["protected"] = tuple(args["protected"])
        return sprites_dataset(seed=data_seed, **{"n": 2000, **args})
    if kind == "bow":
        return bow_dataset(seed=data_seed, **{"n": 2000, **args})
    schema = SchemaConfig.from_json(spec["schema_path"]) if "schema_path" in spec else SchemaConfig.from_dict(
        spec["schema"])
    return load_csv(spec["path"], schema)


# --------------------------------------------------------------------------
# outputs


def _json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n").encode()


def _manifest(cmd: str, cfg: ExperimentConfig, ds: Dataset, extra: dict | None = None) -> bytes:
    return _json({"command": cmd, "version": __version__, "seed": cfg.seed, "dataset_hash": ds.fingerprint(),
                   "config": cfg.raw, "train": cfg.train.to_dict(), "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
                   **(extra or {})})


def write_outputs(out: Path, files: dict[str, bytes]) -> None:
    """Write all files, each via a temporary file and an atomic rename."""
    out.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, out / name)


def _history_csv(history: list[dict]) -> bytes:
    buf = io.StringIO()
    cols = list(history[0]) if history else ["epoch"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for rec in history:
        w.writerow({k: (v if k == "epoch" else repr(float(v))) for k, v in rec.items()})
    return buf.getvalue().encode()


def _load_model_for(cfg: ExperimentConfig, ds: Dataset):
    if cfg.model_path is None:
        raise ConfigurationError("this command needs a trained model: set 'model' in the config or pass --model")
    model = load_model(cfg.model_path)
    if model.n_features != ds.n_features or model.n_protected != ds.n_protected:
        raise DataError(f"model expects {model.n_features}+{model.n_protected} columns, dataset has "
                        f"{ds.n_features}+{ds.n_protected}")
    return model


def cmd_train(cfg: ExperimentConfig, ds: Dataset) -> dict[str, bytes]:
    model, history = train(ds, cfg.train)
    return {"model.json": dumps_model(model).encode(), "history.csv": _history_csv(history),
            "manifest.json": _manifest("train", cfg, ds, {"epochs": len(history)})}


def cmd_eval(cfg: ExperimentConfig, ds: Dataset) -> dict[str, bytes]:
    model = _load_model_for(cfg, ds)
    pt = evaluate_representation(model, ds, cfg.folds, cfg.seed)
    return {"eval.json": _json({**pt.row(), "folds": pt.folds}),
            "manifest.json": _manifest("eval", cfg, ds, {"model": cfg.model_path})}


def cmd_sweep(cfg: ExperimentConfig, ds: Dataset) -> dict[str, bytes]:
    points = sweep_tradeoff(ds, cfg.beta_grid, cfg.lambda_grid, cfg.train, cfg.folds, cfg.seed,
                            cross_fit=cfg.cross_fit)
    failures = [{"beta": p.beta, "lambda": p.lam, "error": p.error} for p in points if p.failed]
    return {"sweep_all.csv": points_to_csv(points).encode(),
            "sweep_front.csv": points_to_csv(pareto_front(points)).encode(),
            "manifest.json": _manifest("sweep", cfg, ds, {"beta_grid": cfg.beta_grid, "lambda_grid": cfg.lambda_grid,
                                                          "failures": failures})}


def cmd_cmi(cfg: ExperimentConfig, ds: Dataset) -> dict[str, bytes]:
    model = _load_model_for(cfg, ds)
    xprime = encode(model, ds.x, ds.p)
    res = separability_check(ds.x, xprime, ds.y, ds.p[:, :1], cfg.estimator, cfg.seed, cfg.n_permutations,
                             cfg.margin)
    report = {"model": res.to_dict()}
    if cfg.control:
        shuffled = xprime[make_rng(cfg.seed, STREAM_PERMUTE, 99).permutation(ds.n)]
        ctl = separability_check(ds.x, shuffled, ds.y, ds.p[:, :1], cfg.estimator, cfg.seed, cfg.n_permutations,
                                 cfg.margin)
        report["shuffled_latent_control"] = ctl.to_dict()
    report["estimator"] = cfg.estimator.to_dict()
    return {"separability.json": _json(report), "manifest.json": _manifest("cmi", cfg, ds, {"model": cfg.model_path})}


def _target(cfg: ExperimentConfig, ds: Dataset):
    names = list(ds.feature_names) + list(ds.protected_names)
    spec = cfg.target or {"kind": "linear", "weights": [1.0] * ds.n_features + [0.0] * ds.n_protected}
    w = list(map(float, spec["weights"]))
    if len(w) == ds.n_features:
        names = list(ds.feature_names)
    elif len(w) != len(names):
        raise ConfigurationError(f"target has {len(w)} weights; expected {ds.n_features} or {len(names)}")
    return linear_model(w, names, float(spec.get("bias", 0.0)))


def cmd_audit(cfg: ExperimentConfig, ds: Dataset) -> dict[str, bytes]:
    target = _target(cfg, ds)
    if cfg.per_feature:
        res = feature_indirect_influence(target, ds, cfg.train, cfg.audit, cfg.seed)
        direct, indirect = res.direct, res.indirect
    else:
        model = _load_model_for(cfg, ds)
        direct, indirect = indirect_influence_report(model, target, ds, cfg.audit, cfg.seed)
    return {"audit_direct.csv": direct.to_csv().encode(), "audit_indirect.csv": indirect.to_csv().encode(),
            "manifest.json": _manifest("audit", cfg, ds, {"mode": direct.mode, "n_samples": direct.n_samples,
                                                          "per_feature": cfg.per_feature, "model": cfg.model_path})}


def cmd_gen_data(cfg: ExperimentConfig, ds: Dataset) -> dict[str, bytes]:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "data.csv"
        ds.to_csv(path)
        data = path.read_bytes()
    schema = {"label": "label", "label_positive": ["1"], "protected": list(ds.protected_names),
              "protected_positive": {p: ["1"] for p in ds.protected_names}}
    meta = {k: v for k, v in ds.meta.items() if isinstance(v, (int, float, str))}
    return {"data.csv": data, "schema.json": _json(schema), "manifest.json": _manifest("gen-data", cfg, ds, meta)}


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "cmi": cmd_cmi, "audit": cmd_audit,
            "gen-data": cmd_gen_data}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fried", description="Fair representation learning experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="experiment config JSON (defaults: adult preset, synthetic data)")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="run seed; overrides the config's seed")
        if name in ("eval", "cmi", "audit"):
            sp.add_argument("--model", type=Path, help="trained model file; overrides the config's 'model'")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("FRIED_THREADS")
    try:
        if args.config is not None:
            try:
                raw = json.loads(args.config.read_text())
            except OSError as e:
                raise ConfigurationError(f"cannot read config: {e}") from None
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"config is not valid JSON: {e}") from None
            base = args.config.resolve().parent
        else:
            raw, base = {}, Path.cwd()
        if getattr(args, "model", None) is not None:
            raw = {**raw, "model": str(args.model.resolve())}
        cfg = parse_config(raw, args.seed, base)
        if threads is not None:
            try:
                n_threads = int(threads)
            except ValueError:
                raise ConfigurationError("FRIED_THREADS must be an integer") from None
            from threadpoolctl import threadpool_limits

            threadpool_limits(n_threads)
        ds = build_dataset(cfg.dataset, cfg.seed)
        files = HANDLERS[args.command](cfg, ds)
        write_outputs(args.out, files)
    except FriedError as e:
        print(f"fried {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    for name in files:
        print(args.out / name)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
