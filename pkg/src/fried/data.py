"""Datasets: CSV ingestion with one-hot/standardize preprocessing, stratified
splits, and synthetic generators with known ground-truth bias."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm
from sklearn.model_selection import StratifiedKFold, train_test_split

from .errors import ConfigurationError, DataError
from .numkit import STREAM_DATA, STREAM_SPLIT, derive_seed, make_rng

log = logging.getLogger(__name__)

MISSING = {"", "?", "na", "nan", "null", "none"}


@dataclass
class Dataset:
    x: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) int 0/1
    p: np.ndarray  # (n, k) float64 0/1
    feature_names: list[str]
    protected_names: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y).astype(np.int64).reshape(-1)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim == 1:
            self.p = self.p.reshape(-1, 1)
        n = self.x.shape[0]
        if self.y.shape[0] != n or self.p.shape[0] != n:
            raise DataError(f"row counts disagree: x={n}, y={self.y.shape[0]}, p={self.p.shape[0]}")
        if len(self.feature_names) != self.x.shape[1]:
            raise DataError("feature_names length does not match x columns")
        if len(self.protected_names) != self.p.shape[1]:
            raise DataError("protected_names length does not match p columns")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def n_protected(self) -> int:
        return self.p.shape[1]

    def group(self) -> np.ndarray:
        """Single binary group id: 1 when any protected column is set."""
        return (self.p.max(axis=1) > 0.5).astype(np.int64)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.p[idx], list(self.feature_names),
                       list(self.protected_names), dict(self.meta))

    def destandardize(self, x: np.ndarray) -> np.ndarray:
        """Undo column standardization on a matrix shaped like ``self.x``."""
        mean = np.asarray(self.meta.get("mean", np.zeros(self.n_features)), dtype=np.float64)
        std = np.asarray(self.meta.get("std", np.ones(self.n_features)), dtype=np.float64)
        scale = np.where(std > 0, std, 1.0)
        return x * scale + mean

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.x, self.y.astype(np.float64), self.p):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update("|".join(self.feature_names + self.protected_names).encode())
        return h.hexdigest()[:16]

    def to_csv(self, path) -> None:
        """Write features, protected columns and label (``label`` last)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.feature_names + self.protected_names + ["label"])
            for i in range(self.n):
                w.writerow([repr(float(v)) for v in self.x[i]] + [int(v) for v in self.p[i]] + [int(self.y[i])])


def standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    centered = x - mean
    safe = np.where(std > 0, std, 1.0)
    return centered / safe, mean, std


# --------------------------------------------------------------------------
# CSV loading


@dataclass
class SchemaConfig:
    label: str
    label_positive: list[str]
    protected: list[str]
    protected_positive: dict[str, list[str]]
    categorical: list[str] = field(default_factory=list)
    drop: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaConfig":
        try:
            label = d["label"]
            protected = d["protected"]
        except KeyError as e:
            raise ConfigurationError(f"schema missing required key {e.args[0]!r}") from None
        if isinstance(protected, str):
            protected = [protected]
        lp = d.get("label_positive", ["1"])
        if not isinstance(lp, list):
            lp = [lp]
        pp = d.get("protected_positive", {})
        if not isinstance(pp, dict):
            pp = {name: pp for name in protected}
        pp = {k: (v if isinstance(v, list) else [v]) for k, v in pp.items()}
        for name in protected:
            pp.setdefault(name, ["1"])
        return cls(
            label=label,
            label_positive=[str(v).strip() for v in lp],
            protected=list(protected),
            protected_positive={k: [str(v).strip() for v in vs] for k, vs in pp.items()},
            categorical=list(d.get("categorical", [])),
            drop=list(d.get("drop", [])),
        )

    @classmethod
    def from_json(cls, path) -> "SchemaConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def load_csv(path, schema: SchemaConfig) -> Dataset:
    """Read a headed CSV into a preprocessed Dataset.

    Categorical columns are one-hot encoded (levels sorted), remaining
    feature columns parsed as floats and standardized; label and protected
    columns are binarized against the schema's positive values. Rows with a
    missing value in any used column are dropped and counted in
    ``meta["n_dropped"]``.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise DataError(f"cannot open {path}: {e}") from None
    with fh:
        reader = csv.reader(fh, skipinitialspace=True)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    col = {name: j for j, name in enumerate(header)}
    for name in [schema.label, *schema.protected, *schema.categorical, *schema.drop]:
        if name not in col:
            raise ConfigurationError(f"{path}: column {name!r} named in schema is not in the header")

    special = {schema.label, *schema.protected, *schema.drop}
    feature_cols = [h for h in header if h not in special]
    categorical = [h for h in feature_cols if h in set(schema.categorical)]
    used = [col[h] for h in header if h not in set(schema.drop)]

    kept, n_dropped = [], 0
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
        if any(r[j].strip().lower() in MISSING for j in used):
            n_dropped += 1
            continue
        kept.append((i + 2, [c.strip() for c in r]))
    if not kept:
        raise DataError(f"{path}: no complete rows")

    y = np.array([r[col[schema.label]] in schema.label_positive for _, r in kept], dtype=np.int64)
    p = np.array(
        [[float(r[col[name]] in schema.protected_positive[name]) for name in schema.protected] for _, r in kept]
    )

    levels = {h: sorted({r[col[h]] for _, r in kept}) for h in categorical}
    names: list[str] = []
    blocks: list[np.ndarray] = []
    numeric_mask: list[bool] = []
    for h in feature_cols:
        j = col[h]
        if h in levels:
            lv = levels[h]
            index = {v: k for k, v in enumerate(lv)}
            block = np.zeros((len(kept), len(lv)))
            for k, (_, r) in enumerate(kept):
                block[k, index[r[j]]] = 1.0
            blocks.append(block)
            names += [f"{h}={v}" for v in lv]
            numeric_mask += [False] * len(lv)
        else:
            vals = np.empty(len(kept))
            for k, (line, r) in enumerate(kept):
                try:
                    vals[k] = float(r[j])
                except ValueError:
                    raise DataError(
                        f"{path}: line {line}, column {h!r} (#{j + 1}): cannot parse {r[j]!r} as a number"
                    ) from None
            if not np.all(np.isfinite(vals)):
                raise DataError(f"{path}: column {h!r} has non-finite values")
            blocks.append(vals.reshape(-1, 1))
            names.append(h)
            numeric_mask.append(True)

    x = np.hstack(blocks) if blocks else np.zeros((len(kept), 0))
    numeric = np.array(numeric_mask, dtype=bool)
    mean = np.zeros(x.shape[1])
    std = np.ones(x.shape[1])
    if numeric.any():
        xs, m, s = standardize(x[:, numeric])
        x[:, numeric] = xs
        mean[numeric], std[numeric] = m, s
    meta = {
        "source": str(path),
        "n_dropped": n_dropped,
        "mean": mean.tolist(),
        "std": std.tolist(),
        "numeric": numeric.tolist(),
        "one_hot": levels,
    }
    return Dataset(x, y, p, names, list(schema.protected), meta)


# --------------------------------------------------------------------------
# splits


def _strata(ds: Dataset) -> np.ndarray:
    codes = ds.y.astype(np.int64)
    for j in range(ds.n_protected):
        codes = codes * 2 + (ds.p[:, j] > 0.5)
    return codes


def _stratify_labels(ds: Dataset, min_count: int) -> np.ndarray:
    joint = _strata(ds)
    _, counts = np.unique(joint, return_counts=True)
    if counts.min() >= min_count:
        return joint
    log.warning("a (label, protected) stratum has fewer than %d rows; stratifying on label only", min_count)
    return ds.y.copy()


def split(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test index split on (Y, p)."""
    if not 0 < ratio < 1:
        raise ConfigurationError(f"ratio must lie in (0, 1), got {ratio}")
    labels = _stratify_labels(dataset, 2)
    idx = np.arange(dataset.n)
    try:
        tr, te = train_test_split(idx, train_size=ratio, stratify=labels,
                                  random_state=derive_seed(seed, STREAM_SPLIT) % 2**32)
    except ValueError:
        log.warning("stratified split failed; using an unstratified split")
        tr, te = train_test_split(idx, train_size=ratio, random_state=derive_seed(seed, STREAM_SPLIT) % 2**32)
    return np.sort(tr), np.sort(te)


def kfold(dataset: Dataset, folds: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold partitions as (train_idx, test_idx) pairs."""
    if folds < 2:
        raise ConfigurationError("folds must be at least 2")
    labels = _stratify_labels(dataset, folds)
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=derive_seed(seed, STREAM_SPLIT) % 2**32)
    return [(np.sort(tr), np.sort(te)) for tr, te in skf.split(np.zeros(dataset.n), labels)]


# --------------------------------------------------------------------------
# synthetic generators

# synth_bias construction constants
CLASS_SEP = 0.75  # per-coordinate mean offset of the informative Gaussians
SCORE_NOISE = 2.0  # std of the unobserved part of the label score
P_WEIGHT = 0.5  # weight of the protected term at bias=1 relative to the score
PROXY_NOISE = 0.1


def _synth_rates(bias: float, label_noise: float) -> dict:
    """Closed-form group rates for synth_bias_dataset."""
    shift = CLASS_SEP * math.sqrt(2.0)
    out = {}
    for g in (0, 1):
        sign = 2 * g - 1
        if bias >= 1.0:
            q, bayes = float(g), float(g)
        else:
            b = bias * P_WEIGHT / (1.0 - bias) * sign
            scale = math.sqrt(1.0 + SCORE_NOISE**2)
            q = 0.5 * (norm.cdf((shift + b) / scale) + norm.cdf((-shift + b) / scale))
            bayes = 0.5 * (norm.cdf(shift + b) + norm.cdf(-shift + b))
        out[f"p_y1_given_p{g}"] = float(q * (1 - label_noise) + (1 - q) * label_noise)
        out[f"bayes_rate_p{g}"] = float(bayes)
    out["label_gap"] = abs(out["p_y1_given_p1"] - out["p_y1_given_p0"])
    out["bayes_delta_dp"] = abs(out["bayes_rate_p1"] - out["bayes_rate_p0"])
    return out


def synth_bias_dataset(n: int, bias: float = 0.5, label_noise: float = 0.0, seed: int = 0) -> Dataset:
    """Tabular data with a controllable dependence of the label on p.

    p ~ Bernoulli(0.5). A latent class U ~ Bernoulli(0.5), independent of p,
    draws two informative features from N(+-CLASS_SEP, I). The label is
    ``1[(1-bias)(s + e) + bias*P_WEIGHT*(2p-1) > 0]`` where ``s`` is the
    normalized sum of the informative features and ``e ~ N(0, SCORE_NOISE^2)``,
    then flipped with probability ``label_noise``. A proxy column equals
    ``p + N(0, PROXY_NOISE^2)``. At bias=1 and no noise, Y = p.
    """
    if n < 10:
        raise ConfigurationError("n must be at least 10")
    if not 0 <= bias <= 1 or not 0 <= label_noise < 0.5:
        raise ConfigurationError("bias must be in [0,1] and label_noise in [0, 0.5)")
    rng = make_rng(seed, STREAM_DATA)
    p = rng.integers(0, 2, size=n)
    u = rng.integers(0, 2, size=n)
    informative = (2 * u - 1)[:, None] * CLASS_SEP + rng.standard_normal((n, 2))
    score = informative.sum(axis=1) / math.sqrt(2.0)
    e = rng.standard_normal(n) * SCORE_NOISE
    proxy = p + rng.standard_normal(n) * PROXY_NOISE
    t = (1 - bias) * (score + e) + bias * P_WEIGHT * (2 * p - 1)
    y = (t > 0).astype(np.int64)
    flip = rng.random(n) < label_noise
    y = np.where(flip, 1 - y, y)

    raw = np.column_stack([informative, proxy])
    x, mean, std = standardize(raw)
    meta = {
        "generator": "synth_bias",
        "n": n,
        "bias": bias,
        "label_noise": label_noise,
        "seed": seed,
        "mean": mean.tolist(),
        "std": std.tolist(),
        "numeric": [True] * 3,
        "proxy_feature": "proxy",
        "score_weights": [1 / math.sqrt(2.0), 1 / math.sqrt(2.0), 0.0],
        **_synth_rates(bias, label_noise),
    }
    return Dataset(x, y, p.reshape(-1, 1).astype(np.float64),
                   ["informative_1", "informative_2", "proxy"], ["p"], meta)


def _render_sprite(shape: int, scale: float, px: float, py: float, size: int) -> np.ndarray:
    c = (np.arange(size) + 0.5) / size
    gx, gy = np.meshgrid(c, c)
    r = 0.25 * scale
    cx = r + px * (1 - 2 * r)
    cy = r + py * (1 - 2 * r)
    if shape == 0:
        img = (np.abs(gx - cx) <= r) & (np.abs(gy - cy) <= r)
    else:
        img = (gx - cx) ** 2 + (gy - cy) ** 2 <= r**2
    return img.astype(np.float64).ravel()


def sprites_dataset(
    n: int,
    size: int = 16,
    protected: tuple[str, ...] = ("shape", "scale"),
    bias: float = 0.0,
    min_scale: float = 0.5,
    pixel_noise: float = 0.05,
    seed: int = 0,
) -> Dataset:
    """Flattened low-resolution sprite images (squares and discs).

    Factors: shape in {square, disc}, scale in [min_scale, 1], x/y position.
    The label is whether the sprite sits in the lower half of the image.
    Protected attributes are binary ``shape`` (disc) and/or ``scale``
    (scale above the midpoint of its range). ``bias`` moves the position of
    protected-group sprites downward, coupling label and protection.
    """
    if n < 10:
        raise ConfigurationError("n must be at least 10")
    if not 0 <= min_scale < 1:
        raise ConfigurationError("min_scale must lie in [0, 1)")
    rng = make_rng(seed, STREAM_DATA)
    shape = rng.integers(0, 2, size=n)
    scale = rng.uniform(min_scale, 1.0, size=n)
    px = rng.random(n)
    big = (scale > (min_scale + 1.0) / 2).astype(np.int64)
    prot_cols = {"shape": shape, "scale": big}
    for name in protected:
        if name not in prot_cols:
            raise ConfigurationError(f"unknown sprite protected attribute {name!r}")
    g = np.max([prot_cols[k] for k in protected], axis=0)
    py = np.clip(rng.random(n) + bias * 0.5 * (2 * g - 1), 0.0, 1.0)
    x = np.stack([_render_sprite(shape[i], scale[i], px[i], py[i], size) for i in range(n)])
    x = x + rng.standard_normal(x.shape) * pixel_noise
    y = (py > 0.5).astype(np.int64)
    xs, mean, std = standardize(x)
    p = np.column_stack([prot_cols[k] for k in protected]).astype(np.float64)
    meta = {"generator": "sprites", "n": n, "size": size, "bias": bias, "min_scale": min_scale,
            "seed": seed, "mean": mean.tolist(), "std": std.tolist(), "numeric": [True] * x.shape[1]}
    names = [f"px_{r}_{c}" for r in range(size) for c in range(size)]
    return Dataset(xs, y, p, names, list(protected), meta)


def bow_dataset(
    n: int,
    vocab: int = 1000,
    bias: float = 0.5,
    doc_length: int = 40,
    seed: int = 0,
) -> Dataset:
    """Synthetic bag-of-words counts with a toxic token block and a
    protected-identity token block.

    The first 20 tokens are "toxic" and the next 20 are identity terms used
    more often by the protected group. Toxicity depends on toxic-token usage
    and, with strength ``bias``, on group membership. Counts are log1p
    transformed and standardized.
    """
    if vocab < 60:
        raise ConfigurationError("vocab must be at least 60")
    rng = make_rng(seed, STREAM_DATA)
    p = rng.integers(0, 2, size=n)
    toxic = rng.integers(0, 2, size=n)
    base = np.full(vocab, 1.0)
    base[:20] = 0.2
    base[20:40] = 0.2
    weights = np.tile(base, (n, 1))
    weights[:, :20] += toxic[:, None] * 2.0
    weights[:, 20:40] += p[:, None] * 2.0
    weights /= weights.sum(axis=1, keepdims=True)
    counts = np.stack([rng.multinomial(doc_length, weights[i]) for i in range(n)]).astype(np.float64)
    flip = rng.random(n) < bias * 0.5
    y = np.where(flip, p, toxic).astype(np.int64)
    x, mean, std = standardize(np.log1p(counts))
    meta = {"generator": "bow", "n": n, "vocab": vocab, "bias": bias, "seed": seed,
            "mean": mean.tolist(), "std": std.tolist(), "numeric": [True] * vocab, "log1p": True}
    return Dataset(x, y, p.reshape(-1, 1).astype(np.float64), [f"tok_{i}" for i in range(vocab)], ["identity"], meta)
