"""Model auditing with Shapley values.

Direct influence is the attribution of a black-box target on its raw
inputs. Indirect influence routes the target through a FRIED decoder:
the audited predictor takes ``(X', p)``, decodes ``X'`` and hands the
reconstruction plus the unchanged ``p`` to the target, so attribution to
the ``p`` column measures everything p reaches, proxies included.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import ConfigurationError
from .model import FriedModel, TrainConfig, decode, encode, train
from .numkit import STREAM_SHAPLEY, derive_seed, make_rng

EXHAUSTIVE_MAX = 8
BACKGROUND_ROWS = 100


@dataclass(frozen=True)
class BlackBoxModel:
    predict: Callable[[np.ndarray], np.ndarray]
    feature_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_inputs(self) -> int:
        return len(self.feature_names)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ConfigurationError(f"predictor expects {self.n_inputs} columns, got shape {x.shape}")
        return np.asarray(self.predict(x), dtype=np.float64).reshape(-1)


def linear_model(weights, feature_names, bias: float = 0.0) -> BlackBoxModel:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    return BlackBoxModel(lambda x: x @ w + bias, feature_names)


def compose_audit_predictor(model: FriedModel, target: BlackBoxModel) -> BlackBoxModel:
    """Predictor over ``[X', p]``: ``target(g(X', p), p)``.

    The target either reads the reconstructed features alone or the
    features followed by the protected columns.
    """
    f, k, d = model.n_features, model.n_protected, model.latent_dim
    if target.n_inputs not in (f, f + k):
        raise ConfigurationError(
            f"target takes {target.n_inputs} inputs; the decoder produces {f} features (+{k} protected)")
    with_p = target.n_inputs == f + k

    def predict(a: np.ndarray) -> np.ndarray:
        z, p = a[:, :d], a[:, d:]
        xhat = decode(model, z, p)
        return target(np.hstack([xhat, p]) if with_p else xhat)

    names = [f"z{i}" for i in range(d)] + list(model.meta.get("protected_names", [f"p{j}" for j in range(k)]))
    return BlackBoxModel(predict, names)


@dataclass
class AttributionReport:
    feature_names: list[str]
    values: np.ndarray  # (instances, players) Shapley values
    base_values: np.ndarray  # expected prediction under the background
    predictions: np.ndarray
    n_samples: int
    seed: int
    mode: str  # "exhaustive" | "monte_carlo"

    @property
    def mean_abs(self) -> np.ndarray:
        return np.abs(self.values).mean(axis=0)

    def ranking(self) -> list[tuple[str, float, int]]:
        """``(feature, mean |phi|, rank)`` rows, rank 1 the most influential."""
        m = self.mean_abs
        order = sorted(range(len(m)), key=lambda i: (-m[i], i))
        return [(self.feature_names[i], float(m[i]), r + 1) for r, i in enumerate(order)]

    def rank_of(self, name: str) -> int:
        return next(r for f, _, r in self.ranking() if f == name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "mean_abs_attribution", "rank"])
        for name, v, r in self.ranking():
            w.writerow([name, repr(v), r])
        return buf.getvalue()


def _players(n_cols: int, groups) -> list[np.ndarray]:
    if groups is None:
        return [np.array([j]) for j in range(n_cols)]
    players = [np.asarray(g, dtype=np.int64).reshape(-1) for g in groups]
    cols = np.sort(np.concatenate(players))
    if not np.array_equal(cols, np.arange(n_cols)):
        raise ConfigurationError("groups must partition the input columns")
    return players


def _exhaustive(f: BlackBoxModel, x: np.ndarray, bg: np.ndarray, players) -> np.ndarray:
    m = len(players)
    b = bg.shape[0]
    masks = list(itertools.product((False, True), repeat=m))
    rows = np.repeat(bg[None], len(masks), axis=0)  # (coalitions, b, d)
    for c, mask in enumerate(masks):
        for present, cols in zip(mask, players):
            if present:
                rows[c][:, cols] = x[cols]
    v = f(rows.reshape(-1, x.size)).reshape(len(masks), b).mean(axis=1)
    index = {mask: c for c, mask in enumerate(masks)}
    phi = np.zeros(m)
    fact = [math.factorial(i) for i in range(m + 1)]
    for mask, c in index.items():
        s = sum(mask)
        for i in range(m):
            if not mask[i]:
                with_i = mask[:i] + (True,) + mask[i + 1:]
                phi[i] += fact[s] * fact[m - s - 1] / fact[m] * (v[index[with_i]] - v[c])
    return phi


def _monte_carlo(f: BlackBoxModel, x: np.ndarray, bg: np.ndarray, players, n_samples: int, rng) -> np.ndarray:
    """Permutation sampling with antithetic (reversed) orders and one
    background row per order."""
    m = len(players)
    half = (n_samples + 1) // 2
    perms = np.array([rng.permutation(m) for _ in range(half)])
    perms = np.vstack([perms, perms[:, ::-1]])[:n_samples]
    rows_bg = bg[rng.integers(0, bg.shape[0], size=half)]
    rows_bg = np.vstack([rows_bg, rows_bg])[:n_samples]
    n = perms.shape[0]
    phi = np.zeros(m)
    cur = rows_bg.copy()
    prev = f(cur)
    for step in range(m):
        who = perms[:, step]
        for i in range(m):
            sel = who == i
            if sel.any():
                cols = players[i]
                cur[np.ix_(sel, cols)] = x[cols]
        val = f(cur)
        np.add.at(phi, who, val - prev)
        prev = val
    return phi / n


def shapley_attribution(predictor: BlackBoxModel, x: np.ndarray, background: np.ndarray, n_samples: int = 1000,
                        seed: int = 0, mode: str = "auto", groups=None, names=None) -> AttributionReport:
    """Shapley values of ``predictor`` at each row of ``x``.

    Absent features take their values from background rows, so the value of
    a coalition is the background-averaged prediction. ``mode="auto"``
    enumerates coalitions exactly when there are at most eight players and
    samples permutations otherwise. ``groups`` lists column-index sets that
    act as single players.
    """
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(1, -1) if x.ndim == 1 else x
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim != 2 or bg.shape[0] == 0:
        raise ConfigurationError("background must be a non-empty matrix")
    if x.shape[1] != predictor.n_inputs or bg.shape[1] != predictor.n_inputs:
        raise ConfigurationError("x and background must match the predictor's input width")
    if n_samples < 1:
        raise ConfigurationError("n_samples must be at least 1")
    players = _players(x.shape[1], groups)
    if mode == "auto":
        mode = "exhaustive" if len(players) <= EXHAUSTIVE_MAX else "monte_carlo"
    if mode not in ("exhaustive", "monte_carlo"):
        raise ConfigurationError(f"unknown attribution mode {mode!r}")
    if names is None:
        names = ([predictor.feature_names[j] for j in range(x.shape[1])] if groups is None
                 else [f"group{i}" for i in range(len(players))])
    values = np.zeros((x.shape[0], len(players)))
    for r in range(x.shape[0]):
        if mode == "exhaustive":
            values[r] = _exhaustive(predictor, x[r], bg, players)
        else:
            rng = make_rng(seed, STREAM_SHAPLEY, r)
            values[r] = _monte_carlo(predictor, x[r], bg, players, n_samples, rng)
    base = np.full(x.shape[0], predictor(bg).mean())
    return AttributionReport(list(names), values, base, predictor(x), n_samples, seed, mode)


def background_sample(matrix: np.ndarray, seed: int, rows: int = BACKGROUND_ROWS) -> np.ndarray:
    rng = make_rng(seed, STREAM_SHAPLEY, 1 << 20)
    idx = np.sort(rng.choice(matrix.shape[0], size=min(rows, matrix.shape[0]), replace=False))
    return matrix[idx]


def _instances(n: int, n_instances: int, seed: int) -> np.ndarray:
    rng = make_rng(seed, STREAM_SHAPLEY, 1 << 21)
    return np.sort(rng.choice(n, size=min(n_instances, n), replace=False))


@dataclass(frozen=True)
class AuditConfig:
    n_instances: int = 50
    n_samples: int = 1000
    background_rows: int = BACKGROUND_ROWS
    mode: str = "auto"

    def __post_init__(self):
        if self.n_instances < 1 or self.n_samples < 1 or self.background_rows < 1:
            raise ConfigurationError("audit sizes must be positive")


def _target_inputs(target: BlackBoxModel, dataset: Dataset) -> np.ndarray:
    if target.n_inputs == dataset.n_features:
        return dataset.x
    if target.n_inputs == dataset.n_features + dataset.n_protected:
        return np.hstack([dataset.x, dataset.p])
    raise ConfigurationError(f"target takes {target.n_inputs} inputs; dataset has "
                             f"{dataset.n_features} features and {dataset.n_protected} protected columns")


def indirect_influence_report(model: FriedModel, target: BlackBoxModel, dataset: Dataset,
                              cfg: AuditConfig | None = None, seed: int = 0):
    """Return ``(direct, indirect)`` reports over the same instances.

    Direct attributes the target on its raw inputs; indirect attributes the
    decoder-composed predictor on ``[X', p]``.
    """
    cfg = cfg or AuditConfig()
    raw = _target_inputs(target, dataset)
    rows = _instances(dataset.n, cfg.n_instances, seed)
    bg_idx = _instances(dataset.n, cfg.background_rows, derive_seed(seed, 1))
    direct = shapley_attribution(target, raw[rows], raw[bg_idx], cfg.n_samples, seed, cfg.mode)
    composed = compose_audit_predictor(model, target)
    code = np.hstack([encode(model, dataset.x, dataset.p), dataset.p])
    indirect = shapley_attribution(composed, code[rows], code[bg_idx], cfg.n_samples, seed, cfg.mode)
    return direct, indirect


# --------------------------------------------------------------------------
# per-feature indirect influence


def _unit_scale(col: np.ndarray) -> tuple[np.ndarray, float, float]:
    lo, hi = float(col.min()), float(col.max())
    span = hi - lo if hi > lo else 1.0
    return (col - lo) / span, lo, span


@dataclass
class FeatureAudit:
    """One FRIED model per audited column, trained with that column as the
    protected attribute."""

    direct: AttributionReport
    indirect: AttributionReport
    models: list = field(default_factory=list)


def feature_indirect_influence(target: BlackBoxModel, dataset: Dataset, train_config: TrainConfig,
                               cfg: AuditConfig | None = None, seed: int = 0) -> FeatureAudit:
    """Indirect influence of every target input.

    For input ``j`` a FRIED model is trained to remove ``j`` (rescaled to
    [0, 1]) from the code of the remaining inputs; the composed predictor
    ``(X', a_j) -> target(insert(g(X', a_j), a_j))`` is then attributed
    with the code block and the passthrough as two players. The
    passthrough's share is the influence of ``j`` plus everything that can
    only be recovered through it.
    """
    cfg = cfg or AuditConfig()
    raw = _target_inputs(target, dataset)
    names = list(target.feature_names)
    rows = _instances(dataset.n, cfg.n_instances, seed)
    bg_idx = _instances(dataset.n, cfg.background_rows, derive_seed(seed, 1))
    direct = shapley_attribution(target, raw[rows], raw[bg_idx], cfg.n_samples, seed, cfg.mode)

    n_in = raw.shape[1]
    values = np.zeros((rows.size, n_in))
    models = []
    for j in range(n_in):
        rest = [c for c in range(n_in) if c != j]
        a_j, lo, span = _unit_scale(raw[:, j])
        sub = Dataset(raw[:, rest], dataset.y, a_j.reshape(-1, 1), [names[c] for c in rest], [names[j]])
        model, _ = train(sub, replace(train_config, seed=derive_seed(train_config.seed, j)))
        models.append(model)

        def predict(a, model=model, j=j, lo=lo, span=span, rest=rest):
            d = model.latent_dim
            xhat = decode(model, a[:, :d], a[:, d:])
            full = np.empty((a.shape[0], n_in))
            full[:, rest] = xhat
            full[:, j] = a[:, d] * span + lo
            return target(full)

        d = model.latent_dim
        composed = BlackBoxModel(predict, [f"z{i}" for i in range(d)] + [names[j]])
        code = np.hstack([encode(model, sub.x, sub.p), sub.p])
        rep = shapley_attribution(composed, code[rows], code[bg_idx], cfg.n_samples, seed, "exhaustive",
                                  groups=[np.arange(d), [d]], names=["code", names[j]])
        values[:, j] = rep.values[:, 1]
    base = np.full(rows.size, target(raw[bg_idx]).mean())
    indirect = AttributionReport(names, values, base, target(raw[rows]), cfg.n_samples, seed, "exhaustive")
    return FeatureAudit(direct, indirect, models)
