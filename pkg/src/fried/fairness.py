"""Downstream fairness evaluation: demographic parity, fold-averaged
accuracy of a classifier trained on learned representations, hyperparameter
sweeps over (beta, lambda) and their Pareto fronts.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import BinaryClassifier, ClassifierConfig, accuracy, train_binary_classifier
from .data import Dataset, kfold
from .errors import ConfigurationError, FriedError, UndefinedMetricError
from .model import FriedModel, TrainConfig, infer, train, with_weights
from .numkit import derive_seed

log = logging.getLogger(__name__)

DOWNSTREAM = ClassifierConfig(hidden=(32, 16), epochs=200, learning_rate=0.01, batch_size=64)
CSV_COLUMNS = ("beta", "lambda", "delta_dp_mean", "delta_dp_std", "accuracy_mean", "accuracy_std")


def demographic_parity_difference(yhat, p) -> float:
    """|P(yhat=1 | p=0) - P(yhat=1 | p=1)|."""
    yhat = np.asarray(yhat).reshape(-1)
    p = np.asarray(p).reshape(-1)
    if yhat.shape != p.shape:
        raise ConfigurationError("predictions and protected column differ in length")
    g1 = p > 0.5
    if g1.all() or not g1.any():
        raise UndefinedMetricError("demographic parity needs both protected groups to be non-empty")
    return float(abs(np.mean(yhat[~g1] == 1) - np.mean(yhat[g1] == 1)))


def train_downstream_classifier(features, labels, seed: int = 0,
                                cfg: ClassifierConfig = DOWNSTREAM) -> BinaryClassifier:
    return train_binary_classifier(features, labels, cfg, seed)


@dataclass
class TradeoffPoint:
    beta: float
    lam: float
    delta_dp: float
    accuracy: float
    delta_dp_std: float = 0.0
    accuracy_std: float = 0.0
    folds: list = field(default_factory=list)  # per-fold (delta_dp, accuracy)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def row(self) -> dict:
        return {"beta": self.beta, "lambda": self.lam, "delta_dp_mean": self.delta_dp,
                "delta_dp_std": self.delta_dp_std, "accuracy_mean": self.accuracy, "accuracy_std": self.accuracy_std}


def _summarize(beta, lam, per_fold) -> TradeoffPoint:
    arr = np.asarray(per_fold, dtype=np.float64)
    return TradeoffPoint(beta, lam, float(arr[:, 0].mean()), float(arr[:, 1].mean()),
                         float(arr[:, 0].std()), float(arr[:, 1].std()), [tuple(r) for r in arr.tolist()])


def _fold_score(xp_train, y_train, xp_test, y_test, p_test, seed, cfg) -> tuple[float, float]:
    clf = train_downstream_classifier(xp_train, y_train, seed, cfg)
    yhat = clf.predict(xp_test)
    return demographic_parity_difference(yhat, p_test[:, 0]), accuracy(y_test, yhat)


def evaluate_representation(model: FriedModel, dataset: Dataset, folds: int = 5, seed: int = 0,
                            cfg: ClassifierConfig = DOWNSTREAM) -> TradeoffPoint:
    """Fold-averaged Δ_DP and accuracy of a classifier trained on X' = f(x, p).

    Only the first protected column enters Δ_DP.
    """
    if folds < 2:
        raise ConfigurationError("folds must be at least 2")
    xp, _ = infer(model, dataset.x, dataset.p)
    per_fold = []
    for k, (tr, te) in enumerate(kfold(dataset, folds, seed)):
        per_fold.append(_fold_score(xp[tr], dataset.y[tr], xp[te], dataset.y[te], dataset.p[te],
                                    derive_seed(seed, k), cfg))
    return _summarize(model.beta, model.lam, per_fold)


def cross_validated_point(dataset: Dataset, config: TrainConfig, folds: int = 5, seed: int = 0,
                          cfg: ClassifierConfig = DOWNSTREAM) -> TradeoffPoint:
    """Train FRIED on each fold's training split and score on its test split."""
    if folds < 2:
        raise ConfigurationError("folds must be at least 2")
    per_fold = []
    for k, (tr, te) in enumerate(kfold(dataset, folds, seed)):
        train_ds, test_ds = dataset.subset(tr), dataset.subset(te)
        model, _ = train(train_ds, replace(config, seed=derive_seed(config.seed, k)))
        xtr, _ = infer(model, train_ds.x, train_ds.p)
        xte, _ = infer(model, test_ds.x, test_ds.p)
        per_fold.append(_fold_score(xtr, train_ds.y, xte, test_ds.y, test_ds.p, derive_seed(seed, k), cfg))
    return _summarize(config.beta, config.lam, per_fold)


def sweep_tradeoff(dataset: Dataset, beta_grid, lambda_grid, base_config: TrainConfig, folds: int = 5,
                   seed: int = 0, cfg: ClassifierConfig = DOWNSTREAM, cross_fit: bool = False) -> list[TradeoffPoint]:
    """One independently seeded run per (beta, lambda), in lexicographic grid order.

    By default one model is trained on the full dataset and its
    representation is scored by fold-wise downstream classifiers; with
    ``cross_fit`` the model is retrained inside each fold. A failing trial
    is recorded on its point and the sweep moves on.
    """
    beta_grid, lambda_grid = list(beta_grid), list(lambda_grid)
    if not beta_grid or not lambda_grid:
        raise ConfigurationError("sweep grids must be non-empty")
    points = []
    for i, beta in enumerate(beta_grid):
        for j, lam in enumerate(lambda_grid):
            config = replace(with_weights(base_config, beta, lam), seed=derive_seed(base_config.seed, i, j))
            try:
                if cross_fit:
                    pt = cross_validated_point(dataset, config, folds, seed, cfg)
                else:
                    model, _ = train(dataset, config)
                    pt = evaluate_representation(model, dataset, folds, seed, cfg)
                pt.beta, pt.lam = float(beta), float(lam)
            except FriedError as e:
                log.warning("sweep point beta=%s lambda=%s failed: %s", beta, lam, e)
                pt = TradeoffPoint(float(beta), float(lam), float("nan"), float("nan"), error=str(e))
            points.append(pt)
    return points


def _dominates(a: TradeoffPoint, b: TradeoffPoint) -> bool:
    return (a.delta_dp <= b.delta_dp and a.accuracy >= b.accuracy
            and (a.delta_dp < b.delta_dp or a.accuracy > b.accuracy))


def pareto_front(points) -> list[TradeoffPoint]:
    """Points not dominated under (lower Δ_DP, higher accuracy), sorted by Δ_DP.

    Failed points are ignored; exact ties are all kept.
    """
    ok = [pt for pt in points if not pt.failed]
    front = [a for a in ok if not any(_dominates(b, a) for b in ok)]
    return sorted(front, key=lambda pt: (pt.delta_dp, -pt.accuracy))


def points_to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for pt in points:
        w.writerow({k: repr(float(v)) for k, v in pt.row().items()})
    return buf.getvalue()
