"""Probabilistic binary MLP classifier trained with cross-entropy.

Shared by the KL/MI estimators, the downstream fairness evaluation and
representation probes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DataError
from .numkit import Adam, MlpParams, init_mlp, make_rng, mlp_backward, mlp_forward, sgd_step


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: tuple[int, ...] = (32, 16)
    epochs: int = 200
    learning_rate: float = 0.01
    batch_size: int = 64
    optimizer: str = "sgd"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigurationError("epochs, batch_size and learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown classifier config keys: {sorted(unknown)}")
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class BinaryClassifier:
    net: MlpParams
    mean: np.ndarray
    scale: np.ndarray

    def logits(self, x: np.ndarray) -> np.ndarray:
        out, _ = mlp_forward(self.net, (x - self.mean) / self.scale)
        return out[:, 0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return expit(self.logits(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.logits(x) > 0).astype(np.int64)


def train_binary_classifier(x: np.ndarray, y: np.ndarray, cfg: ClassifierConfig | None = None,
                            seed: int = 0) -> BinaryClassifier:
    """Fit an MLP (relu hidden layers, logit output) on labels in {0, 1}.

    Inputs are standardized with training statistics stored on the result.
    """
    cfg = cfg or ClassifierConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise DataError("features and labels have different row counts")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be binary 0/1")
    if np.unique(y).size < 2:
        raise DataError("labels contain a single class; cannot train a classifier")
    rng = make_rng(seed)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    xs = (x - mean) / scale
    net = init_mlp([x.shape[1], *cfg.hidden, 1], rng)
    target = y.astype(np.float64).reshape(-1, 1)
    if cfg.optimizer == "adam":
        step = Adam(net, cfg.learning_rate).step
    else:
        def step(params, g):
            return sgd_step(params, g, cfg.learning_rate)
    n = x.shape[0]
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            b = perm[start:start + cfg.batch_size]
            z, cache = mlp_forward(net, xs[b])
            # d(mean BCE)/d(logit)
            grads, _ = mlp_backward(net, cache, (expit(z) - target[b]) / b.size)
            net = step(net, grads)
    return BinaryClassifier(net, mean, scale)


def accuracy(y_true, y_pred) -> float:
    return float(np.mean(np.asarray(y_true).reshape(-1) == np.asarray(y_pred).reshape(-1)))
