"""FRIED: autoencoder with a latent convex mixer, a protected-attribute
critic on the mixed code and an interpolation critic on its reconstruction.

Training alternates, per mini-batch: ``critic_steps`` updates of the
disentanglement critic (predict p from the mixed code), one step of the
interpolation critic
(predict alpha from the reconstruction), then one autoencoder step on
reconstruction plus the two fooling terms.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, DivergenceError
from .numkit import (
    Adam,
    STREAM_ALPHA,
    STREAM_INIT,
    STREAM_SHUFFLE,
    Layer,
    MlpParams,
    init_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
    sgd_step,
)

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_critic_dis", "no_critic_i", "vanilla_ae")
FORMAT = "fried-model"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 0.01
    beta: float = 1.0
    lam: float = 1.0
    seed: int = 0
    critic_learning_rate: float | None = None  # None: same as learning_rate
    ablation: str = "full"
    hidden: tuple[int, ...] = (30, 15)
    latent_dim: int = 30
    mixing: bool = True
    literal_eq4: bool = False
    critic_steps: int = 1
    critic_optimizer: str = "sgd"
    critic_hidden: tuple[int, ...] | None = None  # None: same as hidden
    weight_decay: float = 0.0
    critic_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.critic_hidden is not None:
            object.__setattr__(self, "critic_hidden", tuple(int(h) for h in self.critic_hidden))
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be at least 1")
        if self.learning_rate <= 0 or (self.critic_learning_rate is not None and self.critic_learning_rate <= 0):
            raise ConfigurationError("learning rates must be positive")
        if self.beta < 0 or self.lam < 0:
            raise ConfigurationError("beta and lambda must be non-negative")
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.critic_optimizer not in ("sgd", "adam"):
            raise ConfigurationError("critic_optimizer must be 'sgd' or 'adam'")
        if self.critic_activation not in ("relu", "leaky_relu", "sigmoid"):
            raise ConfigurationError(f"unsupported critic activation {self.critic_activation!r}")
        if self.critic_steps < 1:
            raise ConfigurationError("critic_steps must be at least 1")
        if self.latent_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigurationError("layer sizes must be positive")

    @property
    def critic_lr(self) -> float:
        return self.learning_rate if self.critic_learning_rate is None else self.critic_learning_rate

    @property
    def uses_critic_dis(self) -> bool:
        return self.ablation in ("full", "no_critic_i")

    @property
    def uses_critic_i(self) -> bool:
        return self.ablation in ("full", "no_critic_dis")

    @property
    def uses_mixing(self) -> bool:
        return self.mixing and self.ablation != "vanilla_ae"

    @property
    def effective_beta(self) -> float:
        return self.beta if self.uses_critic_dis else 0.0

    @property
    def effective_lam(self) -> float:
        return self.lam if self.uses_critic_i else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        if self.critic_hidden is not None:
            d["critic_hidden"] = list(self.critic_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        for key in ("hidden", "critic_hidden"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigurationError(str(e)) from None


@dataclass
class FriedModel:
    encoder: MlpParams
    decoder: MlpParams
    critic_dis: MlpParams
    critic_i: MlpParams
    beta: float
    lam: float
    latent_dim: int
    n_features: int
    n_protected: int
    p_mean: np.ndarray  # population mean of p; the uninformative critic target
    config: TrainConfig = field(default_factory=TrainConfig)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p_mean = np.asarray(self.p_mean, dtype=np.float64).reshape(-1)
        f, k, d = self.n_features, self.n_protected, self.latent_dim
        checks = [
            (self.encoder.in_dim, f + k, "encoder input"),
            (self.encoder.out_dim, d, "encoder output"),
            (self.decoder.in_dim, d + k, "decoder input"),
            (self.decoder.out_dim, f, "decoder output"),
            (self.critic_dis.in_dim, d, "critic_dis input"),
            (self.critic_dis.out_dim, k, "critic_dis output"),
            (self.critic_i.in_dim, f + k, "critic_i input"),
            (self.critic_i.out_dim, 1, "critic_i output"),
        ]
        for got, want, what in checks:
            if got != want:
                raise ConfigurationError(f"{what} dim is {got}, expected {want}")
        if self.p_mean.shape != (k,):
            raise ConfigurationError("p_mean must have one entry per protected column")


def init_model(n_features: int, n_protected: int, config: TrainConfig, p_mean=None) -> FriedModel:
    rng = make_rng(config.seed, STREAM_INIT)
    h = list(config.hidden)
    f, k, d = n_features, n_protected, config.latent_dim
    encoder = init_mlp([f + k, *h, d], rng)
    decoder = init_mlp([d + k, *reversed(h), f], rng)
    ch = list(config.critic_hidden) if config.critic_hidden is not None else h
    act = config.critic_activation
    critic_dis = init_mlp([d, *ch, k], rng, hidden_activation=act, output_activation="sigmoid")
    critic_i = init_mlp([f + k, *ch, 1], rng, hidden_activation=act, output_activation="sigmoid")
    if p_mean is None:
        p_mean = np.full(k, 0.5)
    return FriedModel(encoder, decoder, critic_dis, critic_i, config.beta, config.lam, d, f, k,
                      np.asarray(p_mean, dtype=np.float64), config)


@dataclass
class Batch:
    x1: np.ndarray
    x2: np.ndarray
    p: np.ndarray
    alpha: float

    def __post_init__(self):
        if not (self.x1.shape[0] == self.x2.shape[0] == self.p.shape[0]):
            raise ConfigurationError("x1, x2 and p must have equal row counts")
        if self.x1.shape != self.x2.shape:
            raise ConfigurationError("x1 and x2 must have equal shapes")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")


# --------------------------------------------------------------------------
# building blocks


def _check_cols(m: np.ndarray, cols: int, what: str):
    if m.ndim != 2 or m.shape[1] != cols:
        raise ConfigurationError(f"{what} has shape {m.shape}, expected {cols} columns")


def encode(model: FriedModel, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    _check_cols(x, model.n_features, "x")
    _check_cols(p, model.n_protected, "p")
    if x.shape[0] != p.shape[0]:
        raise ConfigurationError("x and p row counts differ")
    z, _ = mlp_forward(model.encoder, np.hstack([x, p]))
    return z


def mix(z1: np.ndarray, z2: np.ndarray, alpha: float) -> np.ndarray:
    """Convex combination ``alpha*z1 + (1-alpha)*z2``; exact at both ends."""
    if z1.shape != z2.shape:
        raise ConfigurationError(f"cannot mix shapes {z1.shape} and {z2.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return z1.copy()
    if alpha == 0.0:
        return z2.copy()
    return alpha * z1 + (1.0 - alpha) * z2


def decode(model: FriedModel, zprime: np.ndarray, p: np.ndarray) -> np.ndarray:
    _check_cols(zprime, model.latent_dim, "latent")
    _check_cols(p, model.n_protected, "p")
    xhat, _ = mlp_forward(model.decoder, np.hstack([zprime, p]))
    return xhat


def critic_dis_loss(model: FriedModel, zprime: np.ndarray, p: np.ndarray) -> float:
    """Mean squared error of the protected-attribute critic on the mixed code."""
    phat, _ = mlp_forward(model.critic_dis, zprime)
    _check_cols(p, phat.shape[1], "p")
    return float(np.mean((p - phat) ** 2))


def critic_i_loss(model: FriedModel, xhat: np.ndarray, p: np.ndarray, alpha: float) -> float:
    """Mean squared error of the interpolation critic's alpha estimate."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    ahat, _ = mlp_forward(model.critic_i, np.hstack([xhat, p]))
    return float(np.mean((alpha - ahat) ** 2))


def critic_dis_loss_and_grad(model: FriedModel, zprime, p):
    phat, cache = mlp_forward(model.critic_dis, zprime)
    diff = phat - p
    grads, _ = mlp_backward(model.critic_dis, cache, 2.0 * diff / diff.size)
    return float(np.mean(diff**2)), grads


def critic_i_loss_and_grad(model: FriedModel, xhat, p, alpha: float):
    ahat, cache = mlp_forward(model.critic_i, np.hstack([xhat, p]))
    diff = ahat - alpha
    grads, _ = mlp_backward(model.critic_i, cache, 2.0 * diff / diff.size)
    return float(np.mean(diff**2)), grads


# --------------------------------------------------------------------------
# autoencoder objective


@dataclass
class _Pass:
    """Encoder/decoder forward state for one batch."""

    z: np.ndarray  # stacked [z1; z2]
    enc_cache: object
    zprime: np.ndarray
    xhat: np.ndarray
    dec_cache: object
    target: np.ndarray


def _ae_forward(model: FriedModel, batch: Batch) -> _Pass:
    _check_cols(batch.x1, model.n_features, "x1")
    _check_cols(batch.p, model.n_protected, "p")
    n = batch.x1.shape[0]
    enc_in = np.vstack([np.hstack([batch.x1, batch.p]), np.hstack([batch.x2, batch.p])])
    z, enc_cache = mlp_forward(model.encoder, enc_in)
    zprime = mix(z[:n], z[n:], batch.alpha)
    xhat, dec_cache = mlp_forward(model.decoder, np.hstack([zprime, batch.p]))
    target = mix(batch.x1, batch.x2, batch.alpha)
    return _Pass(z, enc_cache, zprime, xhat, dec_cache, target)


def _weights(model: FriedModel) -> tuple[float, float]:
    cfg = model.config
    beta = model.beta if cfg.uses_critic_dis else 0.0
    lam = model.lam if cfg.uses_critic_i else 0.0
    return beta, lam


def _ae_objective(model: FriedModel, batch: Batch, fw: _Pass, want_grads: bool):
    beta, lam = _weights(model)
    literal = model.config.literal_eq4
    resid = fw.xhat - fw.target
    recon = float(np.mean(resid**2))

    phat, dis_cache = mlp_forward(model.critic_dis, fw.zprime)
    dis_target = batch.p if literal else np.broadcast_to(model.p_mean, phat.shape)
    dis_diff = phat - dis_target
    dis_term = float(np.mean(dis_diff**2))

    ahat, int_cache = mlp_forward(model.critic_i, np.hstack([fw.xhat, batch.p]))
    int_diff = ahat - batch.alpha if literal else ahat
    int_term = float(np.mean(int_diff**2))

    total = recon + beta * dis_term + lam * int_term
    parts = {"reconstruction": recon, "disentanglement_term": dis_term, "interpolation_term": int_term}
    if not np.isfinite(total):
        raise DivergenceError("non-finite autoencoder loss")
    if not want_grads:
        return total, parts, None, None

    d_xhat = 2.0 * resid / resid.size
    if lam:
        _, d_in = mlp_backward(model.critic_i, int_cache, 2.0 * int_diff / int_diff.size)
        d_xhat = d_xhat + lam * d_in[:, : model.n_features]
    dec_grads, d_dec_in = mlp_backward(model.decoder, fw.dec_cache, d_xhat)
    d_zprime = d_dec_in[:, : model.latent_dim]
    if beta:
        _, d_z = mlp_backward(model.critic_dis, dis_cache, 2.0 * dis_diff / dis_diff.size)
        d_zprime = d_zprime + beta * d_z
    a = batch.alpha
    enc_grads, _ = mlp_backward(model.encoder, fw.enc_cache, np.vstack([a * d_zprime, (1.0 - a) * d_zprime]))
    return total, parts, enc_grads, dec_grads


def autoencoder_loss(model: FriedModel, batch: Batch) -> tuple[float, dict]:
    """Reconstruction of the mixed pair plus weighted critic-fooling terms.

    The fooling terms push the disentanglement critic toward the population
    mean of p and the interpolation critic toward alpha=0. With
    ``config.literal_eq4`` the critics' own errors are used instead.
    """
    total, parts, _, _ = _ae_objective(model, batch, _ae_forward(model, batch), False)
    return total, parts


def autoencoder_loss_and_grads(model: FriedModel, batch: Batch):
    """Return ``(total, parts, encoder_grads, decoder_grads)``."""
    return _ae_objective(model, batch, _ae_forward(model, batch), True)


# --------------------------------------------------------------------------
# training


def pair_indices(groups: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle rows and pair each with the next row of its own protected group.

    Returns ``(first, second)`` index arrays in shuffled order; the last
    member of each group wraps around to the first.
    """
    n = groups.shape[0]
    perm = rng.permutation(n)
    partner = np.empty(n, dtype=np.int64)
    g_perm = groups[perm]
    for g in np.unique(groups):
        members = perm[g_perm == g]
        partner[members] = np.roll(members, -1)
    return perm, partner[perm]


def _group_codes(p: np.ndarray) -> np.ndarray:
    bits = (p > 0.5).astype(np.int64)
    return bits @ (1 << np.arange(bits.shape[1], dtype=np.int64))


def _decayed(params: MlpParams, grads, weight_decay: float):
    """Add the gradient of ``weight_decay/2 * ||W||^2`` over weight matrices."""
    out = list(grads)
    for i, layer in enumerate(params.layers):
        out[2 * i] = out[2 * i] + weight_decay * layer.weight
    return out


@np.errstate(over="ignore", invalid="ignore")  # non-finite values are caught and reported
def train(dataset: Dataset, config: TrainConfig) -> tuple[FriedModel, list[dict]]:
    """Run the alternating adversarial training; returns (model, history).

    History holds one record per epoch with batch-averaged loss parts.
    """
    x, p = dataset.x, dataset.p
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise DivergenceError("dataset contains non-finite values")
    model = init_model(dataset.n_features, dataset.n_protected, config, p_mean=p.mean(axis=0))
    model.meta = {"dataset": dataset.fingerprint(), "feature_names": list(dataset.feature_names),
                  "protected_names": list(dataset.protected_names),
                  "preprocessing": {k: dataset.meta[k] for k in ("mean", "std") if k in dataset.meta}}
    shuffle_rng = make_rng(config.seed, STREAM_SHUFFLE)
    alpha_rng = make_rng(config.seed, STREAM_ALPHA)
    groups = _group_codes(p)
    lr, clr = config.learning_rate, config.critic_lr
    if config.critic_optimizer == "adam":
        opt_dis, opt_i = Adam(model.critic_dis, clr), Adam(model.critic_i, clr)
        step_dis, step_i = opt_dis.step, opt_i.step
    else:
        step_dis = lambda params, g: sgd_step(params, g, clr)  # noqa: E731
        step_i = step_dis
    history = []
    for epoch in range(config.epochs):
        first, second = pair_indices(groups, shuffle_rng)
        sums = dict.fromkeys(
            ("total", "reconstruction", "disentanglement_term", "interpolation_term", "critic_dis", "critic_i"), 0.0)
        n_batches = 0
        for b, start in enumerate(range(0, dataset.n, config.batch_size)):
            i1 = first[start:start + config.batch_size]
            i2 = second[start:start + config.batch_size]
            draw = float(alpha_rng.random())
            alpha = draw if config.uses_mixing else 1.0
            batch = Batch(x[i1], x[i2], p[i1], alpha)
            try:
                fw = _ae_forward(model, batch)
                if config.uses_critic_dis:
                    for step in range(config.critic_steps):
                        loss_d, g = critic_dis_loss_and_grad(model, fw.zprime, batch.p)
                        model.critic_dis = step_dis(model.critic_dis, g)
                        if step == 0:
                            sums["critic_dis"] += loss_d
                if config.uses_critic_i:
                    loss_i, g = critic_i_loss_and_grad(model, fw.xhat, batch.p, alpha)
                    model.critic_i = step_i(model.critic_i, g)
                    sums["critic_i"] += loss_i
                total, parts, g_enc, g_dec = _ae_objective(model, batch, fw, True)
                if config.weight_decay:
                    g_enc = _decayed(model.encoder, g_enc, config.weight_decay)
                    g_dec = _decayed(model.decoder, g_dec, config.weight_decay)
                model.encoder = sgd_step(model.encoder, g_enc, lr)
                model.decoder = sgd_step(model.decoder, g_dec, lr)
            except DivergenceError as e:
                raise DivergenceError(f"training diverged at epoch {epoch}, batch {b}: {e}") from None
            sums["total"] += total
            for k, v in parts.items():
                sums[k] += v
            n_batches += 1
        record = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        history.append(record)
        log.debug("epoch %d %s", epoch, record)
    return model, history


def infer(model: FriedModel, x: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Test-time pass without mixing: ``(f(x, p), g(f(x, p), p))``."""
    xprime = encode(model, x, p)
    return xprime, decode(model, xprime, p)


# --------------------------------------------------------------------------
# serialization


def _net_to_json(net: MlpParams) -> list[dict]:
    return [{"activation": l.activation, "weight": l.weight.tolist(), "bias": l.bias.tolist()} for l in net.layers]


def _net_from_json(layers: list[dict]) -> MlpParams:
    return MlpParams(tuple(
        Layer(np.array(l["weight"], dtype=np.float64).reshape(len(l["weight"]), -1),
              np.array(l["bias"], dtype=np.float64), l["activation"])
        for l in layers))


def model_to_dict(model: FriedModel) -> dict:
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "dims": {"n_features": model.n_features, "n_protected": model.n_protected, "latent_dim": model.latent_dim},
        "beta": model.beta,
        "lambda": model.lam,
        "seed": model.config.seed,
        "p_mean": model.p_mean.tolist(),
        "config": model.config.to_dict(),
        "meta": model.meta,
        "networks": {name: _net_to_json(getattr(model, name))
                     for name in ("encoder", "decoder", "critic_dis", "critic_i")},
    }


def model_from_dict(d: dict) -> FriedModel:
    if d.get("format") != FORMAT:
        raise ConfigurationError("not a FRIED model file")
    if d.get("version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported model format version {d.get('version')}")
    nets = {k: _net_from_json(v) for k, v in d["networks"].items()}
    dims = d["dims"]
    return FriedModel(nets["encoder"], nets["decoder"], nets["critic_dis"], nets["critic_i"],
                      float(d["beta"]), float(d["lambda"]), int(dims["latent_dim"]), int(dims["n_features"]),
                      int(dims["n_protected"]), np.array(d["p_mean"], dtype=np.float64),
                      TrainConfig.from_dict(d["config"]), d.get("meta", {}))


def dumps_model(model: FriedModel) -> str:
    """Canonical JSON text; floats use the shortest round-trip repr."""
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":")) + "\n"


def save_model(model: FriedModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> FriedModel:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read model file {path}: {e}") from None
    return model_from_dict(d)


def with_weights(config: TrainConfig, beta: float, lam: float) -> TrainConfig:
    return replace(config, beta=beta, lam=lam)
