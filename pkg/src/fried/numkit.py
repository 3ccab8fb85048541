"""Small deterministic numeric core: seeded randomness, MLPs with hand-written
backpropagation, SGD/Adam updates and finite-difference gradient checks.

Matrices are plain 2-D float64 numpy arrays (rows = samples). Weights are
stored as (fan_in, fan_out) so a layer computes ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DivergenceError, UsageError

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "identity")
LEAKY_SLOPE = 0.2


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array (1-D input becomes a column)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ConfigurationError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DivergenceError(f"{name} contains non-finite entries")
    return m


# --------------------------------------------------------------------------
# randomness
#
# All randomness flows through numpy's PCG64 bit generator, whose output
# stream is fully specified and identical across platforms. Independent
# streams are carved out of one run seed with SeedSequence so that adding a
# consumer never shifts another consumer's draws.


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator for the stream identified by ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), *keys])))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a child 63-bit seed from ``seed`` and integer keys."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *keys])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# stream keys, kept stable so serialized runs replay
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_ALPHA = 3
STREAM_SPLIT = 4
STREAM_PERMUTE = 5
STREAM_DATA = 6
STREAM_SHAPLEY = 7


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ConfigurationError(
                f"bias shape {self.bias.shape} does not match weight shape {self.weight.shape}"
            )


@dataclass(frozen=True)
class MlpParams:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigurationError("an MLP needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ConfigurationError(
                    f"layer dims do not chain: {a.weight.shape} -> {b.weight.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [l.weight.shape[1] for l in self.layers]

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for l in self.layers:
            out += [l.weight, l.bias]
        return out

    def _replaced(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        """Unchecked ``with_arrays`` for optimizer updates (shapes already verified)."""
        out = object.__new__(MlpParams)
        layers = []
        for i, l in enumerate(self.layers):
            nl = object.__new__(Layer)
            object.__setattr__(nl, "weight", arrays[2 * i])
            object.__setattr__(nl, "bias", arrays[2 * i + 1])
            object.__setattr__(nl, "activation", l.activation)
            layers.append(nl)
        object.__setattr__(out, "layers", tuple(layers))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        if len(arrays) != 2 * len(self.layers):
            raise ConfigurationError("wrong number of parameter arrays")
        layers = []
        for i, l in enumerate(self.layers):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != l.weight.shape or b.shape != l.bias.shape:
                raise ConfigurationError("parameter shapes changed")
            layers.append(Layer(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64), l.activation))
        return MlpParams(tuple(layers))

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "identity",
) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise ConfigurationError(f"invalid layer sizes {list(sizes)}")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        act = output_activation if i == len(sizes) - 2 else hidden_activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(tuple(layers))


# --------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardCache:
    params: MlpParams
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activation of each layer
    outputs: list = field(default_factory=list)  # post-activation of each layer


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if act == "sigmoid":
        return expit(z)
    return z


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ConfigurationError(f"input has shape {x.shape}, network expects {params.in_dim} columns")
    cache = ForwardCache(params)
    h = x
    for layer in params.layers:
        cache.inputs.append(h)
        z = h @ layer.weight + layer.bias
        h = _activate(z, layer.activation)
        cache.pre.append(z)
        cache.outputs.append(h)
    if not np.isfinite(h.sum()):
        raise DivergenceError("non-finite network output")
    return h, cache


def mlp_backward(
    params: MlpParams, cache: ForwardCache, output_gradient: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate ``dL/d(output)``; returns (param grads, dL/d(input)).

    Parameter gradients follow the order of ``params.arrays()``.
    """
    if cache.params is not params:
        raise UsageError("forward cache was produced by a different parameter set")
    if output_gradient.shape != cache.outputs[-1].shape:
        raise ConfigurationError(
            f"output gradient shape {output_gradient.shape} != output shape {cache.outputs[-1].shape}"
        )
    grads: list[np.ndarray] = [None] * (2 * len(params.layers))  # type: ignore[list-item]
    g = output_gradient
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        if layer.activation == "relu":
            g = g * (cache.pre[i] > 0)
        elif layer.activation == "leaky_relu":
            g = g * np.where(cache.pre[i] > 0, 1.0, LEAKY_SLOPE)
        elif layer.activation == "sigmoid":
            out = cache.outputs[i]
            g = g * out * (1.0 - out)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weight.T
    return grads, g


# --------------------------------------------------------------------------
# optimizers


def _check_grads(params: MlpParams, gradients: Sequence[np.ndarray]) -> list[np.ndarray]:
    arrays = params.arrays()
    if len(gradients) != len(arrays):
        raise ConfigurationError("gradient list does not match parameters")
    total = 0.0
    for a, g in zip(arrays, gradients):
        if a.shape != g.shape:
            raise ConfigurationError(f"gradient shape {g.shape} != parameter shape {a.shape}")
        total += g.sum()
    # a single sum is non-finite iff some entry is (or the sum overflows, which is divergence too)
    if not np.isfinite(total):
        raise DivergenceError("non-finite gradient")
    return arrays


def sgd_step(params: MlpParams, gradients: Sequence[np.ndarray], learning_rate: float) -> MlpParams:
    arrays = _check_grads(params, gradients)
    return params._replaced([a - learning_rate * g for a, g in zip(arrays, gradients)])


class Adam:
    """Adam state for one MlpParams; ``step`` returns new parameters."""

    def __init__(self, params: MlpParams, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = learning_rate, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: MlpParams, gradients: Sequence[np.ndarray]) -> MlpParams:
        arrays = _check_grads(params, gradients)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        new = []
        step = self.lr / c1
        for a, g, m, v in zip(arrays, gradients, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            new.append(a - step * m / (np.sqrt(v / c2) + self.eps))
        return params._replaced(new)


# --------------------------------------------------------------------------
# gradient checking


def gradcheck(
    loss_and_grad: Callable[[], tuple[float, Sequence[np.ndarray]]],
    arrays: Sequence[np.ndarray],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad`` closes over ``arrays`` and returns ``(loss, grads)``
    with grads aligned to ``arrays``. Entries are perturbed in place and
    restored afterwards.
    """
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    loss, analytic = loss_and_grad()
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss")
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    worst = 0.0
    for a, ga in zip(arrays, analytic):
        flat = a.reshape(-1)
        gflat = ga.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            lp, _ = loss_and_grad()
            flat[k] = orig - epsilon
            lm, _ = loss_and_grad()
            flat[k] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise DivergenceError("non-finite loss during gradcheck")
            numeric = (lp - lm) / (2 * epsilon)
            an = gflat[k]
            err = abs(an - numeric) / max(abs(an), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
