"""Named training presets and the datasets they pair with by default."""

from __future__ import annotations

from dataclasses import replace

from .errors import ConfigurationError
from .model import TrainConfig

PRESETS: dict[str, TrainConfig] = {
    "adult": TrainConfig(epochs=100, batch_size=100, learning_rate=0.01, hidden=(30, 15), latent_dim=30),
    "compas": TrainConfig(epochs=75, batch_size=100, learning_rate=0.01, hidden=(25, 12), latent_dim=12),
    "dsprites_synth": TrainConfig(epochs=5000, batch_size=50, learning_rate=0.03, hidden=(256, 64), latent_dim=32),
    "wikipedia_synth": TrainConfig(epochs=7000, batch_size=100, learning_rate=0.05, hidden=(500, 250, 100),
                                   latent_dim=50),
    # desk scale: a narrow code and faster Adam critics so the adversary keeps up with a linear leak
    "synth_bias": TrainConfig(epochs=100, batch_size=100, learning_rate=0.01, hidden=(30, 15), latent_dim=3,
                              critic_optimizer="adam", critic_learning_rate=0.003, critic_steps=3),
}

# synthetic data each preset runs on when no CSV is given
DATASETS: dict[str, dict] = {
    "adult": {"kind": "synth_bias", "n": 5000, "bias": 0.6},
    "compas": {"kind": "synth_bias", "n": 5000, "bias": 0.6},
    "dsprites_synth": {"kind": "sprites", "n": 2000},
    "wikipedia_synth": {"kind": "bow", "n": 2000},
    "synth_bias": {"kind": "synth_bias", "n": 5000, "bias": 0.6},
}


def preset(name: str, **overrides) -> TrainConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    try:
        return replace(base, **overrides)
    except TypeError as e:
        raise ConfigurationError(str(e)) from None
