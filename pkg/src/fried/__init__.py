"""Fair representation learning with interpolation-enabled disentanglement."""

__version__ = "0.1.0"
