"""Power-flow ground truth and physics-informed double-head surrogates."""

__version__ = "0.1.0"
