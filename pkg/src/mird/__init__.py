"""Multimodal representation disentanglement with mutual-information minimization,
built on a small float64 reverse-mode autodiff core."""

__version__ = "0.1.0"
