"""Minimal numpy layer engine with hand-derived gradients."""

from .layers import (
    AttentionFuse, BatchNorm, Conv2d, DegenerateBatch, Dense, DimensionGate, Dropout,
    Layer, ReLU, ResidualBlock, Sequential, conv_output_size, cross_entropy, log_softmax,
    residual_add, softmax, softmax_cross_entropy,
)
from .params import ParameterFormatError, ParameterStore, ShapeMismatch, adam_step

__all__ = [
    "AttentionFuse", "BatchNorm", "Conv2d", "DegenerateBatch", "Dense", "DimensionGate",
    "Dropout", "Layer", "ParameterFormatError", "ParameterStore", "ReLU", "ResidualBlock",
    "Sequential", "ShapeMismatch", "adam_step", "conv_output_size", "cross_entropy",
    "log_softmax", "residual_add", "softmax", "softmax_cross_entropy",
]
