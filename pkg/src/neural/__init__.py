"""
Neural - Parameters, tape, layers and optimizer.
"""

from .autodiff import NonScalarLossError, Tape, TapeNode, backward, record
from .layers import (
    ACTIVATIONS,
    CENTER_TAP,
    KERNEL_OFFSETS,
    ConvSpec,
    MLPSpec,
    NeighborTable,
    ShapeMismatchError,
    SparseConvSpec,
    conv2d,
    conv_forward,
    mlp_forward,
    positional_encoding,
    sparse_conv3d,
    sparse_conv_forward,
)
from .optim import AdamState, NonFiniteGradientError, adam_step
from .params import ParameterStore

__all__ = [
    "ACTIVATIONS",
    "CENTER_TAP",
    "KERNEL_OFFSETS",
    "AdamState",
    "ConvSpec",
    "MLPSpec",
    "NeighborTable",
    "NonFiniteGradientError",
    "NonScalarLossError",
    "ParameterStore",
    "ShapeMismatchError",
    "SparseConvSpec",
    "Tape",
    "TapeNode",
    "adam_step",
    "backward",
    "conv2d",
    "conv_forward",
    "mlp_forward",
    "positional_encoding",
    "record",
    "sparse_conv3d",
    "sparse_conv_forward",
]
