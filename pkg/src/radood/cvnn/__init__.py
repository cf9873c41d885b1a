from .tensor import Tensor, no_grad, is_grad_enabled
from .layers import (
    Layer,
    ComplexDense,
    ComplexConv1d,
    ComplexConvTranspose1d,
    ComplexBatchNorm,
    CRelu,
    layer_from_spec,
    LAYER_KINDS,
)
from .optim import Adam, NonFiniteGradientError, adam_step
from .checkpoint import (
    save_checkpoint,
    load_checkpoint,
    CheckpointError,
    CheckpointFormatError,
    CheckpointVersionError,
    CheckpointChecksumError,
)

__all__ = [
    "Tensor", "no_grad", "is_grad_enabled",
    "Layer", "ComplexDense", "ComplexConv1d", "ComplexConvTranspose1d",
    "ComplexBatchNorm", "CRelu", "layer_from_spec", "LAYER_KINDS",
    "Adam", "NonFiniteGradientError", "adam_step",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
    "CheckpointFormatError", "CheckpointVersionError",
    "CheckpointChecksumError",
]
