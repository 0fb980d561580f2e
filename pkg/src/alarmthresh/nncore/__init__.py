"""Self-contained differentiation core and neural building blocks."""

from . import functional
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, gradient_check
from .layers import LayerNorm, Linear, Module, MultiHeadAttention, TransformerEncoderLayer
from .optim import AdamW, EarlyStopping, TrainState, adamw_step, cosine_lr, early_stop
from .tensor import Parameter, ShapeError, Tensor, concat, no_grad, stack, take_rows, tensor, where

__all__ = [
    "AdamW",
    "Checkpoint",
    "CheckpointError",
    "EarlyStopping",
    "GradCheckResult",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "Parameter",
    "ShapeError",
    "Tensor",
    "TrainState",
    "TransformerEncoderLayer",
    "adamw_step",
    "concat",
    "cosine_lr",
    "early_stop",
    "functional",
    "gradient_check",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
    "stack",
    "take_rows",
    "tensor",
    "where",
]
