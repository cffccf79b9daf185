"""Dense float64 tensors with tape-based reverse-mode differentiation."""

from . import ops
from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check
from .store import ParameterStore
from .tensor import Tape, Tensor, active_tape, backward

__all__ = [
    "ParameterStore",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "decode_checkpoint",
    "encode_checkpoint",
    "finite_difference_check",
    "load_checkpoint",
    "ops",
    "save_checkpoint",
]
