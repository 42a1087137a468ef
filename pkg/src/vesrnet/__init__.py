"""Video super-resolution with factored non-local fusion and channel-attention
residual blocks, on a small self-contained autodiff engine."""

from .tensor import Tape, Tensor, no_grad

__all__ = ["Tape", "Tensor", "no_grad"]
