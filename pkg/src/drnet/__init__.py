"""Diabetic retinopathy grading pipeline on a self-contained autodiff core."""

__version__ = "0.1.0"

from .tensor import RngStream, Tape, Tensor, grad_check  # noqa: F401
