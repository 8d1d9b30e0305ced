"""Losses, Adam, the step learning-rate schedule, and early stopping."""

from __future__ import annotations

from decimal import Decimal

import numpy as np

from .errors import NumericError, ShapeError
from .params import NetworkParams
from .tensor import Tensor

PROB_CLAMP = 1e-7


def categorical_cross_entropy(probs: Tensor, onehot: Tensor) -> Tensor:
    """Mean over the batch of -sum(y * log p), p clamped away from 0 and 1."""
    if probs.shape != onehot.shape:
        raise ShapeError(f"cross entropy: shape mismatch {probs.shape} vs {onehot.shape}")
    p = probs.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    batch = probs.shape[0]
    return -(onehot * p.log()).sum() / batch


def binary_cross_entropy(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of -[t*log p + (1-t)*log(1-p)] with the same clamping."""
    if pred.shape != target.shape:
        raise ShapeError(f"cross entropy: shape mismatch {pred.shape} vs {target.shape}")
    p = pred.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = pred.size
    pos = target * p.log()
    negt = (1.0 - target) * (1.0 - p).log()
    return -(pos + negt).sum() / n


def lr_schedule(initial: float, epoch: int) -> float:
    """initial * 0.1 ** floor(epoch / 10), computed in decimal so the decade
    values come out as the exact float literals (0.001 -> 1e-4 -> 1e-5)."""
    if epoch < 0:
        raise ShapeError(f"epoch must be >= 0, got {epoch}")
    k = epoch // 10
    return float(Decimal(repr(float(initial))) / (Decimal(10) ** k))


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, params: NetworkParams, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.trainable()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.trainable()}


def adam_step(params: NetworkParams, grads: dict, state: AdamState):
    """One bias-corrected Adam update, in place, in fixed name order."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correct1 = 1.0 - b1**state.t
    correct2 = 1.0 - b2**state.t
    for name, tensor in params.trainable():
        g = grads[name]
        garr = g.data if isinstance(g, Tensor) else np.asarray(g)
        if not np.isfinite(garr).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * garr
        v *= b2
        v += (1.0 - b2) * garr * garr
        mhat = m / correct1
        vhat = v / correct2
        tensor.data = (tensor.data - state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)).astype(
            tensor.data.dtype, copy=False
        )


class EarlyStopState:
    """Track best validation loss, keep a snapshot, stop after ``patience``
    epochs plus one without strict improvement."""

    def __init__(self, patience: int = 15):
        self.patience = patience
        self.best_loss = np.inf
        self.best_params: NetworkParams | None = None
        self.since_improvement = 0


def early_stop_update(state: EarlyStopState, val_loss: float, params: NetworkParams) -> str:
    """Returns "continue" or "stop"; on stop the best snapshot is restored
    into ``params`` in place."""
    if not np.isfinite(val_loss):
        raise NumericError(f"non-finite validation loss {val_loss!r}")
    if val_loss < state.best_loss:
        state.best_loss = float(val_loss)
        state.best_params = params.copy()
        state.since_improvement = 0
        return "continue"
    state.since_improvement += 1
    if state.since_improvement > state.patience:
        if state.best_params is not None:
            params.load_state(state.best_params)
        return "stop"
    return "continue"
