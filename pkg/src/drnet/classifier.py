"""Residual CNN grading fundus images into the five severity classes.

Topology: zero-pad + 7x7/2 conv stem (BN, relu), 3x3/2 max pool, one
residual stage per configured width (stride 2 downsampling except the first
stage), global average pooling, relu FC layers, and a final dense + softmax
over the 5 classes. Stage depth/widths are configuration because published
accounts of this family leave them open; defaults train at full 224 input,
and the reduced settings keep desk-scale tests fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import NumericError, ShapeError
from . import layers
from .layers import (
    BatchNormState,
    Conv2d,
    Dense,
    ResidualStage,
    global_avg_pool,
    max_pool2d,
    relu,
    softmax,
    zero_pad2d,
)
from .params import NetworkParams
from .tensor import RngStream, Tensor

NUM_CLASSES = 5


class DrClass(IntEnum):
    """Severity grades in clinical order."""

    NO_DR = 0
    MILD = 1
    MODERATE = 2
    SEVERE = 3
    PROLIFERATIVE = 4


CLASS_LABELS = {
    DrClass.NO_DR: "No DR",
    DrClass.MILD: "Mild",
    DrClass.MODERATE: "Moderate",
    DrClass.SEVERE: "Severe",
    DrClass.PROLIFERATIVE: "Proliferative DR",
}


@dataclass
class ClassifierConfig:
    stage_widths: tuple = (64, 128, 256)
    fc_widths: tuple = (512,)
    input_size: int = 224
    stem_channels: int = 64
    seed: int = 0

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.fc_widths = tuple(int(w) for w in self.fc_widths)
        if not self.stage_widths:
            raise ShapeError("classifier needs at least one residual stage")


class Classifier:
    """The network object: owns a NetworkParams and runs forward passes."""

    def __init__(self, config: ClassifierConfig, dtype=np.float32):
        self.config = config
        self.params = NetworkParams()
        rng = RngStream(config.seed)
        p = self.params

        size = config.input_size
        self.stem_conv = Conv2d(p, "stem.conv", 1, config.stem_channels, 7, stride=2,
                                padding=0, bias=False, rng=rng.child(0), dtype=dtype)
        self.stem_bn = BatchNormState(p, "stem.bn", config.stem_channels, dtype=dtype)
        size = layers.conv_out_dim(size + 6, 7, 2, 0)  # explicit zero-pad of 3
        size = layers.pool_out_dim(size, 3, 2, padding=1)

        self.stages = []
        in_ch = config.stem_channels
        for i, width in enumerate(config.stage_widths):
            stride = 1 if i == 0 else 2
            if stride == 2:
                if size < 2:
                    raise ShapeError(
                        f"input size {config.input_size} is too small for "
                        f"{len(config.stage_widths)} downsampling stages"
                    )
                size = layers.conv_out_dim(size, 3, 2, 1)
            self.stages.append(ResidualStage(p, f"stage{i}", in_ch, width, stride,
                                             rng.child(1 + i), dtype=dtype))
            in_ch = width

        self.fc = []
        feat = in_ch
        for j, width in enumerate(config.fc_widths):
            self.fc.append(Dense(p, f"fc{j}", feat, width, rng=rng.child(100 + j), dtype=dtype))
            feat = width
        self.head = Dense(p, "head", feat, NUM_CLASSES, rng=rng.child(200), dtype=dtype)

    def logits(self, x: Tensor, train: bool) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.config.input_size \
                or x.shape[3] != self.config.input_size:
            raise ShapeError(
                f"classifier expects (N,1,{self.config.input_size},"
                f"{self.config.input_size}) input, got {x.shape}"
            )
        h = zero_pad2d(x, 3)
        h = relu(self.stem_bn(self.stem_conv(h), train))
        h = max_pool2d(h, 3, 2, padding=1)
        for stage in self.stages:
            h = stage(h, train)
        h = global_avg_pool(h)
        for dense in self.fc:
            h = relu(dense(h))
        return self.head(h)

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        return softmax(self.logits(x, train), axis=1)


def build_classifier(config: ClassifierConfig, dtype=np.float32) -> Classifier:
    return Classifier(config, dtype=dtype)


def predict(net: Classifier, batch: Tensor) -> np.ndarray:
    """Eval-mode class probabilities, one row per image, rows sum to 1."""
    return net(batch, train=False).data


def predict_class(probabilities: np.ndarray) -> np.ndarray:
    """Argmax decision rule; ties break toward the lowest class index."""
    probs = np.asarray(probabilities)
    if not np.isfinite(probs).all():
        raise NumericError("predict_class: non-finite probabilities")
    if probs.ndim == 1:
        return int(np.argmax(probs))
    return np.argmax(probs, axis=1)
