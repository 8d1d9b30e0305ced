"""Layer-wise finite-difference gradient suite.

Every differentiable primitive (and the reduced full classifier) is checked
against central differences in float64. Random inputs are nudged away from
relu kinks and pool ties; grad_check additionally drops any entry its secant
test flags as sitting on a kink.
"""

from __future__ import annotations

import numpy as np

from . import layers, optim
from .classifier import Classifier, ClassifierConfig
from .params import NetworkParams
from .tensor import RngStream, Tensor, grad_check

TOLERANCE = 1e-4


def _randn(seed, shape, scale=1.0, margin=0.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=shape) * scale
    if margin:
        x = np.where(np.abs(x) < margin, x + np.sign(x + 0.5) * 2 * margin, x)
    return x.astype(np.float64)


def _check_elementwise(seed):
    a = Tensor(_randn(seed, (4, 5)))
    b = Tensor(_randn(seed + 1, (4, 5), scale=0.5) + 2.0)
    return grad_check(lambda t: ((t * b + t / b - t * 0.5) * t).sum(), a)


def _check_matmul(seed):
    b = Tensor(_randn(seed + 1, (4, 3)))
    return grad_check(lambda t: (t @ b).sum(), Tensor(_randn(seed, (3, 4))))


def _check_conv2d_input(seed):
    w = Tensor(_randn(seed + 1, (3, 2, 3, 3), scale=0.5))
    b = Tensor(_randn(seed + 2, (3,)))
    x = Tensor(_randn(seed, (2, 2, 6, 6)))
    return grad_check(lambda t: layers.conv2d(t, w, b, stride=2, padding=1).sum(), x)


def _check_conv2d_weights(seed):
    x = Tensor(_randn(seed, (2, 2, 6, 6)))
    b = Tensor(_randn(seed + 2, (3,)))
    w = Tensor(_randn(seed + 1, (3, 2, 3, 3), scale=0.5))
    return grad_check(lambda t: (layers.conv2d(x, t, b, stride=1, padding=0) ** 2.0).sum(), w)


def _check_conv2d_transpose_input(seed):
    w = Tensor(_randn(seed + 1, (2, 3, 4, 4), scale=0.5))
    b = Tensor(_randn(seed + 2, (3,)))
    x = Tensor(_randn(seed, (2, 2, 5, 5)))
    return grad_check(
        lambda t: (layers.conv2d_transpose(t, w, b, stride=2, padding=1) ** 2.0).sum(), x
    )


def _check_conv2d_transpose_weights(seed):
    x = Tensor(_randn(seed, (2, 2, 5, 5)))
    w = Tensor(_randn(seed + 1, (2, 3, 4, 4), scale=0.5))
    return grad_check(
        lambda t: (layers.conv2d_transpose(x, t, None, stride=2, padding=1) ** 2.0).sum(), w
    )


def _bn_buffers(channels):
    return Tensor(np.zeros(channels, dtype=np.float64)), Tensor(np.ones(channels, dtype=np.float64))


def _check_batch_norm_input(seed):
    gamma = Tensor(_randn(seed + 1, (3,), scale=0.5) + 1.0)
    beta = Tensor(_randn(seed + 2, (3,), scale=0.5))
    rm, rv = _bn_buffers(3)
    x = Tensor(_randn(seed, (4, 3, 5, 5)))
    weights = Tensor(_randn(seed + 3, (4, 3, 5, 5)))

    def fn(t):
        return (layers.batch_norm(t, gamma, beta, rm, rv, train=True) * weights).sum()

    return grad_check(fn, x)


def _check_batch_norm_gamma(seed):
    x = Tensor(_randn(seed, (4, 3, 5, 5)))
    beta = Tensor(_randn(seed + 2, (3,), scale=0.5))
    rm, rv = _bn_buffers(3)
    weights = Tensor(_randn(seed + 3, (4, 3, 5, 5)))

    def fn(t):
        return (layers.batch_norm(x, t, beta, rm, rv, train=True) * weights).sum()

    return grad_check(fn, Tensor(_randn(seed + 4, (3,)) + 1.0))


def _check_batch_norm_beta(seed):
    x = Tensor(_randn(seed, (4, 3, 5, 5)))
    gamma = Tensor(_randn(seed + 1, (3,), scale=0.5) + 1.0)
    rm, rv = _bn_buffers(3)
    weights = Tensor(_randn(seed + 3, (4, 3, 5, 5)))

    def fn(t):
        return (layers.batch_norm(x, gamma, t, rm, rv, train=True) * weights).sum()

    return grad_check(fn, Tensor(_randn(seed + 5, (3,))))


def _check_max_pool(seed):
    x = Tensor(_randn(seed, (1, 1, 4, 4)))
    return grad_check(lambda t: (layers.max_pool2d(t, 2, 2) ** 2.0).sum(), x)


def _check_relu(seed):
    x = Tensor(_randn(seed, (4, 5), margin=0.1))
    return grad_check(lambda t: (layers.relu(t) ** 2.0).sum(), x)


def _check_leaky_relu(seed):
    x = Tensor(_randn(seed, (4, 5), margin=0.1))
    return grad_check(lambda t: (layers.leaky_relu(t) ** 2.0).sum(), x)


def _check_tanh(seed):
    weights = Tensor(_randn(seed + 1, (4, 5)))
    return grad_check(lambda t: (layers.tanh(t) * weights).sum(), Tensor(_randn(seed, (4, 5))))


def _check_sigmoid(seed):
    weights = Tensor(_randn(seed + 1, (4, 5)))
    return grad_check(lambda t: (layers.sigmoid(t) * weights).sum(), Tensor(_randn(seed, (4, 5))))


def _check_softmax(seed):
    weights = Tensor(_randn(seed + 1, (3, 5)))
    return grad_check(lambda t: (layers.softmax(t, axis=1) * weights).sum(),
                      Tensor(_randn(seed, (3, 5))))


def _check_linear(seed):
    w = Tensor(_randn(seed + 1, (6, 4)))
    b = Tensor(_randn(seed + 2, (4,)))
    return grad_check(lambda t: (layers.linear(t, w, b) ** 2.0).sum(),
                      Tensor(_randn(seed, (3, 6))))


def _check_global_avg_pool(seed):
    weights = Tensor(_randn(seed + 1, (2, 3)))
    return grad_check(lambda t: (layers.global_avg_pool(t) * weights).sum(),
                      Tensor(_randn(seed, (2, 3, 4, 4))))


def _check_dropout(seed):
    x = Tensor(_randn(seed, (6, 6)))

    def fn(t):
        # fresh stream per call makes the mask a pure function of the input
        return (layers.dropout(t, 0.4, train=True, rng=RngStream(seed)) ** 2.0).sum()

    return grad_check(fn, x)


def _check_cce(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 5, size=4)
    onehot = np.zeros((4, 5))
    onehot[np.arange(4), labels] = 1.0
    y = Tensor(onehot)

    def fn(t):
        return optim.categorical_cross_entropy(layers.softmax(t, axis=1), y)

    return grad_check(fn, Tensor(_randn(seed, (4, 5))))


def _check_bce(seed):
    rng = np.random.default_rng(seed)
    target = Tensor(rng.integers(0, 2, size=(6,)).astype(np.float64))

    def fn(t):
        return optim.binary_cross_entropy(layers.sigmoid(t), target)

    return grad_check(fn, Tensor(_randn(seed, (6,))))


def _check_identity_block(seed):
    params = NetworkParams()
    block = layers.IdentityBlock(params, "idb", 3, RngStream(seed), dtype=np.float64)
    x = Tensor(_randn(seed, (2, 3, 6, 6)))
    return grad_check(lambda t: (block(t, train=True) ** 2.0).sum(), x)


def _check_conv_block(seed):
    params = NetworkParams()
    block = layers.ConvBlock(params, "cvb", 3, 4, 2, RngStream(seed), dtype=np.float64)
    x = Tensor(_randn(seed, (2, 3, 6, 6)))
    return grad_check(lambda t: (block(t, train=True) ** 2.0).sum(), x)


def _check_residual_stage(seed):
    params = NetworkParams()
    stage = layers.ResidualStage(params, "stg", 4, 4, 1, RngStream(seed), dtype=np.float64)
    x = Tensor(_randn(seed, (1, 4, 8, 8)))
    # eval mode: a single image cannot feed train-mode batch statistics
    return grad_check(lambda t: (stage(t, train=False) ** 2.0).sum(), x)


def _check_full_classifier(seed):
    config = ClassifierConfig(stage_widths=(8, 16), fc_widths=(8,), input_size=32, seed=seed)
    net = Classifier(config, dtype=np.float64)
    onehot = np.zeros((1, 5))
    onehot[0, seed % 5] = 1.0
    y = Tensor(onehot)
    x = Tensor(_randn(seed, (1, 1, 32, 32), margin=0.05))

    def fn(t):
        # eval-mode forward keeps running stats frozen so fn stays pure
        return optim.categorical_cross_entropy(net(t, train=False), y)

    return grad_check(fn, x)


CHECKS = [
    ("elementwise", _check_elementwise),
    ("matmul", _check_matmul),
    ("conv2d_input", _check_conv2d_input),
    ("conv2d_weights", _check_conv2d_weights),
    ("conv2d_transpose_input", _check_conv2d_transpose_input),
    ("conv2d_transpose_weights", _check_conv2d_transpose_weights),
    ("batch_norm_input", _check_batch_norm_input),
    ("batch_norm_gamma", _check_batch_norm_gamma),
    ("batch_norm_beta", _check_batch_norm_beta),
    ("max_pool", _check_max_pool),
    ("relu", _check_relu),
    ("leaky_relu", _check_leaky_relu),
    ("tanh", _check_tanh),
    ("sigmoid", _check_sigmoid),
    ("softmax", _check_softmax),
    ("linear", _check_linear),
    ("global_avg_pool", _check_global_avg_pool),
    ("dropout", _check_dropout),
    ("categorical_cross_entropy", _check_cce),
    ("binary_cross_entropy", _check_bce),
    ("identity_block", _check_identity_block),
    ("conv_block", _check_conv_block),
    ("residual_stage", _check_residual_stage),
    ("classifier_full", _check_full_classifier),
]


def run_suite(seeds=range(10), checks=None):
    """Run every check over the given seeds; returns [(name, max_err)]."""
    selected = CHECKS if checks is None else [c for c in CHECKS if c[0] in checks]
    results = []
    for name, fn in selected:
        worst = 0.0
        for seed in seeds:
            worst = max(worst, fn(int(seed)))
        results.append((name, worst))
    return results
