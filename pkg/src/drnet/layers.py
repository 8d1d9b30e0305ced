"""Neural-network building blocks shared by the classifier and the GAN.

Functional primitives operate on NCHW tensors and register their backward
rules on the active tape. Layer classes own named parameter tensors
(registered into a NetworkParams) and call the primitives.

Weight init: He normal for relu-activated conv/dense layers, normal(0, 0.02)
for every GAN layer, zeros for biases.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .params import NetworkParams
from .tensor import RngStream, Tensor, _result

DEFAULT_LEAKY_SLOPE = 0.2
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


# ---------------------------------------------------------------------------
# shape inference


def conv_out_dim(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if kernel > size + 2 * padding:
        raise ShapeError(
            f"kernel {kernel} exceeds padded input extent {size + 2 * padding}"
        )
    return out

def conv_transpose_out_dim(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size - 1) * stride - 2 * padding + kernel
    if out <= 0:
        raise ShapeError(
            f"conv_transpose output dimension {out} <= 0 "
            f"(in={size}, kernel={kernel}, stride={stride}, padding={padding})"
        )
    return out


def pool_out_dim(size: int, window: int, stride: int, padding: int = 0) -> int:
    if window > size + 2 * padding:
        raise ShapeError(f"pool window {window} exceeds input extent {size + 2 * padding}")
    return (size + 2 * padding - window) // stride + 1


# ---------------------------------------------------------------------------
# functional primitives


def zero_pad2d(x: Tensor, pad: int) -> Tensor:
    if pad == 0:
        return x
    p = int(pad)
    data = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    return _result(data, (x,), lambda g: (g[:, :, p:-p, p:-p],))


def _strided_windows(arr: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(arr, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution. x: (N,C,H,W), w: (O,C,KH,KW), b: (O,) or None."""
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels, weights expect {cw}")
    oh = conv_out_dim(h, kh, stride, padding)
    ow = conv_out_dim(wd, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _strided_windows(xp, kh, kw, stride, stride)  # N,C,OH,OW,KH,KW
    out = np.tensordot(win, w.data, axes=((1, 4, 5), (1, 2, 3)))  # N,OH,OW,O
    out = np.moveaxis(out, 3, 1).astype(x.data.dtype, copy=False)
    out = np.ascontiguousarray(out)
    if b is not None:
        out += b.data[None, :, None, None]

    def backward_fn(g):
        dw = np.tensordot(g, win, axes=((0, 2, 3), (0, 2, 3)))  # O,C,KH,KW
        dxp = np.zeros_like(xp)
        for ky in range(kh):
            for kx in range(kw):
                contrib = np.tensordot(g, w.data[:, :, ky, kx], axes=(1, 0))  # N,OH,OW,C
                dxp[:, :, ky : ky + (oh - 1) * stride + 1 : stride,
                    kx : kx + (ow - 1) * stride + 1 : stride] += np.moveaxis(contrib, 3, 1)
        if padding:
            dx = dxp[:, :, padding:-padding, padding:-padding]
        else:
            dx = dxp
        grads = [dx, dw.astype(w.data.dtype, copy=False)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _result(out, inputs, backward_fn)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-D convolution (adjoint of conv2d).

    x: (N,Ci,H,W), w: (Ci,Co,KH,KW), b: (Co,) or None.
    """
    n, ci, h, wd = x.shape
    cw, co, kh, kw = w.shape
    if cw != ci:
        raise ShapeError(f"conv2d_transpose: input has {ci} channels, weights expect {cw}")
    oh = conv_transpose_out_dim(h, kh, stride, padding)
    ow = conv_transpose_out_dim(wd, kw, stride, padding)

    fh = (h - 1) * stride + kh
    fw = (wd - 1) * stride + kw
    full = np.zeros((n, co, fh, fw), dtype=x.data.dtype)
    for ky in range(kh):
        for kx in range(kw):
            contrib = np.tensordot(x.data, w.data[:, :, ky, kx], axes=(1, 0))  # N,H,W,Co
            full[:, :, ky : ky + (h - 1) * stride + 1 : stride,
                 kx : kx + (wd - 1) * stride + 1 : stride] += np.moveaxis(contrib, 3, 1)
    out = full[:, :, padding : padding + oh, padding : padding + ow]
    out = np.ascontiguousarray(out)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward_fn(g):
        gf = np.zeros((n, co, fh, fw), dtype=g.dtype)
        gf[:, :, padding : padding + oh, padding : padding + ow] = g
        win = _strided_windows(gf, kh, kw, stride, stride)  # N,Co,H,W,KH,KW
        dx = np.tensordot(win, w.data, axes=((1, 4, 5), (1, 2, 3)))  # N,H,W,Ci
        dx = np.moveaxis(dx, 3, 1).astype(x.data.dtype, copy=False)
        dw = np.tensordot(x.data, win, axes=((0, 2, 3), (0, 2, 3)))  # Ci,Co,KH,KW
        grads = [np.ascontiguousarray(dx), dw.astype(w.data.dtype, copy=False)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _result(out, inputs, backward_fn)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor,
               running_var: Tensor, train: bool, momentum: float = BN_MOMENTUM,
               epsilon: float = BN_EPSILON) -> Tensor:
    """Per-channel batch normalization over (N,H,W).

    Train mode normalizes with batch statistics and updates the running
    stats in place (running = momentum*running + (1-momentum)*batch); eval
    mode reads the stored running statistics only.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got shape {x.shape}")
    if train:
        if x.shape[0] < 2:
            raise ShapeError("batch_norm in train mode needs batch size >= 2")
        axes = (0, 2, 3)
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv = 1.0 / np.sqrt(var + epsilon)
        xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
        out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
        running_mean.data = (momentum * running_mean.data + (1.0 - momentum) * mu).astype(
            running_mean.data.dtype, copy=False
        )
        running_var.data = (momentum * running_var.data + (1.0 - momentum) * var).astype(
            running_var.data.dtype, copy=False
        )

        def backward_fn(g):
            dbeta = g.sum(axis=axes)
            dgamma = (g * xhat).sum(axis=axes)
            scale = (gamma.data * inv)[None, :, None, None]
            dx = scale * (
                g
                - (dbeta / m)[None, :, None, None]
                - xhat * (dgamma / m)[None, :, None, None]
            )
            return (dx.astype(x.data.dtype, copy=False), dgamma, dbeta)

        return _result(out.astype(x.data.dtype, copy=False), (x, gamma, beta), backward_fn)

    inv = 1.0 / np.sqrt(running_var.data + epsilon)
    xhat = (x.data - running_mean.data[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward_eval(g):
        dx = g * (gamma.data * inv)[None, :, None, None]
        return (
            dx.astype(x.data.dtype, copy=False),
            (g * xhat).sum(axis=(0, 2, 3)),
            g.sum(axis=(0, 2, 3)),
        )

    return _result(out.astype(x.data.dtype, copy=False), (x, gamma, beta), backward_eval)


def max_pool2d(x: Tensor, window: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max pooling; gradient routes to the argmax (first occurrence on ties).

    Padding positions are filled with -inf so they never win the max.
    """
    stride = window if stride is None else stride
    n, c, h, w = x.shape
    oh = pool_out_dim(h, window, stride, padding)
    ow = pool_out_dim(w, window, stride, padding)
    if padding:
        neg = np.array(-np.inf, dtype=x.data.dtype)
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=neg)
    else:
        xp = x.data
    win = _strided_windows(xp, window, window, stride, stride)
    flat = win.reshape(n, c, oh, ow, window * window)
    idx = flat.argmax(axis=4)
    out = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]
    out = np.ascontiguousarray(out)

    def backward_fn(g):
        ky, kx = np.divmod(idx, window)
        ni, ci_, oi, oj = np.indices(idx.shape, sparse=False)
        ys = oi * stride + ky - padding
        xs = oj * stride + kx - padding
        dx = np.zeros_like(x.data)
        np.add.at(dx, (ni, ci_, ys, xs), g)
        return (dx,)

    return _result(out, (x,), backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.data.dtype, copy=False),)

    return _result(out, (x,), backward_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """Dense layer: x (N,Fin) @ w (Fin,Fout) + row-broadcast bias (Fout,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data[None, :]

    def backward_fn(g):
        grads = [g @ w.data.T, x.data.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _result(out, inputs, backward_fn)


def dropout(x: Tensor, rate: float, train: bool, rng: RngStream) -> Tensor:
    """Zero entries with probability ``rate`` and rescale survivors (train only)."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    scale = 1.0 / (1.0 - rate)
    mask = keep * scale
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


# activations ----------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data)
    return _result(out.astype(x.data.dtype, copy=False), (x,),
                   lambda g: (g * np.where(mask, 1.0, slope).astype(g.dtype),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = out.astype(d.dtype, copy=False)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (x,), backward_fn)


_ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ShapeError(f"unknown activation kind {kind!r}") from None


# ---------------------------------------------------------------------------
# initializers


def he_normal(rng: RngStream, shape, fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


def gan_normal(rng: RngStream, shape, dtype) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=shape).astype(dtype)


def _make_weight(rng, shape, fan_in, init, dtype):
    if init == "he":
        return he_normal(rng, shape, fan_in, dtype)
    if init == "gan":
        return gan_normal(rng, shape, dtype)
    if init == "zeros":
        return np.zeros(shape, dtype=dtype)
    raise ShapeError(f"unknown init {init!r}")


# ---------------------------------------------------------------------------
# layer classes


class Conv2d:
    def __init__(self, params: NetworkParams, name: str, in_ch: int, out_ch: int,
                 kernel: int, stride: int = 1, padding: int = 0, bias: bool = True,
                 init: str = "he", rng: RngStream | None = None, dtype=np.float32):
        rng = rng or RngStream(0)
        self.stride, self.padding, self.kernel = stride, padding, kernel
        fan_in = in_ch * kernel * kernel
        self.weight = params.add(name + ".weight", Tensor(
            _make_weight(rng, (out_ch, in_ch, kernel, kernel), fan_in, init, dtype),
            requires_grad=True))
        self.bias = None
        if bias:
            self.bias = params.add(name + ".bias", Tensor(
                np.zeros(out_ch, dtype=dtype), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def out_shape(self, in_shape):
        n, _, h, w = in_shape
        return (n, self.weight.shape[0],
                conv_out_dim(h, self.kernel, self.stride, self.padding),
                conv_out_dim(w, self.kernel, self.stride, self.padding))


class ConvTranspose2d:
    def __init__(self, params: NetworkParams, name: str, in_ch: int, out_ch: int,
                 kernel: int, stride: int = 1, padding: int = 0, bias: bool = True,
                 init: str = "gan", rng: RngStream | None = None, dtype=np.float32):
        rng = rng or RngStream(0)
        self.stride, self.padding, self.kernel = stride, padding, kernel
        fan_in = in_ch * kernel * kernel
        self.weight = params.add(name + ".weight", Tensor(
            _make_weight(rng, (in_ch, out_ch, kernel, kernel), fan_in, init, dtype),
            requires_grad=True))
        self.bias = None
        if bias:
            self.bias = params.add(name + ".bias", Tensor(
                np.zeros(out_ch, dtype=dtype), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_transpose(x, self.weight, self.bias, self.stride, self.padding)

    def out_shape(self, in_shape):
        n, _, h, w = in_shape
        return (n, self.weight.shape[1],
                conv_transpose_out_dim(h, self.kernel, self.stride, self.padding),
                conv_transpose_out_dim(w, self.kernel, self.stride, self.padding))


class BatchNormState:
    """Per-channel affine parameters plus running statistics."""

    def __init__(self, params: NetworkParams, name: str, channels: int,
                 momentum: float = BN_MOMENTUM, epsilon: float = BN_EPSILON,
                 dtype=np.float32):
        if epsilon <= 0:
            raise ShapeError("batch_norm epsilon must be > 0")
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = params.add(name + ".gamma", Tensor(np.ones(channels, dtype=dtype), requires_grad=True))
        self.beta = params.add(name + ".beta", Tensor(np.zeros(channels, dtype=dtype), requires_grad=True))
        self.running_mean = params.add(name + ".running_mean", Tensor(np.zeros(channels, dtype=dtype)))
        self.running_var = params.add(name + ".running_var", Tensor(np.ones(channels, dtype=dtype)))

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running_mean,
                          self.running_var, train, self.momentum, self.epsilon)


class Dense:
    def __init__(self, params: NetworkParams, name: str, in_f: int, out_f: int,
                 bias: bool = True, init: str = "he", rng: RngStream | None = None,
                 dtype=np.float32):
        rng = rng or RngStream(0)
        self.weight = params.add(name + ".weight", Tensor(
            _make_weight(rng, (in_f, out_f), in_f, init, dtype), requires_grad=True))
        self.bias = None
        if bias:
            self.bias = params.add(name + ".bias", Tensor(
                np.zeros(out_f, dtype=dtype), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


# residual blocks ------------------------------------------------------------


class IdentityBlock:
    """Residual branch (3x3 conv-BN-relu-3x3 conv-BN) added to the unchanged
    shortcut, then a final relu. Channel count is preserved."""

    def __init__(self, params, name, channels, rng, dtype=np.float32):
        self.conv1 = Conv2d(params, name + ".conv1", channels, channels, 3, 1, 1,
                            bias=False, rng=rng.child(1), dtype=dtype)
        self.bn1 = BatchNormState(params, name + ".bn1", channels, dtype=dtype)
        self.conv2 = Conv2d(params, name + ".conv2", channels, channels, 3, 1, 1,
                            bias=False, rng=rng.child(2), dtype=dtype)
        self.bn2 = BatchNormState(params, name + ".bn2", channels, dtype=dtype)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        y = relu(self.bn1(self.conv1(x), train))
        y = self.bn2(self.conv2(y), train)
        return relu(y + x)


class ConvBlock:
    """Residual block with a projecting 1x1 shortcut; may change channels and
    stride (spatial downsampling)."""

    def __init__(self, params, name, in_ch, out_ch, stride, rng, dtype=np.float32):
        self.conv1 = Conv2d(params, name + ".conv1", in_ch, out_ch, 3, stride, 1,
                            bias=False, rng=rng.child(1), dtype=dtype)
        self.bn1 = BatchNormState(params, name + ".bn1", out_ch, dtype=dtype)
        self.conv2 = Conv2d(params, name + ".conv2", out_ch, out_ch, 3, 1, 1,
                            bias=False, rng=rng.child(2), dtype=dtype)
        self.bn2 = BatchNormState(params, name + ".bn2", out_ch, dtype=dtype)
        self.proj = Conv2d(params, name + ".proj", in_ch, out_ch, 1, stride, 0,
                           bias=False, rng=rng.child(3), dtype=dtype)
        self.proj_bn = BatchNormState(params, name + ".proj_bn", out_ch, dtype=dtype)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        y = relu(self.bn1(self.conv1(x), train))
        y = self.bn2(self.conv2(y), train)
        shortcut = self.proj_bn(self.proj(x), train)
        return relu(y + shortcut)


class ResidualStage:
    """One convolutional block followed by two identity blocks."""

    def __init__(self, params, name, in_ch, out_ch, stride, rng, dtype=np.float32):
        self.conv_block = ConvBlock(params, name + ".block0", in_ch, out_ch, stride,
                                    rng.child(0), dtype=dtype)
        self.id1 = IdentityBlock(params, name + ".block1", out_ch, rng.child(1), dtype=dtype)
        self.id2 = IdentityBlock(params, name + ".block2", out_ch, rng.child(2), dtype=dtype)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        x = self.conv_block(x, train)
        x = self.id1(x, train)
        return self.id2(x, train)
