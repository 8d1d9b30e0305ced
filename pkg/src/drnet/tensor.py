"""Dense tensors with reverse-mode automatic differentiation.

Differentiable operations record themselves on an explicit Tape while one is
active; the backward pass replays the records in exact reverse insertion
order, so gradient accumulation is deterministic run to run. Outside a Tape
everything is plain numpy. float32 is the training precision; float64 is the
opt-in precision for gradient checking.

There is no implicit broadcasting: binary ops require equal shapes or a
python scalar. The only broadcasts in the engine are the documented
batch/channel ones inside the layer primitives (bias add, batch norm).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


class RngStream:
    """Counter-based random stream: (seed, substream) fully determines the
    draw sequence on any platform (Philox underneath)."""

    def __init__(self, seed: int, substream: int = 0):
        self.seed = int(seed) & _MASK64
        self.substream = int(substream) & _MASK64
        key = np.array([self.seed, self.substream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, *ids: int) -> "RngStream":
        """Derive an independent substream from integer ids (epoch, index, ...)."""
        h = _splitmix64(self.substream ^ 0xD1B54A32D192ED03)
        for i in ids:
            h = _splitmix64(h ^ (int(i) & _MASK64))
        return RngStream(self.seed, h)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, mean=0.0, std=1.0, size=None):
        return self._gen.normal(mean, std, size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


# ---------------------------------------------------------------------------
# Tape


class _Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output, inputs, backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


_active_tape: "Tape | None" = None


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager around the forward pass, then call
    ``backward(loss)``. A tape is single threaded; parallelism belongs across
    independent tapes.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._output_ids: set[int] = set()
        self._watched: dict[int, "Tensor"] = {}
        self._prev = None

    def __enter__(self) -> "Tape":
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._prev
        self._prev = None
        return False

    def _record(self, output, inputs, backward_fn):
        for t in inputs:
            if t.requires_grad and id(t) not in self._output_ids:
                self._watched.setdefault(id(t), t)
        self._nodes.append(_Node(output, inputs, backward_fn))
        self._output_ids.add(id(output))

    def backward(self, loss: "Tensor", params=None) -> dict:
        """Propagate d(loss)/d(x) to every reachable requires_grad tensor.

        Sets ``.grad`` (an ndarray) on each watched leaf. Returns a map of
        parameter name -> gradient Tensor for every named leaf; when
        ``params`` (an iterable of (name, Tensor)) is given, parameters not
        reached by the loss get an explicit zero gradient.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, ig in zip(node.inputs, node.backward_fn(g)):
                if ig is None or not t.requires_grad:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = ig if acc is None else acc + ig

        if loss.requires_grad and id(loss) not in self._output_ids:
            self._watched.setdefault(id(loss), loss)
            grads.setdefault(id(loss), np.ones_like(loss.data))

        out: dict[str, Tensor] = {}
        for tid, t in self._watched.items():
            g = grads.get(tid)
            t.grad = g if g is not None else np.zeros_like(t.data)
            if t.name is not None:
                out[t.name] = Tensor(t.grad)
        if params is not None:
            items = params.items() if hasattr(params, "items") else params
            for name, t in items:
                if t.requires_grad and name not in out:
                    t.grad = np.zeros_like(t.data)
                    out[name] = Tensor(t.grad)
        return out


def backward(tape: Tape, loss: "Tensor", params=None) -> dict:
    return tape.backward(loss, params)


# ---------------------------------------------------------------------------
# Tensor


def _coerce(data, dtype):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in _FLOAT_DTYPES:
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    """N-dimensional float array, immutable shape, optional gradient linkage.

    Layout convention for image data is NCHW.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _coerce(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def log(self):
        return tlog(self)

    def exp(self):
        return texp(self)

    def sqrt(self):
        return tsqrt(self)

    def clip(self, lo, hi):
        return tclip(self, lo, hi)

    def reshape(self, *shape):
        return reshape(self, *shape)


def _result(data, inputs, backward_fn):
    """Wrap an op result; record it when a tape is active and grads flow."""
    out = Tensor(data)
    tape = _active_tape
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(out, inputs, backward_fn)
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# elementwise ---------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "add")
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    return _result(a.data + b, (a,), lambda g: (g,))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "mul")
        return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    return _result(a.data * b, (a,), lambda g: (g * b,))


def div(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "div")
        return _result(
            a.data / b.data,
            (a, b),
            lambda g: (g / b.data, -g * a.data / (b.data * b.data)),
        )
    return _result(a.data / b, (a,), lambda g: (g / b,))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent) -> Tensor:
    e = float(exponent)
    out = a.data**e
    return _result(out, (a,), lambda g: (g * e * a.data ** (e - 1.0),))


def tlog(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g / (2.0 * out),))


def tclip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data > lo) & (a.data < hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def tsum(a: Tensor) -> Tensor:
    return _result(
        np.asarray(a.data.sum(), dtype=a.data.dtype),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=False),)
    )


def tmean(a: Tensor) -> Tensor:
    n = a.size
    return _result(
        np.asarray(a.data.mean(), dtype=a.data.dtype),
        (a,),
        lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.data.dtype, copy=False),),
    )


def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    return _result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(fn, x: Tensor, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must be a pure scalar-valued function of one tensor. Runs in
    float64. Entries where the two one-sided secants disagree wildly sit on a
    kink (relu corner, pool tie) where central differences are invalid; those
    entries are excluded.
    """
    x64 = Tensor(np.asarray(x.data, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        out = fn(x64)
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued fn, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: fn produced a non-finite value")
    tape.backward(out)
    analytic = x64.grad.reshape(-1)

    base = x64.data.copy()
    f0 = float(fn(Tensor(base)).data)
    flat = base.reshape(-1)
    numeric = np.zeros_like(flat)
    reliable = np.ones(flat.size, dtype=bool)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = float(fn(Tensor(base)).data)
        flat[i] = orig - epsilon
        fm = float(fn(Tensor(base)).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("grad_check: fn produced a non-finite value")
        numeric[i] = (fp - fm) / (2.0 * epsilon)
        d_plus = (fp - f0) / epsilon
        d_minus = (f0 - fm) / epsilon
        # one-sided secants diverge only when a kink sits inside +-epsilon
        if abs(d_plus - d_minus) > np.sqrt(epsilon) * max(1.0, abs(d_plus), abs(d_minus)):
            reliable[i] = False

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    rel = np.abs(analytic - numeric) / denom
    if not reliable.any():
        return 0.0
    return float(rel[reliable].max())
