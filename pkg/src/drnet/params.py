"""Named parameter collections and the binary checkpoint format.

Checkpoint layout (all integers little endian):

    magic   6 bytes  b"DRNET1"
    version 1 byte   0x01
    count   uint32
    then per entry, in sorted name order:
        name_len uint16, name utf-8, rank uint8, dims uint32 * rank,
        data float32 * prod(dims)

Everything a model needs to reproduce inference goes in, trainable weights
and buffers (batch-norm running stats) alike, so a save/load round trip is
bit exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor

_MAGIC = b"DRNET1"
_VERSION = 1


class NetworkParams:
    """Ordered collection of named tensors (weights plus buffers)."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._entries:
            raise ShapeError(f"duplicate parameter name {name!r}")
        tensor.name = name
        self._entries[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def trainable(self):
        return [(n, t) for n, t in self._entries.items() if t.requires_grad]

    def copy(self) -> "NetworkParams":
        """Deep copy of all values; used for early-stopping snapshots."""
        out = NetworkParams()
        for name, t in self._entries.items():
            out.add(name, Tensor(t.data.copy(), requires_grad=t.requires_grad))
        return out

    def load_state(self, source: "NetworkParams | dict[str, np.ndarray]"):
        """Assign values in place from another collection or an array map."""
        items = source.items() if isinstance(source, NetworkParams) else source.items()
        src = {n: (t.data if isinstance(t, Tensor) else t) for n, t in items}
        missing = set(self._entries) - set(src)
        if missing:
            raise DataError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, t in self._entries.items():
            arr = src[name]
            if tuple(arr.shape) != t.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {tuple(arr.shape)} vs model {t.shape}"
                )
            t.data = arr.astype(t.data.dtype, copy=True)

    def astype(self, dtype) -> "NetworkParams":
        out = NetworkParams()
        for name, t in self._entries.items():
            out.add(name, Tensor(t.data.astype(dtype), requires_grad=t.requires_grad))
        return out


def write_checkpoint(path, params: NetworkParams):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        names = sorted(params.names())
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(params[name].data, dtype=np.float32)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype("<f4", copy=False).tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 11 or blob[:6] != _MAGIC:
        raise DataError(f"{path} is not a checkpoint file (bad magic)")
    if blob[6] != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {blob[6]}")
    (count,) = struct.unpack_from("<I", blob, 7)
    off = 11
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            rank = blob[off]
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
            off += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            out[name] = arr.astype(np.float32, copy=True)
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt checkpoint") from exc
    return out
