"""Named trainable parameters and their on-disk container.

Checkpoint byte layout (little-endian throughout):

    magic     4 bytes   b"BFCK"
    version   uint16    currently 1
    meta_len  uint32    length of the UTF-8 metadata text that follows
    meta      bytes     free-form text (config dump, provenance notes)
    count     uint32    number of parameter entries
    per entry:
        name_len  uint16
        name      UTF-8 bytes
        dtype     uint8   0 = float32, 1 = float64
        ndim      uint8
        extents   uint32 * ndim
        payload   raw C-order values, little-endian

Values round-trip bit-exactly; gradients are not serialized.
"""

from __future__ import annotations

import struct
from typing import Iterator, Tuple

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"BFCK"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class ParamStore:
    """Ordered mapping of unique names to gradient-tracking tensors.

    Iteration is always in sorted name order so optimizer sweeps and
    serialization are reproducible regardless of registration order.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._entries:
            raise ValueError(f"parameter '{name}' already registered")
        if not isinstance(tensor, Tensor):
            raise TypeError(f"parameter '{name}' must be a Tensor")
        if not tensor.requires_grad:
            raise ValueError(f"parameter '{name}' must require gradients")
        self._entries[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._entries[name]

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def n_values(self) -> int:
        """Total scalar count across all parameters."""
        return sum(t.size for t in self._entries.values())


def save_checkpoint(path, store: ParamStore, meta_text: str = "") -> None:
    """Write every parameter in the store to ``path`` (layout in module docstring)."""
    meta = meta_text.encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION)]
    chunks.append(struct.pack("<I", len(meta)))
    chunks.append(meta)
    chunks.append(struct.pack("<I", len(store)))
    for name, tensor in store.items():
        code = _DTYPE_CODES.get(tensor.data.dtype)
        if code is None:
            raise ValueError(f"parameter '{name}' has unsupported dtype {tensor.data.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, tensor.data.ndim))
        chunks.append(struct.pack(f"<{tensor.data.ndim}I", *tensor.data.shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype=_CODE_DTYPES[code]).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_checkpoint_meta(path) -> str:
    """Read only the metadata text, without touching the parameter payload."""
    with open(path, "rb") as fh:
        header = fh.read(10)
        if len(header) < 10 or header[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        version = struct.unpack_from("<H", header, 4)[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack_from("<I", header, 6)
        meta = fh.read(meta_len)
    if len(meta) != meta_len:
        raise ValueError(f"{path}: truncated metadata block")
    return meta.decode("utf-8")


def load_checkpoint(path) -> Tuple[ParamStore, str]:
    """Read a checkpoint file back into a fresh store; returns (store, meta_text)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if view[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = struct.unpack_from("<H", view, 4)[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 6
    (meta_len,) = struct.unpack_from("<I", view, pos)
    pos += 4
    meta_text = bytes(view[pos:pos + meta_len]).decode("utf-8")
    pos += meta_len
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4

    store = ParamStore()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", view, pos)
        pos += 2
        if code not in _CODE_DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code} for '{name}'")
        shape = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        arr = np.frombuffer(view, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
        pos += nbytes
        store.register(name, Tensor(arr.reshape(shape).copy(), requires_grad=True))
    if pos != len(blob):
        raise ValueError(f"{path}: {len(blob) - pos} trailing bytes after last entry")
    return store, meta_text
