"""Bit-exact binary tensor container (the `HAVA` format).

Byte layout, all little-endian:

    magic   4 bytes  b"HAVA"
    version u32      1
    count   u32      number of entries
    per entry:
        name_len u16
        name     UTF-8 bytes
        rank     u8
        dims     rank * u32
        dtype    u8       0 = f32, 1 = f64
        payload  row-major IEEE-754 reals

Payloads are stored in the dtype's width; reading returns arrays in the
stored dtype. write -> read is the identity on structure and payload bytes.
"""

import struct

import numpy as np

MAGIC = b"HAVA"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class ContainerError(ValueError):
    """Malformed container file or invalid entry set."""


class TensorContainer:
    """Ordered, uniquely named collection of real-valued arrays."""

    def __init__(self, entries=None):
        self.entries: list[tuple[str, np.ndarray]] = []
        self._index: dict[str, int] = {}
        for name, arr in entries or []:
            self.add(name, arr)

    def add(self, name: str, arr) -> None:
        if name in self._index:
            raise ContainerError(f"duplicate entry name: {name!r}")
        arr = np.asarray(arr)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self._index[name] = len(self.entries)
        self.entries.append((name, arr))

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.entries[self._index[name]][1]
        except KeyError:
            raise KeyError(f"container has no entry {name!r}") from None

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]


def _dtype_code(arr: np.ndarray) -> int:
    if arr.dtype == np.float32:
        return 0
    if arr.dtype == np.float64:
        return 1
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def write_container(entries, path) -> None:
    """Write (name, array) pairs (or a TensorContainer) to `path`."""
    if isinstance(entries, TensorContainer):
        entries = entries.entries
    container = TensorContainer(entries)  # validates names/shapes

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(container.entries)))
        for name, arr in container.entries:
            name_b = name.encode("utf-8")
            if len(name_b) > 0xFFFF:
                raise ContainerError(f"entry name too long: {name!r}")
            if arr.ndim > 0xFF:
                raise ContainerError(f"rank {arr.ndim} exceeds format limit")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            code = _dtype_code(arr)
            fh.write(struct.pack("<B", code))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())


def read_container(path) -> TensorContainer:
    """Read a container file; raises ContainerError on any malformation."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def take(n, what):
        nonlocal off
        if off + n > len(raw):
            raise ContainerError(f"truncated file: {what} at byte {off}")
        chunk = raw[off : off + n]
        off += n
        return chunk

    off = 0
    if take(4, "magic") != MAGIC:
        raise ContainerError(f"bad magic (expected {MAGIC!r})")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")

    out = TensorContainer()
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        name = take(name_len, f"entry {i} name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"entry {i} rank"))
        dims = []
        for j in range(rank):
            (d,) = struct.unpack("<I", take(4, f"entry {i} dim {j}"))
            if d < 1:
                raise ContainerError(f"entry {name!r}: dim {j} is {d}, must be >= 1")
            dims.append(d)
        if rank == 0:
            raise ContainerError(f"entry {name!r}: dims are empty")
        (code,) = struct.unpack("<B", take(1, f"entry {i} dtype"))
        if code not in _DTYPE_CODES:
            raise ContainerError(f"entry {name!r}: unknown dtype code {code}")
        dt = _DTYPE_CODES[code]
        n_items = int(np.prod(dims, dtype=np.int64))
        payload = take(n_items * dt.itemsize, f"entry {name!r} payload")
        arr = np.frombuffer(payload, dtype=dt).reshape(dims).copy()
        out.add(name, arr)  # rejects duplicates
    return out
