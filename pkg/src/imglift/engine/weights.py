"""Weight store and its binary serialization.

File layout (all little-endian): magic "PXLW", u16 version=1,
u32 tensor count; per tensor: u16 name length, UTF-8 name, u8 rank,
u32 dims[rank], float32 data row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import LoadError

MAGIC = b"PXLW"
VERSION = 1


@dataclass
class WeightStore:
    """Named float32 tensors; conv layers own `<name>.weight` and `<name>.bias`."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __len__(self) -> int:
        return len(self.tensors)

    def put(self, name: str, value: np.ndarray):
        self.tensors[name] = np.ascontiguousarray(value, dtype=np.float32)

    def weight(self, layer: str) -> np.ndarray:
        return self.tensors[f"{layer}.weight"]

    def bias(self, layer: str) -> np.ndarray:
        return self.tensors[f"{layer}.bias"]


def save_weights(store: WeightStore) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HI", VERSION, len(store.tensors))
    for name, arr in store.tensors.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:32]}...")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f4").tobytes()
    return bytes(out)


def load_weights(data: bytes) -> WeightStore:
    """Parse a weight blob; LoadError on bad magic, version, or truncation."""
    if len(data) < 10 or data[:4] != MAGIC:
        raise LoadError(f"bad weight file magic {data[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise LoadError(f"unsupported weight file version {version}, expected {VERSION}")
    pos = 10
    store = WeightStore()
    for i in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            raw = data[pos:pos + 4 * n]
            if len(raw) != 4 * n:
                raise struct.error("truncated tensor data")
            pos += 4 * n
        except (struct.error, UnicodeDecodeError) as exc:
            raise LoadError(f"truncated or corrupt weight file at tensor {i}: {exc}") from exc
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
        store.put(name, arr)
    return store
