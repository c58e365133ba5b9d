"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"PPRB"  u8 version
    repeated until EOF:
        u32 name_len, utf-8 name, u32 rank, rank x u64 dims, f64 payload (row-major)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ContractError

MAGIC = b"PPRB"
VERSION = 1


def dump_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", VERSION))
    for name, arr in params.items():
        arr = np.asarray(getattr(arr, "values", arr), dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes(order="C"))
    return buf.getvalue()


def parse_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise ContractError("not a PPRB checkpoint (bad magic bytes)")
    if len(data) < 5 or data[4] != VERSION:
        raise ContractError(f"unsupported checkpoint version {data[4] if len(data) > 4 else None}")
    out: dict[str, np.ndarray] = {}
    pos = 5
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = data[pos:pos + 8 * count]
            if len(payload) != 8 * count:
                raise ContractError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise ContractError(f"truncated checkpoint: {exc}") from None
    return out


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_checkpoint(params))
    return path


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return parse_checkpoint(Path(path).read_bytes())
