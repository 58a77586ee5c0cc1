"""Binary checkpoint format.

Layout (little-endian):

    magic   4 bytes  b"SIGG"
    header  u32      (model kind << 16) | format version
    count   u32      number of tensors
    per tensor:
        name_len u16, name UTF-8, rank u8, dims u32 each, payload f64

Tensors are written in sorted-name order. The kind field distinguishes
training states from frozen evaluation models sharing the format.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"SIGG"
FORMAT_VERSION = 1

KIND_TRAIN = 0
KIND_INCEPTION = 1


def write_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                     kind: int = KIND_TRAIN) -> None:
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", (kind << 16) | FORMAT_VERSION)
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")  # keeps rank 0 intact
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += arr.tobytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], int]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"truncated checkpoint {path} at byte {off}")
        out = blob[off:off + n]
        off += n
        return out

    if take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    header = struct.unpack("<I", take(4))[0]
    version = header & 0xFFFF
    kind = header >> 16
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    count = struct.unpack("<I", take(4))[0]
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack("<H", take(2))[0]
        name = take(name_len).decode("utf-8")
        rank = struct.unpack("<B", take(1))[0]
        dims = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        n_items = int(np.prod(dims)) if rank else 1
        payload = take(8 * n_items)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return tensors, kind


def rng_state_tensor(rng: np.random.Generator) -> np.ndarray:
    """Serialize a PCG64 generator state as exact small integers."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError("only PCG64 generators are checkpointable")
    words = []
    for key in ("state", "inc"):
        val = st["state"][key]
        words.extend((val >> (32 * i)) & 0xFFFFFFFF for i in range(4))
    words.append(st["has_uint32"])
    words.append(st["uinteger"])
    return np.array(words, dtype=np.float64)


def restore_rng_state(rng: np.random.Generator, tensor: np.ndarray) -> None:
    words = [int(w) for w in tensor]
    if len(words) != 10:
        raise CheckpointError("malformed rng state tensor")
    state = sum(words[i] << (32 * i) for i in range(4))
    inc = sum(words[4 + i] << (32 * i) for i in range(4))
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": state, "inc": inc},
        "has_uint32": words[8],
        "uinteger": words[9],
    }
