# runners/checkpoint.py
"""
Binary checkpoint (little-endian):

    b"AADM" | u32 version
    repeated until EOF:
        u16 name length | name (utf-8) | u8 rank | u32 extent * rank | float64 payload

Names: "param/<parameter name>", "adam.m/<name>", "adam.v/<name>", "meta/<key>".
Records are written in the order given, so the same state gives the same bytes.
"""

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Tuple, Union

import numpy as np

MAGIC = b"AADM"
VERSION = 1

PathLike = Union[str, Path]


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not fit the model."""


def write_tensors(path: PathLike, tensors: Iterable[Tuple[str, np.ndarray]]) -> Path:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in tensors:
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    return path


def read_tensors(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out: Dict[str, np.ndarray] = {}
    pos = 8
    try:
        while pos < len(raw):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            end = pos + 8 * count
            if end > len(raw):
                raise CheckpointError(f"{path}: record {name!r} runs past end of file")
            out[name] = np.frombuffer(raw[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
            pos = end
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated record ({e})") from e
    return out


def fingerprint(architecture: Mapping) -> int:
    """Stable integer digest of the architecture description (fits a float64 exactly)."""
    blob = json.dumps(architecture, sort_keys=True, default=str).encode("utf-8")
    return int(hashlib.sha256(blob).hexdigest()[:13], 16)


def pack_state(params, adam=None, meta: Mapping[str, float] = None) -> List[Tuple[str, np.ndarray]]:
    records = [(f"param/{p.name}", p.data) for p in params]
    if adam is not None:
        records += [(f"adam.m/{p.name}", adam.m[p.name]) for p in params if p.name in adam.m]
        records += [(f"adam.v/{p.name}", adam.v[p.name]) for p in params if p.name in adam.v]
        records.append(("meta/adam_t", np.array(float(adam.t))))
    for key, value in (meta or {}).items():
        records.append((f"meta/{key}", np.array(float(value))))
    return records


def restore_params(params, tensors: Mapping[str, np.ndarray], path: PathLike = ""):
    for p in params:
        key = f"param/{p.name}"
        if key not in tensors:
            raise CheckpointError(f"{path}: missing tensor {key!r}")
        if tensors[key].shape != p.shape:
            raise CheckpointError(f"{path}: {key!r} has shape {tensors[key].shape}, model expects {p.shape}")
        p.data[...] = tensors[key]


def meta_value(tensors: Mapping[str, np.ndarray], key: str, default=None):
    value = tensors.get(f"meta/{key}")
    return default if value is None else float(value)
