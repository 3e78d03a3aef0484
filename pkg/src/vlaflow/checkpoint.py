"""Binary checkpoint format (little-endian).

    magic      7 bytes   b"EVOACT1"
    version    u32
    hash       u64       first 8 bytes of SHA-256(body), little-endian
    body:
      meta_len u32, meta  UTF-8 JSON (config, norm stats, rng, trainer progress, dtype)
      n_rec    u32
      records  n_rec x:
        name_len u16, name UTF-8
        kind     u8      0 parameter, 1 first moment, 2 second moment
        frozen   u8
        opt_step u32     optimizer step count of the owning parameter
        ndim     u8, shape ndim x u32
        nbytes   u64, data (float32 or float64 per meta["dtype"])
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import CheckpointError
from .model import VLAModel
from .normalize import NormStats
from .nn.params import ParamStore

MAGIC = b"EVOACT1"
VERSION = 1
_DTYPES = {"float32": (torch.float32, "<f4"), "float64": (torch.float64, "<f8")}
_KINDS = ("param", "m", "v")


@dataclass
class Checkpoint:
    model: VLAModel
    trainer_state: dict | None = None
    extra: dict = field(default_factory=dict)
    content_hash: int = 0


def _dtype_name(dtype) -> str:
    for name, (td, _) in _DTYPES.items():
        if td == dtype:
            return name
    raise CheckpointError(f"unsupported dtype {dtype}")


def _record(buf, name: str, kind: int, frozen: bool, step: int, arr: np.ndarray, np_dtype: str):
    nb = name.encode()
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<BBIB", kind, int(frozen), step, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    data = np.ascontiguousarray(arr, dtype=np_dtype).tobytes()
    buf.write(struct.pack("<Q", len(data)))
    buf.write(data)


def to_bytes(model: VLAModel, trainer_state: dict | None = None, extra: dict | None = None) -> bytes:
    store = model.store
    dname = _dtype_name(store.dtype)
    np_dtype = _DTYPES[dname][1]
    meta = {
        "config": model.config.to_dict(),
        "norm": model.norm.to_dict(),
        "dtype": dname,
        "trainer": trainer_state,
        "extra": extra or {},
    }
    body = io.BytesIO()
    mb = json.dumps(meta, sort_keys=True).encode()
    body.write(struct.pack("<I", len(mb)))
    body.write(mb)
    records = []
    for name, p in store.items():
        st = store.opt_state.get(name)
        step = st["step"] if st else 0
        records.append((name, 0, p.detach().numpy(), step))
        if st:
            records.append((name, 1, st["m"].numpy(), step))
            records.append((name, 2, st["v"].numpy(), step))
    body.write(struct.pack("<I", len(records)))
    for name, kind, arr, step in records:
        _record(body, name, kind, store.is_frozen(name), step, arr, np_dtype)
    payload = body.getvalue()
    digest = int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")
    return MAGIC + struct.pack("<IQ", VERSION, digest) + payload


def save_checkpoint(model: VLAModel, path, trainer_state: dict | None = None, extra: dict | None = None) -> int:
    """Write ``model`` (and optional trainer progress) to ``path``; returns the content hash."""
    data = to_bytes(model, trainer_state, extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return struct.unpack_from("<Q", data, len(MAGIC) + 4)[0]


def from_bytes(data: bytes) -> Checkpoint:
    head = len(MAGIC) + 12
    if len(data) < head or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, digest = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    payload = data[head:]
    actual = int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")
    if actual != digest:
        raise CheckpointError(f"content hash mismatch: header {digest:016x}, body {actual:016x}")
    try:
        return _parse(payload, digest)
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint body: {exc}") from exc


def _parse(payload: bytes, digest: int) -> Checkpoint:
    off = 0
    (mlen,) = struct.unpack_from("<I", payload, off)
    off += 4
    meta = json.loads(payload[off:off + mlen])
    off += mlen
    torch_dtype, np_dtype = _DTYPES[meta["dtype"]]
    store = ParamStore(torch_dtype)
    (n_rec,) = struct.unpack_from("<I", payload, off)
    off += 4
    for _ in range(n_rec):
        (nlen,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off:off + nlen].decode()
        off += nlen
        kind, frozen, step, ndim = struct.unpack_from("<BBIB", payload, off)
        off += 7
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        (nbytes,) = struct.unpack_from("<Q", payload, off)
        off += 8
        arr = np.frombuffer(payload[off:off + nbytes], dtype=np_dtype).reshape(shape)
        off += nbytes
        t = torch.from_numpy(arr.copy())
        if kind == 0:
            store.add(name, t, frozen=bool(frozen))
        else:
            st = store.state_for(name)
            st[_KINDS[kind]] = t
            st["step"] = step
    if off != len(payload):
        raise CheckpointError("trailing bytes after last record")
    config = RunConfig.from_dict(meta["config"])
    model = VLAModel(config, store, NormStats.from_dict(meta["norm"]))
    return Checkpoint(model, meta["trainer"], meta["extra"], digest)


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
