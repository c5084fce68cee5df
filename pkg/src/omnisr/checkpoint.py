"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"OPDN"
    u32 config length, UTF-8 JSON config record
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 dtype code (0 = float32),
                u8 ndim, ndim * u32 dims, u64 payload length, payload
    u32 CRC-32 of every byte between the magic and the CRC

The JSON record holds ``{"kind": ..., "model": {...}, "meta": {...}}``.
"""

import json
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"OPDN"
DTYPE_F32 = 0


class CheckpointError(Exception):
    code = "checkpoint"


class BadMagicError(CheckpointError):
    code = "bad_magic"


class TruncatedCheckpointError(CheckpointError):
    code = "truncated"


class ChecksumError(CheckpointError):
    code = "checksum"


@dataclass
class CheckpointData:
    kind: str
    model: dict
    tensors: "OrderedDict[str, torch.Tensor]"
    meta: dict = field(default_factory=dict)


@dataclass
class TransferReport:
    loaded: list
    missing: list          # in the model, absent from the checkpoint
    unexpected: list       # in the checkpoint, absent from the model
    shape_mismatch: list

    @property
    def unmatched(self):
        return sorted(self.missing + self.unexpected + self.shape_mismatch)


def _model_record(model):
    kind = getattr(model, "checkpoint_kind", "sr")
    return kind, model.config.to_dict()


def encode(kind, model_config, tensors, meta=None):
    record = json.dumps({"kind": kind, "model": model_config, "meta": meta or {}},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [struct.pack("<I", len(record)), record, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        arr = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = arr.tobytes(order="C")
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    body = b"".join(parts)
    return MAGIC + body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, buf, pos=0):
        self.buf = buf
        self.pos = pos

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"checkpoint ends early at byte {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _parse(buf):
    r = _Reader(buf, len(MAGIC))
    (n,) = r.unpack("<I")
    try:
        record = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"config record unreadable: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8", errors="replace")
        dtype, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I")
        (plen,) = r.unpack("<Q")
        payload = r.take(plen)
        if dtype != DTYPE_F32 or plen != 4 * int(np.prod(shape, dtype=np.int64)):
            raise ChecksumError(f"tensor {name!r} header is inconsistent")
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        tensors[name] = torch.from_numpy(arr)
    if len(buf) - r.pos < 4:
        raise TruncatedCheckpointError("checkpoint is missing its checksum")
    return record, tensors, r.pos


def decode(buf):
    if buf[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"not a checkpoint (magic {bytes(buf[:4])!r})")
    if len(buf) < len(MAGIC) + 4:
        raise TruncatedCheckpointError("checkpoint is too short")
    stored = struct.unpack("<I", buf[-4:])[0]
    actual = zlib.crc32(buf[len(MAGIC):-4]) & 0xFFFFFFFF
    if stored != actual:
        # distinguish a cut-off file from a corrupted one
        _parse(buf)
        raise ChecksumError(f"checksum mismatch: stored {stored:08x}, computed {actual:08x}")
    record, tensors, end = _parse(buf)
    if end + 4 != len(buf):
        raise ChecksumError("trailing bytes after tensor table")
    return CheckpointData(record["kind"], record["model"], tensors, record.get("meta", {}))


def save_checkpoint(model, path, meta=None):
    kind, config = _model_record(model)
    data = encode(kind, config, model.state_dict(), meta)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


def read_checkpoint(path):
    return decode(Path(path).read_bytes())


def build_from_record(kind, model_config):
    if kind == "sr":
        from .models import build_model
        return build_model(dict(model_config))
    if kind == "degradation":
        from .training.degradation import DegradationConfig, DegradationNet
        return DegradationNet(DegradationConfig.from_dict(model_config))
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def load_checkpoint(path):
    """Rebuild the model stored at ``path`` with its exact parameters."""
    data = read_checkpoint(path)
    model = build_from_record(data.kind, data.model)
    model.load_state_dict(data.tensors, strict=True)
    model.eval()
    return model


def transfer_weights(model, tensors):
    """Copy every tensor whose name and shape match into ``model``."""
    if isinstance(tensors, (str, Path)):
        tensors = read_checkpoint(tensors).tensors
    elif isinstance(tensors, CheckpointData):
        tensors = tensors.tensors
    own = model.state_dict()
    loaded, mismatch = [], []
    with torch.no_grad():
        for name, src in tensors.items():
            if name not in own:
                continue
            if own[name].shape != src.shape:
                mismatch.append(name)
                continue
            own[name].copy_(src)
            loaded.append(name)
    missing = [n for n in own if n not in tensors]
    unexpected = [n for n in tensors if n not in own]
    return TransferReport(loaded, missing, unexpected, mismatch)
