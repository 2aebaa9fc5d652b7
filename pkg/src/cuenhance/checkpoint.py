"""Deterministic binary checkpoint container.

Layout: 4 magic bytes, u32 version, u64 payload length, 32-byte sha256 of the
payload, payload. The payload is a JSON meta record followed by named arrays
in sorted order, each stored as (name, dtype, shape, raw C-order bytes).
Byte-for-byte reproducible for identical contents, unlike zip-based formats.
"""

import hashlib
import json
import struct

import numpy as np

MAGIC = b"CUEX"
VERSION = 1


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError("truncated checkpoint payload")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def encode_payload(arrays, meta):
    parts = [_pack_str(json.dumps(meta, sort_keys=True))]
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])  # tobytes() below is C-order regardless of layout
        parts.append(_pack_str(name))
        parts.append(_pack_str(arr.dtype.str))
        parts.append(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<Q", dim))
        raw = arr.tobytes()
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def decode_payload(payload):
    reader = _Reader(payload)
    meta = json.loads(reader.string())
    arrays = {}
    for _ in range(reader.u32()):
        name = reader.string()
        dtype = np.dtype(reader.string())
        shape = tuple(reader.u64() for _ in range(reader.u32()))
        raw = reader.take(reader.u64())
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return arrays, meta


def save_checkpoint(path, arrays, meta=None):
    payload = encode_payload(arrays, meta or {})
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(digest)
        fh.write(payload)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 48 or blob[:4] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != VERSION:
        raise CheckpointVersionError("unsupported checkpoint version %d" % version)
    (length,) = struct.unpack("<Q", blob[8:16])
    digest, payload = blob[16:48], blob[48:]
    if len(payload) != length or hashlib.sha256(payload).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch, file is corrupt or truncated")
    return decode_payload(payload)


def module_arrays(module, prefix):
    """Flatten a torch module's state dict into named numpy arrays."""
    return {
        prefix + "/" + key: value.detach().cpu().numpy()
        for key, value in module.state_dict().items()
    }


def load_module_arrays(module, arrays, prefix):
    import torch

    state = {}
    marker = prefix + "/"
    for key, value in arrays.items():
        if key.startswith(marker):
            state[key[len(marker) :]] = torch.as_tensor(value)
    module.load_state_dict(state)
    return module
