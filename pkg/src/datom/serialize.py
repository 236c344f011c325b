"""Binary model files.

Layout (all integers little-endian ``u32``)::

    b"DTMM" | version | len(tag) | tag | len(table) | table | blobs

``tag`` is the architecture name, ``table`` a UTF-8 JSON document with the
model configuration and the name and shape of every parameter in
declaration order, and ``blobs`` the parameters as little-endian float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .models import ARCHITECTURES, build_model

MAGIC = b"DTMM"
VERSION = 1


class ModelFormatError(ValueError):
    """The file is not a readable model."""


def model_to_bytes(model) -> bytes:
    params = model.parameters()
    table = {
        "config": model.config(),
        "parameters": [{"name": p.name, "shape": list(p.shape)} for p in params],
    }
    tag = model.arch.encode()
    tbl = json.dumps(table, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(tag)), tag, struct.pack("<I", len(tbl)), tbl]
    parts += [p.value.astype("<f4").tobytes() for p in params]
    return b"".join(parts)


def model_from_bytes(data: bytes):
    try:
        if data[:4] != MAGIC:
            raise ModelFormatError("not a model file (bad magic)")
        (version,) = struct.unpack_from("<I", data, 4)
        if version != VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        (n,) = struct.unpack_from("<I", data, 8)
        tag = data[12 : 12 + n].decode()
        off = 12 + n
        (n,) = struct.unpack_from("<I", data, off)
        table = json.loads(data[off + 4 : off + 4 + n].decode())
        off += 4 + n
        if tag not in ARCHITECTURES:
            raise ModelFormatError(f"unknown architecture tag {tag!r}")
        model = build_model(tag, table["config"])
        params = model.parameters()
        entries = table["parameters"]
        if len(entries) != len(params):
            raise ModelFormatError("parameter table does not match architecture")
        for p, e in zip(params, entries):
            if e["name"] != p.name or tuple(e["shape"]) != p.shape:
                raise ModelFormatError(f"parameter {e['name']} {e['shape']} does not match {p.name} {p.shape}")
            size = int(np.prod(p.shape)) * 4
            if off + size > len(data):
                raise ModelFormatError("truncated parameter data")
            p.value[...] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=off).reshape(p.shape)
            off += size
        if off != len(data):
            raise ModelFormatError("trailing bytes after parameter data")
    except ModelFormatError:
        raise
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"corrupt model file: {e}") from e
    return model


def save_model(model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())
