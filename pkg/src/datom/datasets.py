"""Dataset files.

Text form::

    datom-dataset v1, T=<int>, n=<int>, labels=<0|1>, masks=<0|1>
    <T comma-separated floats>[,<label>][,<mask as a 0/1 string>]
    ...

Binary form: ``b"DTMD"``, then ``version, T, n, flags`` as little-endian
``u32`` (flag bit 0: labels, bit 1: masks), the samples as little-endian
float32 in row-major order, ``n`` labels as ``u32`` and ``n * T`` mask
bytes when flagged.

Ground-truth files share the text framing with their own header::

    datom-truth v1, T=<int>, n=<int>, fields=<name;name;...>

followed by one line per field per sample, in field order.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .signal import Dataset

MAGIC = b"DTMD"
VERSION = 1
_HEADER = re.compile(r"^datom-dataset v1, T=(\d+), n=(\d+), labels=([01]), masks=([01])$")
_TRUTH = re.compile(r"^datom-truth v1, T=(\d+), n=(\d+), fields=([\w;]*)$")


class DatasetFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def dumps_dataset(data: Dataset) -> str:
    has_y, has_m = data.labels is not None, data.masks is not None
    lines = [f"datom-dataset v1, T={data.length}, n={len(data)}, labels={int(has_y)}, masks={int(has_m)}"]
    for k in range(len(data)):
        fields = [_fmt(v) for v in data.signals[k]]
        if has_y:
            fields.append(str(int(data.labels[k])))
        if has_m:
            fields.append("".join("1" if f else "0" for f in data.masks[k]))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str, n_classes: Optional[int] = None) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DatasetFormatError("empty dataset file")
    m = _HEADER.match(lines[0].strip())
    if not m:
        raise DatasetFormatError(f"bad dataset header: {lines[0][:80]!r}")
    T, n, has_y, has_m = int(m[1]), int(m[2]), m[3] == "1", m[4] == "1"
    if len(lines) - 1 != n:
        raise DatasetFormatError(f"header says n={n}, found {len(lines) - 1} records")
    width = T + has_y + has_m
    x = np.empty((n, T))
    y = np.empty(n, dtype=np.int64) if has_y else None
    masks = np.empty((n, T), dtype=bool) if has_m else None
    for k, line in enumerate(lines[1:]):
        parts = line.strip().split(",")
        if len(parts) != width:
            raise DatasetFormatError(f"record {k}: expected {width} fields, got {len(parts)}")
        try:
            x[k] = [float(v) for v in parts[:T]]
            if has_y:
                y[k] = int(parts[T])
        except ValueError as e:
            raise DatasetFormatError(f"record {k}: {e}") from e
        if has_m:
            flags = parts[-1]
            if len(flags) != T or set(flags) - {"0", "1"}:
                raise DatasetFormatError(f"record {k}: mask must be {T} characters of 0/1")
            masks[k] = np.frombuffer(flags.encode(), dtype=np.uint8) == ord("1")
    try:
        return Dataset(x, y, masks, n_classes)
    except ValueError as e:
        raise DatasetFormatError(str(e)) from e


def dataset_to_bytes(data: Dataset) -> bytes:
    flags = (data.labels is not None) | ((data.masks is not None) << 1)
    parts = [MAGIC, struct.pack("<4I", VERSION, data.length, len(data), flags),
             data.signals.astype("<f4").tobytes()]
    if data.labels is not None:
        parts.append(data.labels.astype("<u4").tobytes())
    if data.masks is not None:
        parts.append(data.masks.astype(np.uint8).tobytes())
    return b"".join(parts)


def dataset_from_bytes(raw: bytes, n_classes: Optional[int] = None) -> Dataset:
    if raw[:4] != MAGIC or len(raw) < 20:
        raise DatasetFormatError("not a binary dataset")
    version, T, n, flags = struct.unpack_from("<4I", raw, 4)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    has_y, has_m = bool(flags & 1), bool(flags & 2)
    expected = 20 + 4 * n * T + 4 * n * has_y + n * T * has_m
    if len(raw) != expected:
        raise DatasetFormatError(f"binary dataset should be {expected} bytes, got {len(raw)}")
    off = 20
    x = np.frombuffer(raw, "<f4", n * T, off).reshape(n, T).astype(np.float64)
    off += 4 * n * T
    y = masks = None
    if has_y:
        y = np.frombuffer(raw, "<u4", n, off).astype(np.int64)
        off += 4 * n
    if has_m:
        masks = np.frombuffer(raw, np.uint8, n * T, off).reshape(n, T).astype(bool)
    try:
        return Dataset(x, y, masks, n_classes)
    except ValueError as e:
        raise DatasetFormatError(str(e)) from e


def save_dataset(data: Dataset, path, binary: Optional[bool] = None):
    path = Path(path)
    if binary is None:
        binary = path.suffix == ".dtmd"
    if binary:
        path.write_bytes(dataset_to_bytes(data))
    else:
        path.write_text(dumps_dataset(data))


def load_dataset(path, n_classes: Optional[int] = None) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] == MAGIC:
        return dataset_from_bytes(raw, n_classes)
    try:
        text = raw.decode()
    except UnicodeDecodeError as e:
        raise DatasetFormatError("dataset is neither binary nor text") from e
    return loads_dataset(text, n_classes)


def dumps_truth(fields: dict, T: int) -> str:
    """``fields`` maps a name to an ``(n, ...)`` array; each sample's rows follow in field order."""
    names = list(fields)
    arrays = [np.asarray(fields[k], dtype=np.float64) for k in names]
    n = arrays[0].shape[0] if arrays else 0
    lines = [f"datom-truth v1, T={T}, n={n}, fields={';'.join(names)}"]
    for k in range(n):
        for a in arrays:
            lines.append(",".join(_fmt(v) for v in np.ravel(a[k])))
    return "\n".join(lines) + "\n"


def loads_truth(text: str) -> dict:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    m = _TRUTH.match(lines[0].strip()) if lines else None
    if not m:
        raise DatasetFormatError("bad ground-truth header")
    n = int(m[2])
    names = [f for f in m[3].split(";") if f]
    if len(lines) - 1 != n * len(names):
        raise DatasetFormatError("ground-truth record count does not match header")
    out = {name: [] for name in names}
    for k, line in enumerate(lines[1:]):
        out[names[k % len(names)]].append([float(v) for v in line.split(",")])
    return {name: np.array(rows) for name, rows in out.items()}
