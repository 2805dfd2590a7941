"""On-disk artifacts: training history, metric reports, parameter snapshots, run manifests.

Snapshot layout (all integers little-endian)::

    b"HEIH"  magic
    u8       version (1)
    repeated until EOF:
        u16      name length in bytes
        bytes    UTF-8 name
        u32      rows
        u32      cols
        f64 * rows*cols, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .training import EpochRecord, TrainHistory

MAGIC = b"HEIH"
VERSION = 1
HISTORY_HEADER = "epoch,loss,train_acc,test_acc"


class SnapshotError(ValueError):
    pass


def format_history(hist: TrainHistory) -> str:
    lines = [HISTORY_HEADER]
    lines += [f"{r.epoch},{r.loss!r},{r.train_acc!r},{r.test_acc!r}" for r in hist.records]
    return "\n".join(lines) + "\n"


def parse_history(text: str) -> TrainHistory:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != HISTORY_HEADER:
        raise ValueError("history must start with the header " + HISTORY_HEADER)
    hist = TrainHistory()
    for ln in lines[1:]:
        e, loss, tr, te = ln.split(",")
        hist.records.append(EpochRecord(int(e), float(loss), float(tr), float(te)))
    return hist


def format_report(metrics: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in metrics.items())


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for ln in text.splitlines():
        if "=" in ln:
            k, v = ln.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_snapshot(arrays: dict[str, np.ndarray], path) -> None:
    buf = bytearray(MAGIC)
    buf.append(VERSION)
    for name, a in arrays.items():
        a = np.asarray(a, dtype="<f8")
        if a.ndim != 2:
            raise SnapshotError(f"{name}: snapshot matrices must be 2-D")
        raw = name.encode("utf-8")
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<II", *a.shape)
        buf += np.ascontiguousarray(a).tobytes()
    Path(path).write_bytes(bytes(buf))


def read_snapshot(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise SnapshotError(f"{path}: not a snapshot (bad magic)")
    if len(data) < 5 or data[4] != VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version")
    out = {}
    pos = 5
    try:
        while pos < len(data):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + ln].decode("utf-8")
            pos += ln
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            size = rows * cols * 8
            if pos + size > len(data):
                raise SnapshotError(f"{path}: truncated matrix {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).copy()
            pos += size
    except struct.error:
        raise SnapshotError(f"{path}: truncated snapshot") from None
    return out


def write_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_table_csv(header: list[str], rows, path) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
