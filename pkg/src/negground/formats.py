"""Embedding and checkpoint file formats.

Binary ``EMB1`` block: the magic bytes ``b"EMB1"``, then ``n`` and ``d`` as
little-endian u32, then ``n*d`` little-endian float32 values in row-major
order. A file may hold several blocks back to back (one per caption).
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import MalformedConfig, NegGroundError

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")


class FormatError(NegGroundError, ValueError):
    pass


def write_block(fh, matrix) -> None:
    arr = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    if arr.ndim != 2:
        raise FormatError(f"EMB1 blocks hold 2-D matrices, got shape {arr.shape}")
    fh.write(_HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
    fh.write(arr.tobytes(order="C"))


def read_block(fh):
    """Read one block; returns ``None`` at a clean end of file."""
    head = fh.read(_HEADER.size)
    if not head:
        return None
    if len(head) < _HEADER.size:
        raise FormatError("truncated EMB1 header")
    magic, n, d = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    payload = fh.read(4 * n * d)
    if len(payload) != 4 * n * d:
        raise FormatError(f"truncated EMB1 payload: expected {4 * n * d} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float32)


def read_blocks(path) -> list:
    with open(path, "rb") as fh:
        blocks = []
        while (block := read_block(fh)) is not None:
            blocks.append(block)
    return blocks


def write_blocks(path, matrices) -> None:
    with open(path, "wb") as fh:
        for m in matrices:
            write_block(fh, m)


def encode_blocks(matrices) -> bytes:
    buf = io.BytesIO()
    for m in matrices:
        write_block(buf, m)
    return buf.getvalue()


def is_binary(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


def read_jsonl(path_or_lines):
    if isinstance(path_or_lines, (str, Path)):
        with open(path_or_lines, encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(path_or_lines)
    out = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    return out


def dump_jsonl(records, fh) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False))
        fh.write("\n")


def read_embeddings(path) -> list:
    """Load ``[(caption or None, matrix), ...]`` from JSONL or EMB1 binary."""
    if is_binary(path):
        return [(None, b) for b in read_blocks(path)]
    out = []
    for rec in read_jsonl(path):
        if "embeddings" not in rec:
            raise FormatError("embedding JSONL records need an 'embeddings' field")
        out.append((rec.get("caption"), np.asarray(rec["embeddings"], dtype=np.float64)))
    return out


# ---------------------------------------------------------------- checkpoint

def save_layer(path, layer) -> None:
    """JSON header line ``{d, r, alpha}`` followed by EMB1 blocks for W, A, B."""
    header = json.dumps({"d": layer.d, "r": layer.r, "alpha": layer.alpha}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for m in (layer.W, layer.A, layer.B):
            write_block(fh, m)


def load_layer(path):
    from .adapter import LoraLinear

    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise MalformedConfig("checkpoint header is not JSON") from None
        blocks = [read_block(fh) for _ in range(3)]
    if any(b is None for b in blocks):
        raise FormatError("checkpoint is missing W, A or B")
    W, A, B = (b.astype(np.float64) for b in blocks)
    if W.shape != (header["d"], header["d"]) or A.shape != (header["r"], header["d"]):
        raise FormatError("checkpoint block shapes disagree with header")
    return LoraLinear(W, A, B, alpha=header["alpha"])
