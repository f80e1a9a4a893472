"""Binary file formats: TensorFile, header+payload containers, PPM/PGM export."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, List, Tuple

import numpy as np

from .exceptions import FormatError

TENSOR_MAGIC = b"TNSR1"
DTYPE_F64 = b"f64"


def write_tensor(path, array) -> None:
    """Write ``array`` as a TensorFile.

    Layout: ``TNSR1`` | ``f64`` | rank (uint32 LE) | shape (uint64 LE each) |
    row-major little-endian float64 payload.
    """
    a = np.asarray(array, dtype="<f8", order="C")
    head = TENSOR_MAGIC + DTYPE_F64 + struct.pack("<I", a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(a.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:5] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not a TensorFile")
    if buf[5:8] != DTYPE_F64:
        raise FormatError(f"{path}: unsupported dtype tag {buf[5:8]!r}")
    (rank,) = struct.unpack_from("<I", buf, 8)
    shape = struct.unpack_from(f"<{rank}Q", buf, 12)
    off = 12 + 8 * rank
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) - off != 8 * n:
        raise FormatError(f"{path}: payload has {len(buf) - off} bytes, expected {8 * n}")
    return np.frombuffer(buf, dtype="<f8", offset=off).reshape(shape).astype(np.float64)


def dumps_json(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_container(path, magic: bytes, header: dict, arrays: Iterable[np.ndarray]) -> None:
    """Write ``magic`` | header length (uint64 LE) | JSON header | float64 blocks."""
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for a in arrays:
            fh.write(np.asarray(a, dtype="<f8").tobytes(order="C"))


def read_container(path, magic: bytes) -> Tuple[dict, bytes]:
    """Return the JSON header and the raw payload bytes."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    (hlen,) = struct.unpack_from("<Q", buf, len(magic))
    start = len(magic) + 8
    try:
        header = json.loads(buf[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})")
    return header, buf[start + hlen :]


def split_payload(payload: bytes, shapes: List[Tuple[int, ...]]) -> List[np.ndarray]:
    out, off = [], 0
    for shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        if off + 8 * n > len(payload):
            raise FormatError("payload truncated")
        out.append(np.frombuffer(payload, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
        off += 8 * n
    if off != len(payload):
        raise FormatError(f"payload has {len(payload) - off} trailing bytes")
    return out


def to_bytes_image(t, signed: bool) -> np.ndarray:
    """Quantize a float HWC tensor to uint8.

    ``signed`` maps [-1, 1] to 0..255 (zero lands on 128); otherwise [0, 1]
    maps to 0..255.  Values outside the range are clipped.
    """
    t = np.asarray(t, dtype=np.float64)
    if signed:
        v = np.floor(np.clip(t, -1.0, 1.0) * 127.5 + 128.0)
    else:
        v = np.round(np.clip(t, 0.0, 1.0) * 255.0)
    return np.clip(v, 0, 255).astype(np.uint8)


def write_ppm(path, t, signed: bool = False) -> None:
    """Write a rank-3 HWC tensor as binary PGM (1 channel) or PPM (3 channels)."""
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[2] not in (1, 3):
        raise FormatError(f"PPM export needs an HxWx1 or HxWx3 tensor, got shape {t.shape}")
    h, w, c = t.shape
    tag = b"P5" if c == 1 else b"P6"
    img = to_bytes_image(t, signed)
    with open(path, "wb") as fh:
        fh.write(tag + b"\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes(order="C"))


def read_ppm(path) -> np.ndarray:
    """Read a binary P5/P6 file with maxval 255 into an HxWxC uint8 array."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise FormatError(f"{path}: unsupported PNM variant {magic!r} maxval={maxval}")
    c = 1 if magic == b"P5" else 3
    return np.frombuffer(data, dtype=np.uint8, count=h * w * c, offset=pos).reshape(h, w, c)
