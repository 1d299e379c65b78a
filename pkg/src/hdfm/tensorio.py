"""Bit-exact tensor files and 8-bit PGM/PPM images.

Tensor layout: ``b"HDT1"``, one dtype byte (0 = float32, 1 = float64), one
ndim byte, ``ndim`` little-endian uint32 dims, then the row-major
little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HDT1"
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class TensorFormatError(ValueError):
    pass


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _DTYPES:
        raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    code = _DTYPES[arr.dtype]
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise TensorFormatError("bad magic; not an HDT1 tensor file")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in _CODES:
        raise TensorFormatError(f"unknown dtype code {code}")
    head = 6 + 4 * ndim
    if len(buf) < head:
        raise TensorFormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 6)
    dtype = _CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - head != expected:
        raise TensorFormatError(f"payload is {len(buf) - head} bytes, dims {dims} need {expected}")
    arr = np.frombuffer(buf, dtype=dtype, offset=head).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_tensor(path, arr) -> Path:
    path = Path(path)
    path.write_bytes(encode_tensor(arr))
    return path


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def to_uint8(img, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    scaled = np.round((np.clip(img, lo, hi) - lo) / (hi - lo) * 255.0)
    return scaled.astype(np.uint8)


def write_pnm(path, img, lo: float = -1.0, hi: float = 1.0) -> Path:
    """Binary PGM (``(H, W)`` or ``(H, W, 1)``) or PPM (``(H, W, 3)``), maxval 255."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {img.shape}")
    data = to_uint8(img, lo, hi)
    h, w = data.shape[:2]
    path = Path(path)
    path.write_bytes(magic + f"\n{w} {h}\n255\n".encode() + data.tobytes())
    return path


def read_pnm(path) -> np.ndarray:
    """Read a binary P5/P6 file with maxval 255 into ``uint8`` ``(H, W[, 3])``."""
    buf = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValueError(f"unsupported PNM file {path}")
    channels = 3 if magic == b"P6" else 1
    data = np.frombuffer(buf, dtype=np.uint8, offset=pos, count=w * h * channels)
    return data.reshape((h, w, 3) if channels == 3 else (h, w))
