"""Minimal PNG reader/writer for the frame formats the toolkit uses.

Writing: 16-bit grayscale only, filter type 0, fixed zlib level so the
emitted bytes are stable for a given array. Reading: grayscale and RGB at
8 or 16 bits with the five standard filters; RGB converts to Rec.601
luminance in container units. Interlaced or paletted files are rejected.
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import ValidationError

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def write_png16(path, data: np.ndarray) -> None:
    """Write a 2-D uint16 array as a 16-bit grayscale PNG."""
    if data.ndim != 2:
        raise ValidationError("png frames must be 2-D")
    arr = np.asarray(data, dtype=">u2")
    h, w = arr.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 16, 0, 0, 0, 0)
    raw = bytearray()
    row_bytes = arr.tobytes()
    stride = w * 2
    for y in range(h):
        raw.append(0)
        raw += row_bytes[y * stride : (y + 1) * stride]
    idat = zlib.compress(bytes(raw), 6)
    with open(path, "wb") as fh:
        fh.write(_SIGNATURE)
        fh.write(_chunk(b"IHDR", ihdr))
        fh.write(_chunk(b"IDAT", idat))
        fh.write(_chunk(b"IEND", b""))


def _paeth(a, b, c):
    p = a.astype(np.int32) + b.astype(np.int32) - c.astype(np.int32)
    pa = np.abs(p - a)
    pb = np.abs(p - b)
    pc = np.abs(p - c)
    out = np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))
    return out.astype(np.uint8)


def _unfilter(row, prev, ftype, bpp):
    if ftype == 0:
        return row
    if ftype == 2:
        return (row + prev).astype(np.uint8)
    out = np.empty_like(row)
    n = row.shape[0]
    if ftype == 1:
        out[:bpp] = row[:bpp]
        for i in range(bpp, n):
            out[i] = (int(row[i]) + int(out[i - bpp])) & 0xFF
    elif ftype == 3:
        for i in range(n):
            left = int(out[i - bpp]) if i >= bpp else 0
            out[i] = (int(row[i]) + ((left + int(prev[i])) >> 1)) & 0xFF
    elif ftype == 4:
        for i in range(n):
            left = int(out[i - bpp]) if i >= bpp else 0
            ul = int(prev[i - bpp]) if i >= bpp else 0
            out[i] = (int(row[i]) + int(_paeth(np.uint8(left), prev[i], np.uint8(ul)))) & 0xFF
    else:
        raise ValidationError(f"unsupported png filter type {ftype}")
    return out


def read_png(path):
    """Read a PNG file.

    Returns ``(image, container_max, channels)`` where image is a float64
    luminance plane in container units (0..container_max).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _SIGNATURE:
        raise ValidationError(f"{path}: not a png file")
    pos = 8
    width = height = bitdepth = colortype = interlace = None
    idat = bytearray()
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, bitdepth, colortype, _, _, interlace = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if width is None:
        raise ValidationError(f"{path}: missing IHDR")
    if interlace:
        raise ValidationError(f"{path}: interlaced png not supported")
    if colortype not in (0, 2):
        raise ValidationError(f"{path}: only grayscale or rgb png supported")
    if bitdepth not in (8, 16):
        raise ValidationError(f"{path}: unsupported bit depth {bitdepth}")
    channels = 1 if colortype == 0 else 3
    bpp = channels * (bitdepth // 8)
    stride = width * bpp
    raw = np.frombuffer(zlib.decompress(bytes(idat)), dtype=np.uint8)
    if raw.size != height * (stride + 1):
        raise ValidationError(f"{path}: corrupt pixel data")
    raw = raw.reshape(height, stride + 1)
    rows = np.empty((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for y in range(height):
        prev = _unfilter(raw[y, 1:].copy(), prev, int(raw[y, 0]), bpp)
        rows[y] = prev
    if bitdepth == 16:
        img = rows.reshape(height, width * channels, 2).astype(np.uint16)
        img = (img[:, :, 0].astype(np.float64) * 256.0) + img[:, :, 1]
        container_max = 65535.0
    else:
        img = rows.reshape(height, width * channels).astype(np.float64)
        container_max = 255.0
    if channels == 3:
        img = img.reshape(height, width, 3)
        img = 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]
    else:
        img = img.reshape(height, width)
    return img, container_max, channels
