"""Zero-dependency image emission: binary PPM/PGM, minimal PNG, raw
float planes, and a flow color-wheel rendering."""

from __future__ import annotations

import struct
import zlib

import numpy as np

__all__ = [
    "write_ppm",
    "read_ppm",
    "write_pgm",
    "read_pgm",
    "write_png",
    "write_float_plane",
    "read_float_plane",
    "flow_color_wheel",
    "encode_gamma",
    "decode_gamma",
]


def encode_gamma(linear: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    return np.clip(linear, 0.0, 1.0) ** (1.0 / gamma)


def decode_gamma(encoded: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    return np.clip(encoded, 0.0, 1.0) ** gamma


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    """Binary P6, 8-bit, values in [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM wants an (H, W, 3) image")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(_to_u8(img).tobytes())


def _read_pnm_header(fh, magic: bytes):
    if fh.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(v) for v in text.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ValueError("only 8-bit files supported")
    return w, h


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_pnm_header(fh, b"P6")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary P5 grayscale, values in [0, 1]."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError("PGM wants an (H, W) image")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(_to_u8(gray).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_pnm_header(fh, b"P5")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / 255.0


def write_png(path, img: np.ndarray) -> None:
    """Minimal 8-bit RGB PNG writer (zlib-deflated, no interlace)."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    h, w = img.shape[:2]
    raw = _to_u8(img)
    scanlines = b"".join(b"\x00" + raw[y].tobytes() for y in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    with open(path, "wb") as fh:
        fh.write(b"\x89PNG\r\n\x1a\n")
        fh.write(chunk(b"IHDR", header))
        fh.write(chunk(b"IDAT", zlib.compress(scanlines, 9)))
        fh.write(chunk(b"IEND", b""))


def write_float_plane(path, array: np.ndarray) -> None:
    """Raw little-endian float32 plane(s), C order, no header."""
    np.asarray(array, dtype="<f4").tofile(path)


def read_float_plane(path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(shape).astype(np.float64)


def flow_color_wheel(flow_vectors: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """Map a flow field to RGB: hue encodes direction, value magnitude."""
    u = flow_vectors[..., 0]
    v = flow_vectors[..., 1]
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = max(float(mag.max()), 1e-9)
    val = np.clip(mag / max_magnitude, 0.0, 1.0)
    hue = (np.arctan2(v, u) + np.pi) / (2.0 * np.pi)  # [0, 1)
    sat = np.ones_like(hue)
    # manual HSV -> RGB
    i = np.floor(hue * 6.0).astype(int) % 6
    f = hue * 6.0 - np.floor(hue * 6.0)
    p = val * (1 - sat)
    q = val * (1 - f * sat)
    t = val * (1 - (1 - f) * sat)
    rgb = np.zeros(hue.shape + (3,))
    for idx, (r, g, b) in enumerate(((val, t, p), (q, val, p), (p, val, t),
                                     (p, q, val), (t, p, val), (val, p, q))):
        mask = i == idx
        rgb[mask, 0] = r[mask]
        rgb[mask, 1] = g[mask]
        rgb[mask, 2] = b[mask]
    return rgb
