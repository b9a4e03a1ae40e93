"""Minimal binary image formats: PPM (rgb), PGM (mask), PFM (float maps).

PFM follows the usual convention: 'PF' = 3 channels, 'Pf' = 1 channel,
negative scale = little-endian, rows stored bottom-to-top.
"""

from __future__ import annotations

import numpy as np

from .errors import CorruptManifest


def write_ppm(path, rgb_u8: np.ndarray) -> None:
    h, w, _ = rgb_u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(rgb_u8, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise CorruptManifest(f"{path}: not a binary PPM")
        w, h = _read_dims(f)
        maxval = int(_read_token_line(f))
        if maxval != 255:
            raise CorruptManifest(f"{path}: unsupported maxval {maxval}")
        data = f.read(w * h * 3)
        if len(data) != w * h * 3:
            raise CorruptManifest(f"{path}: truncated pixel data")
        return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pgm(path, gray_u8: np.ndarray) -> None:
    h, w = gray_u8.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(gray_u8, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise CorruptManifest(f"{path}: not a binary PGM")
        w, h = _read_dims(f)
        maxval = int(_read_token_line(f))
        if maxval != 255:
            raise CorruptManifest(f"{path}: unsupported maxval {maxval}")
        data = f.read(w * h)
        if len(data) != w * h:
            raise CorruptManifest(f"{path}: truncated pixel data")
        return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        magic, arr = b"Pf", data[:, :, None]
    elif data.ndim == 3 and data.shape[2] == 3:
        magic, arr = b"PF", data
    else:
        raise ValueError(f"PFM supports HxW or HxWx3, got {data.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")  # little-endian
        f.write(np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"PF", b"Pf"):
            raise CorruptManifest(f"{path}: not a PFM")
        channels = 3 if magic == b"PF" else 1
        w, h = _read_dims(f)
        scale = float(_read_token_line(f))
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        data = f.read(count * 4)
        if len(data) != count * 4:
            raise CorruptManifest(f"{path}: truncated pixel data")
        arr = np.frombuffer(data, dtype=dtype).reshape(h, w, channels)[::-1]
        arr = arr.astype(np.float32)
        return arr[:, :, 0].copy() if channels == 1 else arr.copy()


def _read_token_line(f) -> str:
    line = f.readline()
    if not line:
        raise CorruptManifest("unexpected end of header")
    return line.decode().strip()


def _read_dims(f) -> tuple[int, int]:
    parts = _read_token_line(f).split()
    if len(parts) != 2:
        raise CorruptManifest("bad dimensions line")
    return int(parts[0]), int(parts[1])
