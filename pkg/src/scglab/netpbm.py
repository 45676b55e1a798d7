"""Binary PPM (P6) / PGM (P5) reading and writing, maxval 255."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """rgb: (h, w, 3) float in [0,1] or uint8."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"write_ppm: expected (h,w,3), got {rgb.shape}")
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    h, w = rgb.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """gray: (h, w) bool, uint8, or float in [0,1]."""
    if gray.ndim != 2:
        raise ValueError(f"write_pgm: expected (h,w), got {gray.shape}")
    if gray.dtype == bool:
        gray = gray.astype(np.uint8) * 255
    elif gray.dtype != np.uint8:
        gray = np.clip(np.rint(gray * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + gray.tobytes())


def _read_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ValueError(f"bad netpbm magic, expected {magic!r}")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    return w, h, pos


def read_ppm(path: str | Path) -> np.ndarray:
    """Returns (h, w, 3) float32 in [0,1]."""
    data = Path(path).read_bytes()
    w, h, pos = _read_header(data, b"P6")
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return arr.reshape(h, w, 3).astype(np.float32) / 255.0


def read_pgm(path: str | Path) -> np.ndarray:
    """Returns (h, w) uint8."""
    data = Path(path).read_bytes()
    w, h, pos = _read_header(data, b"P5")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def to_bmp(rgb: np.ndarray) -> bytes:
    """Encode an (h, w, 3) image as an uncompressed 24-bit BMP (browser friendly)."""
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    h, w = rgb.shape[:2]
    row = w * 3
    padded = (row + 3) & ~3
    body = bytearray()
    pad = b"\x00" * (padded - row)
    bgr = rgb[:, :, ::-1]
    for y in range(h - 1, -1, -1):  # BMP stores rows bottom-up
        body += bgr[y].tobytes() + pad
    size = 14 + 40 + len(body)
    header = b"BM" + size.to_bytes(4, "little") + b"\x00\x00\x00\x00" + (54).to_bytes(4, "little")
    info = (
        (40).to_bytes(4, "little")
        + w.to_bytes(4, "little", signed=True)
        + h.to_bytes(4, "little", signed=True)
        + (1).to_bytes(2, "little")
        + (24).to_bytes(2, "little")
        + b"\x00" * 24
    )
    return header + info + bytes(body)
