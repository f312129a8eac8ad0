"""Image file helpers: 8-bit PNG for colors and masks, PFM for float maps."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def save_png(path, image: np.ndarray) -> None:
    """Write a bool mask [H, W], a float image in [0, 1] ([H, W] or [H, W, 3]) or uint8 data."""
    a = np.asarray(image)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    elif a.dtype != np.uint8:
        a = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    # fixed encoder settings keep the bytes reproducible
    Image.fromarray(a).save(path, format="PNG", optimize=False, compress_level=6)


def load_png(path, as_mask: bool = False) -> np.ndarray:
    try:
        with Image.open(path) as im:
            a = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if as_mask:
        if a.ndim == 3:
            a = a[..., 0]
        return a >= 128
    if a.ndim == 3 and a.shape[-1] == 4:
        a = a[..., :3]
    return a.astype(np.float64) / 255.0


def save_pfm(path, data: np.ndarray) -> None:
    """Little-endian PFM; rows stored bottom-to-top per the format."""
    a = np.asarray(data, dtype=np.float32)
    color = a.ndim == 3
    H, W = a.shape[:2]
    header = f"{'PF' if color else 'Pf'}\n{W} {H}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(a[::-1]).astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
        lines, pos = [], 0
        for _ in range(3):
            end = raw.index(b"\n", pos)
            lines.append(raw[pos:end].decode("ascii").strip())
            pos = end + 1
        kind = lines[0]
        W, H = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read PFM {path}: {exc}") from exc
    if kind not in ("Pf", "PF"):
        raise DataError(f"{path}: not a PFM file")
    dt = "<f4" if scale < 0 else ">f4"
    shape = (H, W, 3) if kind == "PF" else (H, W)
    n = int(np.prod(shape))
    data = np.frombuffer(raw, dtype=dt, count=n, offset=pos)
    if data.size != n:
        raise DataError(f"{path}: truncated PFM data")
    return data.reshape(shape)[::-1].astype(np.float64)
