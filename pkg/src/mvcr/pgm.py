"""Plain (ASCII) PGM images: zero-dependency inspection artifacts.

Values in [0, 1] are quantized to [0, maxval]. The plain variant keeps
artifacts diffable and viewable with any text editor.
"""

from __future__ import annotations

import numpy as np


def to_gray(img: np.ndarray, maxval: int = 255) -> np.ndarray:
    """Clip a float image in [0, 1] to integer gray levels."""
    arr = np.asarray(img, dtype=np.float64)
    return np.rint(np.clip(arr, 0.0, 1.0) * maxval).astype(np.int64)


def write_pgm(path, img: np.ndarray, maxval: int = 255) -> None:
    """img: [h, w] floats in [0, 1]."""
    if img.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {img.shape}")
    if not 0 < maxval <= 65535:
        raise ValueError(f"maxval must be in (0, 65535], got {maxval}")
    gray = to_gray(img, maxval)
    h, w = gray.shape
    lines = ["P2", f"{w} {h}", f"{maxval}"]
    for row in gray:
        # the plain format caps lines at 70 characters
        line = ""
        for v in row:
            tok = str(int(v))
            if line and len(line) + 1 + len(tok) > 70:
                lines.append(line)
                line = tok
            else:
                line = tok if not line else f"{line} {tok}"
        lines.append(line)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Back to floats in [0, 1]; accepts any plain P2 file."""
    with open(path) as f:
        tokens = []
        for raw in f:
            line = raw.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path} is not a plain PGM")
    w, h, maxval = (int(t) for t in tokens[1:4])
    pixels = np.array([int(t) for t in tokens[4:]], dtype=np.float64)
    if pixels.size != w * h:
        raise ValueError(f"expected {w * h} pixels, found {pixels.size}")
    return pixels.reshape(h, w) / maxval


def tile_images(images: np.ndarray, cols: int, side: int | None = None,
                gap: int = 1, gap_value: float = 1.0) -> np.ndarray:
    """Tile [n, side*side] (or [n, h, w]) images into one grid image."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        if side is None:
            side = int(round(np.sqrt(arr.shape[1])))
        if side * side != arr.shape[1]:
            raise ValueError(f"{arr.shape[1]} pixels is not {side}x{side}")
        arr = arr.reshape(-1, side, side)
    n, h, w = arr.shape
    if cols < 1:
        raise ValueError("need at least one column")
    rows = -(-n // cols)
    grid = np.full((rows * h + (rows - 1) * gap,
                    cols * w + (cols - 1) * gap), gap_value)
    for i in range(n):
        r, c = divmod(i, cols)
        grid[r * (h + gap):r * (h + gap) + h,
             c * (w + gap):c * (w + gap) + w] = arr[i]
    return grid
