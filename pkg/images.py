"""Image grids for generated samples: binary PGM (P5) files and optional PNG previews."""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
import pygame

PathLike = Union[str, Path]
GRID_PADDING = 2  # black pixels between tiles


def tile_grid(images: np.ndarray, padding: int = GRID_PADDING) -> np.ndarray:
    """Lay out images of shape (rows, cols, H, W) with values in [0, 1] as one 8-bit grayscale raster."""
    rows, cols, height, width = images.shape
    grid = np.zeros((rows * (height + padding) + padding, cols * (width + padding) + padding), dtype=np.uint8)
    pixels = np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)
    for r in range(rows):
        for c in range(cols):
            top = padding + r * (height + padding)
            left = padding + c * (width + padding)
            grid[top : top + height, left : left + width] = pixels[r, c]
    return grid


def encode_pgm(grid: np.ndarray) -> bytes:
    height, width = grid.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(grid, dtype=np.uint8).tobytes()


def write_pgm(path: PathLike, grid: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(grid))


def read_pgm(path: PathLike) -> np.ndarray:
    blob = Path(path).read_bytes()
    magic, dims, maxval, body = blob.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    width, height = (int(v) for v in dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def write_png(path: PathLike, grid: np.ndarray, scale: int = 1) -> None:
    """PNG preview of a grayscale grid, enlarged by an integer factor."""
    # surfarray is indexed (x, y, channel)
    rgb = np.repeat(grid.T[:, :, None], 3, axis=2)
    surface = pygame.surfarray.make_surface(rgb)
    if scale != 1:
        surface = pygame.transform.scale_by(surface, scale)
    pygame.image.save(surface, str(path))
