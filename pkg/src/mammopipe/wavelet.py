"""Separable 2-D discrete wavelet transform (orthonormal Haar).

Subband naming follows the usual image convention: ``horiz`` holds the
left/right differences, ``vert`` the top/bottom differences and ``diag``
the checkerboard component. A grid with an odd side is extended by
repeating its last row/column (half-sample symmetric) before analysis and
cropped again on synthesis.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image import GrayImage, resize_bilinear, write_pgm

SUPPORTED_FAMILIES = ("haar",)
_S = 1.0 / np.sqrt(2.0)


class UnsupportedWaveletError(ValueError):
    pass


class SubbandShapeError(ValueError):
    pass


@dataclass
class SubbandSet:
    level: int
    approx: np.ndarray
    horiz: np.ndarray
    vert: np.ndarray
    diag: np.ndarray
    parent_shape: tuple[int, int] | None = None

    def bands(self) -> dict[str, np.ndarray]:
        return {"A": self.approx, "H": self.horiz, "V": self.vert, "D": self.diag}


@dataclass
class WaveletPyramid:
    levels: list[SubbandSet]
    final_approx: np.ndarray
    original_dims: tuple[int, int]  # (width, height)
    wavelet_family: str = "haar"
    max_val: int = field(default=255, repr=False)

    def level(self, j: int) -> SubbandSet:
        return self.levels[j - 1]

    def coefficients(self):
        for s in self.levels:
            yield s.horiz
            yield s.vert
            yield s.diag
        yield self.final_approx


def _check_family(family: str) -> None:
    if family.lower() not in SUPPORTED_FAMILIES:
        raise UnsupportedWaveletError(
            f"wavelet family {family!r} not supported (available: {', '.join(SUPPORTED_FAMILIES)})")


def _extend_even(x: np.ndarray) -> np.ndarray:
    pad_r = x.shape[0] % 2
    pad_c = x.shape[1] % 2
    if pad_r or pad_c:
        x = np.pad(x, ((0, pad_r), (0, pad_c)), mode="symmetric")
    return x


def dwt2d_level(grid: np.ndarray, family: str = "haar", level: int = 1) -> SubbandSet:
    """One analysis step: rows then columns, each split into low/high halves."""
    _check_family(family)
    x = np.asarray(grid, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"expected a non-empty 2-D grid, got shape {x.shape}")
    shape = x.shape
    x = _extend_even(x)
    # along each row: pairs of neighbouring columns
    lo = (x[:, 0::2] + x[:, 1::2]) * _S
    hi = (x[:, 0::2] - x[:, 1::2]) * _S
    # along each column: pairs of neighbouring rows
    approx = (lo[0::2] + lo[1::2]) * _S
    vert = (lo[0::2] - lo[1::2]) * _S
    horiz = (hi[0::2] + hi[1::2]) * _S
    diag = (hi[0::2] - hi[1::2]) * _S
    return SubbandSet(level, approx, horiz, vert, diag, parent_shape=shape)


def idwt2d(subbands: SubbandSet, family: str = "haar") -> np.ndarray:
    _check_family(family)
    a, h, v, d = (np.asarray(b, dtype=np.float64) for b in
                  (subbands.approx, subbands.horiz, subbands.vert, subbands.diag))
    if not (a.shape == h.shape == v.shape == d.shape) or a.ndim != 2:
        raise SubbandShapeError(
            f"subband shapes differ: A{a.shape} H{h.shape} V{v.shape} D{d.shape}")
    rows, cols = a.shape
    lo = np.empty((2 * rows, cols))
    hi = np.empty((2 * rows, cols))
    lo[0::2] = (a + v) * _S
    lo[1::2] = (a - v) * _S
    hi[0::2] = (h + d) * _S
    hi[1::2] = (h - d) * _S
    x = np.empty((2 * rows, 2 * cols))
    x[:, 0::2] = (lo + hi) * _S
    x[:, 1::2] = (lo - hi) * _S
    if subbands.parent_shape is not None:
        pr, pc = subbands.parent_shape
        if not (2 * rows - 1 <= pr <= 2 * rows and 2 * cols - 1 <= pc <= 2 * cols):
            raise SubbandShapeError(
                f"parent shape {subbands.parent_shape} incompatible with subbands {a.shape}")
        x = x[:pr, :pc]
    return x


def multilevel_dwt(img: GrayImage | np.ndarray, levels: int = 3, family: str = "haar") -> WaveletPyramid:
    """Recursive decomposition of the approximation band, ``levels`` times."""
    _check_family(family)
    if isinstance(img, GrayImage):
        grid, max_val = img.to_float(), img.max_val
    else:
        grid, max_val = np.asarray(img, dtype=np.float64), 255
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if min(grid.shape) < 2 ** levels:
        raise ValueError(f"image {grid.shape[1]}x{grid.shape[0]} too small for {levels} levels "
                         f"(needs min side >= {2 ** levels})")
    out = []
    current = grid
    for j in range(1, levels + 1):
        sb = dwt2d_level(current, family, level=j)
        out.append(sb)
        current = sb.approx
    return WaveletPyramid(out, current, (grid.shape[1], grid.shape[0]), family.lower(), max_val)


def reconstruct(pyramid: WaveletPyramid) -> np.ndarray:
    current = pyramid.final_approx
    for sb in reversed(pyramid.levels):
        current = idwt2d(SubbandSet(sb.level, current, sb.horiz, sb.vert, sb.diag, sb.parent_shape),
                         pyramid.wavelet_family)
    return current


def normalize_to_range(grid: np.ndarray, max_val: int = 255) -> np.ndarray:
    """Affine min-max map onto [0, max_val]; a flat grid maps to 0."""
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = grid.min(), grid.max()
    if hi == lo:
        return np.zeros_like(grid)
    return (grid - lo) * (max_val / (hi - lo))


def resize_to_original(grid: np.ndarray, target: tuple[int, int], mode: str = "bilinear",
                       max_val: int = 255) -> GrayImage:
    """Upsample a coefficient grid to ``target`` = (width, height) and map it to pixels."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty coefficient grid")
    w, h = target
    if w < 1 or h < 1:
        raise ValueError(f"target dimensions must be positive, got {target}")
    if mode == "bilinear":
        up = resize_bilinear(grid, (h, w))
    elif mode == "nearest":
        rows = np.minimum((np.arange(h) * grid.shape[0]) // h, grid.shape[0] - 1)
        cols = np.minimum((np.arange(w) * grid.shape[1]) // w, grid.shape[1] - 1)
        up = grid[rows][:, cols]
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    return GrayImage.from_float(normalize_to_range(up, max_val), max_val)


def export_pyramid(pyramid: WaveletPyramid, directory: str | os.PathLike, image_id: str) -> list[Path]:
    """Write every subband as ``{id}_L{j}_{A|H|V|D}.pgm`` (min-max scaled, native size)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for sb in pyramid.levels:
        for name, band in sb.bands().items():
            path = directory / f"{image_id}_L{sb.level}_{name}.pgm"
            write_pgm(path, GrayImage.from_float(normalize_to_range(band, pyramid.max_val),
                                                 pyramid.max_val))
            written.append(path)
    return written
