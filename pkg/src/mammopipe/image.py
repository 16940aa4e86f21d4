"""Grayscale image container and PGM (P2/P5) codec."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class PgmDecodeError(ValueError):
    """Base class for malformed PGM input."""


class PgmMagicError(PgmDecodeError):
    pass


class PgmHeaderError(PgmDecodeError):
    pass


class PgmMaxValError(PgmDecodeError):
    pass


class PgmTruncatedError(PgmDecodeError):
    pass


@dataclass(eq=False)
class GrayImage:
    """2-D intensity grid, row-major, values in ``[0, max_val]``."""

    pixels: np.ndarray
    max_val: int = 255

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"pixels must be a non-empty 2-D grid, got shape {px.shape}")
        if not 1 <= int(self.max_val) <= 65535:
            raise ValueError(f"max_val must lie in [1, 65535], got {self.max_val}")
        self.max_val = int(self.max_val)
        if px.dtype.kind == "f":
            if not np.all(np.isfinite(px)) or np.any(px != np.rint(px)):
                raise ValueError("pixel values must be integers")
        if px.size and (px.min() < 0 or px.max() > self.max_val):
            raise ValueError(f"pixel values must lie in [0, {self.max_val}]")
        dtype = np.uint8 if self.max_val <= 255 else np.uint16
        self.pixels = px.astype(dtype, copy=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @classmethod
    def from_float(cls, values: np.ndarray, max_val: int = 255) -> "GrayImage":
        """Round half-to-even and clip real values into the integer range."""
        return cls(np.clip(np.rint(values), 0, max_val), max_val)

    def to_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return (self.max_val == other.max_val and self.shape == other.shape
                and np.array_equal(self.pixels, other.pixels))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height}, max_val={self.max_val})"


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the byte just after the last token.
    """
    tokens: list[bytes] = []
    pos, n = 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise PgmHeaderError(f"header ended after {len(tokens)} of {count} fields")
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def decode_pgm(data: bytes) -> GrayImage:
    if data[:2] not in (b"P5", b"P2"):
        raise PgmMagicError(f"unsupported magic {data[:2]!r}; expected P5 or P2")
    magic = data[:2]
    tokens, pos = _header_tokens(data[2:], 3)
    pos += 2
    try:
        width, height, max_val = (int(t) for t in tokens)
    except ValueError:
        raise PgmHeaderError(f"non-integer header field in {tokens!r}") from None
    if width < 1 or height < 1:
        raise PgmHeaderError(f"invalid dimensions {width}x{height}")
    if not 1 <= max_val <= 65535:
        raise PgmMaxValError(f"max_val {max_val} outside [1, 65535]")
    count = width * height

    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        if pos >= len(data) or not data[pos:pos + 1].isspace():
            raise PgmTruncatedError("missing raster data")
        pos += 1
        dtype = np.dtype(">u2") if max_val > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        raster = data[pos:pos + need]
        if len(raster) < need:
            raise PgmTruncatedError(f"expected {need} raster bytes, found {len(raster)}")
        values = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    else:
        fields = data[pos:].split()
        if len(fields) < count:
            raise PgmTruncatedError(f"expected {count} samples, found {len(fields)}")
        try:
            values = np.array([int(f) for f in fields[:count]], dtype=np.int64)
        except ValueError:
            raise PgmDecodeError("non-integer sample in ASCII raster") from None
    if values.size and values.max() > max_val:
        raise PgmDecodeError(f"sample {values.max()} exceeds max_val {max_val}")
    return GrayImage(values.reshape(height, width), max_val)


def encode_pgm(img: GrayImage, binary: bool = True) -> bytes:
    header = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n{img.max_val}\n".encode("ascii")
    if binary:
        dtype = ">u2" if img.max_val > 255 else "u1"
        return header + img.pixels.astype(dtype).tobytes()
    rows = [" ".join(str(int(v)) for v in row) for row in img.pixels]
    return header + ("\n".join(rows) + "\n").encode("ascii")


def read_pgm(path: str | os.PathLike) -> GrayImage:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def write_pgm(path: str | os.PathLike, img: GrayImage, binary: bool = True) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img, binary=binary))


def resize_bilinear(grid: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-D real grid.

    Corner samples of the input land exactly on the output corners.
    """
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    th, tw = target_hw
    if th < 1 or tw < 1:
        raise ValueError(f"target dimensions must be positive, got {target_hw}")
    if (h, w) == (th, tw):
        return grid.copy()

    def axis_weights(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis_weights(h, th)
    c0, c1, fc = axis_weights(w, tw)
    top = grid[r0][:, c0] * (1 - fc) + grid[r0][:, c1] * fc
    bottom = grid[r1][:, c0] * (1 - fc) + grid[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bottom * fr[:, None]
