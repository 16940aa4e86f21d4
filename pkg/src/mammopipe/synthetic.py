"""Seeded synthetic mammogram-like images.

Used for desk-scale end-to-end runs (the real database is licensed) and as
the proxy task that pre-trains a backbone before transfer.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy import ndimage

from .image import GrayImage, write_pgm
from .mias import TISSUES, MiasRecord
from .rng import derive_seed

# class cycle: Normal, Benign proxy, Malignant proxy
_KINDS = (("NORM", "Normal"), ("CIRC", "Benign"), ("SPIC", "Malignant"))


def _background(rng, size):
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 10)
    field = field / (field.std() + 1e-12)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    # bright breast region fading towards one side, mimicking tissue falloff
    side = rng.random() < 0.5
    ramp = (1 - xx) if side else xx
    img = 40 + 60 * ramp ** 0.7 + 12 * field + rng.normal(0, 5, (size, size))
    salt = rng.random((size, size))
    img[salt < 0.003] = 0
    img[salt > 0.997] = 255
    return img


def _soft_blob(size, cy, cx, radius, amp):
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return amp * np.exp(-d2 / (2 * (radius / 1.6) ** 2))


def _spiculated(rng, size, cy, cx, radius, amp):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    core = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (radius / 3.0) ** 2))
    spikes = np.zeros((size, size))
    n_spikes = int(rng.integers(8, 14))
    base = rng.random() * 2 * np.pi
    for s in range(n_spikes):
        th = base + 2 * np.pi * s / n_spikes + rng.normal(0, 0.12)
        length = radius * rng.uniform(1.5, 2.3)
        dy, dx = np.sin(th), np.cos(th)
        along = (yy - cy) * dy + (xx - cx) * dx
        across = np.abs(-(yy - cy) * dx + (xx - cx) * dy)
        on = (along > 0) & (along < length)
        taper = np.clip(1 - along / length, 0, 1)
        spikes = np.maximum(spikes, on * taper * np.exp(-(across ** 2) / (2 * 0.9 ** 2)))
    return np.maximum(core, 0.85 * amp * spikes)


def synthetic_image(kind: str, size: int, rng) -> tuple[GrayImage, tuple[int, int] | None, int | None]:
    """One image of kind NORM / CIRC / SPIC; returns (image, (row, col) centre, radius)."""
    img = _background(rng, size)
    if kind == "NORM":
        return GrayImage.from_float(img), None, None
    radius = int(rng.integers(max(4, size // 16), max(5, size // 9) + 1))
    margin = int(2.5 * radius) + 2
    cy = int(rng.integers(margin, size - margin))
    cx = int(rng.integers(margin, size - margin))
    amp = rng.uniform(90, 130)
    if kind == "CIRC":
        img = img + _soft_blob(size, cy, cx, radius, amp)
    else:
        img = img + _spiculated(rng, size, cy, cx, radius, amp)
    return GrayImage.from_float(img), (cy, cx), radius


def generate_synthetic(out_dir: str | os.PathLike, n: int = 120, size: int = 128,
                       seed: int = 7) -> list[MiasRecord]:
    """Write ``n`` PGMs plus an ``Info.txt`` in mini-MIAS format.

    Classes cycle Normal / Benign (soft blob, CIRC) / Malignant (spiculated,
    SPIC). Centres use the info-file convention (x = column, y counted up
    from the bottom row).
    """
    if n < 1 or size < 32:
        raise ValueError("need n >= 1 and size >= 32")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    width = max(3, len(str(n)))
    for i in range(n):
        abn, sev = _KINDS[i % 3]
        rng = np.random.default_rng(derive_seed(seed, "synthetic", i))
        tissue = TISSUES[int(rng.integers(0, 3))]
        img, centre, radius = synthetic_image(abn, size, rng)
        rec_id = f"syn{i + 1:0{width}d}"
        if centre is None:
            rec = MiasRecord(rec_id, tissue, abn, sev)
        else:
            row, col = centre
            rec = MiasRecord(rec_id, tissue, abn, sev, (col, size - 1 - row), radius)
        write_pgm(out / f"{rec_id}.pgm", img)
        records.append(rec)
    (out / "Info.txt").write_text("\n".join(r.to_line() for r in records) + "\n")
    return records


PROXY_CLASSES = ("texture", "disk", "ring", "lines")


def proxy_images(n: int, size: int, seed: int) -> tuple[list[GrayImage], np.ndarray]:
    """Generic shape-recognition task used to pre-train a backbone."""
    images, labels = [], []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for i in range(n):
        label = i % len(PROXY_CLASSES)
        rng = np.random.default_rng(derive_seed(seed, "proxy", i))
        img = _background(rng, size)
        r = rng.uniform(size / 14, size / 7)
        cy, cx = rng.uniform(2 * r, size - 2 * r, 2)
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        amp = rng.uniform(70, 120)
        if label == 1:
            img += amp / (1 + np.exp((d - r) / 1.5))
        elif label == 2:
            img += amp * np.exp(-((d - r) ** 2) / (2 * 1.5 ** 2))
        elif label == 3:
            th = rng.uniform(0, np.pi)
            across = (yy - cy) * np.cos(th) - (xx - cx) * np.sin(th)
            img += amp * (np.abs(np.sin(across * np.pi / (r / 1.5))) > 0.8) * (d < 2 * r)
        images.append(GrayImage.from_float(img))
        labels.append(label)
    return images, np.array(labels, dtype=np.int64)
