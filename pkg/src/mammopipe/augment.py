"""Training-corpus assembly: derived channels plus random affine variants."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .image import GrayImage, resize_bilinear, write_pgm
from .mias import Dataset, MiasRecord
from .preprocess import adaptive_mean_filter, kmeans_segment, labels_to_gray
from .rng import derive_seed
from .wavelet import multilevel_dwt, resize_to_original

CHANNEL_NAMES = ("original", "segmented", "wavelet_H", "wavelet_V", "wavelet_D")
CONDITIONS = ("original_only", "preprocessed")


class AffineError(ValueError):
    pass


class ChannelDerivationError(RuntimeError):
    def __init__(self, sample_id: str, cause: Exception):
        super().__init__(f"{sample_id}: channel derivation failed: {cause}")
        self.sample_id = sample_id


@dataclass(frozen=True)
class AffineParams:
    rotation: float = 0.0          # degrees
    translate: tuple[float, float] = (0.0, 0.0)  # (dx, dy) pixels
    scale: float = 1.0
    shear: float = 0.0             # degrees

    def matrix(self) -> np.ndarray:
        """2x2 linear part in (x, y) coordinates: rotation @ shear @ scale."""
        if not self.scale > 0:
            raise AffineError(f"scale must be positive, got {self.scale}")
        th = math.radians(self.rotation)
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        shear = np.array([[1.0, math.tan(math.radians(self.shear))], [0.0, 1.0]])
        return rot @ shear @ (self.scale * np.eye(2))


@dataclass(frozen=True)
class AffineRanges:
    """Closed sampling intervals for each affine parameter."""

    rotation: tuple[float, float] = (-15.0, 15.0)
    translate_x: tuple[float, float] = (-20.0, 20.0)
    translate_y: tuple[float, float] = (-20.0, 20.0)
    scale: tuple[float, float] = (0.9, 1.1)
    shear: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        for name in ("rotation", "translate_x", "translate_y", "scale", "shear"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is inverted: {(lo, hi)}")
        if self.scale[0] <= 0:
            raise ValueError("scale range must be positive")

    def sample(self, seed: int) -> AffineParams:
        rng = np.random.default_rng(seed)
        u = rng.random(5)

        def pick(rng_pair, t):
            lo, hi = rng_pair
            return lo + (hi - lo) * float(t)

        return AffineParams(
            rotation=pick(self.rotation, u[0]),
            translate=(pick(self.translate_x, u[1]), pick(self.translate_y, u[2])),
            scale=pick(self.scale, u[3]),
            shear=pick(self.shear, u[4]),
        )

    def contains(self, p: AffineParams) -> bool:
        checks = ((self.rotation, p.rotation), (self.translate_x, p.translate[0]),
                  (self.translate_y, p.translate[1]), (self.scale, p.scale), (self.shear, p.shear))
        return all(lo <= v <= hi for (lo, hi), v in checks)


def apply_affine(img: GrayImage, params: AffineParams) -> GrayImage:
    """Warp about the image centre, translation applied last; bilinear, zero fill."""
    a = params.matrix()
    det = float(np.linalg.det(a))
    if not np.all(np.isfinite(a)) or abs(det) < 1e-9:
        raise AffineError(f"degenerate affine map (det={det:.3g}) for {params}")
    inv = np.linalg.inv(a)
    h, w = img.shape
    centre = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    t = np.asarray(params.translate, dtype=np.float64)
    # output (x, y) -> input (x, y):  p = inv @ (q - centre - t) + centre
    offset_xy = centre - inv @ (centre + t)
    swap = np.array([[0, 1], [1, 0]])
    matrix_rc = swap @ inv @ swap
    offset_rc = offset_xy[::-1]
    out = ndimage.affine_transform(img.to_float(), matrix_rc, offset=offset_rc, order=1,
                                   mode="grid-constant", cval=0.0, prefilter=False)
    return GrayImage.from_float(out, img.max_val)


def random_affine(img: GrayImage, ranges: AffineRanges, seed: int) -> GrayImage:
    return apply_affine(img, ranges.sample(seed))


@dataclass(frozen=True)
class ChannelConfig:
    """How the network views one source image."""

    condition: str = "preprocessed"
    window: int = 3
    dev_factor: float = 2.0
    k: int = 4
    seed: int = 0
    family: str = "haar"
    levels: int = 3
    channel_level: int = 1
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if not 1 <= self.channel_level <= self.levels:
            raise ValueError("channel_level must lie in [1, levels]")

    @property
    def n_channels(self) -> int:
        return 1 if self.condition == "original_only" else len(CHANNEL_NAMES)

    @property
    def channel_names(self) -> tuple[str, ...]:
        return CHANNEL_NAMES[:self.n_channels]


def derive_channels(source: GrayImage, cfg: ChannelConfig) -> list[GrayImage]:
    """Channel stack for one image, all at the source's dimensions.

    Order: original, segmented (K-means on the noise-filtered source), and
    the H/V/D detail bands of the noise-filtered source at
    ``cfg.channel_level``, each upsampled back to full size and min-max scaled.
    """
    if cfg.condition == "original_only":
        return [source]
    filtered = adaptive_mean_filter(source, cfg.window, cfg.dev_factor)
    k = min(cfg.k, len(np.unique(filtered.pixels)))
    segmented = labels_to_gray(kmeans_segment(filtered, k, cfg.seed))
    pyramid = multilevel_dwt(filtered, cfg.levels, cfg.family)
    band = pyramid.level(cfg.channel_level)
    dims = (source.width, source.height)
    details = [resize_to_original(g, dims, cfg.interpolation, source.max_val)
               for g in (band.horiz, band.vert, band.diag)]
    return [source, segmented, *details]


@dataclass
class AugmentedSample:
    channels: list[GrayImage]
    record: MiasRecord
    provenance: str = "original"      # "original" or "affine(<seed>)"
    views: tuple[str, ...] = field(default=CHANNEL_NAMES)

    def __post_init__(self):
        shapes = {c.shape for c in self.channels}
        if len(shapes) != 1:
            raise ValueError(f"{self.record.id}: channels differ in shape {shapes}")

    @property
    def id(self) -> str:
        return self.record.id


def _samples_for(source: GrayImage, record: MiasRecord, cfg: ChannelConfig, ranges: AffineRanges,
                 copies: int, seed: int, occurrence: int) -> list[AugmentedSample]:
    out = []
    variants = [("original", source)]
    for c in range(copies):
        s = derive_seed(seed, record.id, occurrence, c)
        variants.append((f"affine({s})", random_affine(source, ranges, s)))
    for provenance, img in variants:
        try:
            channels = derive_channels(img, cfg)
        except Exception as exc:
            raise ChannelDerivationError(record.id, exc) from exc
        out.append(AugmentedSample(channels, record, provenance, cfg.channel_names))
    return out


def assemble_training_set(dataset: Dataset, cfg: ChannelConfig, ranges: AffineRanges | None = None,
                          copies: int = 2, seed: int = 0, layout: str = "channels") -> list[AugmentedSample]:
    """Original-provenance sample plus ``copies`` affine variants per input image.

    Affine warps hit the source before channels are derived, so derived views
    stay consistent with the warped original. Per-variant seeds depend on
    (seed, id, occurrence, copy) only. With ``layout="samples"`` every view
    becomes its own single-channel sample instead.
    """
    if copies < 0:
        raise ValueError("copies must be >= 0")
    if layout not in ("channels", "samples"):
        raise ValueError(f"unknown layout {layout!r}")
    ranges = ranges or AffineRanges()
    seen: dict[str, int] = {}
    corpus: list[AugmentedSample] = []
    for sample in dataset:
        occurrence = seen.get(sample.record.id, 0)
        seen[sample.record.id] = occurrence + 1
        corpus += _samples_for(sample.load(), sample.record, cfg, ranges, copies, seed, occurrence)
    if layout == "samples":
        corpus = [AugmentedSample([ch], s.record, f"{s.provenance}/{view}", (view,))
                  for s in corpus for ch, view in zip(s.channels, s.views)]
    return corpus


def downscale(grid: np.ndarray, size: int) -> np.ndarray:
    """Block-average when the side is an integer multiple of ``size``, else bilinear."""
    h, w = grid.shape
    if (h, w) == (size, size):
        return grid.astype(np.float64)
    if h % size == 0 and w % size == 0:
        return grid.reshape(size, h // size, size, w // size).mean(axis=(1, 3))
    return resize_bilinear(grid, (size, size))


def to_tensor(samples: list[AugmentedSample], size: int) -> np.ndarray:
    """Stack samples into an (N, C, size, size) float array scaled to [0, 1]."""
    if not samples:
        raise ValueError("no samples")
    out = np.empty((len(samples), len(samples[0].channels), size, size))
    for i, s in enumerate(samples):
        for c, ch in enumerate(s.channels):
            out[i, c] = downscale(ch.to_float(), size) / ch.max_val
    return out


def labels(samples: list[AugmentedSample], which: str = "label7") -> np.ndarray:
    return np.array([getattr(s.record, which) for s in samples], dtype=np.int64)


def write_corpus(samples: list[AugmentedSample], directory: str | os.PathLike) -> Path:
    """Write channel PGMs and a JSON-lines manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for i, s in enumerate(samples):
            paths = []
            for ch, view in zip(s.channels, s.views):
                name = f"{i:05d}_{s.id}_{view}.pgm"
                write_pgm(directory / name, ch)
                paths.append(name)
            fh.write(json.dumps({"id": s.id, "provenance": s.provenance,
                                 "label7": s.record.abnormality, "label3": s.record.severity,
                                 "channels": paths}) + "\n")
    return manifest


def ranges_to_dict(r: AffineRanges) -> dict:
    return {k: list(v) for k, v in asdict(r).items()}
