"""Noise removal and intensity segmentation.

The adaptive mean filter replaces a pixel by its neighbourhood mean when it
deviates from that mean by more than ``deviation_factor`` neighbourhood
standard deviations; everything else passes through untouched. Segmentation
is 1-D K-means on pixel intensities, run on the intensity histogram so cost
scales with the number of grey levels rather than pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import GrayImage
from .rng import derive_seed


class ParameterError(ValueError):
    pass


def adaptive_mean_filter(img: GrayImage, window: int = 3, deviation_factor: float = 2.0) -> GrayImage:
    """Replace outlier pixels by their window mean (edges replicated).

    Replacement values are rounded half-to-even.
    """
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be an odd integer >= 3, got {window}")
    if deviation_factor <= 0:
        raise ParameterError(f"deviation_factor must be positive, got {deviation_factor}")
    x = img.to_float()
    r = window // 2
    win = sliding_window_view(np.pad(x, r, mode="edge"), (window, window))
    mean = win.mean(axis=(2, 3))
    std = win.std(axis=(2, 3))
    outlier = np.abs(x - mean) > deviation_factor * std
    out = np.where(outlier, np.rint(mean), x)
    return GrayImage(out, img.max_val)


@dataclass
class SegmentationResult:
    labels: np.ndarray          # (H, W) cluster index, clusters ordered by centroid
    centroids: np.ndarray       # (k,) ascending
    objective: float
    iterations: int
    max_val: int = 255
    trace: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centroids)


EXACT_LIMIT = 1024     # distinct levels below which the exact 1-D start is added


def _kmeanspp(values, weights, k, rng):
    centers = [values[rng.choice(len(values), p=weights / weights.sum())]]
    for _ in range(1, k):
        d2 = np.min((values[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        mass = weights * d2
        centers.append(values[rng.choice(len(values), p=mass / mass.sum())])
    return np.array(centers, dtype=np.float64)


def _optimal_1d(values, weights, k):
    """Globally optimal centroids for sorted 1-D weighted points (O(k n^2) dynamic program)."""
    n = len(values)
    w = np.concatenate([[0.0], np.cumsum(weights)])
    s = np.concatenate([[0.0], np.cumsum(weights * values)])
    q = np.concatenate([[0.0], np.cumsum(weights * values ** 2)])

    def cost(starts, end):
        # weighted SSE of values[starts..end] for each start
        sw, ss = w[end + 1] - w[starts], s[end + 1] - s[starts]
        return np.maximum(q[end + 1] - q[starts] - ss * ss / sw, 0.0)

    best = cost(np.zeros(n, dtype=np.int64), np.arange(n))
    cuts = np.zeros((k, n), dtype=np.int64)
    for m in range(1, k):
        nxt = np.full(n, np.inf)
        for i in range(m, n):
            starts = np.arange(m, i + 1)
            total = best[starts - 1] + cost(starts, i)
            j = int(np.argmin(total))
            nxt[i], cuts[m, i] = total[j], starts[j]
        best = nxt
    bounds, end = [], n - 1
    for m in range(k - 1, 0, -1):
        bounds.append((cuts[m, end], end))
        end = cuts[m, end] - 1
    bounds.append((0, end))
    return np.array([(s[b + 1] - s[a]) / (w[b + 1] - w[a]) for a, b in reversed(bounds)])


def _lloyd(values, weights, centroids, max_iter, tol):
    k = len(centroids)
    trace = []
    labels = np.zeros(len(values), dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        labels = np.argmin(np.abs(values[:, None] - centroids[None, :]), axis=1)
        sizes = np.bincount(labels, weights=weights, minlength=k)
        for j in np.flatnonzero(sizes == 0):
            # empty cluster: move it onto the point farthest from its own centroid,
            # taken from a cluster that can spare it
            dist = np.abs(values - centroids[labels])
            dist[sizes[labels] <= weights] = -1.0
            p = int(np.argmax(dist))
            sizes[labels[p]] -= weights[p]
            labels[p] = j
            sizes[j] = weights[p]
        sums = np.bincount(labels, weights=weights * values, minlength=k)
        new = sums / sizes
        trace.append(float(np.sum(weights * (values - new[labels]) ** 2)))
        shift = np.max(np.abs(new - centroids))
        centroids = new
        if shift < tol:
            break
    return labels, centroids, trace, it


def kmeans_segment(img: GrayImage, k: int = 4, seed: int = 0, max_iter: int = 100,
                   tol: float = 1e-6, n_init: int = 10, exact: bool = True) -> SegmentationResult:
    """Lloyd K-means on intensities with k-means++ starts; best of ``n_init`` runs.

    With ``exact`` and at most ``EXACT_LIMIT`` distinct levels the exact
    1-D optimum is tried as an extra start, so the result is the global
    minimum. Each run's objective trace is non-increasing. Clusters are
    relabelled so that centroid order is ascending.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    flat = img.pixels.ravel()
    values, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    if k > len(values):
        raise ParameterError(f"k={k} exceeds the {len(values)} distinct intensities")
    values = values.astype(np.float64)
    weights = counts.astype(np.float64)

    starts = []
    if exact and len(values) <= EXACT_LIMIT:
        starts.append(_optimal_1d(values, weights, k))
    for run in range(max(1, n_init)):
        rng = np.random.default_rng(derive_seed(seed, "kmeans", run))
        starts.append(_kmeanspp(values, weights, k, rng))
    best = None
    for start in starts:
        labels, cents, trace, iters = _lloyd(values, weights, start, max_iter, tol)
        if best is None or trace[-1] < best[2][-1]:
            best = (labels, cents, trace, iters)
    labels, cents, trace, iters = best

    order = np.argsort(cents, kind="stable")
    rank = np.empty(k, dtype=np.int64)
    rank[order] = np.arange(k)
    pixel_labels = rank[labels][inverse].reshape(img.shape)
    return SegmentationResult(pixel_labels, cents[order], trace[-1], iters, img.max_val, trace)


def labels_to_gray(result: SegmentationResult) -> GrayImage:
    levels = np.clip(np.rint(result.centroids), 0, result.max_val)
    return GrayImage(levels[result.labels], result.max_val)


def segment(img: GrayImage, window: int = 3, deviation_factor: float = 2.0, k: int = 4,
            seed: int = 0) -> GrayImage:
    """Filter, cluster and render one image as a k-level grey map."""
    filtered = adaptive_mean_filter(img, window, deviation_factor)
    k = min(k, len(np.unique(filtered.pixels)))
    return labels_to_gray(kmeans_segment(filtered, k, seed))
