"""Confusion counts, one-vs-rest ROC curves, AUC tables and SVG/CSV reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .mias import SEVERITIES


class UndefinedCurveError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class Rate(NamedTuple):
    value: float
    degenerate: bool = False


def confusion(scores, labels, threshold: float) -> ConfusionCounts:
    """Count outcomes with "positive" meaning score >= threshold."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length ({s.shape} vs {y.shape})")
    if s.size == 0:
        raise ValueError("empty input")
    pred = s >= threshold
    return ConfusionCounts(tp=int(np.sum(pred & y)), fp=int(np.sum(pred & ~y)),
                           tn=int(np.sum(~pred & ~y)), fn=int(np.sum(~pred & y)))


def tpr(c: ConfusionCounts) -> Rate:
    den = c.tp + c.fn
    return Rate(0.0, True) if den == 0 else Rate(c.tp / den)


def fpr(c: ConfusionCounts) -> Rate:
    den = c.tn + c.fp
    return Rate(0.0, True) if den == 0 else Rate(c.fp / den)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    n_pos: int
    n_neg: int

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def trapezoid(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


def roc_curve(scores, labels) -> RocCurve:
    """Threshold sweep over distinct scores, equal scores forming one step.

    The first point (threshold +inf) is (0, 0) and the last (threshold -inf)
    is (1, 1). The area is accumulated in integer counts and divided once,
    so it equals the Mann-Whitney statistic with ties counted as one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if np.any(np.isnan(s)):
        raise ValueError("scores contain NaN")
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedCurveError("ROC needs at least one positive and one negative label")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    tp = np.r_[0, tp, n_pos]
    fp = np.r_[0, fp, n_neg]
    thresholds = np.r_[np.inf, s[ends], -np.inf]
    area2 = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = area2 / (2 * n_pos * n_neg)
    return RocCurve(fp / n_neg, tp / n_pos, thresholds, auc, n_pos, n_neg)


@dataclass
class OvrReport:
    class_names: tuple[str, ...]
    curves: dict[str, RocCurve | None]
    aucs: dict[str, float | None]
    flagged: list[str] = field(default_factory=list)

    @property
    def mean_auc(self) -> float:
        vals = [v for v in self.aucs.values() if v is not None]
        return float(np.mean(vals)) if vals else float("nan")


def one_vs_rest_report(probs, labels, class_names: tuple[str, ...] = SEVERITIES) -> OvrReport:
    """One ROC per class, scoring each sample by that class's probability."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or p.shape[1] != len(class_names) or len(p) != len(y):
        raise ValueError(f"probs shape {p.shape} does not match {len(y)} labels x {len(class_names)} classes")
    if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("rows of probs must be probability vectors")
    curves, aucs, flagged = {}, {}, []
    for c, name in enumerate(class_names):
        try:
            curve = roc_curve(p[:, c], y == c)
        except UndefinedCurveError:
            curves[name], aucs[name] = None, None
            flagged.append(name)
            continue
        curves[name], aucs[name] = curve, curve.auc
    return OvrReport(tuple(class_names), curves, aucs, flagged)


# --- tabular output ---------------------------------------------------------------

class AucTable:
    """AUC per class, laid out with one row per model and one column per data condition."""

    def __init__(self, class_names=SEVERITIES, conditions=("original_only", "preprocessed")):
        self.class_names = tuple(class_names)
        self.conditions = tuple(conditions)
        self.rows: dict[str, dict[str, dict[str, float | None]]] = {}

    def add(self, model: str, condition: str, aucs: dict[str, float | None]) -> None:
        if condition not in self.conditions:
            raise ValueError(f"unknown condition {condition!r}")
        self.rows.setdefault(model, {})[condition] = dict(aucs)

    def get(self, model: str, condition: str, cls: str) -> float | None:
        return self.rows.get(model, {}).get(condition, {}).get(cls)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "model", *self.conditions])
        for cls in self.class_names:
            for model in self.rows:
                w.writerow([cls, model, *[_fmt(self.get(model, cond, cls)) for cond in self.conditions]])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max([len("model")] + [len(m) for m in self.rows])
        blocks = []
        for cls in self.class_names:
            head = f"{'model':<{width}}  " + "  ".join(f"{c:>14}" for c in self.conditions)
            lines = [f"{cls} class AUC", head, "-" * len(head)]
            for model in self.rows:
                cells = "  ".join(f"{_fmt(self.get(model, c, cls)):>14}" for c in self.conditions)
                lines.append(f"{model:<{width}}  {cells}")
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + "\n"


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def roc_csv(report: OvrReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "threshold", "fpr", "tpr"])
    for name in report.class_names:
        curve = report.curves[name]
        if curve is None:
            continue
        for f, t, th in curve.points:
            w.writerow([name, repr(th), repr(f), repr(t)])
    return buf.getvalue()


def read_roc_csv(text: str) -> dict[str, RocCurve]:
    rows: dict[str, list[tuple[float, float, float]]] = {}
    for r in csv.DictReader(io.StringIO(text)):
        rows.setdefault(r["class"], []).append((float(r["fpr"]), float(r["tpr"]), float(r["threshold"])))
    curves = {}
    for name, pts in rows.items():
        f, t, th = (np.array(v) for v in zip(*pts))
        auc = float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2.0))
        curves[name] = RocCurve(f, t, th, auc, 0, 0)
    return curves


_STYLE = {"original_only": ("#1f77b4", "6,4"), "preprocessed": ("#d62728", None)}


def roc_svg(curves: dict[str, RocCurve], title: str, size: int = 360) -> str:
    """Overlay ROC curves for several conditions in one self-contained SVG.

    ``original_only`` is drawn dashed, ``preprocessed`` solid.
    """
    m = 48
    plot = size - 2 * m

    def xy(f, t):
        return m + f * plot, m + (1.0 - t) * plot

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 40}" '
        f'viewBox="0 0 {size} {size + 40}" font-family="sans-serif" font-size="11">',
        f'<rect width="{size}" height="{size + 40}" fill="white"/>',
        f'<text x="{size / 2:.1f}" y="22" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<rect x="{m}" y="{m}" width="{plot}" height="{plot}" fill="none" stroke="#333"/>',
        f'<line x1="{m}" y1="{m + plot}" x2="{m + plot}" y2="{m}" stroke="#aaa" stroke-dasharray="2,3"/>',
    ]
    for i in range(6):
        v = i / 5
        x, _ = xy(v, 0)
        _, y = xy(0, v)
        parts.append(f'<text x="{x:.1f}" y="{m + plot + 14}" text-anchor="middle">{v:.1f}</text>')
        parts.append(f'<text x="{m - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{m + plot / 2:.1f}" y="{m + plot + 32}" text-anchor="middle">False positive rate</text>')
    parts.append(f'<text transform="translate(14 {m + plot / 2:.1f}) rotate(-90)" '
                 f'text-anchor="middle">True positive rate</text>')
    legend_y = size + 22
    for k, (cond, curve) in enumerate(curves.items()):
        colour, dash = _STYLE.get(cond, ("#2ca02c", None))
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(f, t) for f, t in zip(curve.fpr, curve.tpr)))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="2"{dash_attr}/>')
        lx = m + k * 160
        parts.append(f'<line x1="{lx}" y1="{legend_y}" x2="{lx + 24}" y2="{legend_y}" '
                     f'stroke="{colour}" stroke-width="2"{dash_attr}/>')
        parts.append(f'<text x="{lx + 30}" y="{legend_y + 4}">{_esc(cond)} (AUC {curve.auc:.3f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")

