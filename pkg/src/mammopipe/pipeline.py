"""End-to-end orchestration: ingest, preprocess, run (train + evaluate) and report."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .augment import (AffineRanges, ChannelConfig, assemble_training_set, derive_channels,
                      labels, to_tensor)
from .cascade import (N_ABNORMALITY, N_SEVERITY, CascadeModel, StageError, fit_cascade,
                      predict_tensor, save_cascade)
from .evaluate import AucTable, one_vs_rest_report, read_roc_csv, roc_csv, roc_svg
from .image import write_pgm
from .mias import SEVERITIES, balance_classes, load_dataset, split_train_val
from .preprocess import adaptive_mean_filter
from .rng import derive_seed
from .synthetic import PROXY_CLASSES, proxy_images
from .wavelet import export_pyramid, multilevel_dwt

log = logging.getLogger(__name__)

DATA_ENV = "MAMMOPIPE_DATA"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    dataset_path: str | None = None
    output_dir: str = "runs/default"
    seed: int = 0
    condition: str = "preprocessed"
    train_fraction: float = 0.75
    balance: bool = True
    # preprocessing
    window: int = 3
    dev_factor: float = 2.0
    k: int = 4
    # wavelet
    family: str = "haar"
    levels: int = 3
    channel_level: int = 1
    # augmentation
    rotation: tuple[float, float] = (-15.0, 15.0)
    translate: tuple[float, float] = (-20.0, 20.0)
    scale: tuple[float, float] = (0.9, 1.1)
    shear: tuple[float, float] = (-10.0, 10.0)
    copies: int = 2
    layout: str = "channels"
    # network / training
    input_size: int = 64
    global_pool: bool = True
    max_epochs: int = 30
    mini_batch: int = 10
    learn_rate: float = 3e-3
    head_lr_multiplier: float = 10.0
    momentum: float = 0.9
    freeze_layers: int = 0
    link: str = "soft"
    # transfer source
    backbone_path: str | None = None
    proxy_images: int = 120
    proxy_epochs: int = 20
    proxy_learn_rate: float = 1e-2
    model_name: str = "MiniNet"

    def __post_init__(self):
        for name in ("rotation", "translate", "scale", "shear"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in ("rotation", "translate", "scale", "shear"):
            d[name] = list(d[name])
        return d

    def resolved_dataset(self) -> str:
        path = self.dataset_path or os.environ.get(DATA_ENV)
        if not path:
            raise ValueError(f"no dataset path given (use --data or set {DATA_ENV})")
        return path

    def channels(self) -> ChannelConfig:
        return ChannelConfig(self.condition, self.window, self.dev_factor, self.k,
                             derive_seed(self.seed, "kmeans"), self.family, self.levels,
                             self.channel_level)

    def ranges(self) -> AffineRanges:
        return AffineRanges(self.rotation, self.translate, self.translate, self.scale, self.shear)

    def train_config(self, stage: str) -> nn.TrainConfig:
        return nn.TrainConfig(self.max_epochs, self.mini_batch, self.learn_rate,
                              self.head_lr_multiplier, self.momentum,
                              derive_seed(self.seed, "train", stage) % (2 ** 32))


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _clean(obj):
    """Make floats JSON-safe and stable (NaN becomes null)."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if np.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# --- ingest -----------------------------------------------------------------------

def ingest(dataset_path: str, output_dir: str | None = None) -> dict:
    """Counts, discrepancies and unusable files; raises FileNotFoundError without an info file."""
    _, summary = load_dataset(dataset_path)
    if output_dir:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(out / "ingest_summary.json", summary)
    return summary


# --- preprocess -------------------------------------------------------------------

def preprocess_dataset(cfg: RunConfig) -> list[Path]:
    """Write derived channels and the filtered image's full wavelet pyramid for every image."""
    dataset, _ = load_dataset(cfg.resolved_dataset())
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    channels = dataclasses.replace(cfg.channels(), condition="preprocessed")
    written = []
    for sample in dataset:
        img = sample.load()
        views = derive_channels(img, channels)
        for view, name in zip(views[1:], channels.channel_names[1:]):
            path = out / f"{sample.record.id}_{name}.pgm"
            write_pgm(path, view)
            written.append(path)
        # same filtered input the wavelet channels are derived from
        filtered = adaptive_mean_filter(img, cfg.window, cfg.dev_factor)
        pyramid = multilevel_dwt(filtered, cfg.levels, cfg.family)
        written += export_pyramid(pyramid, out / "pyramids", sample.record.id)
    return written


# --- run ----------------------------------------------------------------------------

def pretrain_backbone(cfg: RunConfig) -> tuple[nn.NetworkSpec, list[dict]]:
    """Train MiniNet on the proxy shape task with the run's channel layout."""
    images, y = proxy_images(cfg.proxy_images, cfg.input_size, derive_seed(cfg.seed, "proxy"))
    channels = cfg.channels()
    x = np.stack([
        np.stack([v.to_float() / v.max_val for v in derive_channels(img, channels)])
        for img in images
    ])
    if cfg.layout == "samples":
        x = x.reshape(-1, 1, *x.shape[2:])
        y = np.repeat(y, channels.n_channels)
    net = nn.mininet(x.shape[1:], len(PROXY_CLASSES), derive_seed(cfg.seed, "backbone") % (2 ** 32),
                     cfg.global_pool)
    tc = nn.TrainConfig(cfg.proxy_epochs, cfg.mini_batch, cfg.proxy_learn_rate, 1.0, cfg.momentum,
                        derive_seed(cfg.seed, "train", "proxy") % (2 ** 32))
    return nn.train(net, x, y, tc)


def transfer_stages(backbone: nn.NetworkSpec, cfg: RunConfig) -> tuple[nn.NetworkSpec, nn.NetworkSpec]:
    """Stage-1 and stage-2 networks sharing the backbone's frozen feature layers."""
    frozen = nn.first_n(cfg.freeze_layers)
    s1 = nn.replace_head(backbone, None, N_ABNORMALITY, n_remove=3,
                         seed=derive_seed(cfg.seed, "head", 1) % (2 ** 32))
    s2 = nn.replace_head(backbone, [nn.dense(64), nn.relu(), nn.dense(N_SEVERITY), nn.softmax()],
                         N_SEVERITY, n_remove=4, aux_dim=N_ABNORMALITY,
                         seed=derive_seed(cfg.seed, "head", 2) % (2 ** 32))
    return nn.freeze_layers(s1, frozen), nn.freeze_layers(s2, frozen)


def _stage(name):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except PipelineError:
                raise
            except StageError as exc:
                raise PipelineError(f"{name}/{exc.stage}", exc) from exc
            except Exception as exc:
                raise PipelineError(name, exc) from exc
        return inner
    return wrap


def run(cfg: RunConfig) -> dict:
    """Split, augment, transfer, train the cascade, evaluate on validation; write artifacts."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    channels = cfg.channels()

    @_stage("split")
    def split():
        dataset, ingest_info = load_dataset(cfg.resolved_dataset())
        train, val = split_train_val(dataset, cfg.train_fraction, derive_seed(cfg.seed, "split"))
        n_train_unique = len(train)
        if cfg.balance:
            train = balance_classes(train, derive_seed(cfg.seed, "balance"))
        return train, val, ingest_info, n_train_unique

    @_stage("augment")
    def augment(train, val):
        corpus = assemble_training_set(train, channels, cfg.ranges(), cfg.copies,
                                       derive_seed(cfg.seed, "affine"), cfg.layout)
        val_corpus = assemble_training_set(val, channels, cfg.ranges(), 0, 0, cfg.layout)
        return corpus, val_corpus

    @_stage("transfer")
    def transfer():
        if cfg.backbone_path:
            return nn.load_checkpoint(cfg.backbone_path), []
        return pretrain_backbone(cfg)

    @_stage("train")
    def train_stages(s1, s2, corpus, val_corpus):
        x = to_tensor(corpus, cfg.input_size)
        xv = to_tensor(val_corpus, cfg.input_size)
        tc = cfg.train_config("cascade")
        return fit_cascade(x, labels(corpus, "label7"), labels(corpus, "label3"), tc, s1, s2,
                           (xv, labels(val_corpus, "label7"), labels(val_corpus, "label3")), cfg.link)

    @_stage("evaluate")
    def evaluate(model, val_corpus):
        p7, p3 = predict_tensor(model, to_tensor(val_corpus, cfg.input_size))
        y7, y3 = labels(val_corpus, "label7"), labels(val_corpus, "label3")
        if cfg.layout == "samples":
            # average the per-view predictions of each case
            views = channels.n_channels
            p7 = p7.reshape(-1, views, p7.shape[1]).mean(axis=1)
            p3 = p3.reshape(-1, views, p3.shape[1]).mean(axis=1)
            y7, y3 = y7[::views], y3[::views]
        report = one_vs_rest_report(p3, y3, SEVERITIES)
        return report, float(np.mean(p7.argmax(axis=1) == y7)), float(np.mean(p3.argmax(axis=1) == y3))

    train, val, ingest_info, n_train_unique = split()
    log.info("split: %d train (%d unique), %d validation", len(train), n_train_unique, len(val))
    corpus, val_corpus = augment(train, val)
    log.info("augmented corpus: %d samples x %d channels", len(corpus), len(corpus[0].channels))
    backbone, hist0 = transfer()
    nn.save_checkpoint(backbone, out / "backbone.mmpn")
    (out / "history_backbone.csv").write_text(nn.history_csv(hist0))
    s1, s2 = transfer_stages(backbone, cfg)
    log.info("training cascade (%d frozen layers)", cfg.freeze_layers)
    stage1, stage2, hist = train_stages(s1, s2, corpus, val_corpus)
    model = CascadeModel(stage1, stage2, channels, cfg.input_size, cfg.link)
    save_cascade(model, out)
    for stage in ("stage1", "stage2"):
        (out / f"history_{stage}.csv").write_text(nn.history_csv(hist[stage]))
    report, acc7, acc3 = evaluate(model, val_corpus)

    (out / "roc.csv").write_text(roc_csv(report))
    table = AucTable()
    table.add(cfg.model_name, cfg.condition, report.aucs)
    (out / "auc_table.csv").write_text(table.to_csv())
    (out / "auc_table.txt").write_text(table.to_text())
    for name, curve in report.curves.items():
        if curve is not None:
            (out / f"roc_{name}.svg").write_text(
                roc_svg({cfg.condition: curve}, f"ROC, {name} vs rest"))

    summary = _clean({
        "config": cfg.to_dict(),
        "condition": cfg.condition,
        "model": cfg.model_name,
        "dataset": {
            "total": ingest_info["total"],
            "abnormality_counts": ingest_info["abnormality_counts"],
            "severity_counts": ingest_info["severity_counts"],
            "train_unique": n_train_unique,
            "train_balanced": len(train),
            "validation": len(val),
        },
        "corpus_size": len(corpus),
        "channels": list(channels.channel_names) if cfg.layout == "channels" else ["single"],
        "networks": {"stage1": model.stage1.summary(), "stage2": model.stage2.summary(),
                     "wiring": model.wiring},
        "validation": {
            "auc": report.aucs,
            "mean_auc": report.mean_auc,
            "flagged_classes": report.flagged,
            "stage1_accuracy": acc7,
            "stage2_accuracy": acc3,
        },
        "final_epoch": {"stage1": hist["stage1"][-1], "stage2": hist["stage2"][-1]},
    })
    _dump_json(out / "summary.json", summary)
    return summary


# --- report -------------------------------------------------------------------------

def report(run_dirs: list[str], output_dir: str) -> AucTable:
    """Combine run directories into an AUC table and per-class overlaid ROC plots."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = AucTable()
    curves_by_class: dict[str, dict[str, object]] = {}
    for d in run_dirs:
        d = Path(d)
        summary = json.loads((d / "summary.json").read_text())
        cond, model = summary["condition"], summary["model"]
        table.add(model, cond, summary["validation"]["auc"])
        for name, curve in read_roc_csv((d / "roc.csv").read_text()).items():
            curves_by_class.setdefault(name, {})[cond] = curve
    (out / "auc_table.csv").write_text(table.to_csv())
    (out / "auc_table.txt").write_text(table.to_text())
    for name in SEVERITIES:
        curves = curves_by_class.get(name)
        if curves:
            ordered = {c: curves[c] for c in table.conditions if c in curves}
            (out / f"roc_{name}.svg").write_text(roc_svg(ordered, f"ROC, {name} vs rest"))
    return table

