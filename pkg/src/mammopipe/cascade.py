"""Two-stage classifier: abnormality (7 classes) feeding severity (3 classes).

Stage 2 sees the same image channels as stage 1 plus stage 1's output
vector, concatenated at the input of its first dense layer.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .augment import AugmentedSample, ChannelConfig, derive_channels, downscale, labels, to_tensor
from .image import GrayImage
from .mias import ABNORMALITIES, SEVERITIES

N_ABNORMALITY = len(ABNORMALITIES)
N_SEVERITY = len(SEVERITIES)
LINKS = ("soft", "hard")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class CascadeModel:
    stage1: nn.NetworkSpec
    stage2: nn.NetworkSpec
    channels: ChannelConfig = field(default_factory=ChannelConfig)
    input_size: int = 64
    link: str = "soft"

    def __post_init__(self):
        if self.stage1.output_dim != N_ABNORMALITY:
            raise ValueError(f"stage 1 must output {N_ABNORMALITY} classes, got {self.stage1.output_dim}")
        if self.stage2.output_dim != N_SEVERITY:
            raise ValueError(f"stage 2 must output {N_SEVERITY} classes, got {self.stage2.output_dim}")
        if self.stage2.aux_at is None or self.stage2.aux_dim != N_ABNORMALITY:
            raise ValueError(f"stage 2 needs a {N_ABNORMALITY}-wide auxiliary input")
        if self.link not in LINKS:
            raise ValueError(f"link must be one of {LINKS}")

    @property
    def wiring(self) -> dict:
        return {"concat_layer_index": self.stage2.aux_at, "aux_dim": self.stage2.aux_dim,
                "image_feature_dim": int(np.prod(self.stage2.shapes[self.stage2.aux_at])),
                "link": self.link}


@dataclass
class CascadePrediction:
    abnormality_probs: np.ndarray
    severity_probs: np.ndarray

    @property
    def predicted_abnormality(self) -> str:
        return ABNORMALITIES[int(np.argmax(self.abnormality_probs))]

    @property
    def predicted_severity(self) -> str:
        return SEVERITIES[int(np.argmax(self.severity_probs))]


def link_vector(probs: np.ndarray, link: str = "soft") -> np.ndarray:
    """What stage 2 receives from stage 1: probabilities, or a one-hot argmax."""
    if link == "soft":
        return probs
    if link == "hard":
        out = np.zeros_like(probs)
        out[np.arange(len(probs)), probs.argmax(axis=1)] = 1.0
        return out
    raise ValueError(f"unknown link {link!r}")


def stage2_network(input_shape, seed: int = 0, global_pool: bool = False) -> nn.NetworkSpec:
    """MiniNet topology with the stage-1 vector joining at the first dense layer."""
    layers = nn.mininet_layers(input_shape, N_SEVERITY, global_pool)
    aux_at = next(i for i, layer in enumerate(layers) if layer.kind == "dense")
    return nn.build_network(input_shape, layers, seed, aux_at=aux_at, aux_dim=N_ABNORMALITY)


def train_stage2(stage2: nn.NetworkSpec, x, y3, stage1_out, cfg: nn.TrainConfig,
                 val=None, val_stage1_out=None):
    try:
        return nn.train(stage2, x, y3, cfg, val=val, aux=stage1_out, val_aux=val_stage1_out)
    except Exception as exc:
        raise StageError("stage2", exc) from exc


def fit_cascade(x, y7, y3, cfg: nn.TrainConfig, stage1: nn.NetworkSpec | None = None,
                stage2: nn.NetworkSpec | None = None, val=None, link: str = "soft"):
    """Array-level training. ``val`` is ``(x, y7, y3)``.

    Stage 1 is trained on abnormality labels and then left alone; its
    outputs on the training images become stage 2's extra input.
    Returns (stage1, stage2, {"stage1": history, "stage2": history}).
    """
    x = np.asarray(x, dtype=np.float64)
    stage1 = stage1 or nn.mininet(x.shape[1:], N_ABNORMALITY, cfg.seed, global_pool=True)
    stage2 = stage2 or stage2_network(x.shape[1:], cfg.seed + 1, global_pool=True)
    v1 = None if val is None else (val[0], val[1])
    try:
        stage1, hist1 = nn.train(stage1, x, y7, cfg, val=v1)
    except Exception as exc:
        raise StageError("stage1", exc) from exc
    p_train = link_vector(nn.predict(stage1, x), link)
    v2 = p_val = None
    if val is not None:
        v2 = (val[0], val[2])
        p_val = link_vector(nn.predict(stage1, val[0]), link)
    stage2, hist2 = train_stage2(stage2, x, y3, p_train, cfg, v2, p_val)
    return stage1, stage2, {"stage1": hist1, "stage2": hist2}


def train_cascade(corpus: list[AugmentedSample], cfg: nn.TrainConfig, *, channels: ChannelConfig,
                  input_size: int = 64, stage1=None, stage2=None,
                  val_corpus: list[AugmentedSample] | None = None, link: str = "soft"):
    """Train both stages on an augmented corpus; returns (model, histories)."""
    x = to_tensor(corpus, input_size)
    val = None
    if val_corpus:
        val = (to_tensor(val_corpus, input_size), labels(val_corpus, "label7"), labels(val_corpus, "label3"))
    s1, s2, hist = fit_cascade(x, labels(corpus, "label7"), labels(corpus, "label3"), cfg,
                               stage1, stage2, val, link)
    return CascadeModel(s1, s2, channels, input_size, link), hist


def predict_tensor(model: CascadeModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p7 = nn.predict(model.stage1, x)
    p3 = nn.predict(model.stage2, x, link_vector(p7, model.link))
    return p7, p3


def predict_samples(model: CascadeModel, samples: list[AugmentedSample]) -> tuple[np.ndarray, np.ndarray]:
    return predict_tensor(model, to_tensor(samples, model.input_size))


def predict_cascade(model: CascadeModel, img: GrayImage, channels: ChannelConfig | None = None,
                    sample_id: str = "image") -> CascadePrediction:
    """Full pipeline for one image: filter, segment, wavelet, channels, stage 1, stage 2."""
    channels = channels or model.channels
    try:
        views = derive_channels(img, channels)
    except Exception as exc:
        raise StageError(f"preprocess:{sample_id}", exc) from exc
    x = np.empty((1, len(views), model.input_size, model.input_size))
    for c, ch in enumerate(views):
        x[0, c] = downscale(ch.to_float(), model.input_size) / ch.max_val
    try:
        p7, p3 = predict_tensor(model, x)
    except Exception as exc:
        raise StageError(f"classify:{sample_id}", exc) from exc
    return CascadePrediction(p7[0], p3[0])


def save_cascade(model: CascadeModel, directory: str | os.PathLike, prefix: str = "") -> Path:
    """Write both stage checkpoints and the JSON wiring descriptor; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    s1, s2 = f"{prefix}stage1.mmpn", f"{prefix}stage2.mmpn"
    nn.save_checkpoint(model.stage1, directory / s1)
    nn.save_checkpoint(model.stage2, directory / s2)
    desc = {"stage1_path": s1, "stage2_path": s2, **model.wiring,
            "input_size": model.input_size, "channels": asdict(model.channels),
            "abnormality_classes": list(ABNORMALITIES), "severity_classes": list(SEVERITIES)}
    path = directory / f"{prefix}cascade.json"
    path.write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")
    return path


def load_cascade(path: str | os.PathLike) -> CascadeModel:
    path = Path(path)
    desc = json.loads(path.read_text())
    s1 = nn.load_checkpoint(path.parent / desc["stage1_path"])
    s2 = nn.load_checkpoint(path.parent / desc["stage2_path"])
    if s2.aux_at != desc["concat_layer_index"]:
        raise ValueError("stage 2 checkpoint disagrees with the wiring descriptor")
    return CascadeModel(s1, s2, ChannelConfig(**desc["channels"]), desc["input_size"], desc["link"])
