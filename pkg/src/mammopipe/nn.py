"""A small numpy CNN with explicit backprop, SGD with momentum and transfer-learning helpers.

Tensors are float64 arrays shaped (N, C, H, W) for image stages and
(N, F) after ``flatten``. A network may take an auxiliary vector that is
concatenated to the input of one dense layer (``aux_at``); the cascade uses
this to feed stage-1 probabilities into stage 2.
"""
from __future__ import annotations

import copy
import csv
import io
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import derive_seed

KINDS = ("conv", "relu", "maxpool", "flatten", "dense", "softmax", "dropout")
PARAM_KINDS = ("conv", "dense")


class ShapeError(ValueError):
    def __init__(self, layer: int, message: str):
        super().__init__(f"layer {layer}: {message}")
        self.layer = layer


class StaleCacheError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class LayerSpec:
    kind: str
    out_ch: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    out_features: int = 0
    rate: float = 0.0
    frozen: bool = False
    head: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "conv":
            return f"conv{self.kernel}x{self.kernel}x{self.out_ch}/s{self.stride}p{self.pad}"
        if self.kind == "maxpool":
            return f"maxpool{self.kernel}/s{self.stride}"
        if self.kind == "dense":
            return f"dense{self.out_features}"
        return self.kind


def conv(out_ch: int, kernel: int = 3, stride: int = 1, pad: int | None = None) -> LayerSpec:
    return LayerSpec("conv", out_ch=out_ch, kernel=kernel, stride=stride,
                     pad=kernel // 2 if pad is None else pad)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(kernel: int = 2, stride: int | None = None) -> LayerSpec:
    return LayerSpec("maxpool", kernel=kernel, stride=stride or kernel)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(out_features: int) -> LayerSpec:
    return LayerSpec("dense", out_features=out_features)


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


def dropout(rate: float = 0.5) -> LayerSpec:
    """Identity at run time; kept so imported backbones that contain dropout load."""
    return LayerSpec("dropout", rate=rate)


@dataclass
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: list[LayerSpec]
    params: list[dict | None]
    velocity: list[dict | None]
    rng_seed: int = 0
    aux_at: int | None = None
    aux_dim: int = 0
    version: int = 0
    shapes: list[tuple[int, ...]] = field(default_factory=list, repr=False)

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.shapes[-1]))

    def param_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind in PARAM_KINDS]

    def trainable(self, i: int) -> bool:
        return self.layers[i].kind in PARAM_KINDS and not self.layers[i].frozen

    def summary(self) -> str:
        lines = [f"input {self.input_shape}"]
        for i, (layer, shape) in enumerate(zip(self.layers, self.shapes[1:])):
            flags = "".join(f for f, on in ((" frozen", layer.frozen), (" head", layer.head)) if on)
            aux = f" (+aux {self.aux_dim})" if i == self.aux_at else ""
            lines.append(f"{i:2d} {layer.describe():<22} -> {shape}{aux}{flags}")
        return "\n".join(lines)


def _infer_shapes(input_shape, layers, aux_at=None, aux_dim=0):
    shapes = [tuple(input_shape)]
    s = tuple(input_shape)
    for i, layer in enumerate(layers):
        k = layer.kind
        if k == "conv":
            if len(s) != 3:
                raise ShapeError(i, f"conv needs (C, H, W) input, got {s}")
            c, h, w = s
            ho = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
            wo = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
            if ho < 1 or wo < 1:
                raise ShapeError(i, f"kernel {layer.kernel} does not fit input {s}")
            s = (layer.out_ch, ho, wo)
        elif k == "maxpool":
            if len(s) != 3:
                raise ShapeError(i, f"maxpool needs (C, H, W) input, got {s}")
            c, h, w = s
            ho = (h - layer.kernel) // layer.stride + 1
            wo = (w - layer.kernel) // layer.stride + 1
            if ho < 1 or wo < 1:
                raise ShapeError(i, f"pool window {layer.kernel} does not fit input {s}")
            s = (c, ho, wo)
        elif k == "flatten":
            s = (int(np.prod(s)),)
        elif k == "dense":
            if len(s) != 1:
                raise ShapeError(i, f"dense needs flat input, got {s} (missing flatten?)")
            s = (layer.out_features,)
        elif k == "softmax":
            if len(s) != 1:
                raise ShapeError(i, f"softmax needs flat input, got {s}")
        if i == aux_at and k != "dense":
            raise ShapeError(i, "auxiliary input can only join a dense layer")
        shapes.append(s)
    return shapes


def _init_layer(layer: LayerSpec, in_shape, seed: int, extra_in: int = 0) -> dict | None:
    rng = np.random.default_rng(seed)
    if layer.kind == "conv":
        fan_in = in_shape[0] * layer.kernel ** 2
        w = rng.standard_normal((layer.out_ch, in_shape[0], layer.kernel, layer.kernel))
        return {"W": w * math.sqrt(2.0 / fan_in), "b": np.zeros(layer.out_ch)}
    if layer.kind == "dense":
        fan_in = in_shape[0] + extra_in
        w = rng.standard_normal((fan_in, layer.out_features))
        return {"W": w * math.sqrt(2.0 / fan_in), "b": np.zeros(layer.out_features)}
    return None


def _zeros_like(params):
    return None if params is None else {k: np.zeros_like(v) for k, v in params.items()}


def build_network(input_shape, layers: list[LayerSpec], seed: int = 0,
                  aux_at: int | None = None, aux_dim: int = 0) -> NetworkSpec:
    """Validate composition and He-initialise every parameterised layer."""
    layers = [copy.copy(layer) for layer in layers]
    shapes = _infer_shapes(input_shape, layers, aux_at, aux_dim)
    params = [_init_layer(layer, shapes[i], derive_seed(seed, "init", i),
                          aux_dim if i == aux_at else 0)
              for i, layer in enumerate(layers)]
    return NetworkSpec(tuple(input_shape), layers, params, [_zeros_like(p) for p in params],
                       seed, aux_at, aux_dim if aux_at is not None else 0, 0, shapes)


def mininet_layers(input_shape, num_classes: int, global_pool: bool = False) -> list[LayerSpec]:
    """Two conv/relu/pool blocks, optional global max pool, dense64, relu, dense-C, softmax."""
    layers = [conv(16, 3), relu(), maxpool(2), conv(32, 3), relu(), maxpool(2)]
    if global_pool:
        h, w = input_shape[-2] // 4, input_shape[-1] // 4
        if h != w or h < 1:
            raise ShapeError(6, f"global pooling needs a square input, got {tuple(input_shape)}")
        layers.append(maxpool(h))
    return layers + [flatten(), dense(64), relu(), dense(num_classes), softmax()]


def mininet(input_shape, num_classes: int, seed: int = 0, global_pool: bool = False) -> NetworkSpec:
    """Reference backbone; ``global_pool`` collapses the last feature map to one value per filter."""
    return build_network(input_shape, mininet_layers(input_shape, num_classes, global_pool), seed)


# --- forward / backward -------------------------------------------------------

def _conv_windows(xp, k, s):
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]


@dataclass
class Cache:
    version: int
    net_id: int
    start: int
    stop: int
    entries: list


def forward(net: NetworkSpec, x: np.ndarray, aux: np.ndarray | None = None,
            start: int = 0, stop: int | None = None) -> tuple[np.ndarray, Cache]:
    """Run layers ``start..stop-1``; returns the last output and a backward cache."""
    stop = len(net.layers) if stop is None else stop
    x = np.asarray(x, dtype=np.float64)
    expected = net.shapes[start]
    if x.shape[1:] != expected:
        raise ShapeError(start, f"input shape {x.shape[1:]} does not match expected {expected}")
    needs_aux = net.aux_at is not None and start <= net.aux_at < stop
    if needs_aux:
        if aux is None:
            raise ValueError(f"layer {net.aux_at} expects an auxiliary input of size {net.aux_dim}")
        aux = np.asarray(aux, dtype=np.float64)
        if aux.shape != (x.shape[0], net.aux_dim):
            raise ShapeError(net.aux_at, f"aux shape {aux.shape} != {(x.shape[0], net.aux_dim)}")
    entries = []
    for i in range(start, stop):
        layer, p = net.layers[i], net.params[i]
        k = layer.kind
        if k == "conv":
            xp = np.pad(x, ((0, 0), (0, 0), (layer.pad,) * 2, (layer.pad,) * 2)) if layer.pad else x
            win = _conv_windows(xp, layer.kernel, layer.stride)
            out = np.tensordot(win, p["W"], axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
            out = out + p["b"][None, :, None, None]
            entries.append((xp.shape, win))
        elif k == "relu":
            mask = x > 0
            out = x * mask
            entries.append(mask)
        elif k == "maxpool":
            win = _conv_windows(x, layer.kernel, layer.stride)
            n, c, ho, wo = win.shape[:4]
            flat = win.reshape(n, c, ho, wo, -1)
            arg = flat.argmax(axis=-1)
            out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
            entries.append((x.shape, arg))
        elif k == "flatten":
            entries.append(x.shape)
            out = x.reshape(x.shape[0], -1)
        elif k == "dense":
            if i == net.aux_at:
                x = np.concatenate([x, aux], axis=1)
            out = x @ p["W"] + p["b"]
            entries.append(x)
        elif k == "softmax":
            z = x - x.max(axis=1, keepdims=True)
            e = np.exp(z)
            out = e / e.sum(axis=1, keepdims=True)
            entries.append(out)
        else:  # dropout: identity
            out = x
            entries.append(None)
        x = out
    return x, Cache(net.version, id(net), start, stop, entries)


def backward(net: NetworkSpec, cache: Cache, loss_grad: np.ndarray,
             wrt_logits: bool = False) -> list[dict | None]:
    """Parameter gradients for every non-frozen layer covered by ``cache``.

    With ``wrt_logits`` the incoming gradient is taken at the input of a
    trailing softmax layer, which is then skipped. Propagation stops once no
    earlier layer in the cache has trainable parameters.
    """
    if cache.version != net.version or cache.net_id != id(net):
        raise StaleCacheError("cache was produced by a different network state; re-run forward")
    grads: list[dict | None] = [None] * len(net.layers)
    top = cache.stop
    if wrt_logits:
        if net.layers[top - 1].kind != "softmax":
            raise ValueError("wrt_logits requires the last layer to be softmax")
        top -= 1
    trainable = [i for i in range(cache.start, top) if net.trainable(i)]
    if not trainable:
        return grads
    lowest = trainable[0]
    g = np.asarray(loss_grad, dtype=np.float64)
    for i in range(top - 1, lowest - 1, -1):
        layer, p, entry = net.layers[i], net.params[i], cache.entries[i - cache.start]
        need_input_grad = i > lowest
        k = layer.kind
        if k == "conv":
            xp_shape, win = entry
            if not layer.frozen:
                grads[i] = {"W": np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])),
                            "b": g.sum(axis=(0, 2, 3))}
            if need_input_grad:
                dxp = np.zeros(xp_shape)
                s, kk = layer.stride, layer.kernel
                ho, wo = g.shape[2], g.shape[3]
                for a in range(kk):
                    for b in range(kk):
                        contrib = np.tensordot(g, p["W"][:, :, a, b], axes=([1], [0]))
                        dxp[:, :, a:a + s * ho:s, b:b + s * wo:s] += contrib.transpose(0, 3, 1, 2)
                pd = layer.pad
                g = dxp[:, :, pd:xp_shape[2] - pd, pd:xp_shape[3] - pd] if pd else dxp
        elif k == "relu":
            g = g * entry
        elif k == "maxpool":
            x_shape, arg = entry
            dx = np.zeros(x_shape)
            s, kk = layer.stride, layer.kernel
            ho, wo = g.shape[2], g.shape[3]
            for a in range(kk):
                for b in range(kk):
                    hit = arg == a * kk + b
                    dx[:, :, a:a + s * ho:s, b:b + s * wo:s] += g * hit
            g = dx
        elif k == "flatten":
            g = g.reshape(entry)
        elif k == "dense":
            xin = entry
            if not layer.frozen:
                grads[i] = {"W": xin.T @ g, "b": g.sum(axis=0)}
            if need_input_grad:
                g = g @ p["W"].T
                if i == net.aux_at:
                    g = g[:, :g.shape[1] - net.aux_dim]
        elif k == "softmax":
            pr = entry
            g = pr * (g - np.sum(g * pr, axis=1, keepdims=True))
    return grads


# --- loss -----------------------------------------------------------------------

def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def cross_entropy_logit_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean CE)/d(logits) for softmax outputs ``probs``."""
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


# --- optimisation ---------------------------------------------------------------

@dataclass
class TrainConfig:
    max_epochs: int = 30
    mini_batch: int = 10
    learn_rate: float = 3e-4
    head_lr_multiplier: float = 10.0
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1 or self.mini_batch < 1:
            raise ValueError("max_epochs and mini_batch must be positive")
        if self.learn_rate < 0:
            raise ValueError("learn_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def sgdm_step(net: NetworkSpec, grads: list[dict | None], cfg: TrainConfig) -> NetworkSpec:
    """v <- momentum*v - lr*g ; w <- w + v, head layers at lr*head_lr_multiplier."""
    active = [i for i in range(len(net.layers)) if net.trainable(i)]
    for i in active:
        if grads[i] is None:
            raise ValueError(f"layer {i}: missing gradient for trainable parameters")
        for name, g in grads[i].items():
            if not np.all(np.isfinite(g)):
                bad = int(np.count_nonzero(~np.isfinite(g)))
                raise NonFiniteGradientError(
                    f"layer {i} ({net.layers[i].describe()}) param {name}: {bad} non-finite "
                    f"gradient entries; step aborted, parameters untouched")
    for i in active:
        lr = cfg.learn_rate * (cfg.head_lr_multiplier if net.layers[i].head else 1.0)
        for name, g in grads[i].items():
            v = net.velocity[i][name]
            v *= cfg.momentum
            v -= lr * g
            net.params[i][name] += v
    net.version += 1
    return net


# --- transfer learning -----------------------------------------------------------

def freeze_layers(net: NetworkSpec, predicate) -> NetworkSpec:
    """Flag layers frozen where ``predicate(index, layer)`` is true."""
    for i, layer in enumerate(net.layers):
        if predicate(i, layer):
            layer.frozen = True
    return net


def unfreeze_all(net: NetworkSpec) -> NetworkSpec:
    for layer in net.layers:
        layer.frozen = False
    return net


def first_n(n: int):
    return lambda i, layer: i < n


def replace_head(net: NetworkSpec, new_layers: list[LayerSpec] | None, num_classes: int,
                 n_remove: int = 3, seed: int | None = None, aux_dim: int = 0) -> NetworkSpec:
    """Drop the last ``n_remove`` layers and append a freshly initialised head.

    Retained parameters are copied bit for bit. The new layers are flagged as
    head (higher learning rate). With ``aux_dim > 0`` the auxiliary vector is
    concatenated at the first new dense layer.
    """
    if len(net.layers) < 3 or n_remove < 3 or n_remove > len(net.layers):
        raise ValueError(f"need >= 3 layers to remove from a net of {len(net.layers)}, got {n_remove}")
    if new_layers is None:
        new_layers = [relu(), dense(num_classes), softmax()]
    new_layers = [copy.copy(layer) for layer in new_layers]
    dense_new = [j for j, layer in enumerate(new_layers) if layer.kind == "dense"]
    if not dense_new or new_layers[dense_new[-1]].out_features != num_classes:
        raise ValueError(f"final dense layer of the new head must output {num_classes} classes")
    keep = len(net.layers) - n_remove
    if net.aux_at is not None and net.aux_at >= keep:
        raise ValueError("cannot remove the layer that receives the auxiliary input")
    for layer in new_layers:
        layer.head, layer.frozen = True, False
    layers = [copy.copy(layer) for layer in net.layers[:keep]] + new_layers
    aux_at = net.aux_at
    if aux_dim:
        if aux_at is not None:
            raise ValueError("network already has an auxiliary input")
        aux_at = keep + dense_new[0]
    else:
        aux_dim = net.aux_dim
    try:
        shapes = _infer_shapes(net.input_shape, layers, aux_at, aux_dim)
    except ShapeError as exc:
        raise ShapeError(exc.layer, f"head does not fit splice point at layer {keep}: {exc}") from None
    seed = net.rng_seed if seed is None else seed
    params = [copy.deepcopy(p) for p in net.params[:keep]]
    for j in range(keep, len(layers)):
        params.append(_init_layer(layers[j], shapes[j], derive_seed(seed, "head", j),
                                  aux_dim if j == aux_at else 0))
    velocity = [copy.deepcopy(v) for v in net.velocity[:keep]] + [_zeros_like(p) for p in params[keep:]]
    return NetworkSpec(net.input_shape, layers, params, velocity, seed, aux_at,
                       aux_dim if aux_at is not None else 0, 0, shapes)


# --- training loop ---------------------------------------------------------------

def _chunks(n, size):
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


def predict(net: NetworkSpec, x: np.ndarray, aux: np.ndarray | None = None,
            start: int = 0, batch: int = 64) -> np.ndarray:
    outs = []
    for sl in _chunks(len(x), batch):
        out, _ = forward(net, x[sl], None if aux is None else aux[sl], start=start)
        outs.append(out)
    return np.concatenate(outs) if outs else np.empty((0, net.output_dim))


def _prefix_features(net, x, aux, stop, batch=32):
    outs = []
    for sl in _chunks(len(x), batch):
        out, _ = forward(net, x[sl], None if aux is None else aux[sl], stop=stop)
        outs.append(out)
    return np.concatenate(outs)


def _metrics(net, feats, y, aux, start):
    probs = predict(net, feats, aux, start=start)
    return cross_entropy(probs, y), float(np.mean(probs.argmax(axis=1) == y))


def train(net: NetworkSpec, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          val: tuple | None = None, aux: np.ndarray | None = None,
          val_aux: np.ndarray | None = None) -> tuple[NetworkSpec, list[dict]]:
    """Mini-batch SGDM on mean cross-entropy with per-epoch train/val metrics.

    ``val`` is ``(x_val, y_val)``. Outputs of a leading run of frozen layers
    are computed once and reused, which leaves results unchanged because
    those layers are fixed functions.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty training corpus")
    if len(y) != len(x):
        raise ValueError(f"{len(x)} inputs but {len(y)} labels")
    if net.layers[-1].kind != "softmax":
        raise ValueError("training expects a softmax output layer")
    n_classes = net.output_dim
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")

    trainable = [i for i in range(len(net.layers)) if net.trainable(i)]
    start = trainable[0] if trainable else len(net.layers) - 1
    aux_in_prefix = net.aux_at is not None and net.aux_at < start
    feats = _prefix_features(net, x, aux, start) if start else x
    suffix_aux = None if aux_in_prefix else aux
    if val is not None:
        xv, yv = np.asarray(val[0], dtype=np.float64), np.asarray(val[1], dtype=np.int64)
        vfeats = _prefix_features(net, xv, val_aux, start) if start else xv
        vaux = None if aux_in_prefix else val_aux

    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x))
        for sl in _chunks(len(x), cfg.mini_batch):
            idx = order[sl]
            probs, cache = forward(net, feats[idx], None if suffix_aux is None else suffix_aux[idx],
                                   start=start)
            if trainable:
                grads = backward(net, cache, cross_entropy_logit_grad(probs, y[idx]), wrt_logits=True)
                sgdm_step(net, grads, cfg)
        tl, ta = _metrics(net, feats, y, suffix_aux, start)
        row = {"epoch": epoch, "train_loss": tl, "val_loss": float("nan"),
               "train_acc": ta, "val_acc": float("nan")}
        if val is not None:
            row["val_loss"], row["val_acc"] = _metrics(net, vfeats, yv, vaux, start)
        history.append(row)
    return net, history


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])
    for r in history:
        w.writerow([r["epoch"]] + [("" if math.isnan(r[k]) else repr(float(r[k])))
                                   for k in ("train_loss", "val_loss", "train_acc", "val_acc")])
    return buf.getvalue()


# --- checkpoint format -------------------------------------------------------------
#
# little-endian throughout
#   header : b"MMPN" | u16 version | u16 layer count | u8 input ndim | u32 dims...
#            | i32 aux_at (-1 = none) | u32 aux_dim
#   layer  : u8 kind tag | u8 flags (1=frozen, 2=head) | i32 out_ch, kernel, stride,
#            pad, out_features | f32 rate | u8 param count
#            then per param: u8 name length | name | u8 ndim | u32 dims... | f32 values

MAGIC = b"MMPN"
FORMAT_VERSION = 1


def encode_checkpoint(net: NetworkSpec) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<HHB", FORMAT_VERSION, len(net.layers), len(net.input_shape))
    out += struct.pack(f"<{len(net.input_shape)}I", *net.input_shape)
    out += struct.pack("<iI", -1 if net.aux_at is None else net.aux_at, net.aux_dim)
    for layer, p in zip(net.layers, net.params):
        flags = (1 if layer.frozen else 0) | (2 if layer.head else 0)
        out += struct.pack("<BB5if", KINDS.index(layer.kind), flags, layer.out_ch, layer.kernel,
                           layer.stride, layer.pad, layer.out_features, layer.rate)
        items = sorted(p.items()) if p else []
        out += struct.pack("<B", len(items))
        for name, arr in items:
            bname = name.encode("ascii")
            out += struct.pack("<B", len(bname)) + bname
            out += struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape)
            out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def decode_checkpoint(data: bytes, seed: int = 0) -> NetworkSpec:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, n_layers, ndim = take("<HHB")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    input_shape = take(f"<{ndim}I")
    aux_at, aux_dim = take("<iI")
    layers, params = [], []
    for _ in range(n_layers):
        tag, flags, out_ch, kernel, stride, pad, out_features, rate = take("<BB5if")
        if tag >= len(KINDS):
            raise CheckpointError(f"unknown layer tag {tag}")
        layers.append(LayerSpec(KINDS[tag], out_ch, kernel, stride, pad, out_features,
                                float(rate), bool(flags & 1), bool(flags & 2)))
        (count,) = take("<B")
        p = {}
        for _ in range(count):
            (nlen,) = take("<B")
            name = data[pos:pos + nlen].decode("ascii")
            pos += nlen
            (adim,) = take("<B")
            dims = take(f"<{adim}I")
            n = int(np.prod(dims))
            if pos + 4 * n > len(data):
                raise CheckpointError("truncated parameter data")
            p[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float64).reshape(dims)
            pos += 4 * n
        params.append(p or None)
    aux = None if aux_at < 0 else aux_at
    shapes = _infer_shapes(input_shape, layers, aux, aux_dim)
    for i, (layer, p) in enumerate(zip(layers, params)):
        expected = _init_layer(layer, shapes[i], 0, aux_dim if i == aux else 0)
        if (expected is None) != (p is None) or (
                p is not None and any(p[k].shape != v.shape for k, v in expected.items())):
            raise CheckpointError(f"layer {i}: parameter shapes do not match the layer spec")
    return NetworkSpec(tuple(input_shape), layers, params, [_zeros_like(p) for p in params],
                       seed, aux, aux_dim if aux is not None else 0, 0, shapes)


def save_checkpoint(net: NetworkSpec, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(net))


def load_checkpoint(path: str | os.PathLike) -> NetworkSpec:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
