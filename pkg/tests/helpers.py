"""Shared builders and oracles for the test modules."""
import numpy as np

from mammopipe import nn
from mammopipe.mias import ABNORMALITIES, Dataset, MiasRecord, Sample

# mini-MIAS abnormality distribution
TABLE_COUNTS = {"CALC": 34, "CIRC": 24, "SPIC": 24, "MISC": 18, "ARCH": 12, "ASYM": 21, "NORM": 189}


def make_records(counts: dict[str, int], prefix: str = "r") -> list[MiasRecord]:
    recs, i = [], 0
    for cls in ABNORMALITIES:
        for _ in range(counts.get(cls, 0)):
            i += 1
            sev = "Normal" if cls == "NORM" else ("Benign" if i % 2 else "Malignant")
            recs.append(MiasRecord(f"{prefix}{i:04d}", "F", cls, sev))
    return recs


def make_dataset(counts: dict[str, int]) -> Dataset:
    return Dataset([Sample(r) for r in make_records(counts)])


def mann_whitney(scores, labels):
    """Fraction of (pos, neg) pairs ordered correctly, ties worth one half."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


# --- networks ----------------------------------------------------------------------

LAYER_KINDS = ("conv", "relu", "maxpool", "flatten", "dense", "softmax", "dropout", "aux")


def random_net(rng, case: int):
    """Small random network; ``case`` rotates which optional pieces appear."""
    c = int(rng.integers(1, 4))
    size = int(rng.integers(4, 9))
    k = int(rng.integers(1, 4))
    layers = [nn.conv(int(rng.integers(1, 4)), k, int(rng.integers(1, 3)), int(rng.integers(0, k)))]
    layers.append(nn.relu())
    if case % 2 == 0:
        layers.append(nn.maxpool(2, int(rng.integers(1, 3))))
    if case % 3 == 0:
        layers += [nn.conv(int(rng.integers(1, 4)), 1)]
    layers += [nn.flatten()]
    if case % 5 == 0:
        layers.append(nn.dropout(0.3))
    hidden = int(rng.integers(2, 6))
    layers += [nn.dense(hidden), nn.relu(), nn.dense(int(rng.integers(2, 5)))]
    if case % 4 != 3:
        layers.append(nn.softmax())
    aux_dim = int(rng.integers(1, 4)) if case % 3 == 1 else 0
    aux_at = next(i for i, layer in enumerate(layers) if layer.kind == "dense") if aux_dim else None
    try:
        net = nn.build_network((c, size, size), layers, int(rng.integers(0, 2**31)), aux_at, aux_dim)
    except nn.ShapeError:
        return random_net(rng, case)
    for p in net.params:
        if p is not None:
            p["b"] = rng.normal(0, 0.3, p["b"].shape)
    n = int(rng.integers(1, 4))
    while True:
        x = rng.normal(size=(n, c, size, size))
        aux = rng.normal(size=(n, aux_dim)) if aux_dim else None
        # central differences are only meaningful away from relu/max switch points
        if kink_margin(net, x, aux) > 1e-3:
            return net, x, aux


def kink_margin(net, x, aux) -> float:
    """Distance of the input to the nearest relu or max-pool switching point."""
    margin = np.inf
    for i, layer in enumerate(net.layers):
        if layer.kind not in ("relu", "maxpool"):
            continue
        h = nn.forward(net, x, aux, stop=i)[0]
        if layer.kind == "relu":
            margin = min(margin, float(np.min(np.abs(h))))
        else:
            win = np.lib.stride_tricks.sliding_window_view(h, (layer.kernel,) * 2, axis=(2, 3))
            win = win[:, :, ::layer.stride, ::layer.stride].reshape(*win.shape[:2], -1, layer.kernel ** 2)
            top2 = np.sort(win, axis=-1)[..., -2:]
            active = top2[..., 1] > 0
            if np.any(active):
                margin = min(margin, float(np.min((top2[..., 1] - top2[..., 0])[active])))
    return margin


def gradient_error(net, x, aux, rng, eps=1e-4) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Loss is a fixed random linear functional of the network output, so every
    layer's backward rule (softmax included) is exercised.
    """
    out, cache = nn.forward(net, x, aux)
    r = rng.normal(size=out.shape)
    grads = nn.backward(net, cache, r)

    def loss():
        return float(np.sum(nn.forward(net, x, aux)[0] * r))

    worst = 0.0
    for i, p in enumerate(net.params):
        if p is None:
            continue
        for name, w in p.items():
            num = np.zeros_like(w)
            for idx in np.ndindex(w.shape):
                old = w[idx]
                w[idx] = old + eps
                up = loss()
                w[idx] = old - eps
                down = loss()
                w[idx] = old
                num[idx] = (up - down) / (2 * eps)
            ana = grads[i][name]
            # floor keeps round-off on vanishing (saturated) gradients from reading as error
            denom = max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-6)
            worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst
