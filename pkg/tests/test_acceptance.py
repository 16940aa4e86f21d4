"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (about 6 minutes on one
core, dominated by the two end-to-end training runs). Criterion 5 needs the
real mini-MIAS directory in $MAMMOPIPE_DATA and is skipped otherwise.
"""
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from mammopipe import nn
from mammopipe.cli import main
from mammopipe.evaluate import ConfusionCounts, roc_curve, tpr
from mammopipe.mias import load_dataset, split_train_val
from mammopipe.pipeline import DATA_ENV, RunConfig, run
from mammopipe.preprocess import kmeans_segment
from mammopipe.image import GrayImage
from mammopipe.synthetic import generate_synthetic
from mammopipe.wavelet import dwt2d_level, idwt2d, multilevel_dwt, reconstruct

from helpers import LAYER_KINDS, gradient_error, mann_whitney, random_net
from test_preprocess import brute_force_2means


@pytest.fixture
def verdict(capsys):
    def emit(criterion: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        assert ok, f"{criterion}: {detail}"
    return emit


def test_c1_wavelet_roundtrip(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_rt = worst_energy = 0.0
    for _ in range(200):
        h, w = 2 * rng.integers(4, 65, size=2)
        x = rng.normal(0, 100, (h, w))
        total = float(np.sum(x ** 2))
        band = dwt2d_level(x)
        worst_rt = max(worst_rt, float(np.max(np.abs(idwt2d(band) - x))))
        energy = sum(float(np.sum(c ** 2)) for c in (band.approx, band.horiz, band.vert, band.diag))
        worst_energy = max(worst_energy, abs(energy - total) / total)
        pyr = multilevel_dwt(x, 3)
        worst_rt = max(worst_rt, float(np.max(np.abs(reconstruct(pyr) - x))))
        if h % 8 == 0 and w % 8 == 0:       # no odd intermediate grid, so no padding
            energy = sum(float(np.sum(c ** 2)) for c in pyr.coefficients())
            worst_energy = max(worst_energy, abs(energy - total) / total)
    elapsed = time.perf_counter() - t0
    ok = worst_rt < 1e-10 and worst_energy < 1e-6 and elapsed < 10
    verdict("wavelet round-trip", ok,
            f"max abs err {worst_rt:.2e} (<1e-10), energy rel err {worst_energy:.2e} (<1e-6), {elapsed:.2f}s (<10s)")


def test_c2_gradient_suite(verdict):
    rng = np.random.default_rng(99)
    t0 = time.perf_counter()
    worst, seen = 0.0, set()
    for case in range(50):
        net, x, aux = random_net(rng, case)
        seen |= {layer.kind for layer in net.layers} | ({"aux"} if aux is not None else set())
        worst = max(worst, gradient_error(net, x, aux, rng, eps=1e-4))
    elapsed = time.perf_counter() - t0
    missing = set(LAYER_KINDS) - seen
    ok = worst < 1e-4 and elapsed < 60 and not missing
    verdict("gradient suite", ok,
            f"50 configs, worst rel err {worst:.2e} (<1e-4), kinds missing: {sorted(missing) or 'none'}, "
            f"{elapsed:.1f}s (<60s)")


def test_c3_auc_pair_counting(verdict):
    rng = np.random.default_rng(5)
    worst, sets = 0.0, 0
    while sets < 500:
        n = int(rng.integers(2, 13))
        labels = rng.random(n) < 0.5
        if labels.all() or not labels.any():
            continue
        scores = rng.integers(0, 6, n) / 5.0      # coarse grid forces ties
        curve = roc_curve(scores, labels)
        worst = max(worst, abs(curve.trapezoid() - mann_whitney(scores, labels)))
        sets += 1
    spot = tpr(ConfusionCounts(tp=5, fp=0, tn=0, fn=5))
    ok = worst <= 1e-12 and spot.value == 0.5 and not spot.degenerate
    verdict("AUC vs pair counting", ok, f"500 sets, worst |diff| {worst:.1e} (<=1e-12), tpr(5,5) = {spot.value}")


def test_c4_kmeans_brute_force(verdict):
    rng = np.random.default_rng(17)
    worst, monotone, steps = 0.0, True, 0
    for i in range(100):
        values = rng.integers(0, 256, 6)
        res = kmeans_segment(GrayImage(values.reshape(2, 3)), k=2, seed=i)
        best = brute_force_2means(values.astype(float))
        worst = max(worst, abs(res.objective - best) / max(best, 1.0))
        # plain Lloyd from k-means++ starts: the trace must never increase
        lloyd = kmeans_segment(GrayImage(values.reshape(2, 3)), k=2, seed=i, exact=False)
        for trace in (res.trace, lloyd.trace):
            monotone &= all(b <= a + 1e-9 * max(a, 1.0) for a, b in zip(trace, trace[1:]))
        steps += len(lloyd.trace) - 1
    ok = worst < 1e-9 and monotone
    verdict("k-means vs brute force", ok,
            f"100 images, worst rel gap {worst:.1e}, traces monotone: {monotone} ({steps} Lloyd steps checked)")


def test_c5_real_ingest(verdict):
    path = os.environ.get(DATA_ENV)
    if not path or not Path(path).is_dir():
        pytest.skip(f"real mini-MIAS not available (set {DATA_ENV})")
    ds, summary = load_dataset(path)
    counts = summary["abnormality_counts"]
    want = {"CALC": 34, "CIRC": 24, "SPIC": 24, "MISC": 18, "ARCH": 12, "ASYM": 21, "NORM": 189}
    train, val = split_train_val(ds, 0.75, seed=0)
    ok = counts == want and summary["total"] == 322 and (len(train), len(val)) == (232, 90)
    verdict("mini-MIAS ingest", ok,
            f"counts {counts}, total {summary['total']}, 0.75 split {len(train)}/{len(val)} (want 232/90)")


def _blobs(n, seed):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(0, 0.5, (n, 1, 8, 8)) + np.where(y, 1.0, -1.0)[:, None, None, None]
    return x, y


def _snapshot(net):
    return [None if p is None else {k: v.tobytes() for k, v in p.items()} for p in net.params]


def test_c6_transfer_mechanics(verdict):
    x, y = _blobs(40, 1)
    # freeze everything: one epoch changes nothing
    net = nn.freeze_layers(nn.mininet((1, 8, 8), 2, seed=3), lambda i, layer: True)
    before = _snapshot(net)
    net, _ = nn.train(net, x, y, nn.TrainConfig(max_epochs=1))
    frozen_ok = _snapshot(net) == before

    backbone = nn.mininet((1, 8, 8), 4, seed=4)
    before = _snapshot(backbone)
    tuned = nn.replace_head(backbone, None, 2, seed=5)
    keep = len(tuned.layers) - 3
    splice_ok = _snapshot(tuned)[:keep] == before[:keep] and _snapshot(backbone) == before

    tuned = nn.freeze_layers(tuned, lambda i, layer: not layer.head)
    tuned, hist = nn.train(tuned, x, y, nn.TrainConfig(max_epochs=30, seed=6))
    epochs = next((h["epoch"] for h in hist if h["train_acc"] == 1.0), None)
    ok = frozen_ok and splice_ok and epochs is not None
    verdict("transfer mechanics", ok,
            f"freeze-all bitwise: {frozen_ok}, replace_head bitwise: {splice_ok}, "
            f"head-only accuracy 1.0 at epoch {epochs} (<=30)")


@pytest.fixture(scope="module")
def synthetic_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    assert main(["synthetic", "--output-dir", str(root / "data"), "--n", "120", "--seed", "7"]) == 0
    out = {}
    for cond in ("preprocessed", "original_only"):
        cfg = RunConfig(dataset_path=str(root / "data"), output_dir=str(root / cond), seed=7, condition=cond)
        t0 = time.perf_counter()
        summary = run(cfg)
        out[cond] = (summary, time.perf_counter() - t0)
    return out


@pytest.mark.slow
def test_c7_end_to_end_synthetic(verdict, synthetic_runs):
    pre, t_pre = synthetic_runs["preprocessed"]
    orig, t_orig = synthetic_runs["original_only"]
    aucs = pre["validation"]["auc"]
    m_pre, m_orig = pre["validation"]["mean_auc"], orig["validation"]["mean_auc"]
    ok = (t_pre < 600 and all(a is not None and a >= 0.90 for a in aucs.values())
          and m_pre >= m_orig - 0.02)
    shown = ", ".join(f"{k} {v:.3f}" for k, v in aucs.items())
    verdict("end-to-end synthetic", ok,
            f"preprocessed AUCs {shown} (>=0.90); mean {m_pre:.3f} vs original_only {m_orig:.3f} "
            f"(>= -0.02); runtime {t_pre:.0f}s (<600s), original_only {t_orig:.0f}s")


@pytest.mark.slow
def test_c8_determinism(verdict, tmp_path):
    generate_synthetic(tmp_path / "data", n=30, size=64, seed=11)
    cfg = RunConfig(dataset_path=str(tmp_path / "data"), output_dir=str(tmp_path / "run"), seed=3,
                    max_epochs=3, proxy_images=16, proxy_epochs=2)
    names = ("summary.json", "backbone.mmpn", "stage1.mmpn", "stage2.mmpn")
    digests = []
    for _ in range(2):
        run(cfg)
        digests.append({n: (tmp_path / "run" / n).read_bytes() for n in names})
    same = [n for n in names if digests[0][n] == digests[1][n]]
    embedded = json.loads(digests[0]["summary.json"])["config"] == cfg.to_dict()
    ok = len(same) == len(names) and embedded
    verdict("determinism", ok, f"byte-identical: {same}; config embedded in summary: {embedded}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
