"""Train the cascade on a small synthetic set under both input conditions.

A reduced budget (48 px inputs, 10 epochs) keeps this under a minute on one
core; the AUCs are correspondingly noisier than a full-size run.

    python3 demos/compare_conditions.py [work_dir]
"""
import logging
import sys
from pathlib import Path

from mammopipe.pipeline import RunConfig, report, run
from mammopipe.synthetic import generate_synthetic

logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_runs")
generate_synthetic(work / "data", n=60, size=64, seed=5)

dirs = []
for condition in ("original_only", "preprocessed"):
    cfg = RunConfig(dataset_path=str(work / "data"), output_dir=str(work / condition),
                    condition=condition, seed=5, input_size=48, max_epochs=10,
                    proxy_images=60, proxy_epochs=10)
    summary = run(cfg)
    print(f"{condition:>14}: mean validation AUC {summary['validation']['mean_auc']:.3f}")
    dirs.append(cfg.output_dir)

table = report(dirs, str(work / "report"))
print(table.to_text(), end="")
print(f"ROC plots in {work / 'report'}/")
