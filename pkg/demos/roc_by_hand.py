"""ROC construction on a tiny scored set, checked against pair counting.

Tied scores move the curve diagonally; the area still equals the fraction of
(positive, negative) pairs ranked correctly, ties counting one half.

    python3 demos/roc_by_hand.py [out.svg]
"""
import sys
from itertools import product

from mammopipe.evaluate import confusion, fpr, roc_curve, roc_svg, tpr

scores = [0.95, 0.80, 0.80, 0.70, 0.55, 0.40, 0.40, 0.20]
labels = [1, 1, 0, 1, 0, 1, 0, 0]

curve = roc_curve(scores, labels)
print(" threshold   FPR    TPR")
for f, t, thr in curve.points:
    print(f"{thr:>10}  {f:.3f}  {t:.3f}")

pos = [s for s, y in zip(scores, labels) if y]
neg = [s for s, y in zip(scores, labels) if not y]
pairs = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in product(pos, neg))
print(f"AUC from the curve: {curve.auc:.4f}")
print(f"pair counting:      {pairs / (len(pos) * len(neg)):.4f}")

c = confusion(scores, labels, 0.5)
print(f"at threshold 0.5: {c}  TPR {tpr(c).value:.2f}  FPR {fpr(c).value:.2f}")

if len(sys.argv) > 1:
    with open(sys.argv[1], "w") as fh:
        fh.write(roc_svg({"preprocessed": curve}, "toy ROC"))
    print("wrote", sys.argv[1])
