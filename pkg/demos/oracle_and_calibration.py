"""Walkthrough: oracle merging, segmentation metrics and calibration.

Run with: python3 demos/oracle_and_calibration.py
"""

from fusekit.evaluation import (
    calibration,
    compute_metrics,
    confusion_matrix,
    oracle_merge,
)
from fusekit.fixtures import calibration_set, prediction_sets

# Two models, each correct on 60% of the pixels, sharing 40% of their
# correct sets. The oracle keeps every pixel that either model gets
# right, so its accuracy is the union: 0.6 + 0.6 - 0.4.
gt, preds = prediction_sets([0.6, 0.6], overlap=0.4, seed=1)
merged = oracle_merge(preds, gt)

for name, pred in [("model A", preds[0]), ("model B", preds[1]), ("oracle", merged)]:
    scores = compute_metrics(confusion_matrix([pred], [gt], num_classes=5))
    print(f"{name:8s}  pixel accuracy {scores.pixel_accuracy:.3f}  miou {scores.miou:.3f}")

# Calibration: three bins populated with known accuracy. The last bin is
# overconfident on purpose, which dominates the maximum error.
pred_set, cal_gt = calibration_set(
    [(2, 200, 0.25), (5, 200, 0.55), (9, 200, 0.60)]
)
report = calibration(pred_set, [cal_gt], num_bins=10)
print(f"\nECE {report.ece:.4f}  MCE {report.mce:.4f}  KL {report.kl:.4f}")
for i, b in enumerate(report.bins):
    if b.count:
        print(f"bin {i}: n={b.count:4d}  accuracy {b.accuracy:.3f}  confidence {b.confidence:.3f}")
