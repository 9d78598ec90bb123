"""Scoring predictions against dense ground truth.

python3 demos/03_evaluate.py
"""
import numpy as np

from densocc.geometry import GridSpec, LabelGrid, PointCloud
from densocc.metrics import ReconReport, evaluate_run, mean_reports, occupancy_scores, recon_metrics

rng = np.random.default_rng(0)

# Chamfer distance is accuracy plus completeness.
for acc, comp in ((0.724, 1.226), (0.771, 1.434)):
    print(f"acc {acc}  comp {comp}  ->  CD {ReconReport.from_components(acc, comp, 0, 0).cd:.3f}")

# Point sets: a noisy copy of a plane patch, scored at tau = 0.5 m.
gt = np.column_stack([rng.uniform(-5, 5, (2000, 2)), np.zeros(2000)])
pred = gt[:1500] + rng.normal(0, 0.3, (1500, 3))
r = recon_metrics(pred, gt)
print(f"acc {r.acc:.3f} comp {r.comp:.3f} prec {r.prec:.3f} recall {r.recall:.3f} F {r.fscore:.3f}")

# Averaging frames: the mean F-score is not the F-score of the mean P and R.
frames = [recon_metrics(gt[:1500] + rng.normal(0, sd, (1500, 3)), gt) for sd in (0.1, 0.4, 0.9)]
m = mean_reports(frames)
print(f"mean F {m.fscore:.4f}  vs  F(mean P, mean R) "
      f"{ReconReport.from_components(m.acc, m.comp, m.prec, m.recall).fscore:.4f}")

# Grids: perturb 10% of a labeled grid and score it.
spec = GridSpec((0, 0, 0), 0.5, (16, 16, 8))
truth = np.where(rng.random(spec.dims) < 0.2, rng.integers(1, 5, spec.dims), 0).astype(np.uint16)
noisy = truth.copy()
flip = rng.random(spec.dims) < 0.1
noisy[flip] = rng.integers(0, 5, flip.sum())
s = occupancy_scores(LabelGrid(spec, noisy), LabelGrid(spec, truth))
print(f"SC IoU {s.sc_iou:.3f}  SSC mIoU {s.ssc_miou:.3f} over classes {s.classes}")
for c in s.classes:
    print(f"  class {c}: IoU {s.counts.class_iou(c):.3f}")

# A raw point cloud can be scored too; without labels only occupancy counts.
cloud = PointCloud(spec.centers(np.argwhere(truth)) + rng.normal(0, 0.05, (np.count_nonzero(truth), 3)))
report = evaluate_run(cloud, LabelGrid(spec, truth))
print({k: (round(v, 3) if isinstance(v, float) else v) for k, v in report.items() if k != "per_class"})
