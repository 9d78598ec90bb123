"""Occupancy (SC IoU / SSC mIoU) and point-set reconstruction metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import LabelGrid, PointCloud
from .labeling import GridMismatchError
from .voxelize import occupancy_to_points, voxelize_points

DEFAULT_TAU = 0.5


@dataclass(frozen=True, eq=False)
class ConfusionCounts:
    """Per-class TP/FP/FN (index = class id; row 0 unused) plus binary occupancy counts."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    occ_tp: int
    occ_fp: int
    occ_fn: int

    @property
    def num_classes(self) -> int:
        return len(self.tp)

    def class_iou(self, c: int) -> float | None:
        denom = self.tp[c] + self.fp[c] + self.fn[c]
        return None if denom == 0 else float(self.tp[c] / denom)


@dataclass(frozen=True, eq=False)
class OccupancyScores:
    sc_iou: float
    ssc_miou: float
    counts: ConfusionCounts
    classes: tuple[int, ...]  # classes averaged into ssc_miou


def confusion_counts(pred: LabelGrid, gt: LabelGrid, num_classes: int | None = None) -> ConfusionCounts:
    if pred.spec != gt.spec:
        raise GridMismatchError("prediction and ground truth grids differ")
    p = pred.labels.reshape(-1).astype(np.int64)
    g = gt.labels.reshape(-1).astype(np.int64)
    c = int(max(p.max(initial=0), g.max(initial=0))) + 1
    if num_classes is not None:
        if num_classes < c:
            raise ValueError(f"labels reach {c - 1} but num_classes is {num_classes}")
        c = num_classes
    conf = np.bincount(g * c + p, minlength=c * c).reshape(c, c)  # rows: gt, cols: pred
    tp = np.diag(conf).copy()
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    po, go = p != 0, g != 0
    return ConfusionCounts(
        tp, fp, fn,
        int(np.count_nonzero(po & go)),
        int(np.count_nonzero(po & ~go)),
        int(np.count_nonzero(~po & go)),
    )


def occupancy_scores(pred: LabelGrid, gt: LabelGrid, num_classes: int | None = None) -> OccupancyScores:
    """SC IoU over binary occupancy and SSC mIoU over the semantic classes present in ``gt``.

    Class 0 (free) never enters the mean. Two empty occupancies score IoU 1;
    with no semantic class in ``gt`` the mIoU is 1 if the prediction is also
    empty and 0 otherwise.
    """
    counts = confusion_counts(pred, gt, num_classes)
    denom = counts.occ_tp + counts.occ_fp + counts.occ_fn
    sc = 1.0 if denom == 0 else counts.occ_tp / denom
    present = tuple(int(c) for c in range(1, counts.num_classes) if counts.tp[c] + counts.fn[c] > 0)
    if present:
        miou = float(np.mean([counts.class_iou(c) for c in present]))
    else:
        miou = 1.0 if counts.occ_fp == 0 else 0.0
    return OccupancyScores(float(sc), miou, counts, present)


@dataclass(frozen=True)
class ReconReport:
    acc: float
    comp: float
    prec: float
    recall: float
    cd: float
    fscore: float
    tau: float

    @classmethod
    def from_components(cls, acc, comp, prec, recall, tau=DEFAULT_TAU) -> ReconReport:
        denom = prec + recall
        f = 2 * prec * recall / denom if denom > 0 else 0.0
        return cls(float(acc), float(comp), float(prec), float(recall), float(acc + comp), float(f), float(tau))


def nn_distances(src: np.ndarray, dst: np.ndarray, workers: int = 1) -> np.ndarray:
    """Distance from each point of ``src`` to its nearest point in ``dst``."""
    d, _ = cKDTree(dst).query(src, k=1, workers=workers)
    return d


def _positions(x) -> np.ndarray:
    return x.positions if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)


def recon_metrics(pred, gt, tau: float = DEFAULT_TAU, workers: int = 1) -> ReconReport:
    """Accuracy, completeness, precision, recall, Chamfer distance and F-score between point sets."""
    p, g = _positions(pred), _positions(gt)
    if len(p) == 0 or len(g) == 0:
        raise ValueError("reconstruction metrics are undefined for an empty point set")
    d_pred = nn_distances(p, g, workers)
    d_gt = nn_distances(g, p, workers)
    return ReconReport.from_components(
        d_pred.mean(), d_gt.mean(), np.mean(d_pred < tau), np.mean(d_gt < tau), tau
    )


def mean_reports(reports: list[ReconReport]) -> ReconReport:
    """Field-wise mean over frames. The F-score is averaged too, so it is
    generally not the harmonic mean of the averaged precision and recall."""
    if not reports:
        raise ValueError("no reports to average")
    vals = {k: float(np.mean([getattr(r, k) for r in reports])) for k in ("acc", "comp", "prec", "recall", "fscore")}
    return ReconReport(vals["acc"], vals["comp"], vals["prec"], vals["recall"],
                       vals["acc"] + vals["comp"], vals["fscore"], reports[0].tau)


def evaluate_run(pred, gt: LabelGrid, tau: float = DEFAULT_TAU, workers: int = 1) -> dict:
    """Combined report for a predicted grid (or point cloud) against dense ground truth.

    A point-cloud prediction is voxelized onto the ground-truth grid for the
    occupancy scores; without labels only binary occupancy is scored and
    ``ssc_miou`` is null.
    """
    semantic = True
    if isinstance(pred, PointCloud):
        pred_points = pred
        if pred.labels is not None and np.all(pred.labels != 0):
            pred_grid = voxelize_points(pred, gt.spec)
        else:
            semantic = False
            ones = PointCloud(pred.positions, labels=np.ones(len(pred), np.uint16))
            pred_grid = voxelize_points(ones, gt.spec)
    else:
        pred_grid = pred
        pred_points = occupancy_to_points(pred)
    gt_points = occupancy_to_points(gt)

    if semantic:
        scores = occupancy_scores(pred_grid, gt)
    else:
        binary_gt = LabelGrid(gt.spec, gt.occupied.astype(np.uint16))
        scores = occupancy_scores(pred_grid, binary_gt)
    counts = scores.counts
    per_class = []
    if semantic:
        for c in range(1, counts.num_classes):
            if counts.tp[c] + counts.fp[c] + counts.fn[c] == 0:
                continue
            per_class.append({
                "class_id": c,
                "iou": counts.class_iou(c),
                "tp": int(counts.tp[c]),
                "fp": int(counts.fp[c]),
                "fn": int(counts.fn[c]),
            })
    recon = recon_metrics(pred_points, gt_points, tau, workers)
    report = {
        "sc_iou": scores.sc_iou,
        "ssc_miou": scores.ssc_miou if semantic else None,
        "per_class": per_class,
    }
    report.update(asdict(recon))
    return report
