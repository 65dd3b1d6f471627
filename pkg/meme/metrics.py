"""
Tracking Metrics

Overlap, success and precision curves, the long-term F-score and the
dataset-level aggregates reported by the eval command. Everything here is
post-hoc numpy over boxes; nothing touches a model.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import matplotlib.pyplot as plt
import numpy as np

from .errors import EvaluationError, ShapeError

plt.switch_backend("agg")

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = np.linspace(0.0, 0.95, 20)
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Intersection over union of two (x, y, w, h) boxes.

    Example:
        iou((0, 0, 2, 2), (1, 0, 2, 2)) == 1 / 3
    """
    return float(iou_series(np.asarray([a], dtype=np.float64), np.asarray([b], dtype=np.float64))[0])


def iou_series(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Frame-wise IoU of two [T, 4] box arrays; a zero-area union gives 0."""
    x1 = np.maximum(pred[:, 0], gt[:, 0])
    y1 = np.maximum(pred[:, 1], gt[:, 1])
    x2 = np.minimum(pred[:, 0] + pred[:, 2], gt[:, 0] + gt[:, 2])
    y2 = np.minimum(pred[:, 1] + pred[:, 3], gt[:, 1] + gt[:, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = pred[:, 2] * pred[:, 3] + gt[:, 2] * gt[:, 3] - inter
    out = np.zeros(len(pred), dtype=np.float64)
    valid = union > 0
    out[valid] = inter[valid] / union[valid]
    return out


def center_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred_c = pred[:, :2] + pred[:, 2:] / 2
    gt_c = gt[:, :2] + gt[:, 2:] / 2
    return np.linalg.norm(pred_c - gt_c, axis=1)


@dataclass
class TrackResult:
    """
    Per-frame predictions aligned with the ground truth of one sequence.

    Attributes:
        pred_boxes (np.ndarray): [T, 4] predicted xywh
        gt_boxes (np.ndarray): [T, 4] ground-truth xywh
        visible (np.ndarray): [T] target visibility flags
        present (np.ndarray): [T] tracker's own target-present flags
        confidences (np.ndarray, optional): [T] prediction confidences
    """
    pred_boxes: np.ndarray
    gt_boxes: np.ndarray
    visible: Optional[np.ndarray] = None
    present: Optional[np.ndarray] = None
    confidences: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pred_boxes = np.asarray(self.pred_boxes, dtype=np.float64).reshape(-1, 4)
        self.gt_boxes = np.asarray(self.gt_boxes, dtype=np.float64).reshape(-1, 4)
        length = len(self.gt_boxes)
        if len(self.pred_boxes) != length:
            raise ShapeError(f"{len(self.pred_boxes)} predictions for {length} ground-truth frames")
        self.visible = np.ones(length, bool) if self.visible is None else np.asarray(self.visible, bool)
        self.present = np.ones(length, bool) if self.present is None else np.asarray(self.present, bool)
        for name in ("visible", "present"):
            if len(getattr(self, name)) != length:
                raise ShapeError(f"{name} has {len(getattr(self, name))} flags for {length} frames")
        if self.confidences is not None:
            self.confidences = np.asarray(self.confidences, dtype=np.float64)
            if len(self.confidences) != length:
                raise ShapeError(f"{len(self.confidences)} confidences for {length} frames")
        if (self.pred_boxes[:, 2:] < 0).any() or (self.gt_boxes[:, 2:] < 0).any():
            raise ShapeError("Boxes must have nonnegative width and height")

    def __len__(self) -> int:
        return len(self.gt_boxes)

    def ious(self) -> np.ndarray:
        return iou_series(self.pred_boxes, self.gt_boxes)

    def _require_frames(self):
        if len(self) == 0:
            raise EvaluationError("Tracking result has no frames")


@dataclass
class CurveResult:
    """Scalar score with the curve it summarizes."""
    score: float
    thresholds: np.ndarray
    curve: np.ndarray


def success_rate(result: TrackResult) -> CurveResult:
    """
    Success curve over IoU thresholds 0, 0.05, ..., 0.95 and its mean (SR).

    Raises:
        EvaluationError: The result is empty
    """
    result._require_frames()
    ious = result.ious()
    curve = np.array([(ious > t).mean() for t in SUCCESS_THRESHOLDS])
    return CurveResult(score=float(curve.mean()), thresholds=SUCCESS_THRESHOLDS, curve=curve)


def precision_rate(result: TrackResult, threshold: float = 20.0) -> CurveResult:
    """
    Fraction of frames whose center error is at most threshold pixels.

    The curve covers thresholds 0..50 px.

    Raises:
        EvaluationError: The result is empty
    """
    result._require_frames()
    errors = center_errors(result.pred_boxes, result.gt_boxes)
    curve = np.array([(errors <= t).mean() for t in PRECISION_THRESHOLDS])
    return CurveResult(score=float((errors <= threshold).mean()), thresholds=PRECISION_THRESHOLDS, curve=curve)


def harmonic_f(precision: float, recall: float) -> float:
    total = precision + recall
    return 0.0 if total <= 0 else 2 * precision * recall / total


@dataclass
class FScore:
    f: float
    recall: float
    precision: float
    threshold: float


def f_score(result: TrackResult, confidences: Optional[np.ndarray] = None) -> FScore:
    """
    Long-term F-score at the best confidence threshold.

    For a threshold θ the tracker reports the target present where
    confidence ≥ θ (and its own present flag is set). Pr is the summed IoU over
    reported frames divided by their count; Re is the summed IoU over frames
    both visible and reported divided by the number of visible frames.

    Args:
        result (TrackResult): Predictions and ground truth
        confidences (np.ndarray, optional): Overrides result.confidences; all ones when neither is given

    Returns:
        FScore: F, Re, Pr and the threshold that maximizes F

    Raises:
        EvaluationError: No frame has a visible target
    """
    visible = result.visible
    if not visible.any():
        raise EvaluationError("No visible frames; recall is undefined")
    if confidences is None:
        confidences = result.confidences if result.confidences is not None else np.ones(len(result))
    confidences = np.asarray(confidences, dtype=np.float64)
    ious = np.where(visible, result.ious(), 0.0)

    best = FScore(f=-1.0, recall=0.0, precision=0.0, threshold=0.0)
    for theta in np.unique(confidences):
        present = result.present & (confidences >= theta)
        if not present.any():
            continue
        precision = float(ious[present].sum() / present.sum())
        recall = float(ious[present & visible].sum() / visible.sum())
        f = harmonic_f(precision, recall)
        if f > best.f:
            best = FScore(f=f, recall=recall, precision=precision, threshold=float(theta))
    if best.f < 0:
        best = FScore(f=0.0, recall=0.0, precision=0.0, threshold=float(confidences.max(initial=0.0)))
    return best


def concatenate(results: Sequence[TrackResult]) -> TrackResult:
    """Pool the frames of several sequences into one result."""
    if not results:
        raise EvaluationError("No tracking results to pool")
    confidences = None
    if all(r.confidences is not None for r in results):
        confidences = np.concatenate([r.confidences for r in results])
    return TrackResult(
        pred_boxes=np.concatenate([r.pred_boxes for r in results]),
        gt_boxes=np.concatenate([r.gt_boxes for r in results]),
        visible=np.concatenate([r.visible for r in results]),
        present=np.concatenate([r.present for r in results]),
        confidences=confidences,
    )


@dataclass
class DatasetMetrics:
    """
    Aggregates over a set of sequences.

    Attributes:
        f_score (float): Pooled F-score at the best confidence threshold
        recall (float): Pooled Re
        precision (float): Pooled Pr
        success (float): Pooled success AUC (SR)
        precision_rate (float): Pooled precision at the configured pixel threshold (PR)
        msr (float): Success AUC averaged per sequence (MSR)
        mpr (float): Precision rate averaged per sequence (MPR)
        mean_iou (float): Mean frame IoU
        sequences (int): Number of sequences
        success_curve (np.ndarray): Pooled success curve
        precision_curve (np.ndarray): Pooled precision curve
    """
    f_score: float
    recall: float
    precision: float
    success: float
    precision_rate: float
    msr: float
    mpr: float
    mean_iou: float
    sequences: int
    success_curve: np.ndarray = field(repr=False)
    precision_curve: np.ndarray = field(repr=False)

    def as_row(self) -> Dict[str, float]:
        return {
            "f_score": self.f_score,
            "recall": self.recall,
            "precision": self.precision,
            "success": self.success,
            "precision_rate": self.precision_rate,
            "msr": self.msr,
            "mpr": self.mpr,
            "mean_iou": self.mean_iou,
            "sequences": self.sequences,
        }


def evaluate_results(results: Sequence[TrackResult], precision_threshold: float = 20.0) -> DatasetMetrics:
    """Every dataset-level metric for a list of per-sequence results."""
    pooled = concatenate(results)
    logger.debug(f"Scoring {len(pooled)} frames from {len(results)} sequences")
    fs = f_score(pooled)
    sr = success_rate(pooled)
    pr = precision_rate(pooled, precision_threshold)
    return DatasetMetrics(
        f_score=fs.f,
        recall=fs.recall,
        precision=fs.precision,
        success=sr.score,
        precision_rate=pr.score,
        msr=float(np.mean([success_rate(r).score for r in results])),
        mpr=float(np.mean([precision_rate(r, precision_threshold).score for r in results])),
        mean_iou=float(pooled.ious().mean()),
        sequences=len(results),
        success_curve=sr.curve,
        precision_curve=pr.curve,
    )


def iou_by_group(results: Sequence[TrackResult], groups: Sequence[str]) -> Dict[str, float]:
    """Mean frame IoU per group label (e.g. per degradation)."""
    pooled: Dict[str, List[np.ndarray]] = {}
    for result, group in zip(results, groups):
        pooled.setdefault(group, []).append(result.ious())
    return {group: float(np.concatenate(values).mean()) for group, values in sorted(pooled.items())}


def plot_curves(curves: Mapping[str, DatasetMetrics], directory: Path) -> List[Path]:
    """
    Write success and precision plots comparing several trackers.

    Returns:
        List[Path]: the two PNG files
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind, thresholds, xlabel in (
        ("success", SUCCESS_THRESHOLDS, "Overlap threshold"),
        ("precision", PRECISION_THRESHOLDS, "Location error threshold (px)"),
    ):
        fig, ax = plt.subplots(figsize=(5, 4))
        for name, metrics in curves.items():
            curve = metrics.success_curve if kind == "success" else metrics.precision_curve
            score = metrics.success if kind == "success" else metrics.precision_rate
            ax.plot(thresholds, curve, label=f"{name} [{score:.3f}]")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("Success rate" if kind == "success" else "Precision")
        ax.set_ylim(0, 1.02)
        ax.grid(alpha=0.3)
        ax.legend(loc="lower left" if kind == "success" else "lower right")
        path = directory / f"{kind}_plot.png"
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
