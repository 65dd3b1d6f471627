"""
Sequence Evaluation

Runs a tracker over stored sequences, writes one prediction file per sequence
and scores prediction files against groundtruth. Prediction files hold every
frame, the init box first; frame 0 initializes the tracker and is left out of
every metric.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from dataset.storage import (
    ManifestEntry,
    StoredSequence,
    read_confidences,
    read_groundtruth,
    read_predictions,
    write_predictions,
)
from .backbone import RGBBackbone
from .errors import ShapeError
from .metrics import DatasetMetrics, TrackResult, evaluate_results, iou_by_group
from .network import MemeTracker, SequenceTracker, run_sequence

logger = logging.getLogger(__name__)


def track_sequences(model: Union[MemeTracker, RGBBackbone], sequences: Sequence[StoredSequence],
                    template_size: int, progress: bool = False) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Predicted boxes and confidences for every frame of every sequence."""
    tracker = SequenceTracker(model, template_size)
    outputs = []
    for seq in tqdm(sequences, desc="track", leave=False, disable=not progress):
        outputs.append(run_sequence(tracker, seq.rgb, seq.x, seq.boxes[0]))
    return outputs


def to_results(sequences: Sequence[StoredSequence],
               outputs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> List[TrackResult]:
    return [
        TrackResult(
            pred_boxes=boxes[1:],
            gt_boxes=seq.boxes[1:],
            visible=seq.visible[1:],
            confidences=confidences[1:],
        )
        for seq, (boxes, confidences) in zip(sequences, outputs)
    ]


def evaluate_model(model: Union[MemeTracker, RGBBackbone], sequences: Sequence[StoredSequence],
                   template_size: int, precision_threshold: float = 20.0,
                   progress: bool = False) -> Tuple[DatasetMetrics, Dict[str, float], List[TrackResult]]:
    """
    Track and score a split.

    Returns:
        Tuple: dataset metrics, mean IoU per degradation, per-sequence results
    """
    outputs = track_sequences(model, sequences, template_size, progress)
    results = to_results(sequences, outputs)
    metrics = evaluate_results(results, precision_threshold)
    by_degradation = iou_by_group(results, [seq.entry.degradation for seq in sequences])
    return metrics, by_degradation, results


def prediction_path(directory: Path, entry: ManifestEntry) -> Path:
    return Path(directory) / f"{entry.sequence_id}.txt"


def write_prediction_files(directory: Path, sequences: Sequence[StoredSequence],
                           outputs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> List[Path]:
    """One x,y,w,h line per frame in frame order, init box included."""
    paths = []
    for seq, (boxes, confidences) in zip(sequences, outputs):
        path = prediction_path(directory, seq.entry)
        write_predictions(path, boxes, confidences)
        paths.append(path)
    return paths


def read_result(data_dir: Path, entry: ManifestEntry, directory: Path) -> TrackResult:
    """
    Pair a prediction file with its groundtruth, dropping the init frame.

    Raises:
        ShapeError: The file does not hold one line per groundtruth frame
    """
    path = prediction_path(directory, entry)
    pred_boxes = read_predictions(path)
    gt_boxes, visible = read_groundtruth(Path(data_dir) / entry.path / "groundtruth.txt")
    if len(pred_boxes) != len(gt_boxes):
        raise ShapeError(f"{path} has {len(pred_boxes)} lines for {len(gt_boxes)} groundtruth frames")
    confidences = read_confidences(path)
    return TrackResult(
        pred_boxes=pred_boxes[1:],
        gt_boxes=gt_boxes[1:],
        visible=visible[1:],
        confidences=None if confidences is None else confidences[1:],
    )


def score_prediction_files(data_dir: Path, entries: Sequence[ManifestEntry], directory: Path,
                           precision_threshold: float = 20.0
                           ) -> Tuple[DatasetMetrics, Dict[str, float], List[TrackResult]]:
    """
    Score a directory of prediction files.

    Args:
        data_dir (Path): Dataset root holding the groundtruth files
        entries (Sequence[ManifestEntry]): Sequences to score
        directory (Path): Directory of <sequence_id>.txt prediction files

    Returns:
        Tuple: dataset metrics, mean IoU per degradation, per-sequence results
    """
    results = [read_result(data_dir, entry, directory) for entry in entries]
    logger.info(f"Scored {len(results)} prediction files from {directory}")
    metrics = evaluate_results(results, precision_threshold)
    by_degradation = iou_by_group(results, [entry.degradation for entry in entries])
    return metrics, by_degradation, results
