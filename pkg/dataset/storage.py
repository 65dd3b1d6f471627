"""
Sequence Storage Module

This module owns the on-disk layout of the synthetic dataset:

    <root>/manifest.csv
    <root>/<split>/<sequence_id>/rgb.npy           uint8 [T, 3, H, W]
    <root>/<split>/<sequence_id>/x.npy             uint8 [T, C, H, W]
    <root>/<split>/<sequence_id>/groundtruth.txt   frame_index,x,y,w,h,visible

Frames are written once and only read afterwards. The .npy header records
dims, channel count and dtype.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from meme.errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
MANIFEST_FIELDS = ("path", "modality", "split", "sequence_id", "seed", "profile", "degradation", "strength")


class ManifestEntry(BaseModel):
    """
    One sequence listed in the manifest.

    Attributes:
        path (str): Sequence directory relative to the dataset root
        modality (str): Auxiliary modality; used for training targets and
            route-report scoring, never for inference
        split (str): train, test, ood, pretrain or pretrain_test
        sequence_id (str): Unique identifier
        seed (int): Generation seed
        profile (str): standard, ood or clean
        degradation (str): RGB degradation of the sequence
        strength (float): Degradation strength
    """
    path: str
    modality: str
    split: str
    sequence_id: str
    seed: int
    profile: str = "standard"
    degradation: str = "none"
    strength: float = 0.0


@dataclass
class StoredSequence:
    """A sequence read back from disk, frames still quantized to uint8."""
    entry: ManifestEntry
    rgb: np.ndarray
    x: np.ndarray
    boxes: np.ndarray
    visible: np.ndarray

    @property
    def length(self) -> int:
        return self.rgb.shape[0]


def to_uint8(frames: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_sequence(directory: Path, rgb: np.ndarray, x: np.ndarray, boxes: np.ndarray, visible: np.ndarray):
    """
    Write one sequence directory.

    Args:
        directory (Path): Target directory, created if missing
        rgb (np.ndarray): [T, 3, H, W] floats in [0, 1]
        x (np.ndarray): [T, C, H, W] floats in [0, 1]
        boxes (np.ndarray): [T, 4] xywh
        visible (np.ndarray): [T] visibility flags

    Raises:
        ShapeError: Streams disagree on length or spatial size
    """
    if not (rgb.shape[0] == x.shape[0] == boxes.shape[0] == visible.shape[0]):
        raise ShapeError("rgb, x, boxes and visible must have the same number of frames")
    if rgb.shape[-2:] != x.shape[-2:]:
        raise ShapeError(f"RGB frames {rgb.shape[-2:]} and X frames {x.shape[-2:]} are not aligned")

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "rgb.npy", to_uint8(rgb))
    np.save(directory / "x.npy", to_uint8(x))
    with open(directory / "groundtruth.txt", "w") as f:
        for index, (box, flag) in enumerate(zip(boxes, visible)):
            x0, y0, w, h = (float(v) for v in box)
            f.write(f"{index},{x0:g},{y0:g},{w:g},{h:g},{int(bool(flag))}\n")


def read_groundtruth(path: Path):
    """Boxes [T, 4] and visibility [T] from a groundtruth.txt file."""
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    order = np.argsort(rows[:, 0], kind="stable")
    rows = rows[order]
    return rows[:, 1:5].astype(np.float64), rows[:, 5].astype(bool)


def read_sequence(root: Path, entry: ManifestEntry) -> StoredSequence:
    directory = Path(root) / entry.path
    boxes, visible = read_groundtruth(directory / "groundtruth.txt")
    return StoredSequence(
        entry=entry,
        rgb=np.load(directory / "rgb.npy"),
        x=np.load(directory / "x.npy"),
        boxes=boxes,
        visible=visible,
    )


def write_manifest(root: Path, entries: Sequence[ManifestEntry]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / MANIFEST_NAME
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        for entry in entries:
            writer.writerow(entry.model_dump())
    return path


def read_manifest(root: Path, split: Optional[str] = None) -> List[ManifestEntry]:
    """
    Read the manifest, optionally keeping one split.

    Raises:
        ConfigurationError: The manifest is missing or the split is empty
    """
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise ConfigurationError(f"No manifest at {path}; run gen-data first")
    with open(path, newline="") as f:
        entries = [ManifestEntry(**row) for row in csv.DictReader(f)]
    if split is not None:
        entries = [e for e in entries if e.split == split]
        if not entries:
            raise ConfigurationError(f"Split '{split}' has no sequences in {path}")
    return entries


def load_split(root: Path, split: str) -> List[StoredSequence]:
    sequences = [read_sequence(root, entry) for entry in read_manifest(root, split)]
    logger.info(f"Loaded {len(sequences)} sequences from split '{split}'")
    return sequences


def write_predictions(path: Path, boxes: np.ndarray, confidences: Optional[np.ndarray] = None):
    """
    Write "x,y,w,h" per line; confidences go to a sibling *.conf.txt file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(boxes, dtype=np.float64), delimiter=",", fmt="%.4f")
    if confidences is not None:
        np.savetxt(path.with_suffix(".conf.txt"), np.asarray(confidences, dtype=np.float64), fmt="%.6f")


def read_predictions(path: Path) -> np.ndarray:
    boxes = np.loadtxt(path, delimiter=",", ndmin=2)
    if boxes.shape[1] != 4:
        raise ShapeError(f"{path} must hold x,y,w,h per line, found {boxes.shape[1]} columns")
    return boxes


def read_confidences(path: Path) -> Optional[np.ndarray]:
    """Confidences written next to a prediction file, or None when absent."""
    conf_path = Path(path).with_suffix(".conf.txt")
    if not conf_path.exists():
        return None
    return np.loadtxt(conf_path, ndmin=1)
