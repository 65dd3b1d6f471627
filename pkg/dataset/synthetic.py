"""
Synthetic RGB-X Sequences

This module renders small tracking sequences in which each auxiliary modality
carries its own signature:

- depth: smooth background gradient plus a constant-disparity object with a
  sharp boundary
- thermal: low-frequency background plus a bright blob centered on the object
- event: sparse positive/negative spikes where the latent scene changes

Every sequence also degrades its RGB stream in the way its modality helps with
(occlusion for depth, darkness for thermal, blur for event), so RGB alone is
not enough and the prompted tracker has something to gain.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from meme.errors import ConfigurationError
from models.config import DEGRADATIONS, MODALITIES, ExperimentConfig

logger = logging.getLogger(__name__)

EVENT_THRESHOLD = 0.05
SENSOR_NOISE = 0.02

Degradation = Literal["none", "darkness", "occlusion", "blur"]
Profile = Literal["standard", "ood", "clean"]


class SequenceSpec(BaseModel):
    """
    Parametric description of one synthetic sequence.

    The object center follows a straight line from start with a constant
    velocity plus a figure-eight wobble of radius wobble.

    Attributes:
        length (int): Number of frames
        frame_size (int): Side of the square frame in pixels
        box_size (Tuple[int, int]): Object width and height
        start (Tuple[float, float]): Object center at frame 0
        velocity (Tuple[float, float]): Center displacement per frame
        wobble (float): Largest wobble offset from the line on either axis
        wobble_period (float): Frames per wobble cycle
        appearance_seed (int): Seed of object/distractor appearance
        background_seed (int): Seed of background textures
        distractors (int): Number of look-alike moving rectangles
        degradation (str): RGB degradation applied to every frame
        degradation_strength (float): Degradation strength in [0, 1]

    Example:
        {
            "length": 32,
            "frame_size": 64,
            "box_size": [12, 14],
            "start": [20.0, 30.0],
            "velocity": [0.8, -0.3],
            "degradation": "darkness",
            "degradation_strength": 0.7
        }
    """
    model_config = ConfigDict(frozen=True)

    length: int = Field(32, ge=2)
    frame_size: int = Field(64, ge=8)
    box_size: Tuple[int, int] = (12, 12)
    start: Tuple[float, float] = (32.0, 32.0)
    velocity: Tuple[float, float] = (0.0, 0.0)
    wobble: float = Field(0.0, ge=0.0)
    wobble_period: float = Field(8.0, gt=0.0)
    appearance_seed: int = 0
    background_seed: int = 0
    distractors: int = Field(0, ge=0)
    degradation: Degradation = "none"
    degradation_strength: float = Field(0.0, ge=0.0, le=1.0)


@dataclass(frozen=True)
class ModalSample:
    """
    One aligned RGB-X frame.

    The modality label is for training targets and route-report scoring only;
    no inference path reads it.
    """
    rgb: np.ndarray
    x: np.ndarray
    modality: str
    gt_box: Tuple[int, int, int, int]
    sequence_id: str
    frame_index: int
    visible: bool = True


def trajectory(spec: SequenceSpec) -> np.ndarray:
    """Object centers [T, 2] before rounding to pixels."""
    t = np.arange(spec.length, dtype=np.float64)
    phase = 2 * np.pi * t / spec.wobble_period
    cx = spec.start[0] + spec.velocity[0] * t + spec.wobble * np.sin(phase)
    cy = spec.start[1] + spec.velocity[1] * t + spec.wobble * np.sin(2 * phase)
    return np.stack([cx, cy], axis=-1)


def trajectory_boxes(spec: SequenceSpec) -> np.ndarray:
    """Integer (x, y, w, h) boxes [T, 4] exactly as rendered."""
    centers = trajectory(spec)
    w, h = spec.box_size
    x0 = np.round(centers[:, 0] - w / 2).astype(np.int64)
    y0 = np.round(centers[:, 1] - h / 2).astype(np.int64)
    size = np.broadcast_to(np.array([w, h], dtype=np.int64), (spec.length, 2))
    return np.concatenate([x0[:, None], y0[:, None], size], axis=1)


def validate_trajectory(spec: SequenceSpec):
    """
    Reject specs whose object leaves the frame.

    Raises:
        ConfigurationError: The box is degenerate or crosses a frame border
    """
    w, h = spec.box_size
    if w < 2 or h < 2:
        raise ConfigurationError(f"Object box {spec.box_size} is smaller than 2x2 pixels")
    if w > spec.frame_size or h > spec.frame_size:
        raise ConfigurationError(f"Object box {spec.box_size} does not fit a {spec.frame_size}px frame")
    boxes = trajectory_boxes(spec)
    inside = (
        (boxes[:, 0] >= 0) & (boxes[:, 1] >= 0)
        & (boxes[:, 0] + boxes[:, 2] <= spec.frame_size)
        & (boxes[:, 1] + boxes[:, 3] <= spec.frame_size)
    )
    if not inside.all():
        first = int(np.argmin(inside))
        raise ConfigurationError(
            f"Trajectory leaves the frame at frame {first}: box {boxes[first].tolist()} "
            f"in a {spec.frame_size}x{spec.frame_size} frame"
        )


def smooth_field(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    """Low-frequency noise field normalized to [0, 1]."""
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    low, high = field.min(), field.max()
    return (field - low) / (high - low + 1e-12)


def rgb_contrast(rgb: np.ndarray, box: Tuple[int, int, int, int]) -> float:
    """Absolute difference between mean intensity inside and outside the box."""
    x, y, w, h = box
    mask = np.zeros(rgb.shape[-2:], dtype=bool)
    mask[y:y + h, x:x + w] = True
    return float(abs(rgb[:, mask].mean() - rgb[:, ~mask].mean()))


@dataclass
class _Scene:
    background: np.ndarray
    object_texture: np.ndarray
    distractor_textures: List[np.ndarray]
    distractor_boxes: List[np.ndarray]
    object_disparity: float
    distractor_disparities: List[float]
    depth_plane: np.ndarray
    thermal_background: np.ndarray
    thermal_amplitude: float


def _line_boxes(rng: np.random.Generator, length: int, frame: int, size: Tuple[int, int]) -> np.ndarray:
    w, h = size
    low = np.array([w / 2 + 1, h / 2 + 1])
    high = np.array([frame - w / 2 - 1, frame - h / 2 - 1])
    start = rng.uniform(low, high)
    end = rng.uniform(low, high)
    t = np.linspace(0.0, 1.0, length)[:, None]
    centers = start + (end - start) * t
    x0 = np.round(centers[:, 0] - w / 2).astype(np.int64)
    y0 = np.round(centers[:, 1] - h / 2).astype(np.int64)
    return np.stack([x0, y0, np.full(length, w), np.full(length, h)], axis=1)


def _build_scene(spec: SequenceSpec, rng: np.random.Generator) -> _Scene:
    size = spec.frame_size
    bg_rng = np.random.default_rng(spec.background_seed)
    look_rng = np.random.default_rng(spec.appearance_seed)

    background = np.stack([0.25 + 0.5 * smooth_field(bg_rng, size, 6.0) for _ in range(3)])
    bg_mean = background.mean(axis=(1, 2))
    sign = np.where(look_rng.random() < 0.5, -1.0, 1.0)
    color = np.clip(bg_mean + sign * look_rng.uniform(0.25, 0.4, size=3), 0.0, 1.0)

    w, h = spec.box_size
    object_texture = np.clip(color[:, None, None] + 0.08 * look_rng.standard_normal((3, h, w)), 0.0, 1.0)

    distractor_textures, distractor_boxes, distractor_disparities = [], [], []
    for _ in range(spec.distractors):
        dw = int(np.clip(w + rng.integers(-3, 4), 4, size // 2))
        dh = int(np.clip(h + rng.integers(-3, 4), 4, size // 2))
        tint = np.clip(color + look_rng.uniform(-0.15, 0.15, size=3), 0.0, 1.0)
        distractor_textures.append(
            np.clip(tint[:, None, None] + 0.08 * look_rng.standard_normal((3, dh, dw)), 0.0, 1.0)
        )
        distractor_boxes.append(_line_boxes(rng, spec.length, size, (dw, dh)))
        distractor_disparities.append(float(rng.uniform(0.55, 0.7)))

    ys, xs = np.mgrid[0:size, 0:size] / size - 0.5
    gx, gy = bg_rng.uniform(-0.15, 0.15, size=2)
    depth_plane = 0.3 + gx * xs + gy * ys

    return _Scene(
        background=background,
        object_texture=object_texture,
        distractor_textures=distractor_textures,
        distractor_boxes=distractor_boxes,
        object_disparity=float(look_rng.uniform(0.75, 0.95)),
        distractor_disparities=distractor_disparities,
        depth_plane=depth_plane,
        thermal_background=0.1 + 0.25 * smooth_field(bg_rng, size, 10.0),
        thermal_amplitude=float(look_rng.uniform(0.55, 0.65)),
    )


def _paste(canvas: np.ndarray, patch: np.ndarray, box: np.ndarray):
    x, y, w, h = (int(v) for v in box)
    frame = canvas.shape[-1]
    x1, y1 = max(x, 0), max(y, 0)
    x2, y2 = min(x + w, frame), min(y + h, canvas.shape[-2])
    if x2 <= x1 or y2 <= y1:
        return
    canvas[..., y1:y2, x1:x2] = patch[..., y1 - y:y2 - y, x1 - x:x2 - x]


def _render_latent(scene: _Scene, box: np.ndarray, t: int) -> np.ndarray:
    frame = scene.background.copy()
    for texture, boxes in zip(scene.distractor_textures, scene.distractor_boxes):
        _paste(frame, texture, boxes[t])
    _paste(frame, scene.object_texture, box)
    return frame


def degrade_rgb(latent: np.ndarray, background: np.ndarray, box: np.ndarray,
                degradation: str, strength: float) -> np.ndarray:
    """Apply an RGB degradation; the latent scene is left untouched."""
    if degradation == "darkness":
        return latent * (1.0 - strength)
    if degradation == "occlusion":
        out = latent.copy()
        x, y, w, h = (int(v) for v in box)
        region = (slice(None), slice(y, y + h), slice(x, x + w))
        out[region] = (1.0 - strength) * latent[region] + strength * background[region]
        return out
    if degradation == "blur":
        return ndimage.gaussian_filter(latent, sigma=(0.0, 4.0 * strength, 4.0 * strength), mode="nearest")
    return latent


def render_depth(scene: _Scene, box: np.ndarray, t: int) -> np.ndarray:
    depth = scene.depth_plane.copy()[None]
    for disparity, boxes in zip(scene.distractor_disparities, scene.distractor_boxes):
        _, _, w, h = (int(v) for v in boxes[t])
        _paste(depth, np.full((1, h, w), disparity), boxes[t])
    _, _, w, h = (int(v) for v in box)
    _paste(depth, np.full((1, h, w), scene.object_disparity), box)
    return depth


def render_thermal(scene: _Scene, box: np.ndarray) -> np.ndarray:
    size = scene.thermal_background.shape[-1]
    x, y, w, h = (float(v) for v in box)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    sigma = max(w, h) / 2.5
    blob = scene.thermal_amplitude * np.exp(-((xs - x - w / 2) ** 2 + (ys - y - h / 2) ** 2) / (2 * sigma ** 2))
    return np.clip(scene.thermal_background + blob, 0.0, 1.0)[None]


def render_events(previous: Optional[np.ndarray], current: np.ndarray) -> np.ndarray:
    """(positive, negative, any) spike raster from the luminance change."""
    size = current.shape[-1]
    if previous is None:
        return np.zeros((3, size, size))
    diff = current.mean(axis=0) - previous.mean(axis=0)
    positive = diff > EVENT_THRESHOLD
    negative = diff < -EVENT_THRESHOLD
    return np.stack([positive, negative, positive | negative]).astype(np.float64)


def generate_sequence(spec: SequenceSpec, modality: str, seed: int,
                      sequence_id: Optional[str] = None) -> List[ModalSample]:
    """
    Render one RGB-X sequence.

    Args:
        spec (SequenceSpec): Sequence parameters
        modality (str): One of depth, thermal or event; selects the X rendering
        seed (int): Seed for distractor motion and sensor noise
        sequence_id (str, optional): Identifier stored on every sample

    Returns:
        List[ModalSample]: One sample per frame, deterministic per (spec, seed)

    Raises:
        ConfigurationError: Unknown modality or a trajectory leaving the frame
    """
    if modality not in MODALITIES:
        raise ConfigurationError(f"Unknown modality '{modality}', expected one of {MODALITIES}")
    validate_trajectory(spec)

    rng = np.random.default_rng(seed)
    scene = _build_scene(spec, rng)
    boxes = trajectory_boxes(spec)
    noise = SENSOR_NOISE * rng.standard_normal((spec.length, 3, spec.frame_size, spec.frame_size))
    sequence_id = sequence_id or f"{modality}_{seed}"
    logger.debug(f"Rendering {sequence_id}: {spec.length} frames, degradation {spec.degradation}")

    samples: List[ModalSample] = []
    previous: Optional[np.ndarray] = None
    for t in range(spec.length):
        latent = _render_latent(scene, boxes[t], t)
        rgb = degrade_rgb(latent, scene.background, boxes[t], spec.degradation, spec.degradation_strength)
        rgb = np.clip(rgb + noise[t], 0.0, 1.0)

        if modality == "depth":
            x = render_depth(scene, boxes[t], t)
        elif modality == "thermal":
            x = render_thermal(scene, boxes[t])
        else:
            x = render_events(previous, latent)
        previous = latent

        samples.append(ModalSample(
            rgb=rgb.astype(np.float32),
            x=np.clip(x, 0.0, 1.0).astype(np.float32),
            modality=modality,
            gt_box=tuple(int(v) for v in boxes[t]),
            sequence_id=sequence_id,
            frame_index=t,
        ))
    return samples


def stack_samples(samples: List[ModalSample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(rgb [T, 3, H, W], x [T, C, H, W], boxes [T, 4], visible [T]) from one sequence."""
    rgb = np.stack([s.rgb for s in samples])
    x = np.stack([s.x for s in samples])
    boxes = np.array([s.gt_box for s in samples], dtype=np.float64)
    visible = np.array([s.visible for s in samples], dtype=bool)
    return rgb, x, boxes, visible


def sample_spec(rng: np.random.Generator, cfg: ExperimentConfig, modality: str,
                profile: Profile = "standard") -> SequenceSpec:
    """
    Draw a valid SequenceSpec for one modality.

    Args:
        rng (np.random.Generator): Source of every drawn parameter
        cfg (ExperimentConfig): Frame size, length, distractors and degradation range
        modality (str): Decides which degradation the RGB stream receives
        profile (str): "standard", "ood" (larger objects, more distractors,
            stronger degradation) or "clean" (no degradation)

    Returns:
        SequenceSpec: spec whose trajectory stays inside the frame
    """
    frame = cfg.frame_size
    low, high = (16, 23) if profile == "ood" else (10, 17)
    w, h = (int(v) for v in rng.integers(low, high, size=2))
    wobble = float(rng.uniform(0.0, 3.0))

    margin = np.array([w / 2 + wobble + 1, h / 2 + wobble + 1])
    start = rng.uniform(margin, frame - margin)
    end = rng.uniform(margin, frame - margin)
    velocity = (end - start) / (cfg.sequence_length - 1)

    if profile == "clean":
        degradation, strength = "none", 0.0
    elif profile == "ood":
        degradation = DEGRADATIONS[modality]
        strength = float(rng.uniform(cfg.degradation_max, min(1.0, cfg.degradation_max + 0.1)))
    else:
        degradation = DEGRADATIONS[modality]
        strength = float(rng.uniform(cfg.degradation_min, cfg.degradation_max))

    return SequenceSpec(
        length=cfg.sequence_length,
        frame_size=frame,
        box_size=(w, h),
        start=(float(start[0]), float(start[1])),
        velocity=(float(velocity[0]), float(velocity[1])),
        wobble=wobble,
        wobble_period=float(rng.uniform(6.0, 12.0)),
        appearance_seed=int(rng.integers(2 ** 31)),
        background_seed=int(rng.integers(2 ** 31)),
        distractors=cfg.distractors + (2 if profile == "ood" else 0),
        degradation=degradation,
        degradation_strength=strength,
    )
