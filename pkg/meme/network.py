"""
Tracker Network

Wires the modal branch (patch embedding + one MeME layer per injection point)
onto the frozen RGB backbone, and wraps either model in a frame-by-frame
sequence tracker. No entry point accepts a modality identifier: the modal
branch infers what it needs from the pixels of X.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from models.config import MODALITIES, ExperimentConfig
from .backbone import HeadOutput, RGBBackbone
from .blocks import ExpertAssignment, MemeLayer, RouterDecision, expert_parameter_count
from .tokenizer import PatchEmbedding, replicate_channels

logger = logging.getLogger(__name__)

BACKBONE_PREFIX = "backbone."


@dataclass
class TrackerOutput:
    """
    Forward result of the prompted tracker.

    Attributes:
        head (HeadOutput): Box-head predictions
        decisions (List[Optional[RouterDecision]]): One router decision per injection point
        evaluations (int): Specialized-expert evaluations over all layers
    """
    head: HeadOutput
    decisions: List[Optional[RouterDecision]]
    evaluations: int


class MemeTracker(nn.Module):
    """
    Frozen RGB backbone prompted by a mixture of modal experts.

    Args:
        cfg (ExperimentConfig): Model configuration
        backbone (RGBBackbone): Pretrained backbone; it is frozen on construction
    """

    def __init__(self, cfg: ExperimentConfig, backbone: RGBBackbone):
        super().__init__()
        self.cfg = cfg
        self.gate_cfg = cfg.gate_config()
        self.assignment = ExpertAssignment.contiguous(MODALITIES, cfg.experts_per_modality)

        self.backbone = backbone.freeze()
        self.embedding = PatchEmbedding(cfg.patch_size, cfg.embed_dim)
        self.layers = nn.ModuleList([
            MemeLayer(
                cfg.embed_dim, cfg.rgb_dim, cfg.rank, self.gate_cfg,
                use_shared=cfg.use_shared, use_specific=cfg.use_specific,
            )
            for _ in range(backbone.depth + 1)
        ])

    def train(self, mode: bool = True) -> "MemeTracker":
        super().train(mode)
        self.backbone.eval()
        return self

    def forward(self, template_rgb: torch.Tensor, template_x: torch.Tensor,
                search_rgb: torch.Tensor, search_x: torch.Tensor,
                generator: Optional[torch.Generator] = None) -> TrackerOutput:
        """
        Track with RGB and an auxiliary frame of unknown modality.

        Args:
            template_rgb (torch.Tensor): [B, 3, H_t, W_t]
            template_x (torch.Tensor): [B, 1 or 3, H_t, W_t]
            search_rgb (torch.Tensor): [B, 3, H_s, W_s]
            search_x (torch.Tensor): [B, 1 or 3, H_s, W_s]
            generator (torch.Generator, optional): Gate-noise stream (training only)

        Returns:
            TrackerOutput: predictions and per-layer routing
        """
        modal = self.embedding(template_x, search_x)
        decisions: List[Optional[RouterDecision]] = []
        evaluations = 0

        def prompter(index: int, rgb_tokens: torch.Tensor) -> torch.Tensor:
            nonlocal evaluations
            out = self.layers[index](modal, rgb_tokens, generator)
            decisions.append(out.decision)
            evaluations += out.evaluations
            return out.prompt

        head = self.backbone(template_rgb, search_rgb, prompter)
        return TrackerOutput(head=head, decisions=decisions, evaluations=evaluations)

    def modal_parameters(self) -> List[nn.Parameter]:
        """Trainable parameters: everything outside the backbone."""
        return [p for name, p in self.named_parameters() if not name.startswith(BACKBONE_PREFIX)]

    def modal_state_dict(self) -> Dict[str, torch.Tensor]:
        return {k: v for k, v in self.state_dict().items() if not k.startswith(BACKBONE_PREFIX)}

    def silence_prompts(self):
        """Make every injection point emit an all-zero prompt."""
        for layer in self.layers:
            layer.prompt.silence()


def build_tracker(cfg: ExperimentConfig, backbone: RGBBackbone, seed: int) -> MemeTracker:
    """Construct a MemeTracker with modal-branch weights drawn from seed."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = MemeTracker(cfg, backbone)
    logger.info(f"Built {len(model.layers)} MeME layers (seed {seed}): {parameter_report(model)}")
    return model


def parameter_report(model: MemeTracker) -> Dict[str, int]:
    """Frozen, trainable and per-expert parameter counts."""
    frozen = sum(p.numel() for p in model.backbone.parameters())
    trainable = sum(p.numel() for p in model.modal_parameters())
    report = {"backbone_frozen": frozen, "modal_trainable": trainable}
    first = model.layers[0]
    if first.use_specific:
        report["specialized_expert"] = expert_parameter_count(first.experts[0])
    if first.use_shared:
        report["shared_expert"] = expert_parameter_count(first.shared)
    return report


FrameLike = Union[np.ndarray, torch.Tensor]


def as_frame(frame: FrameLike) -> torch.Tensor:
    """[C, H, W] float tensor in [0, 1] from a tensor or a uint8/float array."""
    if isinstance(frame, torch.Tensor):
        return frame.float()
    array = np.asarray(frame)
    if array.dtype == np.uint8:
        return torch.from_numpy(array.astype(np.float32) / 255.0)
    return torch.from_numpy(array.astype(np.float32))


def crop_window(box: Sequence[float], size: int, frame_height: int, frame_width: int) -> Tuple[int, int]:
    """Top-left corner of a size×size window centered on box, clamped inside the frame."""
    x, y, w, h = box
    x0 = int(round(x + w / 2 - size / 2))
    y0 = int(round(y + h / 2 - size / 2))
    x0 = min(max(x0, 0), frame_width - size)
    y0 = min(max(y0, 0), frame_height - size)
    return x0, y0


def crop_region(frame: torch.Tensor, box: Sequence[float], size: int) -> torch.Tensor:
    """size×size crop of a [..., C, H, W] frame centered on box."""
    x0, y0 = crop_window(box, size, frame.shape[-2], frame.shape[-1])
    return frame[..., y0:y0 + size, x0:x0 + size]


class SequenceTracker:
    """
    Frame-by-frame tracking with either the prompted tracker or the RGB baseline.

    Args:
        model (Union[MemeTracker, RGBBackbone]): Network to run
        template_size (int): Side of the template crop
    """

    def __init__(self, model: Union[MemeTracker, RGBBackbone], template_size: int):
        self.model = model.eval()
        self.template_size = template_size
        self.uses_modal = isinstance(model, MemeTracker)
        self._template_rgb: Optional[torch.Tensor] = None
        self._template_x: Optional[torch.Tensor] = None

    def initialize(self, rgb: FrameLike, x: FrameLike, init_box: Sequence[float]):
        """Crop the template around init_box from both streams."""
        rgb_t = as_frame(rgb)
        x_t = replicate_channels(as_frame(x))
        self._template_rgb = crop_region(rgb_t, init_box, self.template_size)[None]
        self._template_x = crop_region(x_t, init_box, self.template_size)[None]

    @torch.no_grad()
    def track(self, rgb: FrameLike, x: FrameLike) -> Tuple[Tuple[float, float, float, float], float]:
        """
        Locate the target in one frame.

        Args:
            rgb (FrameLike): [3, H, W] RGB frame
            x (FrameLike): [C, H, W] auxiliary frame of any modality

        Returns:
            Tuple: (x, y, w, h) box in pixels and the center confidence
        """
        if self._template_rgb is None:
            raise RuntimeError("SequenceTracker.track called before initialize")
        search_rgb = as_frame(rgb)[None]
        if self.uses_modal:
            search_x = replicate_channels(as_frame(x))[None]
            head = self.model(self._template_rgb, self._template_x, search_rgb, search_x).head
        else:
            head = self.model(self._template_rgb, search_rgb)
        boxes, confidence = head.decode()
        box = tuple(float(v) for v in boxes[0])
        return box, float(confidence[0])


def run_sequence(tracker: SequenceTracker, rgb_frames: Sequence[FrameLike], x_frames: Sequence[FrameLike],
                 init_box: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Track a whole sequence; frame 0 reports the initialization box.

    Returns:
        Tuple[np.ndarray, np.ndarray]: boxes [T, 4] and confidences [T]
    """
    tracker.initialize(rgb_frames[0], x_frames[0], init_box)
    boxes = [tuple(float(v) for v in init_box)]
    confidences = [1.0]
    for rgb, x in zip(rgb_frames[1:], x_frames[1:]):
        box, confidence = tracker.track(rgb, x)
        boxes.append(box)
        confidences.append(confidence)
    return np.asarray(boxes, dtype=np.float64), np.asarray(confidences, dtype=np.float64)
