"""
Training Objectives

Expert-assignment loss, importance and load balance losses, the generalist
objective that combines them, and the tracking loss of the box head.
"""

import logging
import math
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch.distributions import Normal

from models.config import GateConfig
from .backbone import HeadOutput
from .blocks.experts import ExpertAssignment
from .blocks.router import RouterDecision
from .boxes import box_iou_giou, xywh_to_cxcywh, xywh_to_xyxy
from .errors import InvariantViolation, ShapeError

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7
SIGMA_FLOOR = 1e-3


@dataclass
class LossBreakdown:
    """
    Every loss term of one training step.

    Attributes:
        track (torch.Tensor): Box-head loss
        moe (torch.Tensor): Expert-assignment loss
        imp (torch.Tensor): Importance loss
        load (torch.Tensor): Load loss
        balance (torch.Tensor): imp + load
        generalist (torch.Tensor): moe + lambda * balance
        total (torch.Tensor): track + generalist
        lam (float): Weight of the balance loss
    """
    track: torch.Tensor
    moe: torch.Tensor
    imp: torch.Tensor
    load: torch.Tensor
    balance: torch.Tensor
    generalist: torch.Tensor
    total: torch.Tensor
    lam: float

    def as_row(self) -> Dict[str, float]:
        """Scalar values for the training log."""
        return {
            f.name: float(getattr(self, f.name))
            for f in fields(self)
        }

    def check(self, atol: float = 1e-5):
        """
        Verify the composition identities and finiteness.

        Raises:
            InvariantViolation: A composition identity does not hold
        """
        row = self.as_row()
        identities = (
            ("balance", row["imp"] + row["load"]),
            ("generalist", row["moe"] + self.lam * row["balance"]),
            ("total", row["track"] + row["generalist"]),
        )
        for name, expected in identities:
            if not math.isclose(row[name], expected, rel_tol=1e-5, abs_tol=atol):
                raise InvariantViolation(f"Loss identity broken: {name}={row[name]} but expected {expected}")

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for k, v in self.as_row().items() if k != "lam")


def moe_loss(sample_probs: torch.Tensor, modalities: Sequence[str], assignment: ExpertAssignment) -> torch.Tensor:
    """
    Multi-label binary cross-entropy between gate probabilities and h(m).

    Args:
        sample_probs (torch.Tensor): [B, E] gate probabilities per sample (or per token)
        modalities (Sequence[str]): Modality of every row
        assignment (ExpertAssignment): Fixed modality → experts map

    Returns:
        torch.Tensor: mean over rows of the summed per-expert BCE

    Raises:
        ConfigurationError: A modality has no assignment
    """
    if sample_probs.shape[0] != len(modalities):
        raise ShapeError(f"{sample_probs.shape[0]} probability rows for {len(modalities)} modality labels")
    target = assignment.targets(modalities, dtype=sample_probs.dtype).to(sample_probs.device)
    p = sample_probs.clamp(PROB_EPS, 1 - PROB_EPS)
    return F.binary_cross_entropy(p, target, reduction="none").sum(dim=-1).mean()


def token_moe_loss(probs: torch.Tensor, modalities: Sequence[str], assignment: ExpertAssignment) -> torch.Tensor:
    """moe_loss applied to every token: [B, N, E] with one modality per sample."""
    batch, tokens, experts = probs.shape
    repeated = [m for m in modalities for _ in range(tokens)]
    return moe_loss(probs.reshape(batch * tokens, experts), repeated, assignment)


def _cv_squared(values: torch.Tensor) -> torch.Tensor:
    return values.var(unbiased=False) / values.mean() ** 2


def _flatten_rows(probs: torch.Tensor) -> torch.Tensor:
    rows = probs.reshape(-1, probs.shape[-1])
    if rows.shape[0] == 0:
        raise ShapeError("Balance losses need a non-empty batch")
    return rows


def importance_loss(probs: torch.Tensor) -> torch.Tensor:
    """
    Squared coefficient of variation of per-expert summed probabilities.

    Args:
        probs (torch.Tensor): [..., E] gate probabilities, rows summing to 1

    Returns:
        torch.Tensor: Var(Imp) / Mean(Imp)^2 with population variance
    """
    return _cv_squared(_flatten_rows(probs).sum(dim=0))


def normal_cdf(values: torch.Tensor, sigma: float) -> torch.Tensor:
    """CDF of N(0, sigma^2) evaluated element-wise."""
    loc = torch.zeros((), dtype=values.dtype, device=values.device)
    normal = Normal(loc, torch.full_like(loc, sigma))
    return normal.cdf(values)


def load_loss(probs: torch.Tensor, cfg: GateConfig) -> torch.Tensor:
    """
    Squared coefficient of variation of per-expert load.

    Load_i sums Phi(p_i) over the batch, where Phi is the CDF of N(0, sigma^2)
    and sigma = gate_noise / E. A zero sigma would turn Phi into a step, so it
    is replaced by a small floor and a warning is logged.

    Args:
        probs (torch.Tensor): [..., E] gate probabilities
        cfg (GateConfig): Supplies sigma

    Returns:
        torch.Tensor: Var(Load) / Mean(Load)^2
    """
    sigma = cfg.sigma
    if sigma <= 0:
        logger.warning(f"Gate noise is zero; load loss uses sigma={SIGMA_FLOOR} instead")
        sigma = SIGMA_FLOOR
    rows = _flatten_rows(probs)
    return _cv_squared(normal_cdf(rows, sigma).sum(dim=0))


def generalist_loss(track: torch.Tensor, moe: torch.Tensor, imp: torch.Tensor, load: torch.Tensor,
                    lam: float) -> LossBreakdown:
    """
    Combine the loss terms of one batch.

    Returns:
        LossBreakdown: balance = imp + load, generalist = moe + lam * balance,
        total = track + generalist
    """
    balance = imp + load
    generalist = moe + lam * balance
    return LossBreakdown(
        track=track, moe=moe, imp=imp, load=load, balance=balance,
        generalist=generalist, total=track + generalist, lam=lam,
    )


def routing_losses(decisions: Sequence[Optional[RouterDecision]], modalities: Sequence[str],
                   assignment: ExpertAssignment, cfg: GateConfig,
                   granularity: str = "sample") -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Average moe, importance and load losses over the layers that route.

    Args:
        decisions (Sequence[Optional[RouterDecision]]): One per MeME layer
        modalities (Sequence[str]): Modality of every sample (training only)
        assignment (ExpertAssignment): Fixed modality → experts map
        cfg (GateConfig): Router configuration
        granularity (str): "sample" averages probabilities over tokens first, "token" does not

    Returns:
        Tuple[torch.Tensor, torch.Tensor, torch.Tensor]: moe, imp, load (zeros when nothing routes)
    """
    routed = [d for d in decisions if d is not None]
    if not routed:
        zero = torch.zeros(())
        return zero, zero.clone(), zero.clone()

    moe_terms: List[torch.Tensor] = []
    imp_terms: List[torch.Tensor] = []
    load_terms: List[torch.Tensor] = []
    for decision in routed:
        if granularity == "token":
            moe_terms.append(token_moe_loss(decision.probs, modalities, assignment))
        else:
            moe_terms.append(moe_loss(decision.sample_probs(), modalities, assignment))
        imp_terms.append(importance_loss(decision.probs))
        load_terms.append(load_loss(decision.probs, cfg))

    return (
        torch.stack(moe_terms).mean(),
        torch.stack(imp_terms).mean(),
        torch.stack(load_terms).mean(),
    )


def focal_heatmap_loss(score: torch.Tensor, target: torch.Tensor, alpha: float = 2.0,
                       beta: float = 4.0) -> torch.Tensor:
    """
    Penalty-reduced focal loss between center logits and a Gaussian heatmap.

    Args:
        score (torch.Tensor): [B, rows, cols] logits
        target (torch.Tensor): [B, rows, cols] heatmap with peak exactly 1 at the object cell

    Returns:
        torch.Tensor: [B] per-sample loss normalized by the number of peaks
    """
    prob = torch.sigmoid(score)
    positive = target.eq(1).to(score.dtype)
    negative = 1 - positive
    pos_loss = -F.logsigmoid(score) * (1 - prob) ** alpha * positive
    neg_loss = -F.logsigmoid(-score) * prob ** alpha * (1 - target) ** beta * negative
    peaks = positive.flatten(1).sum(1).clamp(min=1)
    return (pos_loss + neg_loss).flatten(1).sum(1) / peaks


def gt_cells(gt_boxes: torch.Tensor, grid: Tuple[int, int], patch_size: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Grid cell (row, col) holding each ground-truth center."""
    center = xywh_to_cxcywh(gt_boxes)
    rows = (center[:, 1] / patch_size).floor().long().clamp(0, grid[0] - 1)
    cols = (center[:, 0] / patch_size).floor().long().clamp(0, grid[1] - 1)
    return rows, cols


def gaussian_heatmap(gt_boxes: torch.Tensor, grid: Tuple[int, int], patch_size: int) -> torch.Tensor:
    """
    [B, rows, cols] target peaking at 1 on the ground-truth cell.

    The spread follows the object size in cells, never below half a cell.
    """
    rows, cols = gt_cells(gt_boxes, grid, patch_size)
    size_cells = torch.sqrt((gt_boxes[:, 2] * gt_boxes[:, 3]).clamp(min=0)) / patch_size
    sigma = (size_cells / 3).clamp(min=0.5)
    r = torch.arange(grid[0], dtype=gt_boxes.dtype, device=gt_boxes.device)
    c = torch.arange(grid[1], dtype=gt_boxes.dtype, device=gt_boxes.device)
    dr = (r[None, :] - rows[:, None].to(gt_boxes.dtype)) ** 2
    dc = (c[None, :] - cols[:, None].to(gt_boxes.dtype)) ** 2
    dist = dr[:, :, None] + dc[:, None, :]
    return torch.exp(-dist / (2 * sigma[:, None, None] ** 2))


def box_regression_terms(pred_boxes: torch.Tensor, gt_boxes: torch.Tensor,
                         search_size: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Per-sample L1 (normalized center/size) and GIoU losses.

    Args:
        pred_boxes (torch.Tensor): [B, 4] xywh pixels
        gt_boxes (torch.Tensor): [B, 4] xywh pixels
        search_size (int): Normalizer for the L1 term

    Returns:
        Tuple[torch.Tensor, torch.Tensor]: L1 [B] and 1 - GIoU [B]
    """
    l1 = (xywh_to_cxcywh(pred_boxes) - xywh_to_cxcywh(gt_boxes)).abs().sum(-1) / search_size
    _, giou = box_iou_giou(xywh_to_xyxy(pred_boxes), xywh_to_xyxy(gt_boxes))
    return l1, 1 - giou


def tracking_loss(head: HeadOutput, gt_boxes: torch.Tensor, focal_weight: float = 1.0,
                  l1_weight: float = 5.0, giou_weight: float = 2.0) -> torch.Tensor:
    """
    Center-map focal loss plus L1 and GIoU regression read at the ground-truth cell.

    Samples whose ground-truth box has zero area are skipped with a warning.

    Args:
        head (HeadOutput): Box-head predictions
        gt_boxes (torch.Tensor): [B, 4] xywh in search pixels

    Returns:
        torch.Tensor: scalar mean over valid samples
    """
    valid = (gt_boxes[:, 2] > 0) & (gt_boxes[:, 3] > 0)
    skipped = int((~valid).sum())
    if skipped:
        logger.warning(f"Skipping {skipped} sample(s) with a zero-area ground-truth box")
    if not bool(valid.any()):
        return head.score.sum() * 0.0

    grid = tuple(head.score.shape[-2:])
    boxes = gt_boxes[valid]
    score = head.score[valid]
    target = gaussian_heatmap(boxes, grid, head.patch_size)
    focal = focal_heatmap_loss(score, target)

    rows, cols = gt_cells(boxes, grid, head.patch_size)
    subset = HeadOutput(score, head.offset[valid], head.size[valid], head.patch_size, head.search_size)
    pred = subset.boxes_at(rows, cols)
    l1, giou = box_regression_terms(pred, boxes, head.search_size)

    return (focal_weight * focal + l1_weight * l1 + giou_weight * giou).mean()
