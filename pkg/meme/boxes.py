"""
Box Utilities

Boxes are (x, y, w, h) in pixels unless a function name says otherwise.
"""

from typing import Tuple

import torch


def xywh_to_xyxy(boxes: torch.Tensor) -> torch.Tensor:
    x, y, w, h = boxes.unbind(-1)
    return torch.stack([x, y, x + w, y + h], dim=-1)


def xywh_to_cxcywh(boxes: torch.Tensor) -> torch.Tensor:
    x, y, w, h = boxes.unbind(-1)
    return torch.stack([x + w / 2, y + h / 2, w, h], dim=-1)


def cxcywh_to_xywh(boxes: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, w, h], dim=-1)


def box_iou_giou(a: torch.Tensor, b: torch.Tensor, eps: float = 1e-9) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Element-wise IoU and generalized IoU of two aligned batches of xyxy boxes.

    Args:
        a (torch.Tensor): [..., 4]
        b (torch.Tensor): [..., 4]

    Returns:
        Tuple[torch.Tensor, torch.Tensor]: IoU and GIoU, both [...]
    """
    area_a = (a[..., 2] - a[..., 0]).clamp(min=0) * (a[..., 3] - a[..., 1]).clamp(min=0)
    area_b = (b[..., 2] - b[..., 0]).clamp(min=0) * (b[..., 3] - b[..., 1]).clamp(min=0)

    lt = torch.maximum(a[..., :2], b[..., :2])
    rb = torch.minimum(a[..., 2:], b[..., 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a + area_b - inter
    iou = inter / (union + eps)

    enclose_lt = torch.minimum(a[..., :2], b[..., :2])
    enclose_rb = torch.maximum(a[..., 2:], b[..., 2:])
    enclose_wh = (enclose_rb - enclose_lt).clamp(min=0)
    enclose = enclose_wh[..., 0] * enclose_wh[..., 1]
    giou = iou - (enclose - union) / (enclose + eps)
    return iou, giou
