"""
RGB Backbone

A small one-stream transformer tracker: template and search RGB patches are
embedded into one sequence, mixed by a stack of pre-norm attention blocks and
decoded by a center/offset/size head over the search grid. It is pretrained on
clean RGB sequences and then frozen; the modal branch only adds prompts to its
token stream.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import torch
import torch.nn as nn

from models.config import ExperimentConfig
from .boxes import cxcywh_to_xywh
from .tokenizer import PatchEmbedding, patch_grid

# (layer index, current RGB tokens) → prompt of the same shape
Prompter = Callable[[int, torch.Tensor], torch.Tensor]


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, n, dim = x.shape
        qkv = self.qkv(x).reshape(batch, n, 3, self.heads, dim // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) / math.sqrt(dim // self.heads)
        out = attn.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(batch, n, dim))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


@dataclass
class HeadOutput:
    """
    Dense predictions over the search grid.

    Attributes:
        score (torch.Tensor): [B, rows, cols] center logits
        offset (torch.Tensor): [B, 2, rows, cols] sub-cell center offset in [0, 1]
        size (torch.Tensor): [B, 2, rows, cols] box size as a fraction of the search side
        patch_size (int): Cell side in pixels
        search_size (int): Search region side in pixels
    """
    score: torch.Tensor
    offset: torch.Tensor
    size: torch.Tensor
    patch_size: int
    search_size: int

    def boxes_at(self, rows: torch.Tensor, cols: torch.Tensor) -> torch.Tensor:
        """Decode [B] cells into [B, 4] xywh boxes in search pixels."""
        batch = torch.arange(self.score.shape[0], device=self.score.device)
        offset = self.offset[batch, :, rows, cols]
        size = self.size[batch, :, rows, cols]
        cx = (cols.to(offset.dtype) + offset[:, 0]) * self.patch_size
        cy = (rows.to(offset.dtype) + offset[:, 1]) * self.patch_size
        w = size[:, 0] * self.search_size
        h = size[:, 1] * self.search_size
        return cxcywh_to_xywh(torch.stack([cx, cy, w, h], dim=-1))

    def decode(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Best box and its confidence per sample: ([B, 4], [B])."""
        batch, _, cols = self.score.shape
        flat = self.score.reshape(batch, -1)
        best = flat.argmax(dim=-1)
        boxes = self.boxes_at(best // cols, best % cols)
        confidence = torch.sigmoid(flat.gather(1, best[:, None]).squeeze(1))
        return boxes, confidence


class CenterHead(nn.Module):
    """Per-token MLP predicting center logit, offset and size."""

    def __init__(self, dim: int, patch_size: int, search_size: int):
        super().__init__()
        self.patch_size = patch_size
        self.search_size = search_size
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, 5))

    def forward(self, search_tokens: torch.Tensor, grid: Tuple[int, int]) -> HeadOutput:
        rows, cols = grid
        out = self.mlp(search_tokens).reshape(-1, rows, cols, 5).permute(0, 3, 1, 2)
        return HeadOutput(
            score=out[:, 0],
            offset=torch.sigmoid(out[:, 1:3]),
            size=torch.sigmoid(out[:, 3:5]),
            patch_size=self.patch_size,
            search_size=self.search_size,
        )


class RGBBackbone(nn.Module):
    """
    One-stream RGB tracker used as the frozen foundation.

    Args:
        cfg (ExperimentConfig): Patch size, frame sizes and backbone widths
    """

    def __init__(self, cfg: ExperimentConfig):
        super().__init__()
        p = cfg.patch_size
        self.template_grid = patch_grid(cfg.template_size, cfg.template_size, p)
        self.search_grid = patch_grid(cfg.search_size, cfg.search_size, p)
        n_template = self.template_grid[0] * self.template_grid[1]
        n_search = self.search_grid[0] * self.search_grid[1]

        self.patch_embed = PatchEmbedding(p, cfg.rgb_dim)
        self.pos_template = nn.Parameter(torch.zeros(n_template, cfg.rgb_dim))
        self.pos_search = nn.Parameter(torch.zeros(n_search, cfg.rgb_dim))
        nn.init.trunc_normal_(self.pos_template, std=0.02)
        nn.init.trunc_normal_(self.pos_search, std=0.02)

        self.blocks = nn.ModuleList(
            [Block(cfg.rgb_dim, cfg.backbone_heads, cfg.backbone_mlp_ratio) for _ in range(cfg.backbone_depth)]
        )
        self.norm = nn.LayerNorm(cfg.rgb_dim)
        self.head = CenterHead(cfg.rgb_dim, p, cfg.search_size)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def forward(self, template_rgb: torch.Tensor, search_rgb: torch.Tensor,
                prompter: Optional[Prompter] = None) -> HeadOutput:
        """
        Track the template inside the search frame.

        Args:
            template_rgb (torch.Tensor): [B, 3, H_t, W_t]
            search_rgb (torch.Tensor): [B, 3, H_s, W_s]
            prompter (Prompter, optional): Called at the embedding layer (index 0)
                and after every block (index i + 1); its output is added to the tokens

        Returns:
            HeadOutput: dense search-grid predictions
        """
        seq = self.patch_embed(template_rgb, search_rgb)
        tokens = seq.tokens + torch.cat([self.pos_template, self.pos_search], dim=0)

        if prompter is not None:
            tokens = tokens + prompter(0, tokens)
        for index, block in enumerate(self.blocks):
            tokens = block(tokens)
            if prompter is not None:
                tokens = tokens + prompter(index + 1, tokens)

        search = self.norm(tokens)[:, seq.n_template:]
        return self.head(search, self.search_grid)

    def freeze(self) -> "RGBBackbone":
        """Stop gradient updates to every parameter and pin eval mode."""
        self.requires_grad_(False)
        self.eval()
        return self

    def state_digest(self) -> Dict[str, bytes]:
        """Raw bytes of every parameter and buffer, keyed by module path."""
        return {
            name: tensor.detach().cpu().contiguous().numpy().tobytes()
            for name, tensor in self.state_dict().items()
        }

