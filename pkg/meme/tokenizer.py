"""
Paired Patch Embedding

Turns a template frame and a search frame into one token sequence: both frames
are cut into non-overlapping P×P patches, flattened channel-major, projected by
a shared learnable linear map and concatenated template-first.
"""

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class TokenSequence:
    """
    Tokens of one (template, search) pair with their patch-grid provenance.

    Attributes:
        tokens (torch.Tensor): [..., N, D] with N = n_template + n_search
        n_template (int): Template token count N_t
        n_search (int): Search token count N_s
        patch_size (int): Patch side P
        template_grid (Tuple[int, int]): Template patch rows and columns
        search_grid (Tuple[int, int]): Search patch rows and columns
    """
    tokens: torch.Tensor
    n_template: int
    n_search: int
    patch_size: int
    template_grid: Tuple[int, int]
    search_grid: Tuple[int, int]

    def __post_init__(self):
        if self.tokens.shape[-2] != self.n_template + self.n_search:
            raise ShapeError(
                f"TokenSequence has {self.tokens.shape[-2]} tokens, "
                f"expected {self.n_template} + {self.n_search}"
            )

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    def template_tokens(self) -> torch.Tensor:
        return self.tokens[..., : self.n_template, :]

    def search_tokens(self) -> torch.Tensor:
        return self.tokens[..., self.n_template:, :]

    def with_tokens(self, tokens: torch.Tensor) -> "TokenSequence":
        """Same layout, different values (e.g. after a projection)."""
        return TokenSequence(
            tokens, self.n_template, self.n_search, self.patch_size,
            self.template_grid, self.search_grid,
        )


def replicate_channels(frame: torch.Tensor) -> torch.Tensor:
    """Repeat a single-channel frame [..., 1, H, W] to three channels."""
    if frame.shape[-3] == 3:
        return frame
    if frame.shape[-3] != 1:
        raise ShapeError(f"Frame must have 1 or 3 channels, got {frame.shape[-3]}")
    return frame.expand(*frame.shape[:-3], 3, *frame.shape[-2:])


def patch_grid(height: int, width: int, patch_size: int) -> Tuple[int, int]:
    """Number of patch rows and columns of an H×W frame."""
    if height % patch_size or width % patch_size:
        raise ShapeError(
            f"Frame of size H={height}, W={width} is not divisible by patch size P={patch_size}"
        )
    return height // patch_size, width // patch_size


def patchify(frame: torch.Tensor, patch_size: int) -> torch.Tensor:
    """
    Cut a frame into flattened non-overlapping patches.

    Args:
        frame (torch.Tensor): [..., C, H, W]
        patch_size (int): Patch side P

    Returns:
        torch.Tensor: [..., N, C·P²]; row i is the i-th patch in row-major
        patch order, channel-major inside the patch

    Raises:
        ShapeError: H or W not divisible by P
    """
    *lead, channels, height, width = frame.shape
    rows, cols = patch_grid(height, width, patch_size)
    p = patch_size
    x = frame.reshape(*lead, channels, rows, p, cols, p)
    n = len(lead)
    # [..., rows, cols, C, p, p]
    x = x.permute(*range(n), n + 1, n + 3, n, n + 2, n + 4)
    return x.reshape(*lead, rows * cols, channels * p * p)


def unpatchify(patches: torch.Tensor, grid: Tuple[int, int], patch_size: int,
               channels: int = 3) -> torch.Tensor:
    """Inverse of patchify: [..., N, C·P²] back to [..., C, H, W]."""
    rows, cols = grid
    p = patch_size
    *lead, n_patches, width = patches.shape
    if n_patches != rows * cols or width != channels * p * p:
        raise ShapeError(
            f"Cannot assemble {n_patches} patches of width {width} into a {rows}x{cols} grid "
            f"with P={p}, C={channels}"
        )
    n = len(lead)
    x = patches.reshape(*lead, rows, cols, channels, p, p)
    # [..., C, rows, p, cols, p]
    x = x.permute(*range(n), n + 2, n, n + 3, n + 1, n + 4)
    return x.reshape(*lead, channels, rows * p, cols * p)


class PatchEmbedding(nn.Module):
    """
    Learnable patch projection shared by the template and search frames.

    Args:
        patch_size (int): Patch side P
        embed_dim (int): Token width D
        bias (bool): Whether the projection carries a bias
    """

    def __init__(self, patch_size: int, embed_dim: int, bias: bool = True):
        super().__init__()
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.proj = nn.Linear(3 * patch_size * patch_size, embed_dim, bias=bias)

    def forward(self, template: torch.Tensor, search: torch.Tensor) -> TokenSequence:
        return embed_pair(template, search, self.patch_size, self.proj, self.embed_dim)


def embed_pair(template: torch.Tensor, search: torch.Tensor, patch_size: int,
               proj: nn.Linear, embed_dim: int = None) -> TokenSequence:
    """
    Embed a (template, search) frame pair into one token sequence.

    Args:
        template (torch.Tensor): [..., C, H_t, W_t] with C in {1, 3}
        search (torch.Tensor): [..., C, H_s, W_s]
        patch_size (int): Patch side P, shared by both frames
        proj (nn.Linear): Projection (3·P²) → D applied to both roles
        embed_dim (int, optional): Token width expected downstream

    Returns:
        TokenSequence: rows [0, N_t) are template tokens, [N_t, N) search tokens

    Raises:
        ShapeError: A frame is not patchifiable with P
        ConfigurationError: Projection width disagrees with the configured D
    """
    if proj.in_features != 3 * patch_size * patch_size:
        raise ConfigurationError(
            f"Projection expects {proj.in_features} inputs, patches have {3 * patch_size * patch_size}"
        )
    if embed_dim is not None and proj.out_features != embed_dim:
        raise ConfigurationError(
            f"Projection outputs D={proj.out_features} but the model is configured for D={embed_dim}"
        )

    template = replicate_channels(template)
    search = replicate_channels(search)
    t_grid = patch_grid(template.shape[-2], template.shape[-1], patch_size)
    s_grid = patch_grid(search.shape[-2], search.shape[-1], patch_size)

    t_tokens = proj(patchify(template, patch_size))
    s_tokens = proj(patchify(search, patch_size))
    tokens = torch.cat([t_tokens, s_tokens], dim=-2)

    return TokenSequence(
        tokens=tokens,
        n_template=t_grid[0] * t_grid[1],
        n_search=s_grid[0] * s_grid[1],
        patch_size=patch_size,
        template_grid=t_grid,
        search_grid=s_grid,
    )
