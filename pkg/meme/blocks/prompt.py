"""
Prompt Block

Uses the modal matrix M_k as a gate on RGB tokens projected into the low-rank
space, then projects the result back to the RGB token width so it can be added
to the frozen backbone's token stream.
"""

import torch
import torch.nn as nn

from ..errors import ShapeError


class PromptBlock(nn.Module):
    """
    Modal prompting of RGB tokens.

    Out = ((X_i W5 * sigmoid(X_m W6)) W7 + I_k) W8 with I_k = rgb_down(rgb),
    X_i = Norm(I_k) and X_m = Norm(M_k). W8 starts at zero so an untrained
    prompt leaves the backbone untouched.

    Args:
        rgb_dim (int): RGB token width D_rgb
        rank (int): Latent width K
    """

    def __init__(self, rgb_dim: int, rank: int):
        super().__init__()
        self.rgb_down = nn.Linear(rgb_dim, rank)
        self.norm_rgb = nn.LayerNorm(rank)
        self.norm_modal = nn.LayerNorm(rank)
        self.w5 = nn.Linear(rank, rank, bias=False)
        self.w6 = nn.Linear(rank, rank, bias=False)
        self.w7 = nn.Linear(rank, rank, bias=False)
        self.w8 = nn.Linear(rank, rgb_dim)
        nn.init.zeros_(self.w8.weight)
        nn.init.zeros_(self.w8.bias)

    def forward(self, rgb_tokens: torch.Tensor, modal_matrix: torch.Tensor) -> torch.Tensor:
        return prompt(rgb_tokens, modal_matrix, self)

    @torch.no_grad()
    def silence(self):
        """Zero the output projection so the block emits an all-zero prompt."""
        self.w8.weight.zero_()
        self.w8.bias.zero_()


def prompt(rgb_tokens: torch.Tensor, modal_matrix: torch.Tensor, block: PromptBlock) -> torch.Tensor:
    """
    Compute the prompt added to the RGB stream.

    Args:
        rgb_tokens (torch.Tensor): [..., N, D_rgb]
        modal_matrix (torch.Tensor): M_k, [..., N, K] with the same patch layout
        block (PromptBlock): Prompt parameters

    Returns:
        torch.Tensor: [..., N, D_rgb]

    Raises:
        ShapeError: token counts of the two streams differ
    """
    if rgb_tokens.shape[:-1] != modal_matrix.shape[:-1]:
        raise ShapeError(
            f"RGB tokens {tuple(rgb_tokens.shape)} and modal tokens "
            f"{tuple(modal_matrix.shape)} are misaligned"
        )
    low_rank = block.rgb_down(rgb_tokens)
    x_rgb = block.norm_rgb(low_rank)
    x_modal = block.norm_modal(modal_matrix)
    gated = block.w5(x_rgb) * torch.sigmoid(block.w6(x_modal))
    return block.w8(block.w7(gated) + low_rank)
