"""
Fusion Block

Merges the routed specialized output with the shared expert output into the
global low-rank matrix M_k = (routed W4 + shared) W5.
"""

import torch
import torch.nn as nn

from ..errors import ShapeError


class FusionBlock(nn.Module):
    """
    Low-rank fusion of expertized tokens.

    Args:
        rank (int): Latent width K
        bias (bool): Whether W4 and W5 carry a bias
    """

    def __init__(self, rank: int, bias: bool = True):
        super().__init__()
        self.w4 = nn.Linear(rank, rank, bias=bias)
        self.w5_fuse = nn.Linear(rank, rank, bias=bias)

    def forward(self, routed_out: torch.Tensor, shared_out: torch.Tensor) -> torch.Tensor:
        return fuse(routed_out, shared_out, self)


def fuse(routed_out: torch.Tensor, shared_out: torch.Tensor, block: FusionBlock) -> torch.Tensor:
    """
    Compute M_k from token-aligned routed and shared outputs.

    Args:
        routed_out (torch.Tensor): [..., N, K] combined specialized-expert output
        shared_out (torch.Tensor): [..., N, K] shared-expert output
        block (FusionBlock): W4 and W5 maps

    Returns:
        torch.Tensor: M_k, [..., N, K]

    Raises:
        ShapeError: the two inputs are not token-aligned
    """
    if routed_out.shape != shared_out.shape:
        raise ShapeError(
            f"Routed output {tuple(routed_out.shape)} and shared output "
            f"{tuple(shared_out.shape)} are not token-aligned"
        )
    return block.w5_fuse(block.w4(routed_out) + shared_out)
