"""
Expert Blocks

Specialized low-rank experts, the edge-guided shared expert and the fixed
modality → expert-set assignment used to supervise the router.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import torch
import torch.nn as nn

from ..errors import ConfigurationError, ShapeError

LAPLACIAN = ((0.0, 1.0, 0.0), (1.0, -4.0, 1.0), (0.0, 1.0, 0.0))


def init_laplacian() -> torch.Tensor:
    """The discrete 3×3 Laplacian [[0,1,0],[1,-4,1],[0,1,0]]."""
    return torch.tensor(LAPLACIAN)


class LowRankExpert(nn.Module):
    """
    Modality-specific expert: projects D-wide tokens into a K-dim latent space.

    Args:
        embed_dim (int): Token width D
        rank (int): Latent width K, strictly smaller than D
        bias (bool): Whether both maps carry a bias
    """

    def __init__(self, embed_dim: int, rank: int, bias: bool = True):
        super().__init__()
        if rank >= embed_dim:
            raise ConfigurationError(f"Expert rank K={rank} must be smaller than D={embed_dim}")
        self.rank = rank
        self.down = nn.Linear(embed_dim, rank, bias=bias)
        self.up = nn.Linear(rank, rank, bias=bias)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return specialized_forward(tokens, self)


def specialized_forward(tokens: torch.Tensor, expert: LowRankExpert) -> torch.Tensor:
    """
    Apply a specialized expert: up(down(tokens)).

    Args:
        tokens (torch.Tensor): [..., N, D]
        expert (LowRankExpert): Expert to apply

    Returns:
        torch.Tensor: [..., N, K]
    """
    if tokens.shape[-1] != expert.down.in_features:
        raise ShapeError(
            f"Tokens have width {tokens.shape[-1]}, expert expects {expert.down.in_features}"
        )
    return expert.up(expert.down(tokens))


class EdgeMixer(nn.Module):
    """
    Depthwise 3×3 convolution over tokens laid out on their patch grid.

    Every channel's kernel starts as the discrete Laplacian and stays learnable.
    Borders replicate the nearest token so a constant grid has zero response.

    Args:
        channels (int): Channels mixed independently
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(
            channels, channels, kernel_size=3, padding=1, groups=channels,
            bias=False, padding_mode="replicate",
        )
        with torch.no_grad():
            self.conv.weight.copy_(init_laplacian().expand(channels, 1, 3, 3))

    def forward(self, tokens: torch.Tensor, grid: Tuple[int, int]) -> torch.Tensor:
        """Mix [..., rows·cols, C] tokens on a rows×cols grid."""
        rows, cols = grid
        *lead, n, channels = tokens.shape
        if n != rows * cols:
            raise ShapeError(f"{n} tokens do not fill a {rows}x{cols} grid")
        x = tokens.reshape(-1, rows, cols, channels).permute(0, 3, 1, 2)
        x = self.conv(x)
        return x.permute(0, 2, 3, 1).reshape(*lead, n, channels)


class SharedExpert(nn.Module):
    """
    Always-on expert gated by edge responses of its own low-rank features.

    Out = (sigmoid(EdgeMixer(X W1)) * X W2) W3 + m, with m = down(tokens) and
    X = LayerNorm(m). The inner width equals the rank.

    Args:
        embed_dim (int): Token width D
        rank (int): Latent width K
    """

    def __init__(self, embed_dim: int, rank: int):
        super().__init__()
        if rank >= embed_dim:
            raise ConfigurationError(f"Expert rank K={rank} must be smaller than D={embed_dim}")
        self.rank = rank
        self.down = nn.Linear(embed_dim, rank)
        self.norm = nn.LayerNorm(rank)
        self.w1 = nn.Linear(rank, rank, bias=False)
        self.w2 = nn.Linear(rank, rank, bias=False)
        self.w3 = nn.Linear(rank, rank, bias=False)
        self.edge_mixer = EdgeMixer(rank)

    def forward(self, tokens: torch.Tensor, grids: Sequence[Tuple[int, int]]) -> torch.Tensor:
        return shared_forward(tokens, grids, self)


def shared_forward(tokens: torch.Tensor, grids: Sequence[Tuple[int, int]],
                   expert: SharedExpert) -> torch.Tensor:
    """
    Apply the shared expert.

    The edge mixer runs separately on each role's grid, never across the
    template/search boundary.

    Args:
        tokens (torch.Tensor): [..., N, D], template tokens first
        grids (Sequence[Tuple[int, int]]): (rows, cols) of each role in token order
        expert (SharedExpert): Expert to apply

    Returns:
        torch.Tensor: [..., N, K]

    Raises:
        ShapeError: grids do not account for exactly N tokens
    """
    counts = [rows * cols for rows, cols in grids]
    if sum(counts) != tokens.shape[-2]:
        raise ShapeError(
            f"Grids {list(grids)} hold {sum(counts)} tokens but the sequence has {tokens.shape[-2]}"
        )
    if tokens.shape[-1] != expert.down.in_features:
        raise ShapeError(
            f"Tokens have width {tokens.shape[-1]}, shared expert expects {expert.down.in_features}"
        )

    low_rank = expert.down(tokens)
    x = expert.norm(low_rank)
    projected = expert.w1(x)

    mixed = [
        expert.edge_mixer(part, grid)
        for part, grid in zip(torch.split(projected, counts, dim=-2), grids)
    ]
    gate = torch.sigmoid(torch.cat(mixed, dim=-2))
    return expert.w3(gate * expert.w2(x)) + low_rank


@dataclass(frozen=True)
class ExpertAssignment:
    """
    Fixed map h from modality name to its dedicated expert indices.

    Attributes:
        table (Tuple[Tuple[str, Tuple[int, ...]], ...]): (modality, expert indices) pairs
        num_experts (int): Total routed experts
    """
    table: Tuple[Tuple[str, Tuple[int, ...]], ...]
    num_experts: int

    def __post_init__(self):
        seen: Dict[int, str] = {}
        sizes = {len(indices) for _, indices in self.table}
        if len(sizes) > 1:
            raise ConfigurationError(f"Expert sets have different sizes: {sorted(sizes)}")
        for modality, indices in self.table:
            for index in indices:
                if not 0 <= index < self.num_experts:
                    raise ConfigurationError(
                        f"Expert {index} of '{modality}' is outside [0, {self.num_experts})"
                    )
                if index in seen:
                    raise ConfigurationError(
                        f"Expert {index} is assigned to both '{seen[index]}' and '{modality}'"
                    )
                seen[index] = modality

    @classmethod
    def contiguous(cls, modalities: Iterable[str], experts_per_modality: int) -> "ExpertAssignment":
        """Give modality m the experts [m·n, (m+1)·n)."""
        modalities = list(modalities)
        table = tuple(
            (name, tuple(range(i * experts_per_modality, (i + 1) * experts_per_modality)))
            for i, name in enumerate(modalities)
        )
        return cls(table=table, num_experts=len(modalities) * experts_per_modality)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[int]], num_experts: int) -> "ExpertAssignment":
        return cls(
            table=tuple((name, tuple(int(i) for i in indices)) for name, indices in mapping.items()),
            num_experts=num_experts,
        )

    @property
    def modalities(self) -> List[str]:
        return [name for name, _ in self.table]

    @property
    def experts_per_modality(self) -> int:
        return len(self.table[0][1]) if self.table else 0

    def experts_for(self, modality: str) -> Tuple[int, ...]:
        for name, indices in self.table:
            if name == modality:
                return indices
        raise ConfigurationError(f"Modality '{modality}' has no expert assignment")

    def targets(self, modalities: Sequence[str], dtype=torch.float32) -> torch.Tensor:
        """Multi-hot [B, E] targets for a batch of modality names."""
        target = torch.zeros(len(modalities), self.num_experts, dtype=dtype)
        for row, modality in enumerate(modalities):
            target[row, list(self.experts_for(modality))] = 1.0
        return target

    def to_dict(self) -> Dict[str, List[int]]:
        """Serializable modality → indices table stored with checkpoints."""
        return {name: list(indices) for name, indices in self.table}


def expert_parameter_count(expert: nn.Module) -> int:
    return sum(p.numel() for p in expert.parameters())

