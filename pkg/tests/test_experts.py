import pytest
import torch
import torch.nn as nn
from hypothesis import given, strategies as st

from meme.blocks import (
    EdgeMixer,
    ExpertAssignment,
    LowRankExpert,
    SharedExpert,
    expert_parameter_count,
    init_laplacian,
    shared_forward,
    specialized_forward,
)
from meme.errors import ConfigurationError, ShapeError
from models.config import MODALITIES


def single_channel_grid(values: torch.Tensor) -> torch.Tensor:
    """[rows, cols] values as [rows·cols, 1] tokens."""
    return values.reshape(-1, 1)


def test_laplacian_kernel():
    kernel = init_laplacian()
    assert kernel.tolist() == [[0, 1, 0], [1, -4, 1], [0, 1, 0]]
    assert kernel.sum() == 0


def test_edge_mixer_starts_as_laplacian_per_channel():
    mixer = EdgeMixer(4)
    assert mixer.conv.weight.shape == (4, 1, 3, 3)
    for channel in range(4):
        assert torch.equal(mixer.conv.weight[channel, 0], init_laplacian())
    assert mixer.conv.weight.requires_grad


def test_edge_mixer_impulse_response():
    grid = torch.zeros(5, 5)
    grid[2, 2] = 1.0
    response = EdgeMixer(1)(single_channel_grid(grid), (5, 5)).reshape(5, 5)

    expected = torch.zeros(5, 5)
    expected[2, 2] = -4.0
    for r, c in ((1, 2), (3, 2), (2, 1), (2, 3)):
        expected[r, c] = 1.0
    assert torch.allclose(response.detach(), expected, atol=1e-6)


@given(value=st.floats(-3, 3), rows=st.integers(1, 5), cols=st.integers(1, 5))
def test_edge_mixer_annihilates_constant_grids(value, rows, cols):
    tokens = torch.full((rows * cols, 3), value)
    response = EdgeMixer(3)(tokens, (rows, cols))
    assert torch.allclose(response, torch.zeros_like(response), atol=1e-5)


def test_edge_mixer_step_edge_touches_two_columns():
    grid = torch.zeros(4, 6)
    grid[:, 3:] = 1.0
    response = EdgeMixer(1)(single_channel_grid(grid), (4, 6)).reshape(4, 6).detach()
    nonzero_cols = sorted({c for _, c in torch.nonzero(response.abs() > 1e-6).tolist()})
    assert nonzero_cols == [2, 3]
    assert torch.allclose(response[:, 2], torch.ones(4))
    assert torch.allclose(response[:, 3], -torch.ones(4))


def test_edge_mixer_rejects_wrong_grid():
    with pytest.raises(ShapeError):
        EdgeMixer(2)(torch.zeros(5, 2), (2, 2))


def test_specialized_expert_zero_weights():
    expert = LowRankExpert(16, 4)
    for param in expert.parameters():
        nn.init.zeros_(param)
    assert torch.count_nonzero(specialized_forward(torch.randn(6, 16), expert)) == 0


def test_specialized_expert_is_linear_without_bias():
    expert = LowRankExpert(16, 4, bias=False)
    x = torch.randn(2, 6, 16)
    assert torch.allclose(expert(2 * x), 2 * expert(x), atol=1e-6)
    assert expert(x).shape == (2, 6, 4)


def test_expert_rank_must_be_below_width():
    with pytest.raises(ConfigurationError):
        LowRankExpert(8, 8)
    with pytest.raises(ConfigurationError):
        SharedExpert(8, 9)


def test_specialized_expert_parameter_economy():
    assert expert_parameter_count(LowRankExpert(64, 8)) < 64 ** 2 / 2


def test_shared_expert_with_zero_w3_is_pure_residual():
    expert = SharedExpert(16, 4)
    nn.init.zeros_(expert.w3.weight)
    tokens = torch.randn(2, 6, 16)
    out = shared_forward(tokens, [(1, 2), (2, 2)], expert)
    assert torch.equal(out, expert.down(tokens))


def test_shared_expert_constant_grid_closed_form():
    torch.manual_seed(0)
    expert = SharedExpert(16, 4)
    token = torch.randn(16)
    tokens = token.expand(6, 16).clone()

    out = shared_forward(tokens, [(1, 2), (2, 2)], expert)

    low_rank = expert.down(tokens)
    x = expert.norm(low_rank)
    expected = expert.w3(0.5 * expert.w2(x)) + low_rank
    assert torch.allclose(out, expected, atol=1e-6)


def test_shared_expert_mixes_within_each_role_only():
    torch.manual_seed(0)
    expert = SharedExpert(16, 4)
    template = torch.randn(1, 2, 16)
    search = torch.randn(1, 4, 16)
    base = shared_forward(torch.cat([template, search], 1), [(1, 2), (2, 2)], expert)
    changed = shared_forward(torch.cat([template, search + 1.0], 1), [(1, 2), (2, 2)], expert)
    assert torch.allclose(base[:, :2], changed[:, :2], rtol=0, atol=1e-7)
    assert not torch.allclose(base[:, 2:], changed[:, 2:])


def test_shared_expert_output_matches_specialized_shape():
    tokens = torch.randn(3, 6, 16)
    shared = SharedExpert(16, 4)(tokens, [(1, 2), (2, 2)])
    assert shared.shape == LowRankExpert(16, 4)(tokens).shape


def test_shared_expert_rejects_inconsistent_grids():
    with pytest.raises(ShapeError):
        SharedExpert(16, 4)(torch.randn(7, 16), [(1, 2), (2, 2)])


def test_contiguous_assignment_is_disjoint():
    assignment = ExpertAssignment.contiguous(MODALITIES, 2)
    assert assignment.to_dict() == {"depth": [0, 1], "thermal": [2, 3], "event": [4, 5]}
    assert assignment.num_experts == 6
    assert assignment.experts_per_modality == 2
    sets = [set(assignment.experts_for(m)) for m in MODALITIES]
    assert all(a.isdisjoint(b) for i, a in enumerate(sets) for b in sets[i + 1:])


def test_assignment_targets_are_multi_hot():
    assignment = ExpertAssignment.contiguous(MODALITIES, 2)
    target = assignment.targets(["thermal", "depth"])
    assert target.tolist() == [[0, 0, 1, 1, 0, 0], [1, 1, 0, 0, 0, 0]]


@pytest.mark.parametrize("mapping, num_experts", [
    ({"depth": [0, 1], "thermal": [1, 2]}, 4),
    ({"depth": [0, 1], "thermal": [2]}, 4),
    ({"depth": [0, 5]}, 4),
])
def test_invalid_assignments_are_rejected(mapping, num_experts):
    with pytest.raises(ConfigurationError):
        ExpertAssignment.from_mapping(mapping, num_experts)


def test_unknown_modality_has_no_experts():
    with pytest.raises(ConfigurationError):
        ExpertAssignment.contiguous(MODALITIES, 1).experts_for("lidar")


def test_specialized_outputs_span_at_most_rank_dimensions():
    torch.manual_seed(0)
    expert = LowRankExpert(embed_dim=16, rank=4)
    with torch.no_grad():
        expert.down.bias.normal_()
        expert.up.bias.normal_()
        outputs = specialized_forward(torch.randn(64, 16), expert)
    assert outputs.shape == (64, 4)
    assert torch.linalg.matrix_rank(outputs) <= 4
