import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from meme.blocks import FusionBlock, MemeLayer, PromptBlock, fuse, prompt
from meme.errors import ShapeError
from meme.tokenizer import PatchEmbedding
from models.config import GateConfig


def randomized(module: nn.Module, seed: int = 0) -> nn.Module:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for param in module.parameters():
            param.copy_(torch.randn(param.shape, generator=g))
    return module.double()


def test_fuse_zero_routed_branch():
    block = FusionBlock(4)
    shared = torch.randn(6, 4)
    out = fuse(torch.zeros(6, 4), shared, block)
    assert torch.allclose(out, block.w5_fuse(block.w4.bias + shared), atol=1e-6)

    bias_free = FusionBlock(4, bias=False)
    assert torch.allclose(fuse(torch.zeros(6, 4), shared, bias_free), bias_free.w5_fuse(shared), atol=1e-6)


def test_fuse_is_jointly_additive_without_bias():
    block = FusionBlock(4, bias=False)
    r1, s1, r2, s2 = (torch.randn(6, 4) for _ in range(4))
    assert torch.allclose(
        fuse(r1 + r2, s1 + s2, block), fuse(r1, s1, block) + fuse(r2, s2, block), atol=1e-5,
    )


def test_fuse_matches_dense_oracle():
    block = randomized(FusionBlock(4), seed=1)
    g = torch.Generator().manual_seed(2)
    routed = torch.randn(2, 4, generator=g, dtype=torch.float64)
    shared = torch.randn(2, 4, generator=g, dtype=torch.float64)

    w4, b4 = block.w4.weight, block.w4.bias
    w5, b5 = block.w5_fuse.weight, block.w5_fuse.bias
    expected = ((routed @ w4.T + b4) + shared) @ w5.T + b5
    assert torch.allclose(fuse(routed, shared, block), expected, atol=1e-6)


def test_fuse_rejects_misaligned_inputs():
    with pytest.raises(ShapeError):
        fuse(torch.zeros(6, 4), torch.zeros(5, 4), FusionBlock(4))


def test_untrained_prompt_is_zero():
    block = PromptBlock(16, 4)
    out = prompt(torch.randn(2, 6, 16), torch.randn(2, 6, 4), block)
    assert out.shape == (2, 6, 16)
    assert torch.count_nonzero(out) == 0


def test_prompt_with_zero_gate_weights_is_residual_only():
    block = randomized(PromptBlock(16, 4))
    for layer in (block.w5, block.w6, block.w7):
        nn.init.zeros_(layer.weight)
    rgb = torch.randn(6, 16, dtype=torch.float64)
    out = prompt(rgb, torch.randn(6, 4, dtype=torch.float64), block)
    assert torch.allclose(out, block.w8(block.rgb_down(rgb)), atol=1e-6)


def test_prompt_zero_modal_matrix_halves_the_gate():
    block = randomized(PromptBlock(16, 4), seed=3)
    nn.init.zeros_(block.norm_modal.bias)
    rgb = torch.randn(6, 16, dtype=torch.float64)
    out = prompt(rgb, torch.zeros(6, 4, dtype=torch.float64), block)

    low_rank = block.rgb_down(rgb)
    x_rgb = block.norm_rgb(low_rank)
    expected = block.w8(block.w7(0.5 * block.w5(x_rgb)) + low_rank)
    assert torch.allclose(out, expected, atol=1e-6)


def test_prompt_matches_dense_oracle():
    block = randomized(PromptBlock(16, 4), seed=4)
    g = torch.Generator().manual_seed(5)
    rgb = torch.randn(3, 16, generator=g, dtype=torch.float64)
    modal = torch.randn(3, 4, generator=g, dtype=torch.float64)

    def layer_norm(x, norm):
        return F.layer_norm(x, (4,), norm.weight, norm.bias, norm.eps)

    i_k = rgb @ block.rgb_down.weight.T + block.rgb_down.bias
    x_i = layer_norm(i_k, block.norm_rgb)
    x_m = layer_norm(modal, block.norm_modal)
    gated = (x_i @ block.w5.weight.T) * torch.sigmoid(x_m @ block.w6.weight.T)
    expected = (gated @ block.w7.weight.T + i_k) @ block.w8.weight.T + block.w8.bias
    assert torch.allclose(prompt(rgb, modal, block), expected, atol=1e-6)


def test_prompt_rejects_misaligned_streams():
    with pytest.raises(ShapeError):
        prompt(torch.randn(6, 16), torch.randn(5, 4), PromptBlock(16, 4))


def test_silence_zeroes_a_trained_prompt():
    block = randomized(PromptBlock(16, 4))
    block.silence()
    out = prompt(torch.randn(6, 16, dtype=torch.float64), torch.randn(6, 4, dtype=torch.float64), block)
    assert torch.count_nonzero(out) == 0


@pytest.mark.parametrize("use_shared, use_specific", [(True, True), (True, False), (False, True)])
def test_meme_layer_variants(use_shared, use_specific):
    torch.manual_seed(0)
    gate_cfg = GateConfig(num_experts=6, top_k=2, gate_noise=1.0)
    layer = MemeLayer(16, 24, 4, gate_cfg, use_shared=use_shared, use_specific=use_specific).eval()
    modal = PatchEmbedding(8, 16)(torch.rand(2, 3, 16, 16), torch.rand(2, 3, 32, 32))
    out = layer(modal, torch.randn(2, 20, 24))

    assert out.prompt.shape == (2, 20, 24)
    assert out.modal_matrix.shape == (2, 20, 4)
    assert (out.decision is not None) == use_specific
    assert out.evaluations == (2 * 2 * 20 if use_specific else 0)
    assert hasattr(layer, "shared") == use_shared
