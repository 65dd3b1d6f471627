import math

import pytest
import torch
import torch.nn as nn
from hypothesis import given, strategies as st

from meme.blocks import LowRankExpert, NoisyTopKRouter, RouterDecision, combine, dispatch, gate, select_topk
from meme.errors import ConfigurationError, RoutingError
from models.config import GateConfig


def identity_gate(experts: int) -> nn.Linear:
    """A gate whose logits are the tokens themselves."""
    layer = nn.Linear(experts, experts, bias=False)
    with torch.no_grad():
        layer.weight.copy_(torch.eye(experts))
    return layer


def decision_for(probs, k) -> RouterDecision:
    probs = torch.tensor(probs, dtype=torch.float32)
    return RouterDecision(probs=probs, noisy_logits=probs.log(), topk=select_topk(probs, k), k=k)


def test_equal_logits_give_uniform_probs():
    cfg = GateConfig(num_experts=3, top_k=1, gate_noise=1.0)
    decision = gate(torch.tensor([[1.0, 1.0, 1.0]]), identity_gate(3), cfg, training=False)
    assert torch.allclose(decision.probs, torch.full((1, 3), 1 / 3))


def test_topk_takes_largest_probs():
    decision = decision_for([[0.5, 0.3, 0.2]], k=2)
    assert set(decision.topk[0].tolist()) == {0, 1}


def test_topk_ties_go_to_lowest_index():
    probs = torch.full((4, 6), 1 / 6)
    assert select_topk(probs, 2).tolist() == [[0, 1]] * 4


def test_softmax_shift_invariance():
    cfg = GateConfig(num_experts=3, top_k=2, gate_noise=0.0)
    decision = gate(torch.tensor([[2.0, 1.0, 0.0], [12.0, 11.0, 10.0]]), identity_gate(3), cfg, training=False)
    assert torch.allclose(decision.probs[0], decision.probs[1], atol=1e-6)
    assert torch.equal(decision.topk[0], decision.topk[1])


def test_eval_mode_draws_no_noise():
    cfg = GateConfig(num_experts=4, top_k=2, gate_noise=4.0)
    tokens = torch.randn(5, 4)
    decision = gate(tokens, identity_gate(4), cfg, training=False)
    assert torch.equal(decision.noisy_logits, tokens)


def test_training_noise_is_reproducible_from_the_seed():
    cfg = GateConfig(num_experts=4, top_k=2, gate_noise=4.0)
    tokens = torch.randn(5, 4)
    runs = [
        gate(tokens, identity_gate(4), cfg, training=True, generator=torch.Generator().manual_seed(3))
        for _ in range(2)
    ]
    assert torch.equal(runs[0].noisy_logits, runs[1].noisy_logits)
    assert not torch.equal(runs[0].noisy_logits, tokens)


def test_k_larger_than_experts_is_rejected():
    cfg = GateConfig.model_construct(num_experts=2, top_k=3, gate_noise=1.0)
    with pytest.raises(ConfigurationError):
        gate(torch.randn(2, 2), identity_gate(2), cfg, training=False)


@given(seed=st.integers(0, 2 ** 16), shift=st.floats(-10, 10))
def test_rows_are_stochastic_and_topk_ignores_shifts(seed, shift):
    g = torch.Generator().manual_seed(seed)
    cfg = GateConfig(num_experts=6, top_k=2, gate_noise=0.0)
    tokens = torch.randn(7, 6, generator=g)
    decision = gate(tokens, identity_gate(6), cfg, training=False)
    assert torch.allclose(decision.probs.sum(-1), torch.ones(7), atol=1e-6)
    assert (decision.probs >= 0).all()
    shifted = gate(tokens + shift, identity_gate(6), cfg, training=False)
    assert torch.equal(decision.topk, shifted.topk)


def test_combine_single_expert_is_identity():
    decision = decision_for([[1.0, 0.0]], k=1)
    out = torch.tensor([[2.0, -3.0]])
    assert torch.equal(combine([out, None], decision), out)


def test_combine_cancels_opposite_outputs():
    decision = decision_for([[0.5, 0.5]], k=2)
    v = torch.tensor([[1.5, -2.0, 0.25]])
    assert torch.equal(combine([v, -v], decision), torch.zeros(1, 3))


def test_combine_weighted_sum():
    decision = decision_for([[0.7, 0.3]], k=2)
    out = combine([torch.tensor([[1.0, 1.0]]), torch.tensor([[3.0, 3.0]])], decision)
    assert torch.allclose(out, torch.tensor([[1.6, 1.6]]))


def test_combine_ignores_unselected_experts():
    decision = decision_for([[0.6, 0.3, 0.1]], k=2)
    base = [torch.ones(1, 2), torch.ones(1, 2)]
    a = combine(base + [torch.full((1, 2), 100.0)], decision)
    b = combine(base + [torch.full((1, 2), -7.0)], decision)
    assert torch.equal(a, b)


def test_combine_missing_selected_output_is_an_error():
    decision = decision_for([[0.7, 0.3]], k=2)
    with pytest.raises(RoutingError):
        combine([torch.ones(1, 2), None], decision)


def test_dispatch_is_sparse():
    torch.manual_seed(0)
    cfg = GateConfig(num_experts=6, top_k=2, gate_noise=1.0)
    router = NoisyTopKRouter(16, cfg)
    nn.init.normal_(router.gate.weight)
    experts = nn.ModuleList([LowRankExpert(16, 4) for _ in range(6)])
    tokens = torch.randn(3, 10, 16)

    decision = router.eval()(tokens)
    outputs, evaluations = dispatch(tokens, experts, decision)
    assert evaluations == 2 * 3 * 10

    dense = [expert(tokens) for expert in experts]
    assert torch.allclose(combine(outputs, decision), combine(dense, decision), atol=1e-6)


def test_untrained_router_is_symmetric():
    cfg = GateConfig(num_experts=6, top_k=2, gate_noise=1.0)
    decision = NoisyTopKRouter(16, cfg).eval()(torch.randn(4, 16))
    assert torch.allclose(decision.probs, torch.full((4, 6), 1 / 6))
    assert math.isclose(cfg.sigma, 1 / 6)
