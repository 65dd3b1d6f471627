import inspect
import logging

import numpy as np
import pytest
import torch
import torch.nn as nn

from meme.network import (
    MemeTracker,
    SequenceTracker,
    build_tracker,
    crop_window,
    parameter_report,
    run_sequence,
)


def frames(batch=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return (
        torch.rand(batch, 3, 16, 16, generator=g),
        torch.rand(batch, 1, 16, 16, generator=g),
        torch.rand(batch, 3, 32, 32, generator=g),
        torch.rand(batch, 1, 32, 32, generator=g),
    )


def randomize_prompts(model: MemeTracker, seed: int = 0):
    torch.manual_seed(seed)
    for layer in model.layers:
        nn.init.normal_(layer.prompt.w8.weight, std=0.5)


@pytest.mark.parametrize("fn", [MemeTracker.forward, SequenceTracker.initialize, SequenceTracker.track])
def test_no_entry_point_takes_a_modality(fn):
    assert not any("modal" in name for name in inspect.signature(fn).parameters)


def test_one_layer_per_injection_point(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0).eval()
    assert len(model.layers) == backbone.depth + 1
    out = model(*frames())
    assert len(out.decisions) == len(model.layers)
    assert out.head.score.shape == (2, 4, 4)
    # batch · top-k · (template + search tokens) · layers
    assert out.evaluations == 2 * 2 * (4 + 16) * 2


def test_untrained_tracker_reproduces_the_backbone(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0).eval()
    template_rgb, template_x, search_rgb, search_x = frames()
    prompted = model(template_rgb, template_x, search_rgb, search_x).head
    baseline = backbone(template_rgb, search_rgb)
    assert torch.equal(prompted.score, baseline.score)
    assert torch.equal(prompted.size, baseline.size)
    assert torch.equal(prompted.offset, baseline.offset)


def test_silenced_prompts_reproduce_the_backbone(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0).eval()
    randomize_prompts(model)
    template_rgb, template_x, search_rgb, search_x = frames()
    baseline = backbone(template_rgb, search_rgb)

    prompted = model(template_rgb, template_x, search_rgb, search_x).head
    assert not torch.allclose(prompted.score, baseline.score, atol=1e-4)

    model.silence_prompts()
    silenced = model(template_rgb, template_x, search_rgb, search_x).head
    assert torch.equal(silenced.score, baseline.score)


def test_prompts_depend_on_the_auxiliary_frame(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0).eval()
    randomize_prompts(model)
    template_rgb, template_x, search_rgb, search_x = frames()
    a = model(template_rgb, template_x, search_rgb, search_x).head.score
    b = model(template_rgb, template_x, search_rgb, 1.0 - search_x).head.score
    assert not torch.allclose(a, b, atol=1e-4)


def test_backbone_stays_frozen_while_training(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0)
    before = backbone.state_digest()
    model.train()
    assert not model.backbone.training
    assert all(layer.training for layer in model.layers)

    optimizer = torch.optim.SGD(model.modal_parameters(), lr=0.1)
    out = model(*frames(), generator=torch.Generator().manual_seed(0))
    out.head.score.pow(2).mean().backward()
    assert all(p.grad is None for p in model.backbone.parameters())
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in model.modal_parameters())
    optimizer.step()
    assert backbone.state_digest() == before


def test_modal_state_excludes_the_backbone(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0)
    keys = model.modal_state_dict().keys()
    assert keys and not any(k.startswith("backbone.") for k in keys)
    assert sum(p.numel() for p in model.modal_parameters()) == sum(
        v.numel() for k, v in model.state_dict().items() if not k.startswith("backbone.")
    )


def test_build_tracker_is_seeded(cfg, backbone):
    a = build_tracker(cfg, backbone, seed=3).modal_state_dict()
    b = build_tracker(cfg, backbone, seed=3).modal_state_dict()
    c = build_tracker(cfg, backbone, seed=4).modal_state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_eval_forward_is_deterministic(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0).eval()
    randomize_prompts(model)
    inputs = frames()
    assert torch.equal(model(*inputs).head.score, model(*inputs).head.score)


def test_parameter_report(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0)
    report = parameter_report(model)
    assert report["backbone_frozen"] == sum(p.numel() for p in backbone.parameters())
    assert report["modal_trainable"] == sum(p.numel() for p in model.modal_parameters())
    # down 16x4 + up 4x4, both with bias
    assert report["specialized_expert"] == 16 * 4 + 4 + 4 * 4 + 4
    assert report["shared_expert"] > report["specialized_expert"]


def test_crop_window_clamps_inside_the_frame():
    assert crop_window((10, 12, 8, 8), 16, 32, 32) == (6, 8)
    assert crop_window((0, 0, 4, 4), 16, 32, 32) == (0, 0)
    assert crop_window((30, 30, 2, 2), 16, 32, 32) == (16, 16)


@pytest.mark.parametrize("use_modal", [True, False])
def test_run_sequence_reports_the_init_box_first(cfg, backbone, sequences, use_modal):
    model = build_tracker(cfg, backbone, seed=0) if use_modal else backbone
    seq = sequences[0]
    tracker = SequenceTracker(model, cfg.template_size)
    boxes, confidences = run_sequence(tracker, seq.rgb, seq.x, seq.boxes[0])

    assert boxes.shape == (seq.length, 4)
    assert np.array_equal(boxes[0], seq.boxes[0])
    assert confidences[0] == 1.0
    assert ((confidences[1:] > 0) & (confidences[1:] < 1)).all()
    assert (boxes[1:, 2:] >= 0).all()


def test_track_requires_initialize(cfg, backbone):
    tracker = SequenceTracker(backbone, cfg.template_size)
    with pytest.raises(RuntimeError):
        tracker.track(np.zeros((3, 32, 32), np.uint8), np.zeros((1, 32, 32), np.uint8))


def test_silencing_one_layer_leaves_earlier_prompts_alone(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0).eval()
    randomize_prompts(model)
    prompts = {}
    for index, layer in enumerate(model.layers):
        layer.prompt.register_forward_hook(lambda module, args, out, i=index: prompts.__setitem__(i, out.detach()))

    inputs = frames()
    model(*inputs)
    before = dict(prompts)
    model.layers[1].prompt.silence()
    model(*inputs)

    assert torch.equal(prompts[0], before[0])
    assert torch.count_nonzero(prompts[1]) == 0
    assert torch.count_nonzero(before[1]) > 0


def test_build_tracker_logs_the_parameter_report(cfg, backbone, caplog):
    with caplog.at_level(logging.INFO, logger="meme.network"):
        build_tracker(cfg, backbone, seed=0)
    assert "Built 2 MeME layers" in caplog.text
    assert "modal_trainable" in caplog.text
