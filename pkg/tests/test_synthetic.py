import numpy as np
import pytest
import torch
import torch.nn as nn

from dataset.splits import SplitPlan, check_disjoint, make_splits, plan_entries, plan_splits
from dataset.storage import read_manifest
from dataset.synthetic import (
    SequenceSpec,
    generate_sequence,
    rgb_contrast,
    sample_spec,
    stack_samples,
    validate_trajectory,
)
from meme.errors import ConfigurationError
from models.config import DEGRADATIONS, MODALITIES, ExperimentConfig
from tests.conftest import make_stored

MOVING = SequenceSpec(
    length=8, frame_size=32, box_size=(10, 12), start=(12.0, 14.0), velocity=(1.0, 0.5),
    wobble=1.0, appearance_seed=4, background_seed=5, distractors=1,
)


@pytest.mark.parametrize("modality", MODALITIES)
def test_generation_is_deterministic(modality):
    a = stack_samples(generate_sequence(MOVING, modality, seed=7))
    b = stack_samples(generate_sequence(MOVING, modality, seed=7))
    for left, right in zip(a, b):
        assert np.array_equal(left, right)


@pytest.mark.parametrize("modality", MODALITIES)
def test_frames_are_aligned_and_in_range(modality):
    samples = generate_sequence(MOVING, modality, seed=1)
    assert len(samples) == MOVING.length
    for t, sample in enumerate(samples):
        assert sample.frame_index == t
        assert sample.rgb.shape == (3, 32, 32)
        assert sample.x.shape[-2:] == sample.rgb.shape[-2:]
        assert sample.x.min() >= 0.0 and sample.x.max() <= 1.0
        x, y, w, h = sample.gt_box
        assert x >= 0 and y >= 0 and x + w <= 32 and y + h <= 32


def test_static_scene_has_no_events():
    spec = MOVING.model_copy(update={"velocity": (0.0, 0.0), "wobble": 0.0, "distractors": 0})
    samples = generate_sequence(spec, "event", seed=3)
    for sample in samples:
        assert np.count_nonzero(sample.x) == 0


def test_moving_object_fires_events_on_its_edges():
    samples = generate_sequence(MOVING.model_copy(update={"distractors": 0}), "event", seed=3)
    events = samples[3].x
    assert events[2].any()
    assert np.array_equal(events[2], np.logical_or(events[0], events[1]).astype(events.dtype))
    assert events.mean() < 0.5


def test_thermal_signature_survives_darkness():
    clean_spec = MOVING.model_copy(update={"degradation": "none"})
    dark_spec = MOVING.model_copy(update={"degradation": "darkness", "degradation_strength": 0.9})
    clean = generate_sequence(clean_spec, "thermal", seed=11)
    dark = generate_sequence(dark_spec, "thermal", seed=11)
    for c, d in zip(clean, dark):
        assert np.array_equal(c.x, d.x)
        assert rgb_contrast(d.rgb, d.gt_box) < 0.1
        assert rgb_contrast(d.rgb, d.gt_box) < rgb_contrast(c.rgb, c.gt_box)


def test_depth_object_has_a_sharp_boundary():
    sample = generate_sequence(MOVING.model_copy(update={"distractors": 0}), "depth", seed=2)[0]
    x, y, w, h = sample.gt_box
    depth = sample.x[0]
    inside = depth[y:y + h, x:x + w]
    assert np.ptp(inside) == 0.0
    assert inside.mean() - depth[y + h // 2, x - 1] > 0.25


def test_trajectory_leaving_the_frame_is_rejected():
    spec = MOVING.model_copy(update={"velocity": (3.0, 0.0)})
    with pytest.raises(ConfigurationError, match="leaves the frame"):
        validate_trajectory(spec)
    with pytest.raises(ConfigurationError):
        generate_sequence(spec, "depth", seed=0)


def test_unknown_modality_is_rejected():
    with pytest.raises(ConfigurationError):
        generate_sequence(MOVING, "lidar", seed=0)


@pytest.mark.parametrize("profile", ["standard", "ood", "clean"])
def test_sampled_specs_are_valid(cfg, profile):
    rng = np.random.default_rng(0)
    for modality in MODALITIES:
        for _ in range(10):
            spec = sample_spec(rng, cfg, modality, profile)
            validate_trajectory(spec)
            if profile == "clean":
                assert spec.degradation == "none"
            else:
                assert spec.degradation == DEGRADATIONS[modality]
                assert cfg.degradation_min <= spec.degradation_strength <= 1.0


def summary_features(x: np.ndarray) -> np.ndarray:
    """Sharpness, share of empty pixels and mean intensity of one X frame."""
    sharpness = max(np.abs(np.diff(x, axis=-1)).max(), np.abs(np.diff(x, axis=-2)).max())
    return np.array([sharpness, (x == 0).mean(), x.mean()])


def classifier_data(cfg, seeds):
    features, labels = [], []
    for label, modality in enumerate(MODALITIES):
        for seed in seeds:
            seq = make_stored(cfg, modality, seed)
            for frame in seq.x:
                features.append(summary_features(frame.astype(np.float64) / 255.0))
                labels.append(label)
    return torch.tensor(np.array(features), dtype=torch.float64), torch.tensor(labels)


def test_modalities_are_linearly_separable(cfg):
    train_x, train_y = classifier_data(cfg, seeds=range(200, 206))
    test_x, test_y = classifier_data(cfg, seeds=range(300, 304))
    mean, std = train_x.mean(0), train_x.std(0) + 1e-9

    torch.manual_seed(0)
    classifier = nn.Linear(3, len(MODALITIES)).double()
    optimizer = torch.optim.LBFGS(classifier.parameters(), max_iter=200, line_search_fn="strong_wolfe")

    def closure():
        optimizer.zero_grad()
        loss = nn.functional.cross_entropy(classifier((train_x - mean) / std), train_y)
        loss = loss + 1e-3 * classifier.weight.pow(2).sum()
        loss.backward()
        return loss

    optimizer.step(closure)
    with torch.no_grad():
        accuracy = (classifier((test_x - mean) / std).argmax(-1) == test_y).double().mean().item()
    assert accuracy >= 0.99


def test_default_splits_have_the_configured_sizes():
    plans = {plan.name: plan for plan in plan_splits(ExperimentConfig())}
    train = plan_entries(plans["train"])
    test = plan_entries(plans["test"])
    assert (len(train), len(test)) == (90, 30)
    for modality in MODALITIES:
        assert sum(e.modality == modality for e in train) == 30
        assert sum(e.modality == modality for e in test) == 10
    assert not {e.sequence_id for e in train} & {e.sequence_id for e in test}
    assert not {e.seed for e in train} & {e.seed for e in test}


def test_overlapping_seed_ranges_are_rejected():
    with pytest.raises(ConfigurationError, match="overlap"):
        plan_splits(ExperimentConfig(test_seed_base=1_010))
    with pytest.raises(ConfigurationError):
        check_disjoint([SplitPlan(name="a", count=5, seed_base=0), SplitPlan(name="b", count=5, seed_base=4)])


def test_make_splits_writes_every_split(cfg, tmp_path):
    root = tmp_path / "data"
    manifests = make_splits(cfg, root)
    assert {name: len(entries) for name, entries in manifests.items()} == {
        "train": 6, "test": 3, "ood": 3, "pretrain": 3, "pretrain_test": 2,
    }
    train = read_manifest(root, "train")
    assert [e.sequence_id for e in train] == [e.sequence_id for e in manifests["train"]]
    for entry in train:
        assert (root / entry.path / "rgb.npy").exists()
        assert entry.degradation == DEGRADATIONS[entry.modality]
    assert all(e.degradation == "none" for e in read_manifest(root, "pretrain"))
