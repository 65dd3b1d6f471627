import hypothesis
import numpy as np
import pytest
import torch

from dataset.storage import ManifestEntry, StoredSequence, to_uint8
from dataset.synthetic import generate_sequence, sample_spec, stack_samples
from meme.backbone import RGBBackbone
from models.config import MODALITIES, ExperimentConfig

hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.load_profile("fast")


def tiny_config(tmp_path, **overrides) -> ExperimentConfig:
    """A configuration small enough to train in seconds on a CPU."""
    values = dict(
        out_dir=str(tmp_path / "run"),
        data_dir=str(tmp_path / "data"),
        patch_size=8,
        embed_dim=16,
        template_size=16,
        search_size=32,
        frame_size=32,
        rgb_dim=16,
        backbone_depth=1,
        backbone_heads=2,
        backbone_mlp_ratio=2,
        rank=4,
        experts_per_modality=2,
        top_k=2,
        batch_size=6,
        epochs=2,
        lr_drop_epoch=1,
        pairs_per_sequence=3,
        pretrain_epochs=1,
        pretrain_iou_floor=0.0,
        sequence_length=6,
        distractors=1,
        train_per_modality=2,
        test_per_modality=1,
        ood_per_modality=1,
        pretrain_sequences=3,
        pretrain_test_sequences=2,
        ablation_seeds=[0],
    )
    values.update(overrides)
    return ExperimentConfig(**values)


def make_stored(cfg: ExperimentConfig, modality: str, seed: int, split: str = "train") -> StoredSequence:
    """Render one sequence straight into memory, quantized as on disk."""
    spec = sample_spec(np.random.default_rng(seed), cfg, modality)
    rgb, x, boxes, visible = stack_samples(generate_sequence(spec, modality, seed))
    sequence_id = f"{split}_{modality}_{seed}"
    entry = ManifestEntry(
        path=f"{split}/{sequence_id}", modality=modality, split=split, sequence_id=sequence_id,
        seed=seed, degradation=spec.degradation, strength=spec.degradation_strength,
    )
    return StoredSequence(entry=entry, rgb=to_uint8(rgb), x=to_uint8(x), boxes=boxes, visible=visible)


@pytest.fixture
def cfg(tmp_path) -> ExperimentConfig:
    return tiny_config(tmp_path)


@pytest.fixture
def sequences(cfg):
    return [
        make_stored(cfg, modality, seed=100 + 10 * i + j)
        for i, modality in enumerate(MODALITIES)
        for j in range(2)
    ]


@pytest.fixture
def backbone(cfg) -> RGBBackbone:
    torch.manual_seed(0)
    return RGBBackbone(cfg).freeze()
