"""
Dataset Splits

Plans the train/test/ood/pretrain splits with disjoint seed ranges, renders
every sequence and writes the manifest.
"""

import logging
from pathlib import Path
from typing import Dict, List

import numpy as np
from pydantic import BaseModel, Field
from tqdm import tqdm

from meme.errors import ConfigurationError
from models.config import MODALITIES, ExperimentConfig
from .storage import ManifestEntry, write_manifest, write_sequence
from .synthetic import Profile, generate_sequence, sample_spec, stack_samples

logger = logging.getLogger(__name__)


class SplitPlan(BaseModel):
    """
    How many sequences a split holds and where its seeds come from.

    Attributes:
        name (str): Split name
        count (int): Total sequences; modalities are assigned in equal contiguous blocks
        seed_base (int): First seed; the split uses [seed_base, seed_base + count)
        profile (str): Generator profile
    """
    name: str
    count: int = Field(ge=0)
    seed_base: int = Field(ge=0)
    profile: Profile = "standard"

    @property
    def seed_range(self) -> range:
        return range(self.seed_base, self.seed_base + self.count)

    def modality_of(self, index: int) -> str:
        per_modality = max(1, -(-self.count // len(MODALITIES)))
        return MODALITIES[min(index // per_modality, len(MODALITIES) - 1)]


def plan_splits(cfg: ExperimentConfig) -> List[SplitPlan]:
    """Split plans derived from the configuration, checked for seed overlap."""
    n = len(MODALITIES)
    plans = [
        SplitPlan(name="train", count=n * cfg.train_per_modality, seed_base=cfg.train_seed_base),
        SplitPlan(name="test", count=n * cfg.test_per_modality, seed_base=cfg.test_seed_base),
        SplitPlan(name="ood", count=n * cfg.ood_per_modality, seed_base=cfg.ood_seed_base, profile="ood"),
        SplitPlan(name="pretrain", count=cfg.pretrain_sequences, seed_base=cfg.pretrain_seed_base, profile="clean"),
        SplitPlan(name="pretrain_test", count=cfg.pretrain_test_sequences,
                  seed_base=cfg.pretrain_test_seed_base, profile="clean"),
    ]
    check_disjoint(plans)
    return plans


def check_disjoint(plans: List[SplitPlan]):
    """
    Raises:
        ConfigurationError: Two splits share a seed
    """
    ordered = sorted((p for p in plans if p.count), key=lambda p: p.seed_base)
    for left, right in zip(ordered, ordered[1:]):
        if left.seed_range.stop > right.seed_base:
            raise ConfigurationError(
                f"Seed ranges of splits '{left.name}' [{left.seed_range.start}, {left.seed_range.stop}) "
                f"and '{right.name}' [{right.seed_range.start}, {right.seed_range.stop}) overlap"
            )


def plan_entries(plan: SplitPlan) -> List[ManifestEntry]:
    """Manifest entries of one split without rendering anything."""
    entries = []
    for index, seed in enumerate(plan.seed_range):
        modality = plan.modality_of(index)
        sequence_id = f"{plan.name}_{modality}_{index:04d}"
        entries.append(ManifestEntry(
            path=f"{plan.name}/{sequence_id}",
            modality=modality,
            split=plan.name,
            sequence_id=sequence_id,
            seed=seed,
            profile=plan.profile,
        ))
    return entries


def make_splits(cfg: ExperimentConfig, root: Path) -> Dict[str, List[ManifestEntry]]:
    """
    Render every split into root and write the manifest.

    Args:
        cfg (ExperimentConfig): Split sizes, seed bases and generator settings
        root (Path): Dataset directory

    Returns:
        Dict[str, List[ManifestEntry]]: Entries per split name

    Raises:
        ConfigurationError: Overlapping seed ranges
    """
    root = Path(root)
    manifests: Dict[str, List[ManifestEntry]] = {}
    for plan in plan_splits(cfg):
        entries = []
        for entry in tqdm(plan_entries(plan), desc=f"gen {plan.name}", leave=False):
            rng = np.random.default_rng(entry.seed)
            spec = sample_spec(rng, cfg, entry.modality, plan.profile)
            samples = generate_sequence(spec, entry.modality, entry.seed, entry.sequence_id)
            rgb, x, boxes, visible = stack_samples(samples)
            write_sequence(root / entry.path, rgb, x, boxes, visible)
            entries.append(entry.model_copy(update={
                "degradation": spec.degradation,
                "strength": spec.degradation_strength,
            }))
        manifests[plan.name] = entries
        print(f"✅ {plan.name}: {len(entries)} sequences")

    path = write_manifest(root, [e for entries in manifests.values() for e in entries])
    logger.info(f"Wrote manifest with {sum(map(len, manifests.values()))} sequences to {path}")
    return manifests
