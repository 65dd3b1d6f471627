"""
Configuration Models Module

This module defines the pydantic models that validate experiment configuration.
A configuration file is a flat YAML mapping; every key maps onto one field of
ExperimentConfig and unknown keys are rejected before any command has side effects.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

MODALITIES: Tuple[str, ...] = ("depth", "thermal", "event")

DEGRADATIONS: Dict[str, str] = {
    "depth": "occlusion",
    "thermal": "darkness",
    "event": "blur",
}


class GateConfig(BaseModel):
    """
    Router configuration.

    Attributes:
        num_experts (int): Number of routed experts |E|
        top_k (int): Experts selected per token
        gate_noise (float): Noise scale; the gate standard deviation is gate_noise / num_experts

    Example:
        {
            "num_experts": 6,
            "top_k": 2,
            "gate_noise": 1.0
        }
    """
    model_config = ConfigDict(frozen=True)

    num_experts: int = Field(6, ge=1)
    top_k: int = Field(2, ge=1)
    gate_noise: float = Field(1.0, ge=0.0)

    @model_validator(mode="after")
    def _check_top_k(self):
        if self.top_k > self.num_experts:
            raise ValueError(
                f"top_k={self.top_k} exceeds the number of experts ({self.num_experts})"
            )
        return self

    @property
    def sigma(self) -> float:
        """Standard deviation of the gate noise distribution."""
        return self.gate_noise / self.num_experts


class TrainConfig(BaseModel):
    """
    Stage-2 training configuration.

    Attributes:
        batch_size (int): Samples per optimization step
        lr (float): Initial learning rate
        epochs (int): Number of epochs
        lr_drop_epoch (int): Epoch at which the learning rate is divided
        lr_drop_factor (float): Divisor applied at lr_drop_epoch
        weight_decay (float): Decoupled weight decay of the optimizer
        lambda_balance (float): Weight of the balance loss inside the generalist objective
        top_k (int): Experts selected per token
        experts_per_modality (int): Size of every modality's expert set
        rank (int): Low-rank latent width K
        pairs_per_sequence (int): Random template/search pairs drawn per sequence per epoch
        seed (int): Seed of every randomness stream
        out_dir (str): Output directory
    """
    model_config = ConfigDict(frozen=True)

    batch_size: int = Field(64, ge=1)
    lr: float = Field(4e-4, gt=0.0)
    epochs: int = Field(60, ge=1)
    lr_drop_epoch: int = Field(48, ge=0)
    lr_drop_factor: float = Field(10.0, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    lambda_balance: float = Field(0.01, ge=0.0)
    top_k: int = Field(2, ge=1)
    experts_per_modality: int = Field(2, ge=1)
    rank: int = Field(8, ge=1)
    pairs_per_sequence: int = Field(16, ge=1)
    num_workers: int = Field(0, ge=0)
    seed: int = 0
    out_dir: str = "runs/default"

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.lr_drop_epoch >= self.epochs:
            raise ValueError(
                f"lr_drop_epoch={self.lr_drop_epoch} must be smaller than epochs={self.epochs}"
            )
        return self


class ExperimentConfig(BaseModel):
    """
    Flat experiment configuration covering data, model, training and evaluation.

    Every command validates one of these before touching the filesystem. Field
    groups are listed in the order they appear in a configuration file.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    # run
    seed: int = 0
    out_dir: str = "runs/default"
    data_dir: str = "data/synthetic"

    # tokenizer
    patch_size: int = Field(8, ge=1)
    embed_dim: int = Field(64, ge=1)
    template_size: int = Field(32, ge=1)
    search_size: int = Field(64, ge=1)

    # frozen RGB backbone
    rgb_dim: int = Field(64, ge=1)
    backbone_depth: int = Field(4, ge=1)
    backbone_heads: int = Field(4, ge=1)
    backbone_mlp_ratio: int = Field(2, ge=1)

    # mixture of modal experts
    rank: int = Field(8, ge=1)
    experts_per_modality: int = Field(2, ge=1)
    top_k: int = Field(2, ge=1)
    gate_noise: float = Field(1.0, ge=0.0)
    use_shared: bool = True
    use_specific: bool = True

    # objectives
    lambda_balance: float = Field(0.01, ge=0.0)
    moe_granularity: Literal["sample", "token"] = "sample"
    focal_weight: float = Field(1.0, ge=0.0)
    l1_weight: float = Field(5.0, ge=0.0)
    giou_weight: float = Field(2.0, ge=0.0)

    # stage 2 training
    batch_size: int = Field(64, ge=1)
    lr: float = Field(4e-4, gt=0.0)
    epochs: int = Field(60, ge=1)
    lr_drop_epoch: int = Field(48, ge=0)
    lr_drop_factor: float = Field(10.0, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    pairs_per_sequence: int = Field(16, ge=1)
    num_workers: int = Field(0, ge=0)

    # stage 1 pretraining
    pretrain_epochs: int = Field(30, ge=1)
    pretrain_lr: float = Field(1e-3, gt=0.0)
    pretrain_iou_floor: float = Field(0.5, ge=0.0, le=1.0)

    # synthetic data
    sequence_length: int = Field(32, ge=2)
    frame_size: int = Field(64, ge=8)
    distractors: int = Field(2, ge=0)
    degradation_min: float = Field(0.5, ge=0.0, le=1.0)
    degradation_max: float = Field(0.9, ge=0.0, le=1.0)
    train_per_modality: int = Field(30, ge=1)
    test_per_modality: int = Field(10, ge=1)
    ood_per_modality: int = Field(5, ge=0)
    pretrain_sequences: int = Field(60, ge=1)
    pretrain_test_sequences: int = Field(10, ge=1)
    train_seed_base: int = Field(1_000, ge=0)
    test_seed_base: int = Field(5_000, ge=0)
    ood_seed_base: int = Field(9_000, ge=0)
    pretrain_seed_base: int = Field(20_000, ge=0)
    pretrain_test_seed_base: int = Field(30_000, ge=0)

    # evaluation
    precision_threshold: float = Field(20.0, ge=0.0)
    ablation_seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])

    # gradient check
    gradcheck_eps: float = Field(1e-4, gt=0.0)
    gradcheck_rtol: float = Field(1e-3, gt=0.0)

    @field_validator("ablation_seeds")
    @classmethod
    def _non_empty_seeds(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("ablation_seeds must list at least one seed")
        return value

    @model_validator(mode="after")
    def _check_consistency(self):
        for name in ("template_size", "search_size"):
            size = getattr(self, name)
            if size % self.patch_size:
                raise ValueError(f"{name}={size} is not divisible by patch_size={self.patch_size}")
        if self.search_size != self.frame_size:
            raise ValueError("search_size must equal frame_size (the search region is the whole frame)")
        if self.template_size > self.frame_size:
            raise ValueError("template_size cannot exceed frame_size")
        if self.rgb_dim % self.backbone_heads:
            raise ValueError("rgb_dim must be divisible by backbone_heads")
        if self.rank >= self.embed_dim:
            raise ValueError(f"rank={self.rank} must be smaller than embed_dim={self.embed_dim}")
        if self.use_specific and self.top_k > self.num_experts:
            raise ValueError(f"top_k={self.top_k} exceeds the number of experts ({self.num_experts})")
        if self.lr_drop_epoch >= self.epochs:
            raise ValueError("lr_drop_epoch must be smaller than epochs")
        if self.degradation_min > self.degradation_max:
            raise ValueError("degradation_min cannot exceed degradation_max")
        return self

    @property
    def num_experts(self) -> int:
        """Routed expert count: one disjoint set per modality."""
        return len(MODALITIES) * self.experts_per_modality

    def gate_config(self) -> GateConfig:
        return GateConfig(num_experts=self.num_experts, top_k=self.top_k, gate_noise=self.gate_noise)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            lr=self.lr,
            epochs=self.epochs,
            lr_drop_epoch=self.lr_drop_epoch,
            lr_drop_factor=self.lr_drop_factor,
            weight_decay=self.weight_decay,
            lambda_balance=self.lambda_balance,
            top_k=self.top_k,
            experts_per_modality=self.experts_per_modality,
            rank=self.rank,
            pairs_per_sequence=self.pairs_per_sequence,
            num_workers=self.num_workers,
            seed=self.seed,
            out_dir=self.out_dir,
        )

    def resolved(self) -> Dict[str, Any]:
        """All fields with defaults materialized, in declaration order."""
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form of the resolved configuration."""
        canonical = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def write_resolved(self, directory: Path) -> Path:
        """Write resolved_config.yaml into directory and return its path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "resolved_config.yaml"
        with open(path, "w") as f:
            yaml.safe_dump(self.resolved(), f, sort_keys=False)
        return path


def load_config(path: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """
    Load and validate an experiment configuration.

    Args:
        path (str, optional): Flat YAML file; defaults are used when omitted
        **overrides: Values that replace file entries (None values are ignored)

    Returns:
        ExperimentConfig: Validated configuration

    Raises:
        pydantic.ValidationError: Unknown key or invalid value
        ValueError: The file is not a flat mapping
    """
    data: Dict[str, Any] = {}
    if path:
        with open(path, "r") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"Config file {path} must contain a flat key-value mapping")
        for key, value in loaded.items():
            if isinstance(value, dict):
                raise ValueError(f"Config key '{key}' is nested; configuration files are flat")
        data.update(loaded)

    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)
