"""
Two-Stage Training

Stage 1 pretrains the RGB backbone on clean sequences and freezes it once it
passes the IoU gate. Stage 2 trains only the modal branch (embedding, experts,
fusion and prompts) on mixed-modality batches with the tracking loss plus the
generalist objective.

Checkpoint layout under <out_dir>:

    backbone.pt                   frozen backbone (stage 1)
    checkpoints/epoch_XXX.pt      modal branch after every stage-2 epoch
    meme.pt                       final modal branch
    train_log.csv                 one LossBreakdown row per step
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from dataset.pairs import BalancedModalitySampler, PairDataset
from dataset.storage import StoredSequence
from models.config import ExperimentConfig, TrainConfig
from .backbone import RGBBackbone
from .blocks import ExpertAssignment
from .errors import AcceptanceGateError, ConfigurationError, InvariantViolation, NumericalFailure
from .evaluation import evaluate_model
from .network import MemeTracker
from .objectives import generalist_loss, routing_losses, tracking_loss

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "epoch", "lr", "track", "moe", "imp", "load", "balance", "generalist", "total")
BACKBONE_FILE = "backbone.pt"
MEME_FILE = "meme.pt"


@dataclass
class PretrainResult:
    backbone: RGBBackbone
    mean_iou: float
    checkpoint: Path


@dataclass
class TrainResult:
    """
    Outcome of stage 2.

    Attributes:
        model (MemeTracker): Trained tracker
        checkpoint (Path): Final modal-branch checkpoint
        log_path (Path): Per-step training log
        lr_history (List[float]): Learning rate used in every epoch
    """
    model: MemeTracker
    checkpoint: Path
    log_path: Path
    lr_history: List[float] = field(default_factory=list)


def make_loader(sequences: Sequence[StoredSequence], cfg: ExperimentConfig, batch_size: int,
                seed: int) -> DataLoader:
    sampler = BalancedModalitySampler(sequences, cfg.pairs_per_sequence, batch_size, seed)
    dataset = PairDataset(sequences, cfg.template_size)
    return DataLoader(dataset, batch_sampler=sampler, num_workers=cfg.num_workers)


def batch_seed_for(seed: int, step: int) -> int:
    """Seed of the gate-noise stream of one optimization step."""
    return seed * 1_000_003 + step


def lr_schedule(optimizer: torch.optim.Optimizer, cfg: TrainConfig) -> torch.optim.lr_scheduler.MultiStepLR:
    """Constant learning rate divided once by lr_drop_factor at lr_drop_epoch."""
    return torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=[cfg.lr_drop_epoch], gamma=1.0 / cfg.lr_drop_factor,
    )


def save_backbone(path: Path, backbone: RGBBackbone, cfg: ExperimentConfig, mean_iou: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": backbone.state_dict(), "config": cfg.resolved(), "mean_iou": mean_iou}, path)
    return path


def load_backbone(path: Path) -> RGBBackbone:
    """
    Restore a frozen backbone.

    Raises:
        ConfigurationError: The checkpoint does not exist
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"No backbone checkpoint at {path}; run pretrain first")
    checkpoint = torch.load(path, map_location="cpu", weights_only=True)
    backbone = RGBBackbone(ExperimentConfig(**checkpoint["config"]))
    backbone.load_state_dict(checkpoint["state_dict"])
    return backbone.freeze()


def save_tracker(path: Path, model: MemeTracker, epoch: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "modal_state": model.modal_state_dict(),
        "assignment": model.assignment.to_dict(),
        "config": model.cfg.resolved(),
        "epoch": epoch,
    }, path)
    return path


def load_tracker(path: Path, backbone: RGBBackbone) -> MemeTracker:
    """
    Restore a trained tracker on top of a frozen backbone.

    Raises:
        ConfigurationError: Missing file, or a checkpoint whose expert
            assignment or parameters do not match its configuration
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"No tracker checkpoint at {path}; run train first")
    checkpoint = torch.load(path, map_location="cpu", weights_only=True)
    cfg = ExperimentConfig(**checkpoint["config"])
    model = MemeTracker(cfg, backbone)

    stored = ExpertAssignment.from_mapping(checkpoint["assignment"], cfg.num_experts)
    if stored != model.assignment:
        raise ConfigurationError(f"Checkpoint {path} has expert assignment {stored.to_dict()}")

    result = model.load_state_dict(checkpoint["modal_state"], strict=False)
    missing = [k for k in result.missing_keys if not k.startswith("backbone.")]
    if missing or result.unexpected_keys:
        raise ConfigurationError(
            f"Checkpoint {path} does not match the model: missing {missing}, unexpected {result.unexpected_keys}"
        )
    return model.eval()


def pretrain_rgb(cfg: ExperimentConfig, train: Sequence[StoredSequence], held_out: Sequence[StoredSequence],
                 out_dir: Path) -> PretrainResult:
    """
    Pretrain the RGB backbone, gate it on held-out clean sequences and freeze it.

    Args:
        cfg (ExperimentConfig): Backbone and pretraining settings
        train (Sequence[StoredSequence]): Clean training sequences (X is ignored)
        held_out (Sequence[StoredSequence]): Clean sequences for the IoU gate
        out_dir (Path): Where backbone.pt is written

    Returns:
        PretrainResult: frozen backbone, its held-out mean IoU and checkpoint path

    Raises:
        AcceptanceGateError: Held-out mean IoU does not exceed pretrain_iou_floor
        NumericalFailure: The loss became NaN
    """
    torch.manual_seed(cfg.seed)
    backbone = RGBBackbone(cfg)
    optimizer = torch.optim.AdamW(backbone.parameters(), lr=cfg.pretrain_lr, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=[max(1, int(0.8 * cfg.pretrain_epochs))], gamma=0.1,
    )
    loader = make_loader(train, cfg, cfg.batch_size, cfg.seed)

    step = 0
    for epoch in range(cfg.pretrain_epochs):
        loader.batch_sampler.set_epoch(epoch)
        backbone.train()
        bar = tqdm(loader, desc=f"pretrain {epoch + 1}/{cfg.pretrain_epochs}", leave=False)
        for batch in bar:
            head = backbone(batch["template_rgb"], batch["search_rgb"])
            loss = tracking_loss(head, batch["box"], cfg.focal_weight, cfg.l1_weight, cfg.giou_weight)
            if not torch.isfinite(loss):
                batch_seed = batch_seed_for(cfg.seed, step)
                raise NumericalFailure(f"Pretraining loss is {float(loss)} at step {step} (batch seed {batch_seed})",
                                       batch_seed=batch_seed)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            bar.set_postfix(loss=f"{float(loss):.4f}")
            step += 1
        scheduler.step()

    backbone.freeze()
    metrics, _, _ = evaluate_model(backbone, held_out, cfg.template_size, cfg.precision_threshold)
    logger.info(f"Pretrained backbone: held-out mean IoU {metrics.mean_iou:.4f}")
    if metrics.mean_iou <= cfg.pretrain_iou_floor:
        raise AcceptanceGateError(
            f"Backbone mean IoU {metrics.mean_iou:.4f} on {metrics.sequences} clean sequences does not exceed "
            f"the floor {cfg.pretrain_iou_floor} (SR {metrics.success:.4f}, PR {metrics.precision_rate:.4f}); "
            f"increase pretrain_epochs or pretrain_sequences"
        )

    checkpoint = save_backbone(Path(out_dir) / BACKBONE_FILE, backbone, cfg, metrics.mean_iou)
    print(f"✅ Backbone frozen (mean IoU {metrics.mean_iou:.4f}) → {checkpoint}")
    return PretrainResult(backbone=backbone, mean_iou=metrics.mean_iou, checkpoint=checkpoint)


def check_disjoint_parameters(model: MemeTracker, optimizer: torch.optim.Optimizer):
    """
    Raises:
        InvariantViolation: The optimizer holds a backbone parameter
    """
    frozen = {id(p) for p in model.backbone.parameters()}
    optimized = {id(p) for group in optimizer.param_groups for p in group["params"]}
    shared = frozen & optimized
    if shared:
        raise InvariantViolation(f"Optimizer holds {len(shared)} backbone parameter(s)")


def check_frozen(before: Dict[str, bytes], after: Dict[str, bytes]):
    """
    Raises:
        InvariantViolation: Any backbone tensor changed
    """
    changed = sorted(name for name in before if before[name] != after.get(name))
    if changed or before.keys() != after.keys():
        raise InvariantViolation(f"Backbone changed during training: {changed[:5]}")


def train_meme(cfg: ExperimentConfig, backbone: RGBBackbone, train: Sequence[StoredSequence], out_dir: Path,
               model: Optional[MemeTracker] = None) -> TrainResult:
    """
    Train the modal branch on top of a frozen backbone.

    Every batch holds an equal share of each modality, one X stream per sample.
    The step loss is track + moe + lambda_balance * (imp + load); only
    modal-branch parameters are optimized.

    Args:
        cfg (ExperimentConfig): Model and stage-2 settings
        backbone (RGBBackbone): Frozen backbone
        train (Sequence[StoredSequence]): Labeled training sequences
        out_dir (Path): Checkpoint and log directory
        model (MemeTracker, optional): Tracker to continue from; built from cfg.seed otherwise

    Returns:
        TrainResult: trained model, checkpoint, log path and per-epoch learning rates

    Raises:
        NumericalFailure: A loss became NaN; carries the step's batch seed
        InvariantViolation: The backbone changed or was handed to the optimizer
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model is None:
        torch.manual_seed(cfg.seed)
        model = MemeTracker(cfg, backbone)
    before = model.backbone.state_digest()
    train_cfg = cfg.train_config()

    optimizer = torch.optim.AdamW(model.modal_parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    check_disjoint_parameters(model, optimizer)
    scheduler = lr_schedule(optimizer, train_cfg)
    loader = make_loader(train, cfg, train_cfg.batch_size, train_cfg.seed)
    generator = torch.Generator()

    log_path = out_dir / "train_log.csv"
    lr_history: List[float] = []
    step = 0
    with open(log_path, "w", newline="") as log_file:
        writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
        writer.writeheader()

        for epoch in range(train_cfg.epochs):
            loader.batch_sampler.set_epoch(epoch)
            model.train()
            lr = optimizer.param_groups[0]["lr"]
            lr_history.append(lr)

            bar = tqdm(loader, desc=f"train {epoch + 1}/{cfg.epochs}", leave=False)
            for batch in bar:
                batch_seed = batch_seed_for(train_cfg.seed, step)
                generator.manual_seed(batch_seed)

                out = model(batch["template_rgb"], batch["template_x"], batch["search_rgb"], batch["search_x"],
                            generator=generator)
                track = tracking_loss(out.head, batch["box"], cfg.focal_weight, cfg.l1_weight, cfg.giou_weight)
                moe, imp, load = routing_losses(out.decisions, batch["modality"], model.assignment,
                                                model.gate_cfg, cfg.moe_granularity)
                losses = generalist_loss(track, moe, imp, load, train_cfg.lambda_balance)
                if not losses.is_finite():
                    raise NumericalFailure(
                        f"Non-finite loss at epoch {epoch}, step {step}: {losses.as_row()}", batch_seed=batch_seed,
                    )
                losses.check()

                optimizer.zero_grad(set_to_none=True)
                losses.total.backward()
                optimizer.step()

                row = losses.as_row()
                row.pop("lam")
                writer.writerow({"step": step, "epoch": epoch, "lr": lr, **row})
                bar.set_postfix(total=f"{row['total']:.4f}", moe=f"{row['moe']:.3f}")
                step += 1

            scheduler.step()
            save_tracker(out_dir / "checkpoints" / f"epoch_{epoch:03d}.pt", model, epoch)
            logger.info(f"Epoch {epoch}: lr={lr:g}, steps so far {step}")

    check_frozen(before, model.backbone.state_digest())
    checkpoint = save_tracker(out_dir / MEME_FILE, model, cfg.epochs - 1)
    model.eval()
    print(f"✅ Modal branch trained for {cfg.epochs} epochs → {checkpoint}")
    return TrainResult(model=model, checkpoint=checkpoint, log_path=log_path, lr_history=lr_history)
