"""
Command Handlers Module

One function per command-line command. Every handler takes a validated
ExperimentConfig, writes the resolved configuration next to its outputs,
prints the configuration hash and returns what it produced.

No handler on the inference path accepts a modality: evaluation and routing
reports feed the model RGB and X frames only, and modality labels from the
manifest are used solely to group scores.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dataset import load_split, make_splits
from meme.errors import ConfigurationError, InvariantViolation
from meme.evaluation import (
    evaluate_model,
    score_prediction_files,
    track_sequences,
    write_prediction_files,
)
from meme.gradcheck import GradcheckEntry, run_gradcheck
from meme.metrics import DatasetMetrics, plot_curves
from meme.network import build_tracker, parameter_report
from meme.route_report import RouteReport, collect_routes
from meme.trainer import (
    BACKBONE_FILE,
    MEME_FILE,
    PretrainResult,
    TrainResult,
    load_backbone,
    load_tracker,
    pretrain_rgb,
    train_meme,
)
from models.config import ExperimentConfig
from .reports import write_report

logger = logging.getLogger(__name__)

ABLATION_VARIANTS = (
    "full",
    "no_shared",
    "no_specific",
    "experts_per_modality=1",
    "experts_per_modality=2",
    "experts_per_modality=3",
)


def announce(cfg: ExperimentConfig, directory: Path) -> str:
    """Write resolved_config.yaml into directory and print the config hash."""
    path = cfg.write_resolved(directory)
    digest = cfg.config_hash()
    print(f"config hash {digest} ({path})")
    return digest


def cmd_gen_data(cfg: ExperimentConfig) -> Path:
    """
    Generate every synthetic split into data_dir.

    Returns:
        Path: the dataset directory
    """
    root = Path(cfg.data_dir)
    announce(cfg, root)
    manifests = make_splits(cfg, root)
    total = sum(len(entries) for entries in manifests.values())
    print(f"✅ Wrote {total} sequences to {root}")
    return root


def cmd_pretrain(cfg: ExperimentConfig) -> PretrainResult:
    out_dir = Path(cfg.out_dir)
    announce(cfg, out_dir)
    train = load_split(cfg.data_dir, "pretrain")
    held_out = load_split(cfg.data_dir, "pretrain_test")
    return pretrain_rgb(cfg, train, held_out, out_dir)


def cmd_train(cfg: ExperimentConfig) -> TrainResult:
    """
    Train the modal branch on the train split over the frozen backbone in out_dir.
    """
    out_dir = Path(cfg.out_dir)
    announce(cfg, out_dir)
    backbone = load_backbone(out_dir / BACKBONE_FILE)
    train = load_split(cfg.data_dir, "train")
    result = train_meme(cfg, backbone, train, out_dir)

    counts = parameter_report(result.model)
    share = counts["modal_trainable"] / max(counts["backbone_frozen"], 1)
    print(f"Trainable {counts['modal_trainable']:,} / frozen {counts['backbone_frozen']:,} ({share:.1%})")
    logger.info(f"Parameter report: {counts}")
    return result


def _degradation_table(prompted: Dict[str, float], baseline: Dict[str, float]) -> Dict[str, Dict[str, float]]:
    return {
        name: {"prompted": prompted[name], "baseline": baseline.get(name, float("nan"))}
        for name in prompted
    }


def cmd_eval(cfg: ExperimentConfig, checkpoint: Optional[str] = None,
             split: str = "test") -> Tuple[DatasetMetrics, DatasetMetrics]:
    """
    Blind evaluation of a trained tracker and the frozen RGB baseline.

    Args:
        cfg (ExperimentConfig): Paths and metric settings
        checkpoint (str, optional): Tracker checkpoint; defaults to <out_dir>/meme.pt
        split (str): Split to evaluate (test or ood)

    Returns:
        Tuple[DatasetMetrics, DatasetMetrics]: prompted and baseline metrics
    """
    out_dir = Path(cfg.out_dir)
    report_dir = out_dir / f"eval_{split}"
    digest = announce(cfg, report_dir)
    checkpoint = Path(checkpoint) if checkpoint else out_dir / MEME_FILE

    backbone = load_backbone(out_dir / BACKBONE_FILE)
    model = load_tracker(checkpoint, backbone)
    sequences = load_split(cfg.data_dir, split)
    entries = [seq.entry for seq in sequences]

    scored = {}
    for name, tracker, folder in (("prompted", model, "predictions"),
                                  ("rgb baseline", backbone, "predictions_baseline")):
        outputs = track_sequences(tracker, sequences, cfg.template_size, progress=True)
        write_prediction_files(report_dir / folder, sequences, outputs)
        scored[name] = score_prediction_files(cfg.data_dir, entries, report_dir / folder,
                                              cfg.precision_threshold)
    prompted, prompted_groups, _ = scored["prompted"]
    baseline, baseline_groups, _ = scored["rgb baseline"]

    plot_curves({"prompted": prompted, "rgb baseline": baseline}, report_dir)
    rows = {"prompted": prompted, "rgb baseline": baseline}
    with open(report_dir / "metrics.json", "w") as f:
        json.dump({name: m.as_row() for name, m in rows.items()}, f, indent=2)
    report = write_report(
        report_dir / "report.md", "eval_report.md.j2",
        split=split, config_hash=digest, checkpoint=str(checkpoint), threshold=cfg.precision_threshold,
        prompted=prompted, rows=rows, degradations=_degradation_table(prompted_groups, baseline_groups),
    )
    print(f"F {prompted.f_score:.4f} (baseline {baseline.f_score:.4f}), "
          f"mean IoU {prompted.mean_iou:.4f} (baseline {baseline.mean_iou:.4f})")
    print(f"✅ Report: {report}")
    return prompted, baseline


def cmd_route_report(cfg: ExperimentConfig, checkpoint: Optional[str] = None, untrained: bool = False,
                     split: str = "test") -> RouteReport:
    """
    Expert-selection fractions per modality and layer, with heatmaps.

    Args:
        untrained (bool): Use a freshly initialized modal branch (chance level)
    """
    out_dir = Path(cfg.out_dir)
    report_dir = out_dir / ("route_report_untrained" if untrained else "route_report")
    digest = announce(cfg, report_dir)

    backbone = load_backbone(out_dir / BACKBONE_FILE)
    if untrained:
        model = build_tracker(cfg, backbone, cfg.seed)
    else:
        model = load_tracker(Path(checkpoint) if checkpoint else out_dir / MEME_FILE, backbone)
    if not model.cfg.use_specific:
        raise ConfigurationError("The model has no routed experts to report on")

    sequences = load_split(cfg.data_dir, split)
    report = collect_routes(model, sequences, noisy=untrained, seed=cfg.seed)
    report.write_csv(report_dir)
    report.plot(report_dir)
    path = write_report(
        report_dir / "report.md", "route_report.md.j2",
        config_hash=digest, untrained=untrained, top_k=report.top_k,
        num_experts=report.assignment.num_experts, chance=report.chance_level(),
        modalities=report.modalities, summary=report.summary(),
    )
    for row in report.summary():
        print("layer {layer}: ".format(**row) + ", ".join(
            f"{m}={row[m]:.3f}" for m in report.modalities if m in row
        ))
    print(f"✅ Report: {path}")
    return report


def cmd_gradcheck(cfg: ExperimentConfig) -> List[GradcheckEntry]:
    """
    Run the finite-difference suite.

    Raises:
        InvariantViolation: Any case fails
    """
    out_dir = Path(cfg.out_dir) / "gradcheck"
    digest = announce(cfg, out_dir)
    entries = run_gradcheck(eps=cfg.gradcheck_eps, rtol=cfg.gradcheck_rtol, seed=cfg.seed)
    for entry in entries:
        print(f"{entry.name:<20} {'pass' if entry.passed else 'FAIL'}")
    write_report(out_dir / "report.md", "gradcheck_report.md.j2", config_hash=digest,
                 eps=cfg.gradcheck_eps, rtol=cfg.gradcheck_rtol, entries=entries)
    failed = [e.name for e in entries if not e.passed]
    if failed:
        raise InvariantViolation(f"Gradient check failed for: {', '.join(failed)}")
    print(f"✅ All {len(entries)} gradient checks passed")
    return entries


def variant_overrides(variant: str) -> Dict[str, object]:
    """
    Configuration changes of one ablation variant.

    Raises:
        ConfigurationError: Unknown variant
    """
    if variant == "full":
        return {}
    if variant == "no_shared":
        return {"use_shared": False}
    if variant == "no_specific":
        return {"use_specific": False}
    if variant.startswith("experts_per_modality="):
        try:
            n = int(variant.split("=", 1)[1])
        except ValueError:
            raise ConfigurationError(f"Invalid ablation variant '{variant}'")
        if n < 1:
            raise ConfigurationError(f"experts_per_modality must be at least 1, got {n}")
        return {"experts_per_modality": n, "top_k": n}
    raise ConfigurationError(f"Unknown ablation variant '{variant}', expected one of {ABLATION_VARIANTS}")


def variant_config(cfg: ExperimentConfig, variant: str, seed: int) -> ExperimentConfig:
    data = cfg.resolved()
    data.update(variant_overrides(variant))
    data["seed"] = seed
    data["out_dir"] = str(Path(cfg.out_dir) / "ablation" / variant.replace("=", "_") / f"seed_{seed}")
    return ExperimentConfig(**data)


def _mean_std(values: Sequence[float]) -> Dict[str, float]:
    return {"mean": float(np.mean(values)), "std": float(np.std(values))}


def _orderings(table: Dict[str, Dict[str, Dict[str, float]]]) -> List[Tuple[str, bool]]:
    f = {name: row["f_score"]["mean"] for name, row in table.items()}
    checks = []
    for better, worse in (("full", "no_shared"), ("no_shared", "no_specific"),
                          ("experts_per_modality=2", "experts_per_modality=1")):
        if better in f and worse in f:
            checks.append((f"F({better}) > F({worse})", f[better] > f[worse]))
    return checks


def cmd_ablate(cfg: ExperimentConfig, variants: Sequence[str]) -> Dict[str, Dict[str, Dict[str, float]]]:
    """
    Train and evaluate each variant for every ablation seed from the same frozen backbone.

    Returns:
        Dict: variant → metric → {"mean", "std"} over seeds
    """
    out_dir = Path(cfg.out_dir) / "ablation"
    digest = announce(cfg, out_dir)
    for variant in variants:
        variant_overrides(variant)

    backbone = load_backbone(Path(cfg.out_dir) / BACKBONE_FILE)
    train = load_split(cfg.data_dir, "train")
    test = load_split(cfg.data_dir, "test")

    table: Dict[str, Dict[str, Dict[str, float]]] = {}
    for variant in variants:
        runs: List[DatasetMetrics] = []
        for seed in cfg.ablation_seeds:
            variant_cfg = variant_config(cfg, variant, seed)
            variant_cfg.write_resolved(variant_cfg.out_dir)
            result = train_meme(variant_cfg, backbone, train, Path(variant_cfg.out_dir))
            metrics, _, _ = evaluate_model(result.model, test, cfg.template_size, cfg.precision_threshold)
            logger.info(f"{variant} seed {seed}: F={metrics.f_score:.4f}")
            runs.append(metrics)
        table[variant] = {
            key: _mean_std([getattr(m, key) for m in runs])
            for key in ("f_score", "success", "precision_rate", "mean_iou")
        }
        print(f"{variant:<24} F {table[variant]['f_score']['mean']:.4f} ± {table[variant]['f_score']['std']:.4f}")

    with open(out_dir / "ablation.json", "w") as f:
        json.dump(table, f, indent=2)
    path = write_report(out_dir / "report.md", "ablation_report.md.j2", config_hash=digest,
                        seeds=cfg.ablation_seeds, variants=table, orderings=_orderings(table))
    print(f"✅ Report: {path}")
    return table
