"""
Routing Report

Measures, per MeME layer, which experts the tokens of each modality are
routed to. Modality labels are read from the manifest for scoring only; the
model sees the same inputs it sees at inference.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib.pyplot as plt
import numpy as np
import torch

from dataset.storage import StoredSequence
from .blocks import ExpertAssignment
from .errors import InvariantViolation
from .network import MemeTracker, crop_region
from .tokenizer import replicate_channels

plt.switch_backend("agg")

logger = logging.getLogger(__name__)


@dataclass
class RouteReport:
    """
    Selection fractions per layer.

    Attributes:
        matrices (List[np.ndarray]): One [modalities × experts] matrix per routed layer;
            entry (m, e) is the fraction of modality-m tokens that selected expert e
        modalities (List[str]): Row labels
        assignment (ExpertAssignment): Expert set h(m) of every modality
        top_k (int): Experts selected per token
        tokens (Dict[str, int]): Tokens counted per modality and layer
    """
    matrices: List[np.ndarray]
    modalities: List[str]
    assignment: ExpertAssignment
    top_k: int
    tokens: Dict[str, int]

    def check(self, atol: float = 1e-6):
        """
        Raises:
            InvariantViolation: A row with counted tokens does not sum to top_k
        """
        for layer, matrix in enumerate(self.matrices):
            for row, modality in enumerate(self.modalities):
                if not self.tokens.get(modality):
                    continue
                total = float(matrix[row].sum())
                if abs(total - self.top_k) > atol:
                    raise InvariantViolation(
                        f"Layer {layer}: routing fractions of '{modality}' sum to {total}, expected {self.top_k}"
                    )

    def specialization(self, layer: int) -> Dict[str, float]:
        """Share of each modality's selections that land inside its own expert set."""
        matrix = self.matrices[layer]
        return {
            modality: float(matrix[row, list(self.assignment.experts_for(modality))].sum() / self.top_k)
            for row, modality in enumerate(self.modalities)
            if self.tokens.get(modality)
        }

    def chance_level(self) -> float:
        return self.assignment.experts_per_modality / self.assignment.num_experts

    def summary(self) -> List[Dict[str, float]]:
        """One row per layer with the specialization of every modality."""
        return [{"layer": layer, **self.specialization(layer)} for layer in range(len(self.matrices))]

    def write_csv(self, directory: Path) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for layer, matrix in enumerate(self.matrices):
            path = directory / f"routes_layer{layer}.csv"
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["modality"] + [f"expert_{e}" for e in range(matrix.shape[1])])
                for row, modality in enumerate(self.modalities):
                    writer.writerow([modality] + [f"{v:.6f}" for v in matrix[row]])
            paths.append(path)
        return paths

    def plot(self, directory: Path) -> List[Path]:
        """One heatmap PNG per layer (modality × expert confusion view)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for layer, matrix in enumerate(self.matrices):
            fig, ax = plt.subplots(figsize=(1.0 + 0.7 * matrix.shape[1], 2.6))
            image = ax.imshow(matrix / self.top_k, vmin=0.0, vmax=1.0, cmap="viridis")
            ax.set_xticks(range(matrix.shape[1]))
            ax.set_yticks(range(len(self.modalities)))
            ax.set_yticklabels(self.modalities)
            ax.set_xlabel("expert")
            ax.set_title(f"layer {layer}")
            for row in range(matrix.shape[0]):
                for col in range(matrix.shape[1]):
                    ax.text(col, row, f"{matrix[row, col] / self.top_k:.2f}", ha="center", va="center",
                            color="white", fontsize=7)
            fig.colorbar(image, ax=ax, fraction=0.046)
            fig.tight_layout()
            path = directory / f"routes_layer{layer}.png"
            fig.savefig(path, dpi=100)
            plt.close(fig)
            paths.append(path)
        return paths


@torch.no_grad()
def collect_routes(model: MemeTracker, sequences: Sequence[StoredSequence], noisy: bool = False,
                   seed: int = 0, frames_per_sequence: Optional[int] = None) -> RouteReport:
    """
    Route every test frame and count expert selections per modality.

    Each sequence uses frame 0 as the template and every later frame (or the
    first frames_per_sequence of them) as search frames.

    Args:
        model (MemeTracker): Tracker with routed experts
        sequences (Sequence[StoredSequence]): Labeled sequences
        noisy (bool): Sample the gate noise as in training; used to measure
            the chance level of an untrained router whose logits all tie
        seed (int): Seed of the gate-noise stream when noisy

    Returns:
        RouteReport: selection fractions per layer
    """
    assignment = model.assignment
    modalities = assignment.modalities
    generator = torch.Generator().manual_seed(seed) if noisy else None
    model.train(noisy)

    counts: Optional[List[np.ndarray]] = None
    tokens: Dict[str, int] = {m: 0 for m in modalities}
    template_size = model.cfg.template_size
    try:
        for seq in sequences:
            row = modalities.index(seq.entry.modality)
            rgb = torch.from_numpy(seq.rgb.astype(np.float32) / 255.0)
            x = replicate_channels(torch.from_numpy(seq.x.astype(np.float32) / 255.0))
            stop = seq.length if frames_per_sequence is None else min(seq.length, 1 + frames_per_sequence)

            search_rgb, search_x = rgb[1:stop], x[1:stop]
            batch = search_rgb.shape[0]
            template_rgb = crop_region(rgb[0], seq.boxes[0], template_size).expand(batch, -1, -1, -1)
            template_x = crop_region(x[0], seq.boxes[0], template_size).expand(batch, -1, -1, -1)

            out = model(template_rgb, template_x, search_rgb, search_x, generator=generator)
            routed = [d for d in out.decisions if d is not None]
            if not routed:
                raise InvariantViolation("Route report needs a model with routed experts")
            if counts is None:
                counts = [np.zeros((len(modalities), assignment.num_experts)) for _ in routed]
            for layer, decision in enumerate(routed):
                mask = decision.selection_mask()
                counts[layer][row] += mask.reshape(-1, mask.shape[-1]).sum(0).double().numpy()
            tokens[seq.entry.modality] += routed[0].probs.shape[0] * routed[0].probs.shape[1]
    finally:
        model.eval()

    matrices = [
        np.stack([c[row] / max(tokens[m], 1) for row, m in enumerate(modalities)])
        for c in (counts or [])
    ]
    report = RouteReport(matrices=matrices, modalities=modalities, assignment=assignment,
                         top_k=model.gate_cfg.top_k, tokens=tokens)
    report.check()
    logger.info(f"Routed tokens per modality: {tokens}")
    return report
