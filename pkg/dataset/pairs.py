"""
Training Pairs

Template/search frame pairs drawn from stored sequences, and a batch sampler
that mixes the three modalities in equal shares inside every batch.
"""

import logging
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import Dataset, Sampler

from meme.network import crop_region
from meme.tokenizer import replicate_channels
from models.config import MODALITIES
from .storage import StoredSequence

logger = logging.getLogger(__name__)

# (sequence index, template frame, search frame)
PairKey = Tuple[int, int, int]


def _frame(array: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(array.astype(np.float32) / 255.0)


class PairDataset(Dataset):
    """
    Map-style dataset keyed by PairKey.

    The search region is the whole frame; the template is a crop centered on
    the template frame's box. Items carry the modality name for the
    expert-assignment loss.

    Args:
        sequences (Sequence[StoredSequence]): Loaded sequences
        template_size (int): Side of the template crop
    """

    def __init__(self, sequences: Sequence[StoredSequence], template_size: int):
        self.sequences = list(sequences)
        self.template_size = template_size

    def __len__(self) -> int:
        return sum(s.length for s in self.sequences)

    def __getitem__(self, key: PairKey) -> Dict[str, object]:
        seq_idx, t_template, t_search = key
        seq = self.sequences[seq_idx]
        template_box = seq.boxes[t_template]

        template_rgb = crop_region(_frame(seq.rgb[t_template]), template_box, self.template_size)
        template_x = crop_region(replicate_channels(_frame(seq.x[t_template])), template_box, self.template_size)
        return {
            "template_rgb": template_rgb.contiguous(),
            "template_x": template_x.contiguous(),
            "search_rgb": _frame(seq.rgb[t_search]),
            "search_x": replicate_channels(_frame(seq.x[t_search])),
            "box": torch.tensor(seq.boxes[t_search], dtype=torch.float32),
            "modality": seq.entry.modality,
        }


class BalancedModalitySampler(Sampler[List[PairKey]]):
    """
    Batch sampler with an equal share of every modality per batch.

    An epoch draws pairs_per_sequence random pairs from each sequence, so its
    length is ceil(num_sequences * pairs_per_sequence / batch_size) batches.
    Pairs are drawn from a generator seeded with (seed, epoch); call
    set_epoch before iterating.

    Args:
        sequences (Sequence[StoredSequence]): Sequences with their modality labels
        pairs_per_sequence (int): Pairs drawn per sequence per epoch
        batch_size (int): Pairs per batch
        seed (int): Base seed
    """

    def __init__(self, sequences: Sequence[StoredSequence], pairs_per_sequence: int, batch_size: int, seed: int = 0):
        self.lengths = [s.length for s in sequences]
        self.pairs_per_sequence = pairs_per_sequence
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0

        self.by_modality: Dict[str, List[int]] = {m: [] for m in MODALITIES}
        for index, seq in enumerate(sequences):
            self.by_modality.setdefault(seq.entry.modality, []).append(index)
        self.modalities = [m for m, idx in self.by_modality.items() if idx]
        if not self.modalities:
            raise ValueError("BalancedModalitySampler needs at least one sequence")
        logger.debug(f"Sampling {self.quotas()} pairs per batch from modalities {self.modalities}")

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self) -> int:
        total = len(self.lengths) * self.pairs_per_sequence
        return -(-total // self.batch_size)

    def quotas(self) -> List[int]:
        """Pairs per modality in one batch; the remainder goes to the first modalities."""
        share, extra = divmod(self.batch_size, len(self.modalities))
        return [share + (1 if i < extra else 0) for i in range(len(self.modalities))]

    def _pool(self, rng: np.random.Generator, modality: str) -> List[PairKey]:
        pool: List[PairKey] = []
        for seq_idx in self.by_modality[modality]:
            length = self.lengths[seq_idx]
            for _ in range(self.pairs_per_sequence):
                t_template, t_search = rng.choice(length, size=2, replace=False)
                pool.append((seq_idx, int(t_template), int(t_search)))
        order = rng.permutation(len(pool))
        return [pool[i] for i in order]

    def __iter__(self) -> Iterator[List[PairKey]]:
        rng = np.random.default_rng([self.seed, self.epoch])
        pools = {m: self._pool(rng, m) for m in self.modalities}
        cursors = {m: 0 for m in self.modalities}
        quotas = self.quotas()
        for _ in range(len(self)):
            batch: List[PairKey] = []
            for modality, quota in zip(self.modalities, quotas):
                pool = pools[modality]
                for _ in range(quota):
                    batch.append(pool[cursors[modality] % len(pool)])
                    cursors[modality] += 1
            yield batch
