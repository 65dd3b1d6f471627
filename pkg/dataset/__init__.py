from .synthetic import (
    ModalSample,
    SequenceSpec,
    generate_sequence,
    rgb_contrast,
    sample_spec,
    stack_samples,
    trajectory_boxes,
    validate_trajectory,
)
from .storage import (
    ManifestEntry,
    StoredSequence,
    load_split,
    read_confidences,
    read_manifest,
    read_predictions,
    read_sequence,
    write_manifest,
    write_predictions,
    write_sequence,
)
from .splits import SplitPlan, check_disjoint, make_splits, plan_entries, plan_splits
from .pairs import BalancedModalitySampler, PairDataset

__all__ = [
    'ModalSample',
    'SequenceSpec',
    'generate_sequence',
    'rgb_contrast',
    'sample_spec',
    'stack_samples',
    'trajectory_boxes',
    'validate_trajectory',
    'ManifestEntry',
    'StoredSequence',
    'load_split',
    'read_confidences',
    'read_manifest',
    'read_predictions',
    'read_sequence',
    'write_manifest',
    'write_predictions',
    'write_sequence',
    'SplitPlan',
    'check_disjoint',
    'make_splits',
    'plan_entries',
    'plan_splits',
    'BalancedModalitySampler',
    'PairDataset',
]
