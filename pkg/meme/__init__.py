"""
Mixture of modal experts on a frozen RGB tracker.

The modal branch reads an auxiliary frame X without being told which sensor
produced it, routes its tokens to modality-specific experts plus one shared
expert and prompts the frozen RGB backbone with the result.
"""

from .errors import (
    AcceptanceGateError,
    ConfigurationError,
    EvaluationError,
    InvariantViolation,
    MemeError,
    NumericalFailure,
    RoutingError,
    ShapeError,
)
from .tokenizer import PatchEmbedding, TokenSequence, embed_pair, patchify, unpatchify
from .backbone import HeadOutput, RGBBackbone
from .network import MemeTracker, SequenceTracker, TrackerOutput, parameter_report, run_sequence
from .objectives import LossBreakdown, generalist_loss, routing_losses, tracking_loss
from .metrics import DatasetMetrics, TrackResult, f_score, iou, precision_rate, success_rate

__all__ = [
    'AcceptanceGateError',
    'ConfigurationError',
    'EvaluationError',
    'InvariantViolation',
    'MemeError',
    'NumericalFailure',
    'RoutingError',
    'ShapeError',
    'PatchEmbedding',
    'TokenSequence',
    'embed_pair',
    'patchify',
    'unpatchify',
    'HeadOutput',
    'RGBBackbone',
    'MemeTracker',
    'SequenceTracker',
    'TrackerOutput',
    'parameter_report',
    'run_sequence',
    'LossBreakdown',
    'generalist_loss',
    'routing_losses',
    'tracking_loss',
    'DatasetMetrics',
    'TrackResult',
    'f_score',
    'iou',
    'precision_rate',
    'success_rate',
]
