from models.config import (
    DEGRADATIONS,
    MODALITIES,
    ExperimentConfig,
    GateConfig,
    TrainConfig,
    load_config,
)

__all__ = [
    "DEGRADATIONS",
    "MODALITIES",
    "ExperimentConfig",
    "GateConfig",
    "TrainConfig",
    "load_config",
]
