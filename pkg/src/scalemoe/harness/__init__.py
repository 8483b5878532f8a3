"""Training, evaluation, persistence and the command line."""

from .attention import AttentionExport, export_attention, scale_profile, to_gray, write_pgm
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .estimator import ScaleMoE
from .evaluate import (
    ProbeResult,
    ZeroShotResult,
    count_active_experts,
    embed,
    linear_probe,
    routing_accuracy,
    zero_shot_eval,
)
from .metrics import MetricsLog, read_log
from .probe import LinearProbe
from .train import TrainResult, train

__all__ = [
    "AttentionExport",
    "Checkpoint",
    "LinearProbe",
    "MetricsLog",
    "ProbeResult",
    "ScaleMoE",
    "TrainConfig",
    "TrainResult",
    "ZeroShotResult",
    "count_active_experts",
    "embed",
    "export_attention",
    "linear_probe",
    "load_checkpoint",
    "load_config",
    "read_log",
    "routing_accuracy",
    "save_checkpoint",
    "scale_profile",
    "to_gray",
    "train",
    "write_pgm",
    "zero_shot_eval",
]
