"""Report-conditioned, hard-routed mixture of scale experts for image/report pairs.

The package is pure NumPy: ``scalemoe.tensor`` is the autodiff core,
``encoders``, ``moe`` and ``objectives`` build the model, ``synthcorpus``
generates the synthetic corpus and ``harness`` trains, evaluates and persists.
"""

from . import exceptions
from .encoders import FeaturePyramid, ImageEncoder, TextEncoder, TextEncoding
from .harness import LinearProbe, ScaleMoE, TrainConfig, load_checkpoint, train
from .model import ForwardResult, ScaleMoENet
from .moe import ActivationCounter, Expert, Router, expert_forward, local_features, route
from .objectives import AuxHead, aux_loss, global_contrastive, local_contrastive, total_loss, word_region_attention
from .synthcorpus import CorpusConfig, Dataset, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "ActivationCounter",
    "AuxHead",
    "CorpusConfig",
    "Dataset",
    "Expert",
    "FeaturePyramid",
    "ForwardResult",
    "ImageEncoder",
    "LinearProbe",
    "Router",
    "ScaleMoE",
    "ScaleMoENet",
    "TextEncoder",
    "TextEncoding",
    "TrainConfig",
    "aux_loss",
    "exceptions",
    "expert_forward",
    "generate_corpus",
    "global_contrastive",
    "load_checkpoint",
    "local_contrastive",
    "local_features",
    "route",
    "total_loss",
    "train",
    "word_region_attention",
]
