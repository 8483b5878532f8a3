"""Deterministic synthetic image/report corpus."""

from .dataset import PAD_ID, Batch, Dataset, load_batch, pad_reports, split_of
from .generator import (
    MODALITIES,
    CorpusConfig,
    Vocabulary,
    build_vocabulary,
    generate_corpus,
    prompt_table,
    render_sample,
)
from .prng import SampleStream

__all__ = [
    "MODALITIES",
    "PAD_ID",
    "Batch",
    "CorpusConfig",
    "Dataset",
    "SampleStream",
    "Vocabulary",
    "build_vocabulary",
    "generate_corpus",
    "load_batch",
    "pad_reports",
    "prompt_table",
    "render_sample",
    "split_of",
]
