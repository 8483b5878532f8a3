"""scikit-learn style wrapper around training and embedding."""

from __future__ import annotations

import os
import tempfile
from dataclasses import fields
from typing import Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ShapeMismatch
from ..moe import route
from ..synthcorpus import Dataset
from .checkpoint import Checkpoint, load_checkpoint
from .config import TrainConfig
from .evaluate import EVAL_BATCH, frozen
from .train import train

CONFIG_PARAMS = [f.name for f in fields(TrainConfig) if f.name not in ("dataset", "out_dir")]


class ScaleMoE(TransformerMixin, BaseEstimator):
    """Train on a corpus directory, then map images to global embeddings.

    ``fit`` takes a corpus path or :class:`Dataset` (``y`` is ignored, labels
    come from the corpus).  ``transform`` maps a B×3×H×W image array to B×D
    unit-norm embeddings; ``predict`` returns the expert the image router picks.
    """

    def __init__(
        self,
        out_dir=None,
        batch_size=32,
        steps=1000,
        lr=0.05,
        momentum=0.9,
        weight_decay=0.0,
        grad_clip=5.0,
        grad_accum=1,
        tau=0.07,
        lam=0.5,
        n_experts=4,
        align_level=3,
        embed_dim=128,
        router_hidden=64,
        channels="32,64,128,256",
        seed=0,
        router_input="image",
        train_router_input="text",
        local_loss_denominator="tokens",
        symmetric_global=False,
        eval_every=250,
    ):
        self.out_dir = out_dir
        self.batch_size = batch_size
        self.steps = steps
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.grad_accum = grad_accum
        self.tau = tau
        self.lam = lam
        self.n_experts = n_experts
        self.align_level = align_level
        self.embed_dim = embed_dim
        self.router_hidden = router_hidden
        self.channels = channels
        self.seed = seed
        self.router_input = router_input
        self.train_router_input = train_router_input
        self.local_loss_denominator = local_loss_denominator
        self.symmetric_global = symmetric_global
        self.eval_every = eval_every

    def _config(self, dataset: str, out_dir: str) -> TrainConfig:
        return TrainConfig(dataset=dataset, out_dir=out_dir, **{k: getattr(self, k) for k in CONFIG_PARAMS}).validate()

    def fit(self, X: Union[str, os.PathLike, Dataset], y=None):
        ds = X if isinstance(X, Dataset) else Dataset(X)
        out = self.out_dir or tempfile.mkdtemp(prefix="scalemoe-")
        result = train(self._config(str(ds.root), str(out)), ds)
        self.model_ = result.model
        self.checkpoint_path_ = result.checkpoint
        self.evals_ = result.evals
        self.n_features_in_ = 3
        return self

    @classmethod
    def from_checkpoint(cls, path: Union[str, os.PathLike]) -> "ScaleMoE":
        ckpt: Checkpoint = load_checkpoint(path)
        est = cls(out_dir=ckpt.config.out_dir, **{k: getattr(ckpt.config, k) for k in CONFIG_PARAMS})
        est.model_ = ckpt.build_model()
        est.checkpoint_path_ = path
        est.evals_ = []
        est.n_features_in_ = 3
        return est

    def _images(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4 or X.shape[1] != 3:
            raise ShapeMismatch(f"expected B×3×H×W images, got {X.shape}")
        return X

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = self._images(X)
        with frozen(self.model_):
            parts = [self.model_.encode_images(X[s : s + EVAL_BATCH])[1].data for s in range(0, len(X), EVAL_BATCH)]
        return np.concatenate(parts)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = self._images(X)
        out = []
        with frozen(self.model_):
            for s in range(0, len(X), EVAL_BATCH):
                _, v_g = self.model_.encode_images(X[s : s + EVAL_BATCH])
                out.append(route(v_g, self.model_.image_router).selected)
        return np.concatenate(out)
