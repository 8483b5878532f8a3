"""Frozen-model evaluation: embeddings, zero-shot, linear probe, expert usage.

Everything here runs the model in eval mode under ``no_grad`` and restores the
previous train/eval mode afterwards, so parameters and batch-norm running
statistics are never touched.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..exceptions import IndexOutOfRange, InsufficientData, InvalidConfig, MissingPrompt
from ..model import ScaleMoENet
from ..moe import ActivationCounter, route
from ..synthcorpus import Dataset, pad_reports
from ..tensor import no_grad
from .probe import LinearProbe

EVAL_BATCH = 100


@contextmanager
def frozen(model: ScaleMoENet):
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            yield model
    finally:
        model.train(was_training)


@dataclass
class Embeddings:
    indices: np.ndarray
    v_g: np.ndarray  # n×D
    t_g: np.ndarray  # n×D
    text_selected: np.ndarray
    image_selected: np.ndarray
    modality: np.ndarray
    class_label: np.ndarray


def embed(model: ScaleMoENet, ds: Dataset, indices: Optional[Sequence[int]] = None, batch_size: int = EVAL_BATCH) -> Embeddings:
    """Global embeddings and both routers' choices for ``indices`` (default: all)."""
    idx = np.arange(len(ds)) if indices is None else np.asarray(indices, dtype=np.int64)
    v_parts, t_parts, ts, vs = [], [], [], []
    with frozen(model):
        for start in range(0, len(idx), batch_size):
            batch = ds.load_batch(idx[start : start + batch_size])
            _, v_g = model.encode_images(batch.images)
            text = model.encode_reports(batch.token_ids, batch.valid_len)
            v_parts.append(v_g.data)
            t_parts.append(text.report.data)
            ts.append(route(text.report, model.text_router).selected)
            vs.append(route(v_g, model.image_router).selected)
    return Embeddings(
        indices=idx,
        v_g=np.concatenate(v_parts),
        t_g=np.concatenate(t_parts),
        text_selected=np.concatenate(ts),
        image_selected=np.concatenate(vs),
        modality=ds.modality[idx],
        class_label=ds.class_label[idx],
    )


def routing_accuracy(selected: np.ndarray, y: np.ndarray, n_experts: int) -> float:
    """Fraction of samples whose chosen expert is the one assigned to their type."""
    return float(np.mean(np.asarray(selected) == np.asarray(y) % n_experts))


# -- zero-shot ----------------------------------------------------------------


def embed_prompts(model: ScaleMoENet, prompts: dict, n_modalities: int, n_classes: int) -> np.ndarray:
    """Report embeddings of every prompt as an n_modalities × n_classes × D array."""
    keys = [(m, c) for m in range(n_modalities) for c in range(n_classes)]
    missing = [k for k in keys if k not in prompts]
    if missing:
        raise MissingPrompt(f"prompt table lacks (modality, class) entries {missing}")
    tokens, valid = pad_reports([prompts[k] for k in keys])
    with frozen(model):
        t_g = model.encode_reports(tokens, valid).report.data
    return t_g.reshape(n_modalities, n_classes, -1)


def zero_shot_predict(v_g: np.ndarray, prompt_emb: np.ndarray, modality: np.ndarray) -> np.ndarray:
    """Class whose prompt (within the sample's modality) has the highest cosine."""
    scores = np.einsum("nd,ncd->nc", v_g, prompt_emb[np.asarray(modality)])
    return np.argmax(scores, axis=1)


@dataclass
class ZeroShotResult:
    per_modality: dict
    macro: float
    overall: float
    routing_accuracy: float
    router_input: str

    def lines(self) -> list[str]:
        out = [f"modality={m} accuracy={a!r}" for m, a in self.per_modality.items()]
        out.append(f"macro={self.macro!r} overall={self.overall!r}")
        out.append(f"router_input={self.router_input} routing_accuracy={self.routing_accuracy!r}")
        return out


def zero_shot_eval(
    model: ScaleMoENet,
    ds: Dataset,
    prompts: Optional[dict] = None,
    split: str = "val",
    router_input: str = "image",
) -> ZeroShotResult:
    """Classify each image by cosine against its modality's class prompts.

    The routing decision (from ``router_input``) is computed and scored but
    does not enter the prediction: the cosine uses only global embeddings.
    """
    if router_input not in ("text", "image"):
        raise InvalidConfig(f"router_input must be 'text' or 'image', got {router_input!r}")
    prompts = ds.prompts if prompts is None else prompts
    prompt_emb = embed_prompts(model, prompts, ds.n_modalities, ds.n_classes)
    emb = embed(model, ds, ds.split_indices(split) if split != "all" else None)
    pred = zero_shot_predict(emb.v_g, prompt_emb, emb.modality)
    correct = pred == emb.class_label
    per_mod = {int(m): float(correct[emb.modality == m].mean()) for m in np.unique(emb.modality)}
    selected = emb.image_selected if router_input == "image" else emb.text_selected
    return ZeroShotResult(
        per_modality=per_mod,
        macro=float(np.mean(list(per_mod.values()))),
        overall=float(correct.mean()),
        routing_accuracy=routing_accuracy(selected, emb.modality, model.n_experts),
        router_input=router_input,
    )


# -- linear probe -------------------------------------------------------------


def fraction_subset(labels: np.ndarray, fraction: float, seed: int = 0) -> np.ndarray:
    """Per class, ``floor(fraction * n_c + 0.5)`` positions chosen by a seeded shuffle."""
    if not 0 < fraction <= 1:
        raise InvalidConfig(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    chosen = []
    for c in np.unique(labels):
        pos = np.flatnonzero(labels == c)
        k = int(np.floor(fraction * len(pos) + 0.5))
        if k < 1:
            raise InsufficientData(f"fraction {fraction} leaves no training sample for class {c} ({len(pos)} available)")
        chosen.append(np.sort(rng.permutation(pos)[:k]))
    return np.sort(np.concatenate(chosen))


@dataclass
class ProbeResult:
    fraction: float
    n_train: int
    accuracy: float


def linear_probe(
    model: ScaleMoENet, ds: Dataset, fraction: float, seed: int = 0, iterations: int = 500, lr: float = 0.1
) -> ProbeResult:
    """Softmax regression on frozen image embeddings; train split subset, val split scored."""
    train_idx, val_idx = ds.split_indices("train"), ds.split_indices("val")
    subset = fraction_subset(ds.class_label[train_idx], fraction, seed)
    tr = embed(model, ds, train_idx[subset])
    va = embed(model, ds, val_idx)
    probe = LinearProbe(iterations=iterations, lr=lr).fit(tr.v_g, tr.class_label)
    return ProbeResult(fraction, len(subset), float(probe.score(va.v_g, va.class_label)))


# -- expert accounting --------------------------------------------------------


def count_active_experts(
    model: ScaleMoENet,
    ds: Dataset,
    indices: Optional[Sequence[int]] = None,
    router_input: str = "image",
    batch_size: int = EVAL_BATCH,
) -> ActivationCounter:
    """Run routed inference and count which expert served each sample."""
    idx = np.arange(len(ds)) if indices is None else np.asarray(indices, dtype=np.int64)
    counter = ActivationCounter()
    with frozen(model):
        for start in range(0, len(idx), batch_size):
            batch = ds.load_batch(idx[start : start + batch_size])
            pyramid, v_g = model.encode_images(batch.images)
            if router_input == "image":
                decision = route(v_g, model.image_router)
            else:
                decision = route(model.encode_reports(batch.token_ids, batch.valid_len).report, model.text_router)
            model.local(pyramid, decision, counter)
    runs = np.asarray(counter.per_sample_runs)
    if len(runs) != len(idx) or not (runs == 1).all():
        raise AssertionError(f"expected one expert run per sample, got {len(runs)} records for {len(idx)} samples")
    return counter


def check_sample_index(ds: Dataset, sample_id: int) -> int:
    pos = np.flatnonzero(ds.sample_ids == int(sample_id))
    if len(pos) != 1:
        raise IndexOutOfRange(f"sample id {sample_id} not in dataset")
    return int(pos[0])
