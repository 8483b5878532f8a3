"""Seeded SGD-with-momentum training on the combined objective."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..exceptions import IoFailure, NonFiniteInput, NonFiniteLoss
from ..model import ScaleMoENet
from ..moe import ActivationCounter
from ..synthcorpus import Dataset
from ..tensor import backward
from .checkpoint import model_from_config, save_checkpoint
from .config import TrainConfig
from .evaluate import embed, routing_accuracy
from .metrics import MetricsLog

METRICS_FILE = "metrics.log"
WALL_FILE = "metrics.wall"
EVAL_FILE = "eval.log"
CHECKPOINT_FILE = "checkpoint.mmck"
CONFIG_FILE = "config.txt"


class Shuffle:
    """Batch order fixed by (seed, epoch): epoch ``e`` visits a permutation of the
    training indices drawn from ``default_rng([seed, e])``; a trailing partial
    batch is dropped."""

    def __init__(self, indices: np.ndarray, batch_size: int, seed: int):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.batch_size = batch_size
        self.seed = seed
        self.per_epoch = len(self.indices) // batch_size
        if self.per_epoch < 1:
            raise ValueError(f"training split of {len(self.indices)} samples is smaller than one batch of {batch_size}")
        self._epoch, self._perm = -1, None

    def batch(self, k: int) -> np.ndarray:
        epoch, pos = divmod(k, self.per_epoch)
        if epoch != self._epoch:
            self._epoch = epoch
            self._perm = np.random.default_rng([self.seed, epoch]).permutation(self.indices)
        return self._perm[pos * self.batch_size : (pos + 1) * self.batch_size]


class SGD:
    """``v = momentum * v + (g + weight_decay * p)``; ``p -= lr * v``."""

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                g = self.weight_decay * p.data
            else:
                g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data -= self.lr * v


def clip_gradients(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


@dataclass
class TrainResult:
    model: ScaleMoENet
    out_dir: Path
    records: list
    evals: list

    @property
    def checkpoint(self) -> Path:
        return self.out_dir / CHECKPOINT_FILE

    @property
    def metrics(self) -> Path:
        return self.out_dir / METRICS_FILE


def validation_routing(model: ScaleMoENet, ds: Dataset) -> dict:
    emb = embed(model, ds, ds.split_indices("val"))
    k = model.n_experts
    return {
        "val_route_text": routing_accuracy(emb.text_selected, emb.modality, k),
        "val_route_image": routing_accuracy(emb.image_selected, emb.modality, k),
    }


def train(
    cfg: TrainConfig,
    dataset: Optional[Dataset] = None,
    progress: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Train from ``cfg`` and write logs and checkpoints into ``cfg.out_dir``.

    Writes ``metrics.log`` (one deterministic record per step), ``metrics.wall``
    (elapsed seconds per step), ``eval.log`` (validation routing accuracy at
    the eval cadence and at the end), ``config.txt`` and ``checkpoint.mmck``.
    """
    cfg.validate()
    ds = dataset if dataset is not None else Dataset(cfg.dataset)
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / CONFIG_FILE).write_text(cfg.to_text(), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot prepare output directory {out}: {exc}") from exc

    vocab_size, n_types = len(ds.vocab), ds.n_modalities
    model = model_from_config(cfg, vocab_size, n_types)
    model.train()
    params = model.parameters()
    opt = SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle = Shuffle(ds.split_indices("train"), cfg.batch_size, cfg.seed)
    evals = []
    start = time.perf_counter()

    with MetricsLog(out / METRICS_FILE) as log, MetricsLog(out / WALL_FILE) as wall, MetricsLog(out / EVAL_FILE) as elog:
        for step in range(1, cfg.steps + 1):
            model.zero_grad()
            counter = ActivationCounter()
            sums = dict.fromkeys(("global", "local", "aux", "total"), 0.0)
            hits_text = hits_image = seen = 0
            for micro in range(cfg.grad_accum):
                batch = ds.load_batch(shuffle.batch((step - 1) * cfg.grad_accum + micro))
                try:
                    res = model.forward(
                        batch.images,
                        batch.token_ids,
                        batch.valid_len,
                        batch.modality,
                        tau=cfg.tau,
                        lam=cfg.lam,
                        route_on=cfg.train_router_input,
                        local_denominator=cfg.local_loss_denominator,
                        symmetric_global=cfg.symmetric_global,
                        counter=counter,
                    )
                except NonFiniteInput as exc:
                    raise NonFiniteLoss(step, float("nan")) from exc
                values = res.losses.values()
                if not np.isfinite(values["total"]):
                    raise NonFiniteLoss(step, values["total"])
                for key in sums:
                    sums[key] += values[key] / cfg.grad_accum
                loss = res.losses.total if cfg.grad_accum == 1 else res.losses.total * (1.0 / cfg.grad_accum)
                backward(loss)
                y = batch.modality % model.n_experts
                hits_text += int((res.text_route.selected == y).sum())
                hits_image += int((res.image_route.selected == y).sum())
                seen += len(batch)
            grad_norm = clip_gradients(params, cfg.grad_clip)
            if not np.isfinite(grad_norm):
                raise NonFiniteLoss(step, sums["total"])
            opt.step()

            record = {
                "step": step,
                "global": sums["global"],
                "local": sums["local"],
                "aux": sums["aux"],
                "total": sums["total"],
                "route_text": hits_text / seen,
                "route_image": hits_image / seen,
                "grad_norm": grad_norm,
                "experts": counter.histogram(model.n_experts),
            }
            log.append(record)
            wall.append({"step": step, "seconds": round(time.perf_counter() - start, 3)})
            if progress is not None:
                progress(record)

            if step % cfg.eval_every == 0 or step == cfg.steps:
                ev = {"step": step, **validation_routing(model, ds)}
                elog.append(ev)
                evals.append(ev)
                save_checkpoint(out / CHECKPOINT_FILE, model, cfg, step, vocab_size, n_types)
        records = log.records
    return TrainResult(model=model, out_dir=out, records=records, evals=evals)
