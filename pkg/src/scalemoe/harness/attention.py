"""Word-level attention heatmaps and per-scale attention summaries.

Heatmaps are binary PGM files::

    b"P5\\n" + f"{W} {H}\\n".encode() + b"255\\n" + H*W unsigned bytes, row-major

Each valid token's attention row over the alignment grid is bilinearly
upsampled to the image size and min-max scaled with
``floor(255 * (x - min) / (max - min) + 0.5)``.  A map whose values are all
equal has no range to scale and is written as all zeros.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..exceptions import IoFailure
from ..model import ScaleMoENet
from ..moe import route
from ..objectives import word_region_attention
from ..synthcorpus import Dataset
from ..tensor import Tensor, ops
from .evaluate import EVAL_BATCH, check_sample_index, frozen

SUMMARY_FILE = "scales.txt"


def to_gray(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.floor(255.0 * (values - lo) / (hi - lo) + 0.5).astype(np.uint8)


def pgm_bytes(gray: np.ndarray) -> bytes:
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(gray, dtype=np.uint8).tobytes()


def write_pgm(path: Union[str, os.PathLike], values: np.ndarray) -> Path:
    path = Path(path)
    try:
        path.write_bytes(pgm_bytes(to_gray(np.asarray(values, dtype=np.float64))))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


@dataclass
class AttentionExport:
    files: list
    summary: Path
    expert: int
    beta_means: list


def export_attention(
    model: ScaleMoENet,
    ds: Dataset,
    sample_id: int,
    out_dir: Union[str, os.PathLike],
    tau: float = 0.07,
    router_input: str = "text",
) -> AttentionExport:
    """One heatmap per valid report token plus a per-scale β summary."""
    index = check_sample_index(ds, sample_id)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    batch = ds.load_batch([index])
    H, W = batch.images.shape[2:]
    with frozen(model):
        pyramid, v_g = model.encode_images(batch.images)
        text = model.encode_reports(batch.token_ids, batch.valid_len)
        decision = route(text.report, model.text_router) if router_input == "text" else route(v_g, model.image_router)
        grid, beta = model.local(pyramid, decision)
        att = word_region_attention(text, grid, tau)
        h, w = grid.grid
        n_valid = int(batch.valid_len[0])
        maps = ops.reshape(Tensor(att.a.data[:, :n_valid]), (n_valid, 1, h, w))
        up = ops.bilinear_resize(maps, H, W).data[:, 0]
    files = []
    words = [ds.vocab.tokens[t] for t in batch.token_ids[0, :n_valid]]
    for i in range(n_valid):
        files.append(write_pgm(out / f"token_{i:03d}.pgm", up[i]))
    beta_means = beta.beta.data[0].mean(axis=(1, 2)).tolist()
    lines = [f"sample={int(sample_id)} expert={int(decision.selected[0])} grid={h}x{w}"]
    lines += [f"token={i} word={word}" for i, word in enumerate(words)]
    lines += [f"level={l + 1} beta={b!r}" for l, b in enumerate(beta_means)]
    summary = out / SUMMARY_FILE
    try:
        summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {summary}: {exc}") from exc
    return AttentionExport(files, summary, int(decision.selected[0]), beta_means)


def scale_profile(
    model: ScaleMoENet,
    ds: Dataset,
    indices: Optional[Sequence[int]] = None,
    router_input: str = "image",
    batch_size: int = EVAL_BATCH,
) -> np.ndarray:
    """Mean β per pyramid level (n × L) under each sample's routed expert."""
    idx = np.arange(len(ds)) if indices is None else np.asarray(indices, dtype=np.int64)
    rows = []
    with frozen(model):
        for start in range(0, len(idx), batch_size):
            batch = ds.load_batch(idx[start : start + batch_size])
            pyramid, v_g = model.encode_images(batch.images)
            if router_input == "image":
                decision = route(v_g, model.image_router)
            else:
                decision = route(model.encode_reports(batch.token_ids, batch.valid_len).report, model.text_router)
            _, beta = model.local(pyramid, decision)
            rows.append(beta.beta.data.mean(axis=(2, 3)))
    return np.concatenate(rows)
