import filecmp
import json
from collections import Counter

import numpy as np
import pytest

from scalemoe.exceptions import CorruptRecord, IndexOutOfRange, InvalidConfig
from scalemoe.synthcorpus import (
    MODALITIES,
    CorpusConfig,
    Dataset,
    SampleStream,
    generate_corpus,
    load_batch,
    pad_reports,
    render_sample,
    split_of,
)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generation_is_byte_identical(tmp_path):
    cfg = CorpusConfig(samples_per_modality=12, seed=7)
    a = generate_corpus(cfg, tmp_path / "a")
    b = generate_corpus(cfg, tmp_path / "b")
    assert tree_bytes(a) == tree_bytes(b)


def test_seed_changes_images(tmp_path):
    a = generate_corpus(CorpusConfig(samples_per_modality=4, seed=1), tmp_path / "a")
    b = generate_corpus(CorpusConfig(samples_per_modality=4, seed=2), tmp_path / "b")
    assert not filecmp.cmp(a / "images/000000.mmt", b / "images/000000.mmt", shallow=False)


def test_default_manifest_counts(corpus_dir):
    ds = Dataset(corpus_dir)
    assert len(ds) == 400
    assert Counter(ds.modality.tolist()) == {m: 100 for m in range(4)}
    for m in range(4):
        assert Counter(ds.class_label[ds.modality == m].tolist()) == {c: 25 for c in range(4)}


def test_class_remainder_goes_to_low_classes(tmp_path):
    ds = Dataset(generate_corpus(CorpusConfig(samples_per_modality=6, n_modalities=2, seed=0), tmp_path))
    for m in range(2):
        assert Counter(ds.class_label[ds.modality == m].tolist()) == {0: 2, 1: 2, 2: 1, 3: 1}


def test_manifest_layout(corpus_dir):
    lines = (corpus_dir / "manifest.jsonl").read_text(encoding="utf-8").splitlines()
    rec = json.loads(lines[0])
    assert set(rec) == {"id", "modality", "class", "token_ids", "image", "checksum"}
    vocab = (corpus_dir / "vocab.txt").read_text(encoding="utf-8").splitlines()
    assert vocab[0] == "<pad>"
    assert (corpus_dir / rec["image"]).is_file()


def test_reports_carry_one_matching_modality_token(corpus_dir):
    ds = Dataset(corpus_dir)
    mod_ids = {ds.vocab.index[m]: i for i, m in enumerate(MODALITIES)}
    for rec in ds.records:
        present = [mod_ids[t] for t in rec["token_ids"] if t in mod_ids]
        assert present == [rec["modality"]]
        assert len(rec["token_ids"]) >= 2
        assert 0 not in rec["token_ids"]


def test_images_in_unit_range(corpus_dir):
    ds = Dataset(corpus_dir)
    batch = ds.load_batch(np.arange(len(ds)))
    assert batch.images.shape == (400, 3, 64, 64)
    assert batch.images.min() >= 0.0 and batch.images.max() <= 1.0


def test_round_trip_matches_generator_after_f32(corpus_dir):
    ds = Dataset(corpus_dir)
    cfg = ds.config
    for i in (0, 137, 399):
        rec = ds.records[i]
        img, _ = render_sample(rec["id"], rec["modality"], rec["class"], cfg)
        np.testing.assert_array_equal(ds.image(i), img.astype(np.float32).astype(np.float64))


def test_nearest_centroid_separates_classes(corpus_dir):
    ds = Dataset(corpus_dir)
    images = ds.load_batch(np.arange(len(ds))).images[:, 0].reshape(len(ds), -1)
    for m in range(4):
        sel = ds.modality == m
        x, y = images[sel], ds.class_label[sel]
        centroids = np.stack([x[y == c].mean(axis=0) for c in range(4)])
        pred = np.argmin(((x[:, None] - centroids[None]) ** 2).sum(axis=2), axis=1)
        assert (pred == y).mean() > 0.9


def test_padding_rule():
    tokens, valid = pad_reports([[4, 5, 6], [1, 2, 3, 7, 8]])
    assert tokens.shape == (2, 5)
    assert valid.tolist() == [3, 5]
    assert tokens[0].tolist() == [4, 5, 6, 0, 0]


def test_flipped_byte_is_corrupt(tmp_path):
    root = generate_corpus(CorpusConfig(samples_per_modality=2, seed=0), tmp_path)
    path = root / "images/000001.mmt"
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptRecord):
        load_batch(root, [0, 1])


def test_index_out_of_range(corpus_dir):
    ds = Dataset(corpus_dir)
    with pytest.raises(IndexOutOfRange):
        ds.load_batch([400])
    with pytest.raises(IndexOutOfRange):
        ds.load_batch([-1])


@pytest.mark.parametrize(
    "kwargs", [{"height": 50}, {"width": 16}, {"noise": -0.1}, {"n_modalities": 5}, {"samples_per_modality": 0}]
)
def test_invalid_config(tmp_path, kwargs):
    with pytest.raises(InvalidConfig):
        generate_corpus(CorpusConfig(**kwargs), tmp_path)


def test_split_is_fixed_and_roughly_80_20(corpus_dir):
    ds = Dataset(corpus_dir)
    val = ds.split_indices("val")
    train = ds.split_indices("train")
    assert len(val) + len(train) == 400
    assert 0.1 < len(val) / 400 < 0.3
    assert split_of(5) == split_of(5)
    for m in range(4):
        assert (ds.modality[val] == m).sum() > 5


def test_sample_stream_documented_conversions():
    s = SampleStream(3, 9)
    raw = SampleStream(3, 9).raw(4)
    u = s.uniform(4)
    np.testing.assert_array_equal(u, (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53)
    assert ((u >= 0) & (u < 1)).all()
