import math

import numpy as np
import pytest

from scalemoe.exceptions import (
    CorruptRecord,
    IndexOutOfRange,
    InsufficientData,
    InvalidConfig,
    MissingPrompt,
    NonFiniteLoss,
)
from scalemoe.harness import cli
from scalemoe.harness.attention import export_attention, pgm_bytes, to_gray, write_pgm
from scalemoe.harness.checkpoint import (
    decode_entries,
    load_checkpoint,
    model_from_config,
    save_loaded,
)
from scalemoe.harness.config import TrainConfig, load_config, parse_config_text
from scalemoe.harness.estimator import ScaleMoE
from scalemoe.harness.evaluate import (
    count_active_experts,
    embed_prompts,
    fraction_subset,
    linear_probe,
    zero_shot_eval,
    zero_shot_predict,
)
from scalemoe.harness.metrics import format_record, parse_record, read_log
from scalemoe.harness.probe import LinearProbe
from scalemoe.harness.train import Shuffle, train
from scalemoe.synthcorpus import Dataset

TINY = dict(channels="4,4,8,8", embed_dim=8, router_hidden=8, batch_size=8)


def tiny_cfg(corpus_dir, out_dir, **kw):
    return TrainConfig(dataset=str(corpus_dir), out_dir=str(out_dir), **{**TINY, "steps": 3, "eval_every": 2, **kw})


@pytest.fixture(scope="module")
def dataset(corpus_dir):
    return Dataset(corpus_dir)


@pytest.fixture(scope="module")
def tiny_run(corpus_dir, tmp_path_factory, dataset):
    return train(tiny_cfg(corpus_dir, tmp_path_factory.mktemp("run")), dataset)


# -- config -----------------------------------------------------------------


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# comment\nbatch_size = 16\nlr = 0.2\nsymmetric_global = true\n\n", encoding="utf-8")
    cfg = load_config(path, {"lr": "0.3", "seed": None})
    assert cfg.batch_size == 16 and cfg.lr == 0.3 and cfg.symmetric_global is True
    assert load_config(overrides=parse_config_text(cfg.to_text())) == cfg


@pytest.mark.parametrize(
    "kw",
    [{"batch_size": 1}, {"lr": -1.0}, {"tau": 0.0}, {"router_input": "audio"}, {"align_level": 5}, {"channels": "1,2"}],
)
def test_config_validation(kw):
    with pytest.raises(InvalidConfig):
        TrainConfig(**kw).validate()


def test_config_unknown_key(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("batchsize = 3\n", encoding="utf-8")
    with pytest.raises(InvalidConfig):
        load_config(path)


# -- metrics ----------------------------------------------------------------


def test_metrics_record_round_trip():
    rec = {"step": 3, "total": 0.1 + 0.2, "experts": {0: 2, 1: 0}}
    line = format_record(rec)
    assert line == "step=3 total=0.30000000000000004 experts=0:2,1:0"
    assert parse_record(line) == {"step": 3, "total": 0.30000000000000004, "experts": "0:2,1:0"}


# -- training ---------------------------------------------------------------


def test_shuffle_is_fixed_by_seed_and_step():
    a, b = Shuffle(np.arange(20), 6, 3), Shuffle(np.arange(20), 6, 3)
    assert all((a.batch(k) == b.batch(k)).all() for k in (0, 5, 2, 7))
    epoch = np.concatenate([a.batch(k) for k in range(3)])
    assert len(set(epoch.tolist())) == 18


def test_one_record_per_step_and_files(tiny_run):
    records = read_log(tiny_run.metrics)
    assert [r["step"] for r in records] == [1, 2, 3]
    assert set(records[0]) >= {"global", "local", "aux", "total", "route_text", "route_image", "experts"}
    assert sum(int(p.split(":")[1]) for p in records[0]["experts"].split(",")) == 8
    assert len(read_log(tiny_run.out_dir / "metrics.wall")) == 3
    assert [e["step"] for e in read_log(tiny_run.out_dir / "eval.log")] == [2, 3]
    assert tiny_run.checkpoint.is_file()


def test_zero_learning_rate_keeps_parameters(corpus_dir, tmp_path, dataset):
    cfg = tiny_cfg(corpus_dir, tmp_path, steps=2, lr=0.0, eval_every=10)
    init = model_from_config(cfg, len(dataset.vocab), dataset.n_modalities)
    before = {k: p.data.copy() for k, p in init.named_parameters()}
    model = train(cfg.replace(eval_every=100, steps=2), dataset).model
    for name, p in model.named_parameters():
        np.testing.assert_array_equal(p.data, before[name].astype(np.float32))


def test_same_seed_same_metrics_bytes(corpus_dir, tmp_path, dataset):
    # same output directory too: the checkpoint stores the config, out_dir included
    a = train(tiny_cfg(corpus_dir, tmp_path), dataset)
    first = (a.metrics.read_bytes(), a.checkpoint.read_bytes())
    b = train(tiny_cfg(corpus_dir, tmp_path), dataset)
    assert b.metrics.read_bytes() == first[0]
    assert b.checkpoint.read_bytes() == first[1]
    c = train(tiny_cfg(corpus_dir, tmp_path, seed=1), dataset)
    assert c.metrics.read_bytes() != first[0]


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_non_finite_loss_names_step(corpus_dir, tmp_path, dataset):
    with pytest.raises(NonFiniteLoss) as info:
        train(tiny_cfg(corpus_dir, tmp_path, lr=1e200, grad_clip=0.0, steps=5), dataset)
    assert info.value.step >= 2


def test_gradient_accumulation_runs(corpus_dir, tmp_path, dataset):
    res = train(tiny_cfg(corpus_dir, tmp_path, steps=2, grad_accum=2), dataset)
    assert sum(res.records[0]["experts"].values()) == 16


# -- checkpoint -------------------------------------------------------------


def test_default_config_loss_decreases(corpus_dir, tmp_path, dataset):
    # regression baseline: full-size default model, 300 steps (about three minutes)
    cfg = TrainConfig(dataset=str(corpus_dir), out_dir=str(tmp_path), seed=0, steps=300, eval_every=300)
    totals = np.array([r["total"] for r in train(cfg, dataset).records])
    assert totals[249:300].mean() < totals[:50].mean()


def test_checkpoint_round_trip_bit_identical(tiny_run, dataset, tmp_path):
    ckpt = load_checkpoint(tiny_run.checkpoint)
    assert ckpt.step == 3 and ckpt.vocab_size == len(dataset.vocab)
    save_loaded(tmp_path / "again.mmck", ckpt)
    assert (tmp_path / "again.mmck").read_bytes() == tiny_run.checkpoint.read_bytes()

    batch = dataset.load_batch(np.arange(8))
    model = tiny_run.model.eval()
    restored = ckpt.build_model().eval()
    a = model.forward(batch.images, batch.token_ids, batch.valid_len, batch.modality)
    b = restored.forward(batch.images, batch.token_ids, batch.valid_len, batch.modality)
    assert a.losses.total.item() == b.losses.total.item()
    np.testing.assert_array_equal(a.local.V.data, b.local.V.data)
    np.testing.assert_array_equal(a.v_g.data, b.v_g.data)
    model.train()


def test_checkpoint_layout_and_corruption(tiny_run, tmp_path):
    data = tiny_run.checkpoint.read_bytes()
    assert data[:4] == b"MMCK"
    assert int.from_bytes(data[4:8], "little") == 1
    _, entries = decode_entries(data)
    assert int.from_bytes(data[8:12], "little") == len(entries)
    assert {"__config__", "__model__", "__step__"} <= set(entries)
    bad = tmp_path / "bad.mmck"
    bad.write_bytes(data[:-5])
    with pytest.raises(CorruptRecord):
        load_checkpoint(bad)


# -- evaluation -------------------------------------------------------------


def test_eval_does_not_mutate_model(tiny_run, dataset):
    model = tiny_run.model
    before = {k: v.copy() for k, v in model.state_dict().items()}
    zero_shot_eval(model, dataset)
    linear_probe(model, dataset, 0.1, iterations=20)
    count_active_experts(model, dataset, np.arange(50))
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
    assert model.training


def test_zero_shot_self_match_oracle(tiny_run, dataset):
    prompt_emb = embed_prompts(tiny_run.model, dataset.prompts, 4, 4)
    modality = np.repeat(np.arange(4), 4)
    cls = np.tile(np.arange(4), 4)
    pred = zero_shot_predict(prompt_emb[modality, cls], prompt_emb, modality)
    assert (pred == cls).all()


def test_zero_shot_missing_prompt(tiny_run, dataset):
    prompts = dict(dataset.prompts)
    del prompts[(2, 1)]
    with pytest.raises(MissingPrompt):
        zero_shot_eval(tiny_run.model, dataset, prompts)


def test_untrained_zero_shot_near_chance(corpus_dir, dataset):
    cfg = TrainConfig(dataset=str(corpus_dir), **TINY)
    model = model_from_config(cfg, len(dataset.vocab), 4)
    res = zero_shot_eval(model, dataset, split="all")
    assert 0.15 <= res.overall <= 0.35


def test_probe_on_separable_features():
    rng = np.random.default_rng(0)
    centers = np.eye(4) * 3
    y = np.repeat(np.arange(4), 30)
    X = centers[y] + 0.1 * rng.normal(size=(120, 4))
    probe = LinearProbe().fit(X[::2], y[::2])
    assert probe.score(X[1::2], y[1::2]) == 1.0
    np.testing.assert_allclose(probe.predict_proba(X).sum(axis=1), 1.0)


def test_probe_fraction_floor(dataset):
    labels = dataset.class_label[dataset.split_indices("train")]
    with pytest.raises(InsufficientData):
        fraction_subset(labels, 0.001)
    sub = fraction_subset(labels, 0.01)
    assert np.bincount(labels[sub]).tolist() == [1, 1, 1, 1]
    assert len(fraction_subset(labels, 1.0)) == len(labels)


def test_count_experts_conservation(tiny_run, dataset):
    counter = count_active_experts(tiny_run.model, dataset)
    assert sum(counter.histogram(4).values()) == len(dataset)
    assert counter.per_sample_runs == [1] * len(dataset)


def test_single_expert_counts_all_on_zero(corpus_dir, dataset):
    cfg = TrainConfig(dataset=str(corpus_dir), **{**TINY, "n_experts": 1})
    counter = count_active_experts(model_from_config(cfg, len(dataset.vocab), 4), dataset, np.arange(40))
    assert counter.histogram(1) == {0: 40}


# -- attention export -------------------------------------------------------


def test_pgm_format():
    gray = to_gray(np.arange(6, dtype=float).reshape(2, 3))
    assert gray.tolist() == [[0, 51, 102], [153, 204, 255]]
    assert pgm_bytes(gray) == b"P5\n3 2\n255\n" + bytes([0, 51, 102, 153, 204, 255])
    assert to_gray(np.full((4, 4), 0.0625)).tolist() == [[0] * 4] * 4


def test_export_counts_and_header(tiny_run, dataset, tmp_path):
    sid = int(dataset.sample_ids[5])
    n_valid = len(dataset.records[5]["token_ids"])
    res = export_attention(tiny_run.model, dataset, sid, tmp_path)
    assert len(res.files) == n_valid
    assert len(list(tmp_path.glob("*.pgm"))) == n_valid
    assert len(list(tmp_path.iterdir())) == n_valid + 1
    for f in res.files:
        blob = f.read_bytes()
        assert blob.startswith(b"P5\n64 64\n255\n") and len(blob) == 13 + 64 * 64
    assert math.isclose(sum(res.beta_means), 1.0, abs_tol=1e-9)


def test_export_unknown_sample(tiny_run, dataset, tmp_path):
    with pytest.raises(IndexOutOfRange):
        export_attention(tiny_run.model, dataset, 10_000, tmp_path)


def test_write_pgm_uniform(tmp_path):
    path = write_pgm(tmp_path / "u.pgm", np.full((64, 64), 1 / 16))
    assert path.read_bytes() == b"P5\n64 64\n255\n" + bytes(64 * 64)


# -- estimator --------------------------------------------------------------


def test_estimator_api(corpus_dir, tmp_path, dataset):
    est = ScaleMoE(out_dir=str(tmp_path), steps=2, eval_every=2, **TINY)
    assert est.get_params()["embed_dim"] == 8
    est.fit(dataset)
    images = dataset.load_batch(np.arange(5)).images
    emb = est.transform(images)
    assert emb.shape == (5, 8)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-9)
    assert est.predict(images).shape == (5,)
    again = ScaleMoE.from_checkpoint(est.checkpoint_path_)
    np.testing.assert_array_equal(again.transform(images), emb)


# -- command line -----------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    data, run = tmp_path / "data", tmp_path / "run"
    assert cli.main(["gen-data", "--out", str(data), "--seed", "3", "--samples-per-modality", "12"]) == 0
    cfg = tmp_path / "train.txt"
    cfg.write_text("steps = 2\nchannels = 4,4,8,8\nembed_dim = 8\nrouter_hidden = 8\n", encoding="utf-8")
    assert cli.main(["train", "--config", str(cfg), "--dataset", str(data), "--out-dir", str(run), "--seed", "1",
                     "--batch_size", "4", "--quiet"]) == 0
    ckpt = str(run / "checkpoint.mmck")
    assert load_checkpoint(ckpt).config.batch_size == 4
    assert cli.main(["eval-zeroshot", "--ckpt", ckpt, "--dataset", str(data)]) == 0
    assert cli.main(["probe", "--ckpt", ckpt, "--dataset", str(data), "--fraction", "1.0"]) == 0
    assert cli.main(["export-attn", "--ckpt", ckpt, "--dataset", str(data), "--sample-id", "0", "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["count-experts", "--ckpt", ckpt, "--dataset", str(data)]) == 0
    assert cli.main(["inspect-ckpt", "--ckpt", ckpt]) == 0
    out = capsys.readouterr().out
    assert "macro=" in out and "total=48 samples_in_dataset=48" in out and "step=2" in out


@pytest.mark.parametrize("command", ["gen-data", "train"])
def test_cli_seed_is_mandatory(command, tmp_path):
    with pytest.raises(SystemExit):
        cli.main([command, "--out", str(tmp_path)] if command == "gen-data" else [command, "--dataset", str(tmp_path)])


def test_cli_reports_package_errors(tmp_path, capsys):
    assert cli.main(["inspect-ckpt", "--ckpt", str(tmp_path / "missing.mmck")]) == 1
    assert "IoFailure" in capsys.readouterr().err
