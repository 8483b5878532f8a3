"""``scalemoe`` command line.

Subcommands: gen-data, train, eval-zeroshot, probe, export-attn,
count-experts, inspect-ckpt.  ``train`` accepts ``--config FILE`` plus any
TrainConfig field as ``--<field> VALUE`` (underscores or dashes), flags
winning over the file.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, fields
from typing import Optional, Sequence

import numpy as np

from ..exceptions import ScaleMoEError
from ..synthcorpus import CorpusConfig, Dataset, generate_corpus
from .attention import export_attention
from .checkpoint import load_checkpoint
from .config import TrainConfig, load_config
from .evaluate import count_active_experts, linear_probe, zero_shot_eval
from .metrics import format_record
from .train import train


def _add_train_fields(p: argparse.ArgumentParser) -> None:
    for f in fields(TrainConfig):
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        p.add_argument(*names, dest=f.name, default=None, metavar=f.name.upper(), required=f.name == "seed")


def _add_ckpt_dataset(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ckpt", required=True, help="checkpoint file (.mmck)")
    p.add_argument("--dataset", required=True, help="corpus directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scalemoe", description="Train and evaluate scale-expert image/report models.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, required=True)
    defaults = CorpusConfig()
    for f in fields(CorpusConfig):
        if f.name != "seed":
            g.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(getattr(defaults, f.name)), default=None)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", default=None, help="key = value config file")
    _add_train_fields(t)
    t.add_argument("--quiet", action="store_true")

    z = sub.add_parser("eval-zeroshot", help="prompt-based classification accuracy")
    _add_ckpt_dataset(z)
    z.add_argument("--split", default="val", choices=("train", "val", "all"))
    z.add_argument("--router-input", default=None, choices=("text", "image"))

    p = sub.add_parser("probe", help="linear probe on frozen image embeddings")
    _add_ckpt_dataset(p)
    p.add_argument("--fraction", type=float, action="append", help="repeatable; default 0.01, 0.1, 1.0")
    p.add_argument("--probe-seed", type=int, default=0)

    a = sub.add_parser("export-attn", help="per-token attention heatmaps for one sample")
    _add_ckpt_dataset(a)
    a.add_argument("--sample-id", type=int, required=True)
    a.add_argument("--out", required=True)

    c = sub.add_parser("count-experts", help="expert activation histogram over a dataset")
    _add_ckpt_dataset(c)
    c.add_argument("--router-input", default=None, choices=("text", "image"))

    i = sub.add_parser("inspect-ckpt", help="print checkpoint contents")
    i.add_argument("--ckpt", required=True)
    return parser


def _cmd_gen_data(args) -> None:
    overrides = {f.name: getattr(args, f.name) for f in fields(CorpusConfig) if f.name != "seed"}
    cfg = CorpusConfig(seed=args.seed, **{k: v for k, v in overrides.items() if v is not None})
    out = generate_corpus(cfg, args.out)
    print(f"wrote {cfg.n_samples} samples to {out}")


def _cmd_train(args) -> None:
    overrides = {f.name: getattr(args, f.name) for f in fields(TrainConfig)}
    cfg = load_config(args.config, overrides)

    def progress(record):
        if not args.quiet and (record["step"] % 50 == 0 or record["step"] == cfg.steps):
            print(format_record(record), flush=True)

    result = train(cfg, progress=progress)
    for ev in result.evals:
        print(format_record(ev))
    print(f"checkpoint {result.checkpoint}")


def _cmd_eval_zeroshot(args) -> None:
    ckpt = load_checkpoint(args.ckpt)
    result = zero_shot_eval(
        ckpt.build_model(), Dataset(args.dataset), split=args.split, router_input=args.router_input or ckpt.config.router_input
    )
    print("\n".join(result.lines()))


def _cmd_probe(args) -> None:
    model = load_checkpoint(args.ckpt).build_model()
    ds = Dataset(args.dataset)
    for fraction in args.fraction or (0.01, 0.1, 1.0):
        res = linear_probe(model, ds, fraction, seed=args.probe_seed)
        print(f"fraction={res.fraction!r} n_train={res.n_train} accuracy={res.accuracy!r}")


def _cmd_export_attn(args) -> None:
    ckpt = load_checkpoint(args.ckpt)
    res = export_attention(ckpt.build_model(), Dataset(args.dataset), args.sample_id, args.out, tau=ckpt.config.tau)
    print(f"wrote {len(res.files)} heatmaps and {res.summary} (expert {res.expert})")


def _cmd_count_experts(args) -> None:
    ckpt = load_checkpoint(args.ckpt)
    ds = Dataset(args.dataset)
    counter = count_active_experts(ckpt.build_model(), ds, router_input=args.router_input or ckpt.config.router_input)
    for k, n in counter.histogram(ckpt.config.n_experts).items():
        print(f"expert={k} samples={n}")
    print(f"total={sum(counter.samples.values())} samples_in_dataset={len(ds)}")


def _cmd_inspect_ckpt(args) -> None:
    ckpt = load_checkpoint(args.ckpt)
    print(f"step={ckpt.step} vocab_size={ckpt.vocab_size} n_types={ckpt.n_types}")
    for key, value in asdict(ckpt.config).items():
        print(f"config.{key}={value}")
    total = 0
    for name in sorted(ckpt.state):
        arr = ckpt.state[name]
        total += arr.size
        print(f"{name} shape={'x'.join(map(str, arr.shape)) or 'scalar'} norm={float(np.linalg.norm(arr)):.6g}")
    print(f"entries={len(ckpt.state)} values={total}")


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval-zeroshot": _cmd_eval_zeroshot,
    "probe": _cmd_probe,
    "export-attn": _cmd_export_attn,
    "count-experts": _cmd_count_experts,
    "inspect-ckpt": _cmd_inspect_ckpt,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ScaleMoEError as exc:
        print(f"scalemoe {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
