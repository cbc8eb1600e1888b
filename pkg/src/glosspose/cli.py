"""Batch command-line surface.

Commands: gen-corpus, train, evaluate, align, grad-check. Every command is
idempotent (identical inputs overwrite outputs with identical bytes) and
exits 0 on success, 2 on usage errors, 3 on I/O errors, 4 on numeric
failures, each with a one-line machine-parsable message on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evalkit as ek
from . import gradcheck
from . import seqmodel as sm
from . import synthcorpus as sc
from . import trainer as tr
from .seqmodel import InputError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

GRAD_TOLERANCE = 1e-4

ABLATIONS = ("full", "no-csa", "no-msc", "none")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glosspose",
        description="gloss-to-pose production: corpus, training, evaluation, alignment")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-corpus", help="write a synthetic corpus file")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--vocab", type=int, default=20, help="content gloss count (>= 5)")
    gen.add_argument("--joints", type=int, default=8)
    gen.add_argument("--train", type=int, default=600)
    gen.add_argument("--dev", type=int, default=60)
    gen.add_argument("--test", type=int, default=60)
    gen.add_argument("--noise-std", type=float, default=0.02)

    train = sub.add_parser("train", help="train a model on a corpus")
    train.add_argument("--corpus", required=True)
    train.add_argument("--config", help="flat key=value config file")
    train.add_argument("--out-dir", required=True)
    train.add_argument("--ablation", choices=ABLATIONS, default="full",
                       help="gate the alignment/comparison losses")
    train.add_argument("--resume", help="train-state checkpoint to continue from")

    ev = sub.add_parser("evaluate", help="decode a split and write a metric report")
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=("train", "dev", "test"), default="dev")
    ev.add_argument("--out", required=True, help="report path base (.txt/.json added)")

    align = sub.add_parser("align", help="export one sample's alignment heatmaps")
    align.add_argument("--corpus", required=True)
    align.add_argument("--checkpoint", required=True)
    align.add_argument("--split", choices=("train", "dev", "test"), default="dev")
    align.add_argument("--sample", type=int, required=True)
    align.add_argument("--out", required=True, help="output path base")

    grad = sub.add_parser("grad-check", help="finite-difference check the losses")
    grad.add_argument("--which", choices=("acc", "ali", "com", "all"), default="all")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--seeds", type=int, default=10,
                      help="number of consecutive seeds to check")
    return parser


def _cmd_gen_corpus(args) -> int:
    manifest = sc.CorpusManifest(seed=args.seed, vocab=args.vocab, joints=args.joints,
                                 train=args.train, dev=args.dev, test=args.test,
                                 noise_std=args.noise_std)
    corpus = sc.generate(manifest)
    sc.save(corpus, args.out)
    sizes = {s: len(corpus.splits[s]) for s in ("train", "dev", "test")}
    print(f"wrote {args.out}: vocab={manifest.vocab}(+3 reserved) joints={manifest.joints} "
          f"seed={manifest.seed} noise_std={manifest.noise_std} samples={sizes}")
    return EXIT_OK


def _apply_ablation(cfg: tr.TrainConfig, ablation: str) -> tr.TrainConfig:
    from dataclasses import replace
    if ablation == "no-csa":
        return replace(cfg, beta=0.0)
    if ablation == "no-msc":
        return replace(cfg, gamma=0.0)
    if ablation == "none":
        return replace(cfg, beta=0.0, gamma=0.0)
    return cfg


def _cmd_train(args) -> int:
    corpus = sc.load(args.corpus)
    cfg = tr.load_config(args.config) if args.config else tr.TrainConfig()
    cfg = _apply_ablation(cfg, args.ablation)
    result = tr.train(cfg, corpus, args.out_dir, resume_from=args.resume)
    summary = result.dev_report.summary()
    print(f"trained {cfg.epochs} epochs -> {result.final_checkpoint} "
          f"(dev dtw_p={summary['dtw_p']:.4f}, tau={summary['alignment_tau']:.4f})")
    return EXIT_OK


def _load_params_for(corpus, checkpoint_path) -> sm.ModelParams:
    params = sm.load_params(checkpoint_path)
    if params.config.pose_dim != 3 * corpus.manifest.joints:
        raise InputError(
            f"checkpoint expects {params.config.pose_dim // 3} joints, "
            f"corpus has {corpus.manifest.joints}")
    if params.config.vocab_size != len(corpus.vocab):
        raise InputError("checkpoint vocabulary size does not match the corpus")
    return params


def _cmd_evaluate(args) -> int:
    corpus = sc.load(args.corpus)
    params = _load_params_for(corpus, args.checkpoint)
    report = ek.evaluate_corpus(params, corpus, args.split)
    txt, js = report.save(args.out)
    print(" ".join(f"{k}={v:.6f}" for k, v in report.summary().items()))
    print(f"wrote {txt} and {js}")
    return EXIT_OK


def _cmd_align(args) -> int:
    corpus = sc.load(args.corpus)
    params = _load_params_for(corpus, args.checkpoint)
    samples = corpus.splits[args.split]
    if not 0 <= args.sample < len(samples):
        raise InputError(f"sample index {args.sample} outside split "
                         f"{args.split!r} of size {len(samples)}")
    sample = samples[args.sample]
    sim = ek.sample_alignment_matrix(params, sample)
    attn = ek.sample_cross_attention(params, sample)
    base = Path(args.out)
    sim_files = ek.export_heatmap(sim, base.parent / (base.name + "_sim"))
    attn_files = ek.export_heatmap(attn, base.parent / (base.name + "_attn"))
    tau, acc = ek.alignment_metrics(sim, sample.alignment)
    print(f"sample={args.sample} tau={tau:.6f} segment_accuracy={acc:.6f}")
    for f in (*sim_files, *attn_files):
        print(f"wrote {f}")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    failed = False
    print(f"{'loss':<6} {'max_rel_err':>12}  result")
    for name in (("acc", "ali", "com") if args.which == "all" else (args.which,)):
        worst = max(gradcheck.CHECKS[name](s) for s in seeds)
        ok = worst < GRAD_TOLERANCE
        failed = failed or not ok
        print(f"{name:<6} {worst:>12.3e}  {'pass' if ok else 'FAIL'}")
    if failed:
        print("error: gradient check exceeded tolerance", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "align": _cmd_align,
    "grad-check": _cmd_grad_check,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (sc.CorpusError, sm.CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except tr.NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
