"""Command-line entry point: ``mgr <command> [flags]``.

Every run writes ``manifest.json`` into its output directory before anything
else, then rewrites it on completion with the list of artifacts.  The exit
status is 0 only when every listed artifact exists.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import experiments
from .data import SyntheticSpec, Vocabulary, generate_synthetic, load_dataset, load_embeddings, write_embeddings
from .entropy import theorem2_sweep
from .game import SWEEP_HEADER, sweep
from .gradcheck import standard_suite
from .metrics import write_rationale_dump
from .models import MgrModel, load_model, save_model
from .training import TrainConfig, TrainingDiverged, evaluate_model, load_config, train_loop, write_log

COMMANDS = ("synth-data", "train", "evaluate", "skew-exp", "game-sweep", "entropy-check", "grad-check")
log = logging.getLogger("mgr")


class UsageError(Exception):
    pass


class Run:
    """Output directory plus the manifest that describes it."""

    def __init__(self, command, args, config=None):
        self.out = args.out or os.path.join("runs", command)
        os.makedirs(self.out, exist_ok=True)
        self.artifacts = []
        self.manifest = {
            "command": command,
            "config_path": getattr(args, "config", None),
            "output_dir": os.path.abspath(self.out),
            "seed": args.seed,
            "argv": sys.argv[1:],
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "config": config or {},
        }
        self._write_manifest()

    def path(self, name):
        p = os.path.join(self.out, name)
        self.artifacts.append(name)
        return p

    def _write_manifest(self):
        with open(os.path.join(self.out, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")

    def finish(self, status="ok"):
        missing = [a for a in self.artifacts if not os.path.exists(os.path.join(self.out, a))]
        self.manifest.update(finished=time.strftime("%Y-%m-%dT%H:%M:%S"), artifacts=self.artifacts,
                             missing=missing, status=status if not missing else "incomplete")
        self._write_manifest()
        return 0 if not missing and status == "ok" else 1


def _train_overrides(args):
    keys = ("n", "eta", "lambda1", "lambda2", "sparsity_target", "skew_epochs", "epochs", "hidden_size", "seed")
    return {k: getattr(args, k, None) for k in keys if getattr(args, k, None) is not None}


def resolve_config(args):
    """Config file (if any) overlaid with command-line overrides."""
    overrides = _train_overrides(args)
    if args.config:
        return load_config(args.config, **overrides)
    return TrainConfig(**overrides)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _synthetic_spec(args, **extra):
    kw = dict(seed=args.seed)
    if getattr(args, "rho", None) is not None:
        kw["rho"] = args.rho
    return SyntheticSpec(**{**experiments.CORPUS, **kw, **extra})


def _load_corpus(args):
    """(train, dev, test-or-None, embedding matrix) from --data or a fresh synthetic corpus."""
    if args.data:
        emb = load_embeddings(os.path.join(args.data, "embeddings.txt"))
        splits = {}
        for name in ("train", "dev", "test"):
            path = os.path.join(args.data, f"{name}.tsv")
            splits[name] = load_dataset(path, emb.vocab, name=name) if os.path.exists(path) else None
        if splits["train"] is None or splits["dev"] is None:
            raise UsageError(f"{args.data}: needs train.tsv and dev.tsv")
        return splits["train"], splits["dev"], splits["test"], emb.matrix
    c = generate_synthetic(_synthetic_spec(args))
    return c.train, c.dev, c.test, c.embeddings


# ---------------------------------------------------------------------------
# commands


def cmd_synth_data(args):
    extra = {"first_segment": args.first_segment} if args.first_segment else {}
    spec = _synthetic_spec(args, **extra)
    run = Run("synth-data", args, asdict(spec))
    corpus = generate_synthetic(spec)
    for name in ("train", "dev", "test"):
        getattr(corpus, name).write(run.path(f"{name}.tsv"))
    write_embeddings(run.path("embeddings.txt"), corpus.vocab, corpus.embeddings)
    with open(run.path("spec.json"), "w", encoding="utf-8") as fh:
        json.dump(asdict(spec), fh, indent=2)
    return run.finish()


def cmd_train(args):
    cfg = resolve_config(args)
    run = Run("train", args, asdict(cfg))
    train, dev, _, emb = _load_corpus(args)
    model = MgrModel(emb, n=cfg.n, hidden_size=cfg.hidden_size, seed=cfg.seed,
                     share_encoder=cfg.share_encoder, pooling=cfg.pooling)
    status = "ok"
    try:
        if cfg.skew_epochs:
            from .training import skew_pretrain
            skew_pretrain(model, train, cfg)
        result = train_loop(model, train, dev, cfg)
    except TrainingDiverged as err:
        log.error("%s", err)
        result, status = err.result, "diverged"
    write_log(run.path("metrics.csv"), result.log, model.n)
    save_model(run.path("model.npz"), model,
               extra={"train_config": asdict(cfg), "vocab": train.vocab.id_to_token[2:],
                      "class_count": train.vocab.class_count, "best_epoch": result.best_epoch})
    return run.finish(status)


def cmd_evaluate(args):
    if not args.checkpoint:
        raise UsageError("evaluate needs --checkpoint")
    model, extra = load_model(args.checkpoint)
    run = Run("evaluate", args, {"checkpoint": args.checkpoint, "generator": args.generator})
    vocab = Vocabulary(extra.get("vocab", []), class_count=extra.get("class_count", 2))
    if args.corpus:
        split = load_dataset(args.corpus, vocab, name="eval")
    elif args.data:
        split = load_dataset(os.path.join(args.data, f"{args.split}.tsv"), vocab, name=args.split)
    else:
        raise UsageError("evaluate needs --corpus FILE or --data DIR")
    if not 1 <= args.generator <= model.n:
        raise UsageError(f"--generator must lie in [1, {model.n}]")
    report = evaluate_model(model, split, args.generator - 1)
    row = report.as_row()
    _write_csv(run.path("eval.csv"), list(row), [list(row.values())])
    write_rationale_dump(run.path("rationales.tsv"), split.labels, report.predictions, report.masks)
    print(",".join(f"{k}={v}" for k, v in row.items()))
    return run.finish()


def cmd_skew_exp(args):
    level = args.skew_epochs if args.skew_epochs is not None else max(experiments.SKEW_LEVELS)
    n = args.n if args.n is not None else 3
    if n < 3:
        raise UsageError("skew-exp compares RNP against MGR with n >= 3")
    seeds = list(range(args.seed, args.seed + args.seeds))
    overrides = {k: v for k, v in _train_overrides(args).items() if k not in ("n", "skew_epochs", "seed")}
    if args.config:
        file_cfg = asdict(load_config(args.config))
        overrides = {**{k: file_cfg[k] for k in experiments.TRAIN}, **overrides}
    _, cfg = experiments.skew_setup(args.seed, level, n=n, **overrides)
    run = Run("skew-exp", args, {**asdict(cfg), "seeds": seeds})
    kw = dict(skew_epochs=level, **overrides)
    if args.rho is not None:
        kw["rho"] = args.rho
    results = experiments.compare(experiments.skew_setup, seeds, ns=(1, n), **kw)
    _write_csv(run.path("skew_runs.csv"), ("setting", "method", "seed", "S", "Acc", "P", "R", "F1", "F1_all_gen"),
               [(f"skew{level}", r.method, r.seed, *_pct(r.sparsity, r.accuracy, r.precision, r.recall, r.f1_g1, r.f1_avg))
                for r in results])
    summary = experiments.summarize(results)
    rows = [(f"skew{level}", m, *_pct(s["sparsity"], s["accuracy"], s["precision"], s["recall"], s["f1_g1"]))
            for m, s in summary.items()]
    _write_csv(run.path("skew_table.csv"), ("setting", "method", "S", "Acc", "P", "R", "F1"), rows)
    for r in rows:
        print(",".join(map(str, r)))
    return run.finish()


def _pct(*vals):
    return [f"{100 * v:.2f}" for v in vals]


def cmd_game_sweep(args):
    pc = 0.67 if args.pc is None else args.pc
    run = Run("game-sweep", args, {"P_c": pc, "n_max": args.n_max, "trials": args.trials})
    rows = sweep(pc, args.n_max, trials=args.trials, seed=args.seed)
    _write_csv(run.path("game_sweep.csv"), SWEEP_HEADER, [(n, p, f"{e:.9f}", f"{m:.9f}", f"{s:.9f}") for n, p, e, m, s in rows])
    return run.finish()


def cmd_entropy_check(args):
    run = Run("entropy-check", args, {"count": args.count})
    rows = theorem2_sweep(args.count, seed=args.seed)
    width = max(len(r["marginals"]) for _, r in rows)
    header = ["tag", *[f"H_marginal_{i + 1}" for i in range(width)], "H_joint", "sum_marginals"]
    out = []
    ok = True
    for tag, r in rows:
        marg = [f"{h:.12f}" for h in r["marginals"]] + [""] * (width - len(r["marginals"]))
        out.append([tag, *marg, f"{r['joint']:.12f}", f"{sum(r['marginals']):.12f}"])
        ok &= r["lower_ok"] and r["upper_ok"]
    _write_csv(run.path("theorem2.csv"), header, out)
    print(f"{len(rows)} distributions, bounds {'hold' if ok else 'VIOLATED'}")
    return run.finish("ok" if ok else "bound-violation")


def cmd_grad_check(args):
    run = Run("grad-check", args, {"tolerance": args.tolerance})
    results = standard_suite(seed=args.seed, tolerance=args.tolerance)
    lines = [f"{name}: {'PASS' if r.passed else 'FAIL'} max_rel_error={r.max_rel_error:.3e}" for name, r in results]
    with open(run.path("grad_check.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
        for name, r in results:
            fh.write(f"\n[{name}]\n{r.summary()}\n")
    print("\n".join(lines))
    ok = all(r.passed for _, r in results)
    return run.finish("ok" if ok else "gradient-mismatch")


HANDLERS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "skew-exp": cmd_skew_exp,
    "game-sweep": cmd_game_sweep,
    "entropy-check": cmd_entropy_check,
    "grad-check": cmd_grad_check,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file with TrainConfig fields")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output directory (default runs/<command>)")

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--n", type=int)
    train_flags.add_argument("--eta", type=float)
    train_flags.add_argument("--lambda1", type=float)
    train_flags.add_argument("--lambda2", type=float)
    train_flags.add_argument("--sparsity-target", type=float)
    train_flags.add_argument("--skew-epochs", type=int)
    train_flags.add_argument("--epochs", type=int)
    train_flags.add_argument("--hidden-size", type=int)

    data_flags = argparse.ArgumentParser(add_help=False)
    data_flags.add_argument("--data", help="directory written by synth-data")
    data_flags.add_argument("--rho", type=float, help="spurious correlation of a fresh synthetic corpus")

    p = argparse.ArgumentParser(prog="mgr", description="Multi-generator rationalization experiments.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    s = sub.add_parser("synth-data", parents=[common], help="write a synthetic corpus")
    s.add_argument("--rho", type=float)
    s.add_argument("--first-segment", type=int, default=0)
    sub.add_parser("train", parents=[common, train_flags, data_flags], help="train and checkpoint a model")
    s = sub.add_parser("evaluate", parents=[common, data_flags], help="score a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--corpus", help="corpus file (overrides --data)")
    s.add_argument("--split", default="test")
    s.add_argument("--generator", type=int, default=1)
    s = sub.add_parser("skew-exp", parents=[common, train_flags], help="RNP vs MGR after skew pretraining")
    s.add_argument("--rho", type=float)
    s.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    s = sub.add_parser("game-sweep", parents=[common], help="exact and Monte Carlo p_spurious")
    s.add_argument("--pc", type=float)
    s.add_argument("--n-max", type=int, default=9)
    s.add_argument("--trials", type=int, default=1_000_000)
    s = sub.add_parser("entropy-check", parents=[common], help="entropy bound sweep")
    s.add_argument("--count", type=int, default=1000)
    s = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--tolerance", type=float, default=1e-4)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"mgr {args.command}: error: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as err:
        print(f"mgr {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
