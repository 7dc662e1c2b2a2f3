"""Command-line front end: train, compare-guessers, compare-mi, gen-data, eval.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data as data_mod
from . import metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .trainer import GUESSERS, Trainer, train_unsupervised

log = logging.getLogger("semisup")

GUESSER_COLUMNS = ("epoch", "guesser", "coverage", "precision_all", "precision_valid", "test_acc", "batch_hash")
MI_COLUMNS = ("epoch", "loss_kind", "loss", "aligned_acc", "batch_hash")


class UsageError(Exception):
    pass


def _write_rows(path: Path, columns, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _run_config(args) -> RunConfig:
    cfg = config_mod.load(args.config)
    return cfg.with_overrides(
        seed=args.seed,
        out_dir=args.out_dir,
        labels_per_class=args.labels_per_class,
        data=args.data,
        alpha=args.alpha,
        tau=args.tau,
        guesser=args.guesser,
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
    )


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _run_config(args)
    sp = cfg.data.split(cfg.seed)
    out = _out_dir(cfg)
    trainer = Trainer(cfg.train, sp)
    report = trainer.fit(checkpoint_every=args.checkpoint_every, checkpoint_dir=out)
    report.to_csv(out / "report.csv")
    report.to_json(out / "summary.json")
    save_checkpoint(trainer, out / "final.ckpt")
    print(f"final EMA test accuracy: {report.final_ema_accuracy:.4f}")
    print(f"wrote {out / 'report.csv'}, {out / 'summary.json'}, {out / 'final.ckpt'}")
    return 0


def cmd_compare_guessers(args) -> int:
    cfg = _run_config(args)
    sp = cfg.data.split(cfg.seed)
    out = _out_dir(cfg)
    rows, finals, hashes = [], {}, {}
    for guesser in ("dtm", "confidence"):
        report = Trainer(replace(cfg.train, guesser=guesser), sp).fit()
        report.to_csv(out / f"report_{guesser}.csv")
        for r in report.records:
            rows.append(
                {
                    "epoch": r.epoch,
                    "guesser": guesser,
                    "coverage": r.coverage,
                    "precision_all": r.precision_all,
                    "precision_valid": r.precision_valid,
                    "test_acc": r.test_acc,
                    "batch_hash": r.batch_hash,
                }
            )
        finals[guesser] = report.records[-1] if report.records else None
        hashes[guesser] = [r.batch_hash for r in report.records]
    _write_rows(out / "compare_guessers.csv", GUESSER_COLUMNS, rows)
    same = hashes["dtm"] == hashes["confidence"]
    log.info("batch orderings identical across legs: %s", same)
    summary = {
        "batch_hashes_equal": same,
        **{f"{g}_final_{k}": getattr(r, k) for g, r in finals.items() if r for k in ("precision_all", "coverage", "test_acc")},
    }
    (out / "compare_guessers.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for g, r in finals.items():
        if r:
            print(f"{g:>10}: precision_all {r.precision_all:.4f}  coverage {r.coverage:.4f}  test_acc {r.test_acc:.4f}")
    return 0


def cmd_compare_mi(args) -> int:
    cfg = _run_config(args)
    sp = cfg.data.split(cfg.seed)
    out = _out_dir(cfg)
    rows, reports = [], {}
    for kind in ("tmi", "pair"):
        rep, _, _ = train_unsupervised(cfg.train, sp, loss=kind)
        reports[kind] = rep
        rows.extend({"loss_kind": kind, **r} for r in rep.rows())
    _write_rows(out / "compare_mi.csv", MI_COLUMNS, rows)
    summary = {f"{k}_final_{m}": getattr(r, f"final_{m}") for k, r in reports.items() for m in ("loss", "aligned_acc")}
    (out / "compare_mi.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for k, r in reports.items():
        print(f"{k:>5}: final loss {r.final_loss:.4f}  aligned accuracy {r.final_aligned_acc:.4f}")
    return 0


def cmd_gen_data(args) -> int:
    if args.n_per_class < 1:
        raise ConfigError("--n-per-class must be >= 1")
    try:
        if args.kind == "shapes":
            ds = data_mod.gen_shapes(args.n_per_class, args.size, args.variant, rng=args.seed)
        else:
            ds = data_mod.gen_blobs(args.n_per_class, args.n_classes, args.dim, args.separation, rng=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data_mod.save_dataset(ds, out)
    counts = {c: int(n) for c, n in enumerate(np.bincount(ds.y, minlength=ds.n_classes))}
    digest = hashlib.sha256(out.read_bytes()).hexdigest()
    print(f"{ds.kind}: {len(ds)} samples, sample shape {ds.sample_shape}, classes {counts}")
    print(f"wrote {out} (sha256 {digest[:16]})")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    sp = cfg.data.split(cfg.seed)
    trainer = Trainer(cfg.train, sp)
    load_checkpoint(trainer, args.checkpoint)
    X = sp.test.X.reshape(len(sp.test), -1)
    acc = metrics.test_accuracy(trainer.model, trainer.ema, X, sp.test.y)
    result = {"checkpoint": str(args.checkpoint), "epoch": trainer.epoch, "step": trainer.step, "ema_test_accuracy": acc}
    print(json.dumps(result, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run config (defaults apply when omitted)")
    p.add_argument("--out-dir", help="output directory (overrides out_dir)")
    p.add_argument("--data", choices=["shapes", "blobs", "idx", "file"], help="dataset kind (overrides data.kind)")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float, help="weight of the triplet MI term")
    p.add_argument("--tau", type=float, help="cosine threshold of the template matcher")
    p.add_argument("--labels-per-class", type=int)
    p.add_argument("--guesser", choices=GUESSERS, help="proxy-label source; 'none' with --alpha 0 is the supervised baseline")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semisup", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="one semi-supervised run")
    _run_flags(p)
    p.add_argument("--checkpoint-every", type=int, default=0, help="also checkpoint every N epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare-guessers", help="paired template-matching vs confidence-threshold runs")
    _run_flags(p)
    p.set_defaults(func=cmd_compare_guessers)

    p = sub.add_parser("compare-mi", help="paired unsupervised triplet vs single-pair MI runs")
    _run_flags(p)
    p.set_defaults(func=cmd_compare_mi)

    p = sub.add_parser("gen-data", help="write a synthetic dataset container")
    p.add_argument("kind", choices=["shapes", "blobs"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-class", type=int, default=304)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--variant", choices=["fill-color", "border-color"], default="fill-color")
    p.add_argument("--n-classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--separation", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("eval", help="EMA test accuracy of a checkpoint")
    _run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"semisup: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"semisup: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"semisup: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
