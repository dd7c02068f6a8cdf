"""Command-line entry point.

Every subcommand reads an optional JSON run configuration (``--config``),
dotted-key overrides (``--set selfkd.steps=1``) and ``--seed``. Failures
exit nonzero with one JSON line on stderr; outputs are written atomically.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt_io
from .augment import TIME, TIMEFREQ
from .config import RunConfig
from .data import (CLASS_CODES, labels_to_csv, make_folds, predictions_to_csv, read_dataset,
                   read_labels_csv, read_predictions_csv, read_record, gen_synthetic, write_dataset)
from .errors import ConfigurationError, EcgSslError
from .estimators import GateFusionClassifier
from .grid import prepare, pretrain, run_grid
from .metrics import RewardMatrix, evaluate
from .stft import spectrogram, spectrogram_to_csv
from .utils import atomic_write_text

logger = logging.getLogger("ecgssl")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"override {item!r} is not key=value")
        overrides[key.strip()] = _parse_value(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.with_overrides(overrides) if overrides else cfg


def _records(cfg: RunConfig, data_dir: Optional[str]):
    src = data_dir or cfg.data_dir
    if src:
        return read_dataset(src)
    d = cfg.data
    return gen_synthetic(d.n_records, seed=cfg.seed, fs=d.fs, duration=d.duration, noise=d.noise,
                         rate_jitter=d.rate_jitter, multi_label_fraction=d.multi_label_fraction)


# -- subcommands ----------------------------------------------------------------

def cmd_gen_synth(args, cfg: RunConfig) -> int:
    d = cfg.data
    n = args.n_records if args.n_records is not None else d.n_records
    records = gen_synthetic(n, seed=cfg.seed, fs=d.fs, duration=d.duration, noise=d.noise,
                            rate_jitter=d.rate_jitter, multi_label_fraction=d.multi_label_fraction)
    out = Path(args.out)
    write_dataset(out, records)
    atomic_write_text(out / "labels.csv", labels_to_csv([r.id for r in records],
                                                        np.stack([r.labels for r in records])))
    print(f"wrote {len(records)} records to {out}")
    return 0


def cmd_pretrain(args, cfg: RunConfig) -> int:
    if args.steps is not None:
        cfg = cfg.with_overrides({"selfkd.steps": args.steps})
    prep = prepare(_records(cfg, args.data), cfg)
    result = pretrain(prep, cfg, args.modality)
    out = Path(args.out)
    ckpt_io.save(out, result.student_checkpoint())
    atomic_write_text(out.with_suffix(".trace.csv"), result.trace_csv())
    atomic_write_text(out.with_suffix(".config.json"), cfg.to_json())
    print(f"final loss {result.losses[-1]:.6f} teacher entropy {result.teacher_entropy[-1]:.6f}")
    return 0


def cmd_finetune(args, cfg: RunConfig) -> int:
    variant = args.variant or cfg.variant
    prep = prepare(_records(cfg, args.data), cfg)
    folds = make_folds(prep.ids, prep.labels, cfg.folds, cfg.seed)
    if not 0 <= args.fold < folds.k:
        raise ConfigurationError(f"fold {args.fold} outside 0..{folds.k - 1}")
    index = {rid: i for i, rid in enumerate(prep.ids)}
    train_ids, test_ids = folds.train_test(args.fold)
    tr = np.array([index[r] for r in train_ids])
    te = np.array([index[r] for r in test_ids])
    clf = GateFusionClassifier(
        variant=variant, encoder_time=cfg.encoder_time, encoder_freq=cfg.encoder_freq,
        finetune=cfg.finetune, stft=cfg.stft, fs=prep.fs,
        time_checkpoint=ckpt_io.load(args.time_checkpoint) if args.time_checkpoint else None,
        freq_checkpoint=ckpt_io.load(args.freq_checkpoint) if args.freq_checkpoint else None,
        random_state=cfg.seed)
    clf.fit(prep.x_time[tr], prep.labels[tr], x_freq=prep.x_freq[tr], steps=args.steps)
    probs = clf.predict_proba(prep.x_time[te], x_freq=prep.x_freq[te])
    decisions = (probs >= cfg.finetune.threshold).astype(np.int64)
    atomic_write_text(args.predictions, predictions_to_csv(test_ids, probs, decisions))
    if args.labels_out:
        atomic_write_text(args.labels_out, labels_to_csv(test_ids, prep.labels[te]))
    if args.out:
        ckpt_io.save(args.out, clf.checkpoint())
    print(f"fold {args.fold}: {len(tr)} train / {len(te)} test records, variant {variant}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    ids, probs, decisions = read_predictions_csv(args.predictions)
    if args.labels:
        label_ids, labels = read_labels_csv(args.labels)
    else:
        records = read_dataset(args.data)
        label_ids, labels = [r.id for r in records], np.stack([r.labels for r in records]).astype(np.int64)
    lookup = {rid: i for i, rid in enumerate(label_ids)}
    missing = [rid for rid in ids if rid not in lookup]
    if missing:
        raise ConfigurationError(f"{len(missing)} predicted records have no labels, e.g. {missing[0]}")
    y = labels[[lookup[rid] for rid in ids]]
    rw = RewardMatrix.from_csv(args.reward) if args.reward else RewardMatrix.synthetic_default(len(CLASS_CODES))
    report = evaluate(probs, decisions, y, rw)
    if args.out:
        atomic_write_text(args.out, report.to_csv())
    print(f"ChM {report.chm:.6f}")
    print(f"AUROC {report.auroc:.6f} AUPRC {report.auprc:.6f} Acc {report.acc:.6f} "
          f"F1 {report.f1:.6f} F2 {report.f2:.6f} G2 {report.g2:.6f}")
    return 0


def cmd_grid(args, cfg: RunConfig) -> int:
    out = Path(args.out or cfg.out_dir)
    records = read_dataset(args.data or cfg.data_dir) if (args.data or cfg.data_dir) else None
    result = run_grid(cfg, records, out)
    atomic_write_text(out / "config.json", cfg.to_json())
    print(f"grid finished in {result.seconds:.1f}s with {len(result.failures)} failed cells; "
          f"results in {out}")
    return 0


def cmd_stft_dump(args, cfg: RunConfig) -> int:
    rec = read_record(args.record)
    spec = spectrogram(rec.leads, cfg.stft, rec.fs)
    if not 0 <= args.lead < rec.leads.shape[0]:
        raise ConfigurationError(f"lead {args.lead} outside 0..{rec.leads.shape[0] - 1}")
    atomic_write_text(args.out, spectrogram_to_csv(spec, args.lead))
    print(f"{spec.values.shape[1]} bins x {spec.values.shape[2]} frames written to {args.out}")
    return 0


def cmd_inspect(args, cfg: RunConfig) -> int:
    path = Path(args.path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == ckpt_io.MAGIC:
        state = ckpt_io.load(path)
        for name, arr in state.items():
            print(f"{name} {list(arr.shape)}")
        print(f"tensors {len(state)} parameters {sum(a.size for a in state.values())}")
        return 0
    rec = read_record(path)
    print(f"id {rec.id}")
    print(f"fs {rec.fs:g}")
    print(f"n_samples {rec.n_samples}")
    print(f"labels {','.join(rec.label_codes)}")
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
    "stft-dump": cmd_stft_dump,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. selfkd.steps=1 (repeatable)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ecgssl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", parents=[common], help="write a synthetic ECGR dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-records", type=int)

    p = sub.add_parser("pretrain", parents=[common], help="self-distillation pre-training")
    p.add_argument("--data", help="directory of .ecgr records (default: synthetic)")
    p.add_argument("--modality", choices=[TIME, TIMEFREQ], default=TIME)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True, help="student checkpoint (.etck)")

    p = sub.add_parser("finetune", parents=[common], help="fine-tune on one cross-validation fold")
    p.add_argument("--data")
    p.add_argument("--variant", choices=["T", "S", "TSC", "TSG"])
    p.add_argument("--time-checkpoint")
    p.add_argument("--freq-checkpoint")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--steps", type=int, help="train for exactly this many mini-batches")
    p.add_argument("--predictions", required=True, help="output prediction CSV")
    p.add_argument("--labels-out", help="also write the held-out labels CSV")
    p.add_argument("--out", help="fine-tuned model checkpoint (.etck)")

    p = sub.add_parser("evaluate", parents=[common], help="score a prediction CSV")
    p.add_argument("--predictions", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--labels", help="labels CSV")
    src.add_argument("--data", help="directory of .ecgr records")
    p.add_argument("--reward", help="reward matrix CSV (default: synthetic sibling pairs)")
    p.add_argument("--out", help="metric CSV")

    p = sub.add_parser("grid", parents=[common], help="variant x SSL grid and transformation ablation")
    p.add_argument("--data")
    p.add_argument("--out")

    p = sub.add_parser("stft-dump", parents=[common], help="one lead's spectrogram as CSV")
    p.add_argument("record")
    p.add_argument("--lead", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect", parents=[common], help="describe an .ecgr record or .etck checkpoint")
    p.add_argument("path")
    return parser


def _error_line(exc: BaseException) -> str:
    code = getattr(exc, "code", None) or type(exc).__name__.lower()
    return json.dumps({"error": type(exc).__name__, "code": code, "message": str(exc)})


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("ECGSSL_THREADS")
    try:
        cfg = load_config(args)
        if threads:
            with threadpool_limits(limits=int(threads)):
                return COMMANDS[args.command](args, cfg)
        return COMMANDS[args.command](args, cfg)
    except (EcgSslError, OSError, ValueError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
