"""Cross-validated experiment runner: the variant x SSL grid and the
per-modality transformation ablation."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.signal import resample_poly

from . import checkpoint as ckpt_io
from .augment import TIME, TIMEFREQ, TRANSFORMS
from .config import RunConfig
from .data import EcgRecord, FoldPlan, gen_synthetic, make_folds, predictions_to_csv, stack_records
from .errors import ConfigurationError, EcgSslError
from .estimators import GateFusionClassifier
from .metrics import METRIC_COLUMNS, MetricReport, evaluate
from .selfkd import pretrain_modality
from .stft import spectrogram
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

MODALITY_VARIANT = {TIME: "T", TIMEFREQ: "S"}
_VARIANT_KEY = {"T": 0, "S": 1, "TSC": 2, "TSG": 3}
_MODALITY_KEY = {TIME: 0, TIMEFREQ: 1}


@dataclass
class Prepared:
    """Dataset resampled to the network rate plus its spectrograms."""

    x_time: np.ndarray       # [N, 12, n] at fs
    x_freq: np.ndarray       # [N, 12, bins, frames]
    labels: np.ndarray       # [N, 25] int64
    ids: List[str]
    fs: float


def resample_records(X: np.ndarray, fs: float, target_fs: float) -> np.ndarray:
    """Polyphase anti-aliased resampling along the sample axis."""
    if target_fs == fs:
        return np.asarray(X, dtype=np.float32)
    ratio = Fraction(target_fs / fs).limit_denominator(1000)
    return resample_poly(X, ratio.numerator, ratio.denominator, axis=-1).astype(np.float32)


def prepare(records: Sequence[EcgRecord], cfg: RunConfig) -> Prepared:
    X, Y, ids = stack_records(records)
    fs = float(records[0].fs)
    if any(r.fs != fs for r in records):
        raise ConfigurationError("all records must share one sampling rate")
    target = min(cfg.data.target_fs, fs)
    X = resample_records(X, fs, target)
    F = np.stack([spectrogram(x, cfg.stft, target).values for x in X])
    return Prepared(X, F, Y, ids, target)


def pretrain(prep: Prepared, cfg: RunConfig, modality: str, transform: Optional[str] = None):
    """Student checkpoint for one modality; labels are not used."""
    aug = cfg.augment if transform is None else dataclasses.replace(cfg.augment, transform=transform)
    enc = cfg.encoder_time if modality == TIME else cfg.encoder_freq
    inputs = prep.x_time if modality == TIME else prep.x_freq
    t_key = ("none", "tc", "gn", "fc", "full").index(aug.transform)
    seed = int(np.random.SeedSequence([cfg.seed, 7, _MODALITY_KEY[modality], t_key]).generate_state(1)[0])
    result = pretrain_modality(prep.x_time, modality, enc, cfg.selfkd, aug, seed, cfg.stft, prep.fs, inputs)
    return result


def _fold_seed(cfg: RunConfig, variant: str, fold: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, 11, _VARIANT_KEY[variant], fold]).generate_state(1)[0])


@dataclass
class CvResult:
    probabilities: np.ndarray
    decisions: np.ndarray
    report: MetricReport
    seconds: float


def cross_validate(prep: Prepared, cfg: RunConfig, variant: str, folds: FoldPlan,
                   checkpoints: Optional[Dict[str, dict]] = None) -> CvResult:
    """Fine-tune one model per fold; metrics on the pooled out-of-fold predictions."""
    checkpoints = checkpoints or {}
    start = time.perf_counter()
    index = {rid: i for i, rid in enumerate(prep.ids)}
    probs = np.zeros(prep.labels.shape, dtype=np.float64)
    for k in range(folds.k):
        train_ids, test_ids = folds.train_test(k)
        tr = np.array([index[r] for r in train_ids])
        te = np.array([index[r] for r in test_ids])
        clf = GateFusionClassifier(
            variant=variant, encoder_time=cfg.encoder_time, encoder_freq=cfg.encoder_freq,
            finetune=cfg.finetune, stft=cfg.stft, fs=prep.fs,
            time_checkpoint=checkpoints.get(TIME), freq_checkpoint=checkpoints.get(TIMEFREQ),
            random_state=_fold_seed(cfg, variant, k))
        clf.fit(prep.x_time[tr], prep.labels[tr], x_freq=prep.x_freq[tr])
        probs[te] = clf.predict_proba(prep.x_time[te], x_freq=prep.x_freq[te])
    decisions = (probs >= cfg.finetune.threshold).astype(np.int64)
    report = evaluate(probs, decisions, prep.labels)
    return CvResult(probs, decisions, report, time.perf_counter() - start)


@dataclass
class GridResult:
    table: List[tuple] = field(default_factory=list)        # (setting, report or None)
    ablation: List[tuple] = field(default_factory=list)     # (modality, transform, report or None)
    failures: List[tuple] = field(default_factory=list)     # (cell, message)
    seconds: float = 0.0

    def report(self, setting: str) -> Optional[MetricReport]:
        return dict(self.table).get(setting)


def _fmt(report: Optional[MetricReport]) -> List[str]:
    if report is None:
        return ["nan"] * len(METRIC_COLUMNS)
    return [f"{v:.6f}" for v in report.row()]


def table_csv(rows) -> str:
    lines = [",".join(("setting",) + METRIC_COLUMNS)]
    lines += [",".join([name] + _fmt(rep)) for name, rep in rows]
    return "\n".join(lines) + "\n"


def ablation_csv(rows) -> str:
    lines = [",".join(("modality", "transform") + METRIC_COLUMNS)]
    lines += [",".join([m, t] + _fmt(rep)) for m, t, rep in rows]
    return "\n".join(lines) + "\n"


def failures_csv(rows) -> str:
    lines = ["cell,error"] + [f"{cell},\"{msg.replace(chr(34), chr(39))}\"" for cell, msg in rows]
    return "\n".join(lines) + "\n"


def run_grid(cfg: RunConfig, records: Optional[Sequence[EcgRecord]] = None,
             out_dir=None) -> GridResult:
    """Every cell is a full cross-validation run. Failed cells are recorded
    with NaN metrics and the grid moves on."""
    start = time.perf_counter()
    if records is None:
        d = cfg.data
        records = gen_synthetic(d.n_records, seed=cfg.seed, fs=d.fs, duration=d.duration, noise=d.noise,
                                rate_jitter=d.rate_jitter, multi_label_fraction=d.multi_label_fraction)
    prep = prepare(records, cfg)
    folds = make_folds(prep.ids, prep.labels, cfg.folds, cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    result = GridResult()

    def attempt(cell: str, fn):
        try:
            return fn()
        except (EcgSslError, ValueError, ArithmeticError) as exc:
            logger.warning("cell %s failed: %s", cell, exc)
            result.failures.append((cell, f"{type(exc).__name__}: {exc}"))
            return None

    def save_cell(cell: str, cv: CvResult):
        if out is not None:
            atomic_write_text(out / "cells" / cell / "predictions.csv",
                              predictions_to_csv(prep.ids, cv.probabilities, cv.decisions))

    # pre-training with the configured transformation, reused by every SSL row
    ssl: Dict[str, dict] = {}
    for modality in (TIME, TIMEFREQ):
        res = attempt(f"pretrain-{modality}", lambda m=modality: pretrain(prep, cfg, m))
        if res is not None:
            ssl[modality] = res.student_checkpoint()
            if out is not None:
                ckpt_io.save(out / "checkpoints" / f"{modality}-{cfg.augment.transform}.etck", ssl[modality])

    full_reports: Dict[str, MetricReport] = {}
    for use_ssl in (False, True):
        for variant in cfg.grid.variants:
            name = f"{'SSL-' if use_ssl else ''}{variant}"
            needed = {"T": [TIME], "S": [TIMEFREQ]}.get(variant, [TIME, TIMEFREQ])
            if use_ssl and any(m not in ssl for m in needed):
                result.failures.append((name, "pre-training failed"))
                result.table.append((name, None))
                continue
            cv = attempt(name, lambda v=variant, s=use_ssl: cross_validate(prep, cfg, v, folds, ssl if s else None))
            result.table.append((name, cv.report if cv else None))
            if cv is not None:
                save_cell(name, cv)
                logger.info("%s AUROC %.4f (%.1fs)", name, cv.report.auroc, cv.seconds)
                if use_ssl and variant in ("T", "S"):
                    full_reports[variant] = cv.report

    if cfg.grid.transform_ablation:
        for modality in (TIME, TIMEFREQ):
            variant = MODALITY_VARIANT[modality]
            for transform in TRANSFORMS[modality]:
                cell = f"ablation-{modality}-{transform}"
                if transform == cfg.augment.transform and variant in full_reports:
                    result.ablation.append((modality, transform, full_reports[variant]))
                    continue

                def run(m=modality, t=transform, v=variant):
                    ck = pretrain(prep, cfg, m, t).student_checkpoint()
                    return cross_validate(prep, cfg, v, folds, {m: ck})

                cv = attempt(cell, run)
                result.ablation.append((modality, transform, cv.report if cv else None))
                if cv is not None:
                    save_cell(cell, cv)

    result.seconds = time.perf_counter() - start
    if out is not None:
        atomic_write_text(out / "table2.csv", table_csv(result.table))
        atomic_write_text(out / "fig3.csv", ablation_csv(result.ablation))
        atomic_write_text(out / "failures.csv", failures_csv(result.failures))
    return result
