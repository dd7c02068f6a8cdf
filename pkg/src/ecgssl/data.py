"""Records, the ECGR binary format, the synthetic ECG fixture and CV folds."""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .errors import FormatError, ParameterError
from .utils import atomic_write_bytes, atomic_write_text

N_LEADS = 12
N_CLASSES = 25
CLASS_CODES = [f"c{i:02d}" for i in range(N_CLASSES)]
NORMAL_CLASS = 0

MAGIC = b"ECGR"
VERSION = 1
# magic, version u16, id_len u16 | id | fs f32, n_leads u8, n_samples u32, labels u32
_HEAD = struct.Struct("<4sHH")
_TAIL = struct.Struct("<fBII")


@dataclass
class EcgRecord:
    id: str
    fs: float
    leads: np.ndarray                      # [12, n_samples] float32
    labels: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES, dtype=np.uint8))

    def __post_init__(self):
        self.leads = np.asarray(self.leads, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.leads.ndim != 2 or self.leads.shape[0] != N_LEADS:
            raise ParameterError(f"a record needs exactly {N_LEADS} leads, got shape {self.leads.shape}")
        if self.labels.shape != (N_CLASSES,):
            raise ParameterError(f"labels must have length {N_CLASSES}")
        if self.leads.shape[1] < 2 * self.fs:
            raise ParameterError("records must be at least 2 s long")

    @property
    def n_samples(self) -> int:
        return self.leads.shape[1]

    @property
    def label_codes(self) -> List[str]:
        return [CLASS_CODES[i] for i in np.flatnonzero(self.labels)]

    def __eq__(self, other):
        if not isinstance(other, EcgRecord):
            return NotImplemented
        return (self.id == other.id and np.float32(self.fs) == np.float32(other.fs)
                and np.array_equal(self.leads, other.leads)
                and np.array_equal(self.labels, other.labels))


def labels_to_mask(labels: np.ndarray) -> int:
    return int(sum(1 << int(i) for i in np.flatnonzero(labels)))


def mask_to_labels(mask: int) -> np.ndarray:
    return np.array([(mask >> i) & 1 for i in range(N_CLASSES)], dtype=np.uint8)


def record_to_bytes(rec: EcgRecord) -> bytes:
    raw_id = rec.id.encode("utf-8")
    if len(raw_id) > 0xFFFF:
        raise ParameterError("record id too long")
    return b"".join([
        _HEAD.pack(MAGIC, VERSION, len(raw_id)),
        raw_id,
        _TAIL.pack(rec.fs, N_LEADS, rec.n_samples, labels_to_mask(rec.labels)),
        np.ascontiguousarray(rec.leads, dtype="<f4").tobytes(),
    ])


def record_from_bytes(data: bytes) -> EcgRecord:
    if len(data) < _HEAD.size:
        raise FormatError("truncated record header", len(data))
    magic, version, id_len = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError("bad magic, expected ECGR", 0)
    if version != VERSION:
        raise FormatError(f"unsupported record version {version}", 4)
    pos = _HEAD.size
    if len(data) < pos + id_len + _TAIL.size:
        raise FormatError("truncated record header", len(data))
    try:
        rec_id = data[pos:pos + id_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("record id is not UTF-8", pos) from exc
    pos += id_len
    fs, n_leads, n_samples, mask = _TAIL.unpack_from(data, pos)
    if n_leads != N_LEADS:
        raise FormatError(f"expected {N_LEADS} leads, found {n_leads}", pos + 4)
    if mask >> N_CLASSES:
        raise FormatError("label bitmask has bits beyond the class count", pos + 9)
    pos += _TAIL.size
    expected = pos + 4 * N_LEADS * n_samples
    if len(data) != expected:
        raise FormatError(f"sample block holds {len(data) - pos} bytes, expected {expected - pos}",
                          min(len(data), expected))
    leads = np.frombuffer(data, dtype="<f4", offset=pos).astype(np.float32).reshape(N_LEADS, n_samples)
    try:
        return EcgRecord(rec_id, float(fs), leads, mask_to_labels(mask))
    except ParameterError as exc:
        raise FormatError(str(exc), pos) from exc


def header_size(rec_id: str) -> int:
    return _HEAD.size + len(rec_id.encode("utf-8")) + _TAIL.size


def write_record(path, rec: EcgRecord) -> None:
    atomic_write_bytes(path, record_to_bytes(rec))


def read_record(path) -> EcgRecord:
    with open(path, "rb") as fh:
        return record_from_bytes(fh.read())


def write_dataset(directory, records: Iterable[EcgRecord]) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in records:
        path = directory / f"{rec.id}.ecgr"
        write_record(path, rec)
        paths.append(path)
    return paths


def read_dataset(directory) -> List[EcgRecord]:
    paths = sorted(Path(directory).glob("*.ecgr"))
    if not paths:
        raise FileNotFoundError(f"no .ecgr records in {directory}")
    return [read_record(p) for p in paths]


# -- synthetic ECG ---------------------------------------------------------------

@dataclass
class ClassProfile:
    rate_bpm: float = 70.0
    qrs_width: float = 0.09     # seconds, full width of the QRS bump
    amplitude: float = 1.0


# Four synthetic rhythm classes: normal, tachycardia, bradycardia, wide QRS.
DEFAULT_PROFILES: Dict[int, ClassProfile] = {
    0: ClassProfile(70.0, 0.09, 1.0),
    1: ClassProfile(125.0, 0.09, 1.0),
    2: ClassProfile(45.0, 0.09, 1.0),
    3: ClassProfile(70.0, 0.16, 1.3),
}

LEAD_GAINS = np.array([1.0, 0.6, -0.4, -0.8, 0.7, 0.3, -0.2, 0.5, 0.9, 1.1, 0.9, 0.7])


def combine_profiles(classes: Sequence[int], profiles: Mapping[int, ClassProfile]) -> ClassProfile:
    """Sum each class's deviation from the first (reference) profile."""
    base = profiles[min(profiles)]
    rate, width, amp = base.rate_bpm, base.qrs_width, base.amplitude
    for c in classes:
        p = profiles[c]
        rate += p.rate_bpm - base.rate_bpm
        width += p.qrs_width - base.qrs_width
        amp += p.amplitude - base.amplitude
    return ClassProfile(max(rate, 20.0), max(width, 0.02), amp)


def beat_template(t: np.ndarray, profile: ClassProfile) -> np.ndarray:
    """P, QRS and T Gaussian bumps around an R peak at t = 0 (seconds)."""
    a = profile.amplitude
    qrs_sigma = profile.qrs_width / 5.0
    return (0.15 * a * np.exp(-0.5 * ((t + 0.16) / 0.025) ** 2)
            + a * np.exp(-0.5 * (t / qrs_sigma) ** 2)
            + 0.3 * a * np.exp(-0.5 * ((t - 0.28) / 0.05) ** 2))


def synth_leads(profile: ClassProfile, fs: float, n_samples: int, rng: np.random.Generator,
                noise: float = 0.05, phase: Optional[float] = None) -> np.ndarray:
    period = 60.0 / profile.rate_bpm
    t = np.arange(n_samples) / fs
    phase = rng.uniform(0.0, period) if phase is None else phase
    # beats spanning one period beyond each edge so edge bumps are complete
    beats = phase + period * np.arange(-2, int(np.ceil(t[-1] / period)) + 3)
    signal = beat_template(t[None, :] - beats[:, None], profile).sum(axis=0)
    leads = LEAD_GAINS[:, None] * signal[None, :]
    if noise > 0:
        leads = leads + rng.normal(0.0, noise, size=leads.shape)
    return leads.astype(np.float32)


def gen_synthetic(n_records: int, class_profiles: Optional[Mapping[int, ClassProfile]] = None,
                  seed: int = 0, fs: float = 500.0, duration: float = 10.0, noise: float = 0.05,
                  rate_jitter: float = 0.04, multi_label_fraction: float = 0.0,
                  normal_class: int = NORMAL_CLASS) -> List[EcgRecord]:
    """Synthetic 12-lead records whose beat morphology and rate follow their labels.

    Classes are assigned round-robin and shuffled so the dataset is balanced.
    With ``multi_label_fraction > 0`` that share of abnormal records receives
    a second abnormal label and the summed profile deviation.
    """
    if n_records <= 0:
        raise ParameterError("n_records must be positive")
    profiles = dict(DEFAULT_PROFILES if class_profiles is None else class_profiles)
    classes = sorted(profiles)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 17]))
    primary = np.array([classes[i % len(classes)] for i in range(n_records)])
    rng.shuffle(primary)
    n_samples = int(round(duration * fs))
    abnormal = [c for c in classes if c != normal_class]
    records = []
    for i, c in enumerate(primary):
        labels = [int(c)]
        if c != normal_class and len(abnormal) > 1 and rng.uniform() < multi_label_fraction:
            labels.append(int(rng.choice([a for a in abnormal if a != c])))
        prof = combine_profiles(labels, profiles)
        if rate_jitter:
            prof = ClassProfile(prof.rate_bpm * (1 + rng.uniform(-rate_jitter, rate_jitter)),
                                prof.qrs_width, prof.amplitude)
        leads = synth_leads(prof, fs, n_samples, rng, noise)
        y = np.zeros(N_CLASSES, dtype=np.uint8)
        y[labels] = 1
        records.append(EcgRecord(f"rec{i:05d}", fs, leads, y))
    return records


def stack_records(records: Sequence[EcgRecord]):
    """(X [N, 12, n], Y [N, 25], ids) from a list of equal-length records."""
    X = np.stack([r.leads for r in records])
    Y = np.stack([r.labels for r in records]).astype(np.int64)
    return X, Y, [r.id for r in records]


# -- cross-validation folds ------------------------------------------------------

@dataclass
class FoldPlan:
    folds: List[List[str]]

    def __post_init__(self):
        seen = [i for f in self.folds for i in f]
        if len(seen) != len(set(seen)):
            raise ParameterError("fold plan assigns a record more than once")

    @property
    def k(self) -> int:
        return len(self.folds)

    def fold_of(self) -> Dict[str, int]:
        return {rid: k for k, f in enumerate(self.folds) for rid in f}

    def train_test(self, k: int):
        test = list(self.folds[k])
        train = [rid for j, f in enumerate(self.folds) if j != k for rid in f]
        return train, test


def make_folds(ids: Sequence[str], labels: np.ndarray, k: int = 10, seed: int = 0) -> FoldPlan:
    """Greedy iterative multi-label stratification.

    Repeatedly take the label with the fewest unassigned records and give
    each of its records to the fold that still needs that label most; ties
    go to the fold with the largest remaining capacity, then to a
    seed-derived fold order.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(ids)
    if k < 1:
        raise ParameterError("k must be at least 1")
    if labels.shape[0] != n:
        raise ParameterError("labels and ids differ in length")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 23]))
    fold_rank = rng.permutation(k)          # tie-break order among folds
    record_order = rng.permutation(n)
    capacity = np.full(k, n / k)
    need = np.outer(np.full(k, 1.0 / k), labels.sum(axis=0))   # [k, C]
    unassigned = np.ones(n, dtype=bool)
    assignment = np.full(n, -1)

    def assign(i: int, scores: np.ndarray) -> None:
        best = max(range(k), key=lambda f: (scores[f], capacity[f], -fold_rank[f]))
        assignment[i] = best
        unassigned[i] = False
        capacity[best] -= 1
        need[best] -= labels[i]

    while True:
        remaining = labels[unassigned].sum(axis=0)
        active = np.flatnonzero(remaining > 0)
        if active.size == 0:
            break
        lab = active[np.argmin(remaining[active])]
        for i in record_order:
            if unassigned[i] and labels[i, lab]:
                assign(i, need[:, lab])
    for i in record_order:
        if unassigned[i]:
            assign(i, np.zeros(k))
    folds = [[ids[i] for i in range(n) if assignment[i] == f] for f in range(k)]
    return FoldPlan(folds)


# -- CSV interfaces ----------------------------------------------------------------

def predictions_to_csv(ids: Sequence[str], probs: np.ndarray, decisions: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record_id"] + [f"p_{c}" for c in CLASS_CODES] + [f"d_{c}" for c in CLASS_CODES])
    for rid, p, d in zip(ids, probs, decisions):
        w.writerow([rid] + [f"{v:.6f}" for v in p] + [str(int(v)) for v in d])
    return buf.getvalue()


def read_predictions_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if len(header) != 1 + 2 * N_CLASSES or header[0] != "record_id":
        raise FormatError(f"{path}: expected record_id + {N_CLASSES} probability + {N_CLASSES} decision columns")
    ids = [r[0] for r in body]
    probs = np.array([[float(v) for v in r[1:1 + N_CLASSES]] for r in body])
    decisions = np.array([[int(v) for v in r[1 + N_CLASSES:]] for r in body], dtype=np.int64)
    return ids, probs.reshape(-1, N_CLASSES), decisions.reshape(-1, N_CLASSES)


def labels_to_csv(ids: Sequence[str], labels: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record_id"] + CLASS_CODES)
    for rid, y in zip(ids, labels):
        w.writerow([rid] + [str(int(v)) for v in y])
    return buf.getvalue()


def read_labels_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if len(header) != 1 + N_CLASSES or header[0] != "record_id":
        raise FormatError(f"{path}: expected record_id + {N_CLASSES} label columns")
    ids = [r[0] for r in body]
    labels = np.array([[int(v) for v in r[1:]] for r in body], dtype=np.int64)
    return ids, labels.reshape(-1, N_CLASSES)


def write_text(path, text: str) -> None:
    atomic_write_text(path, text)
