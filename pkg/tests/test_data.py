import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecgssl.data import (CLASS_CODES, ClassProfile, EcgRecord, FoldPlan, gen_synthetic, header_size,
                         labels_to_csv, make_folds, predictions_to_csv, read_dataset, read_labels_csv,
                         read_predictions_csv, read_record, record_from_bytes, record_to_bytes, stack_records,
                         write_dataset, write_record)
from ecgssl.errors import FormatError, ParameterError


def _record(seed=0, n=1000, rec_id="r1", fs=500.0):
    rng = np.random.default_rng(seed)
    y = np.zeros(25, np.uint8)
    y[rng.choice(25, size=3, replace=False)] = 1
    return EcgRecord(rec_id, fs, rng.normal(size=(12, n)).astype(np.float32), y)


def test_record_roundtrip(tmp_path):
    rec = _record()
    write_record(tmp_path / "a.ecgr", rec)
    back = read_record(tmp_path / "a.ecgr")
    assert back == rec
    assert record_to_bytes(back) == (tmp_path / "a.ecgr").read_bytes()


def test_file_size_matches_layout(tmp_path):
    rec = _record(n=5000, rec_id="rec00001")
    path = tmp_path / "x.ecgr"
    write_record(path, rec)
    assert header_size("rec00001") == 8 + 8 + 13
    assert path.stat().st_size == header_size("rec00001") + 12 * 5000 * 4


def test_truncated_and_corrupt_files():
    blob = record_to_bytes(_record())
    for cut in (0, 3, 7, 20, len(blob) - 1):
        with pytest.raises(FormatError):
            record_from_bytes(blob[:cut])
    with pytest.raises(FormatError, match="magic"):
        record_from_bytes(b"XXXX" + blob[4:])
    bad_version = blob[:4] + (2).to_bytes(2, "little") + blob[6:]
    with pytest.raises(FormatError, match="version"):
        record_from_bytes(bad_version)
    lead_at = 8 + 2 + 4
    bad_leads = blob[:lead_at] + bytes([11]) + blob[lead_at + 1:]
    with pytest.raises(FormatError) as err:
        record_from_bytes(bad_leads)
    assert err.value.offset == lead_at


def test_record_invariants():
    with pytest.raises(ParameterError):
        EcgRecord("x", 500.0, np.zeros((11, 2000)))
    with pytest.raises(ParameterError):
        EcgRecord("x", 500.0, np.zeros((12, 999)))
    with pytest.raises(ParameterError):
        EcgRecord("x", 500.0, np.zeros((12, 1000)), np.zeros(24))


@settings(max_examples=50, deadline=None)
@given(st.text(min_size=0, max_size=20), st.integers(0, 2 ** 25 - 1), st.integers(0, 2 ** 31))
def test_record_bytes_roundtrip_property(rec_id, mask, seed):
    labels = np.array([(mask >> i) & 1 for i in range(25)], np.uint8)
    rec = EcgRecord(rec_id, 2.0, np.random.default_rng(seed).normal(size=(12, 5)), labels)
    blob = record_to_bytes(rec)
    assert record_to_bytes(record_from_bytes(blob)) == blob


def test_dataset_directory_roundtrip(tmp_path):
    recs = gen_synthetic(5, seed=3, fs=100.0, duration=3.0)
    write_dataset(tmp_path, recs)
    assert read_dataset(tmp_path) == recs
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "empty")


# -- synthetic generator -------------------------------------------------------------

def test_generator_is_seed_deterministic():
    a = gen_synthetic(8, seed=5, fs=100.0, duration=4.0)
    b = gen_synthetic(8, seed=5, fs=100.0, duration=4.0)
    c = gen_synthetic(8, seed=6, fs=100.0, duration=4.0)
    assert [record_to_bytes(r) for r in a] == [record_to_bytes(r) for r in b]
    assert [record_to_bytes(r) for r in a] != [record_to_bytes(r) for r in c]
    with pytest.raises(ParameterError):
        gen_synthetic(0)


def test_balanced_single_labels_and_multilabels():
    recs = gen_synthetic(40, seed=0, fs=100.0, duration=3.0)
    _, Y, _ = stack_records(recs)
    assert Y.sum(axis=1).max() == 1
    assert Y[:, :4].sum(axis=0).tolist() == [10, 10, 10, 10]
    multi = gen_synthetic(200, seed=0, fs=50.0, duration=3.0, multi_label_fraction=0.5)
    Ym = stack_records(multi)[1]
    assert Ym.sum(axis=1).max() == 2 and Ym[Ym.sum(axis=1) == 2, 0].sum() == 0


@pytest.mark.parametrize("rate", [60.0, 75.0, 120.0])
def test_zero_noise_record_is_periodic(rate):
    fs = 500.0
    rec = gen_synthetic(1, {0: ClassProfile(rate)}, seed=1, fs=fs, noise=0.0, rate_jitter=0.0)[0]
    period = int(round(fs * 60 / rate))
    x = rec.leads[0].astype(np.float64)
    np.testing.assert_allclose(x[period:], x[:-period], atol=1e-5)
    x = x - x.mean()
    ac = np.array([np.dot(x[:-lag], x[lag:]) for lag in range(1, int(1.5 * period))])
    lo = period // 2
    assert lo + 1 + int(np.argmax(ac[lo:])) == period


def test_rates_separable_by_spectral_centroid():
    recs = gen_synthetic(200, {0: ClassProfile(60.0), 1: ClassProfile(120.0)}, seed=0)
    cent, y = [], []
    for r in recs:
        x = r.leads - r.leads.mean(axis=1, keepdims=True)
        power = np.abs(np.fft.rfft(x, axis=1)) ** 2
        f = np.fft.rfftfreq(r.n_samples, 1 / r.fs)
        cent.append(np.mean(power @ f / power.sum(axis=1)))
        y.append(r.labels[1])
    cent, y = np.array(cent), np.array(y)
    best = max(max(np.mean((cent < t) == (y == 1)), np.mean((cent >= t) == (y == 1))) for t in np.sort(cent))
    assert best == 1.0


# -- folds -------------------------------------------------------------------------

def test_ten_records_one_per_fold():
    ids = [f"r{i}" for i in range(10)]
    Y = np.zeros((10, 25), int)
    Y[:, 0] = 1
    plan = make_folds(ids, Y, k=10, seed=0)
    assert [len(f) for f in plan.folds] == [1] * 10


def test_two_class_hundred_gives_five_plus_five():
    ids = [f"r{i:03d}" for i in range(100)]
    Y = np.zeros((100, 25), int)
    Y[np.arange(100), np.arange(100) % 2] = 1
    plan = make_folds(ids, Y, k=10, seed=4)
    for fold in plan.folds:
        cls = [int(i[1:]) % 2 for i in fold]
        assert cls.count(0) == 5 and cls.count(1) == 5


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(1, 10), st.integers(0, 1000))
def test_folds_form_a_partition(n, k, seed):
    rng = np.random.default_rng(seed)
    ids = [f"id{i}" for i in range(n)]
    Y = rng.integers(0, 2, size=(n, 25)) * (rng.uniform(size=(n, 25)) < 0.2)
    plan = make_folds(ids, Y, k=k, seed=seed)
    flat = [i for f in plan.folds for i in f]
    assert sorted(flat) == sorted(ids) and plan.k == k
    train, test = plan.train_test(0)
    assert set(train) | set(test) == set(ids) and not set(train) & set(test)


def test_fold_plan_rejects_duplicates():
    with pytest.raises(ParameterError):
        FoldPlan([["a"], ["a"]])


def test_folds_are_seed_deterministic():
    ids = [f"r{i}" for i in range(50)]
    Y = np.random.default_rng(0).integers(0, 2, size=(50, 25))
    assert make_folds(ids, Y, 5, seed=1).folds == make_folds(ids, Y, 5, seed=1).folds


# -- CSV interfaces ----------------------------------------------------------------

def test_prediction_and_label_csv(tmp_path):
    rng = np.random.default_rng(0)
    ids = ["a", "b", "c"]
    p = rng.uniform(size=(3, 25)).round(6)
    d = (p > 0.5).astype(int)
    (tmp_path / "p.csv").write_text(predictions_to_csv(ids, p, d))
    rid, p2, d2 = read_predictions_csv(tmp_path / "p.csv")
    assert rid == ids and np.allclose(p2, p, atol=1e-6) and np.array_equal(d2, d)
    (tmp_path / "y.csv").write_text(labels_to_csv(ids, d))
    rid, y = read_labels_csv(tmp_path / "y.csv")
    assert rid == ids and np.array_equal(y, d)
    assert (tmp_path / "y.csv").read_text().splitlines()[0] == ",".join(["record_id"] + CLASS_CODES)
    with pytest.raises(FormatError):
        read_labels_csv(tmp_path / "p.csv")
