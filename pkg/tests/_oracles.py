"""Independent reference implementations used by the test-suite.

Everything here is deliberately slow and literal: central differences,
an O(n^2) DFT, pairwise AUROC counting, a threshold sweep for average
precision and a per-record loop for the challenge score.
"""
import numpy as np


def numeric_grad(f, arrays, idx=None, eps=1e-6):
    """Central-difference gradient of scalar ``f()`` w.r.t. each array (mutated in place).

    ``idx`` optionally restricts the check to a list of flat positions per array.
    """
    out = []
    for k, a in enumerate(arrays):
        flat = a.reshape(-1)
        positions = range(flat.size) if idx is None else idx[k]
        g = np.zeros(flat.size)
        for i in positions:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            g[i] = (fp - fm) / (2 * eps)
        out.append(g.reshape(a.shape))
    return out


def rel_err(analytic, numeric, positions=None):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if positions is not None:
        a, n = a[positions], n[positions]
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), np.linalg.norm(a), 1e-12))


def naive_dft(frame):
    n = len(frame)
    k = np.arange(n)
    out = np.zeros(n, dtype=np.complex128)
    for f in range(n):
        out[f] = np.sum(frame * np.exp(-2j * np.pi * f * k / n))
    return out


def naive_stft(x, win, hop):
    n = len(win)
    frames = (len(x) - n) // hop + 1
    cols = [naive_dft(x[t * hop:t * hop + n] * win)[: n // 2 + 1] for t in range(frames)]
    return np.stack(cols, axis=1)


def pairwise_auroc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def sweep_average_precision(scores, labels):
    """Walk distinct thresholds high to low: sum of precision * recall gain."""
    n_pos = labels.sum()
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= t
        tp = np.sum(pred & (labels == 1))
        precision = tp / pred.sum()
        recall = tp / n_pos
        ap += precision * (recall - prev_recall)
        prev_recall = recall
    return ap


def loop_challenge(decisions, labels, weights, normal):
    """Per-record loop version of the reward-weighted challenge score."""
    def score(pred):
        total = 0.0
        for r in range(labels.shape[0]):
            lab = [i for i in range(labels.shape[1]) if labels[r, i]]
            out = [j for j in range(labels.shape[1]) if pred[r, j]]
            union = len(set(lab) | set(out)) or 1
            for i in lab:
                for j in out:
                    total += weights[i, j] / union
        return total

    inactive = np.zeros_like(labels)
    inactive[:, normal] = 1
    obs, best, base = score(decisions), score(labels), score(inactive)
    return (obs - base) / (best - base)
