"""Independent reference implementations used as test oracles.

Nothing here imports the code under test except plain data containers.
"""

from __future__ import annotations

import itertools

import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def dp_levenshtein(a, b) -> int:
    """Full-table Wagner-Fischer."""
    n, m = len(a), len(b)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (a[i - 1] != b[j - 1]))
    return int(d[n, m])


def runs(labels, ignore=-1):
    """``[(label, start, end_inclusive)]`` by explicit scanning."""
    out = []
    i = 0
    labels = list(labels)
    while i < len(labels):
        j = i
        while j + 1 < len(labels) and labels[j + 1] == labels[i]:
            j += 1
        if labels[i] != ignore:
            out.append((labels[i], i, j))
        i = j + 1
    return out


def edit_oracle(pred, truth) -> float:
    p = [r[0] for r in runs(pred)]
    t = [r[0] for r in runs(truth)]
    if not p and not t:
        return 100.0
    return max(0.0, 100.0 * (1 - dp_levenshtein(p, t) / max(len(p), len(t))))


def iou_matrix(pred_runs, true_runs) -> np.ndarray:
    m = np.zeros((len(pred_runs), len(true_runs)))
    for i, (lp, sp, ep) in enumerate(pred_runs):
        fp = set(range(sp, ep + 1))
        for j, (lt, st, et) in enumerate(true_runs):
            if lp != lt:
                continue
            ft = set(range(st, et + 1))
            m[i, j] = len(fp & ft) / len(fp | ft)
    return m


def greedy_tp(pred_runs, true_runs, k) -> int:
    """Reference greedy: predictions in order claim their best unclaimed same-label truth."""
    m = iou_matrix(pred_runs, true_runs)
    same = np.array([[p[0] == t[0] for t in true_runs] for p in pred_runs], dtype=bool).reshape(m.shape)
    free = np.ones(len(true_runs), dtype=bool)
    tp = 0
    for i in range(len(pred_runs)):
        cand = np.where(free & same[i], m[i], -np.inf) if len(true_runs) else np.array([])
        if cand.size == 0 or not np.isfinite(cand.max()):
            continue
        j = int(np.argmax(cand))
        if m[i, j] > k / 100.0:
            free[j] = False
            tp += 1
    return tp


def optimal_tp(pred_runs, true_runs, k) -> int:
    """Maximum number of one-to-one same-label pairs with IoU > k/100 (exhaustive)."""
    m = iou_matrix(pred_runs, true_runs) > k / 100.0
    n_p, n_t = m.shape
    best = 0
    if n_p <= n_t:
        for perm in itertools.permutations(range(n_t), n_p):
            best = max(best, sum(m[i, j] for i, j in enumerate(perm)))
    else:
        for perm in itertools.permutations(range(n_p), n_t):
            best = max(best, sum(m[i, j] for j, i in enumerate(perm)))
    return int(best)


def f1_from_tp(tp, n_pred, n_true) -> float:
    fp, fn = n_pred - tp, n_true - tp
    if tp + fp + fn == 0:
        return 100.0
    return 100.0 * 2 * tp / (2 * tp + fp + fn)


def sequences_with_max_segments(length, alphabet, max_segments):
    for seq in itertools.product(alphabet, repeat=length):
        if 1 + sum(seq[i] != seq[i - 1] for i in range(1, length)) <= max_segments:
            yield list(seq)


def conv1d_loops(x, kernel, bias=None):
    """Same-length zero-padded temporal convolution by explicit loops."""
    t, _ = x.shape
    k, _, d_out = kernel.shape
    out = np.zeros((t, d_out))
    for i in range(t):
        for j in range(k):
            src = i + j - k // 2
            if 0 <= src < t:
                out[i] += x[src] @ kernel[j]
    return out if bias is None else out + bias.reshape(-1)


def attention_loops(q, k, v, causal=False):
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        keys = range(i + 1) if causal else range(k.shape[0])
        s = np.array([q[i] @ k[j] / np.sqrt(q.shape[1]) for j in keys])
        w = np.exp(s - s.max())
        w /= w.sum()
        out[i] = sum(wj * v[j] for wj, j in zip(w, keys))
    return out
