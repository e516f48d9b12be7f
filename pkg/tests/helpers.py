"""Shared test oracles: finite differences and naive reference loops."""

import numpy as np


def fd_grad(loss_fn, arr, h=1e-6):
    """Central finite-difference gradient of loss_fn wrt every element.

    Runs in float64 (the production ops are dtype-generic), so the
    truncation error is O(h^2) and roundoff is negligible.
    """
    g = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        lp = loss_fn()
        arr[idx] = orig - h
        lm = loss_fn()
        arr[idx] = orig
        g[idx] = (lp - lm) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-8):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def naive_matmul(a, b):
    """Triple-loop reference matrix product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def naive_conv2d_same(x, kernel, bias):
    """Nested-loop stride-1 'same' cross-correlation oracle."""
    b, h, w, c_in = x.shape
    kh, kw, _, c_out = kernel.shape
    pad = (kh - 1) // 2
    y = np.zeros((b, h, w, c_out), dtype=np.float64)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                for o in range(c_out):
                    acc = float(bias[o])
                    for di in range(kh):
                        for dj in range(kw):
                            ii, jj = i + di - pad, j + dj - pad
                            if 0 <= ii < h and 0 <= jj < w:
                                for c in range(c_in):
                                    acc += float(x[n, ii, jj, c]) * float(kernel[di, dj, c, o])
                    y[n, i, j, o] = acc
    return y


def naive_tconv2d(x, kernel, bias):
    """Scatter-definition oracle for the 2x2 stride-2 transposed conv."""
    b, h, w, c_in = x.shape
    kh, kw, c_out, _ = kernel.shape
    y = np.zeros((b, 2 * h, 2 * w, c_out), dtype=np.float64)
    y += np.asarray(bias, dtype=np.float64)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                for c in range(c_in):
                    v = float(x[n, i, j, c])
                    for di in range(kh):
                        for dj in range(kw):
                            for o in range(c_out):
                                y[n, 2 * i + di, 2 * j + dj, o] += v * float(kernel[di, dj, o, c])
    return y


def pairwise_ovr_auc(scores, labels):
    """O(n^2) pairwise-comparison oracle for macro one-vs-rest AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    aucs = []
    for c in range(scores.shape[1]):
        pos = np.where(labels == c)[0]
        neg = np.where(labels != c)[0]
        if len(pos) == 0 or len(neg) == 0:
            continue
        wins = 0.0
        for p in pos:
            for q in neg:
                if scores[p, c] > scores[q, c]:
                    wins += 1.0
                elif scores[p, c] == scores[q, c]:
                    wins += 0.5
        aucs.append(wins / (len(pos) * len(neg)))
    assert aucs, "oracle needs at least one evaluable class"
    return float(np.mean(aucs))
