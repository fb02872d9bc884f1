"""Reference (numpy) implementations of the matching kernels.

Both functions apply the same predicate as the compiled versions in
``_kernels.pyx``: label codes equal position-wise and every absolute gap
difference ``<= eps``.
"""

import numpy as np


def pair_scan(labels, gaps, eps):
    """All pairs i < j of rows that match.

    Args:
        labels: (N, k) int32 label codes.
        gaps: (N, k-1) float64 relative distances.
        eps: per-gap tolerance.

    Returns:
        Two int64 arrays (ia, ib) in lexicographic order.
    """
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    gaps = np.ascontiguousarray(gaps, dtype=np.float64)
    n = labels.shape[0]
    ia, ib = [], []
    for i in range(n - 1):
        ok = (labels[i + 1 :] == labels[i]).all(axis=1)
        cand = np.flatnonzero(ok)
        if cand.size == 0:
            continue
        j = cand + i + 1
        keep = (np.abs(gaps[j] - gaps[i]) <= eps).all(axis=1)
        j = j[keep]
        if j.size:
            ia.append(np.full(j.size, i, dtype=np.int64))
            ib.append(j.astype(np.int64))
    if not ia:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(ia), np.concatenate(ib)


def query_scan(q_labels, q_gaps, labels, gaps, n, eps):
    """Rows among the first ``n`` that match one query sequence."""
    if n <= 0:
        return np.empty(0, np.int64)
    labels = np.asarray(labels[:n])
    gaps = np.asarray(gaps[:n])
    ok = (labels == np.asarray(q_labels, dtype=labels.dtype)).all(axis=1)
    ok &= (np.abs(gaps - np.asarray(q_gaps, dtype=np.float64)) <= eps).all(axis=1)
    return np.flatnonzero(ok).astype(np.int64)
