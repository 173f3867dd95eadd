"""Independent oracles shared by the test modules."""

from fractions import Fraction

import numpy as np

from advtriplet.mining import Batch


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (x is not modified)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def brute_cmc(first_hit_ranks, length):
    """cmc by counting, query by query, rank by rank."""
    out = []
    for r in range(1, length + 1):
        out.append(sum(1 for f in first_hit_ranks if f <= r) / len(first_hit_ranks))
    return out


def brute_ap_exact(match) -> Fraction:
    """AP from its textbook definition, in exact rationals: sum of precision@k at hits / hits."""
    hits, total, n_rel = 0, Fraction(0), sum(bool(m) for m in match)
    for k, m in enumerate(match, start=1):
        if m:
            hits += 1
            total += Fraction(hits, k)
    return total / n_rel


def brute_ap(match) -> float:
    return float(brute_ap_exact(match))


def brute_hard(b: Batch):
    """Exhaustive max/min search, lowest index on ties."""
    out = []
    n = b.labels.size
    for i in range(n):
        best_p, best_n = None, None
        for j in range(n):
            if j == i:
                continue
            if b.labels[j] == b.labels[i]:
                if best_p is None or b.dist[i, j] > b.dist[i, best_p]:
                    best_p = j
            elif best_n is None or b.dist[i, j] < b.dist[i, best_n]:
                best_n = j
        out.append((i, best_p, best_n))
    return out


def shared_profile_batch(n_anchors, neg_dists, pos_dists=None):
    """Identity 0: n_anchors samples (+ extra positives); identity 1: the negatives.

    Every identity-0 anchor sees the same candidate distances, so one call
    yields n_anchors independent draws from the same distribution.
    """
    pos_dists = pos_dists or []
    n_pos_extra, n_neg = len(pos_dists), len(neg_dists)
    size = n_anchors + n_pos_extra + n_neg
    d = np.full((size, size), 50.0)
    np.fill_diagonal(d, 0.0)
    anchors = slice(0, n_anchors)
    for k, v in enumerate(pos_dists):
        j = n_anchors + k
        d[anchors, j] = d[j, anchors] = v
    for k, v in enumerate(neg_dists):
        j = n_anchors + n_pos_extra + k
        d[anchors, j] = d[j, anchors] = v
    labels = np.array([0] * (n_anchors + n_pos_extra) + [1] * n_neg)
    return Batch.from_distances(d, labels)
