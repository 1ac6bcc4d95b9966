"""Clustering evaluation: partition similarity and confusion matrices."""

import numpy as np

from .exceptions import LengthMismatch, UniverseMismatch


def partition_from_labels(labels):
    """Group indices by label, in order of first appearance."""
    groups = {}
    for i, lab in enumerate(np.asarray(labels).tolist()):
        groups.setdefault(lab, set()).add(i)
    return list(groups.values())


def _check_partition(p):
    sets = [set(c) for c in p]
    if any(not c for c in sets):
        raise ValueError("partitions may not contain empty clusters")
    universe = set().union(*sets) if sets else set()
    if sum(len(c) for c in sets) != len(universe):
        raise ValueError("clusters of a partition must be disjoint")
    return sets, universe


def similarity(g, g_hat):
    """Average best-match overlap between true and predicted clusters.

    ``(1/M) sum_i max_j 2 |G_i & H_j| / (|G_i| + |H_j|)`` with ``M`` the number
    of true clusters; ``j`` ranges over every predicted cluster, so the two
    partitions may have different cluster counts. Not symmetric in general.
    """
    g, u1 = _check_partition(g)
    h, u2 = _check_partition(g_hat)
    if u1 != u2:
        raise UniverseMismatch("partitions cover different series")
    total = 0.0
    for gi in g:
        total += max(2.0 * len(gi & hj) / (len(gi) + len(hj)) for hj in h)
    return total / len(g)


def similarity_from_labels(true_labels, pred_labels):
    if len(true_labels) != len(pred_labels):
        raise LengthMismatch(f"{len(true_labels)} true vs {len(pred_labels)} predicted labels")
    return similarity(partition_from_labels(true_labels), partition_from_labels(pred_labels))


def confusion_matrix(true_labels, pred_labels):
    """Counts ``(a, b) = #{i : true_i = a, pred_i = b}``.

    Returns ``(matrix, true_classes, pred_classes)``; classes are the sorted
    distinct labels on each side.
    """
    t = np.asarray(true_labels)
    p = np.asarray(pred_labels)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.size} true vs {p.size} predicted labels")
    tc, ti = np.unique(t, return_inverse=True)
    pc, pi = np.unique(p, return_inverse=True)
    out = np.zeros((tc.size, pc.size), dtype=int)
    np.add.at(out, (ti, pi), 1)
    return out, tc, pc
