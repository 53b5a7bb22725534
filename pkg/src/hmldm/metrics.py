"""Ranking and clustering agreement scores."""
import numpy as np
from scipy.stats import rankdata

__all__ = ["auc_roc", "nmi", "ari", "contingency"]


def auc_roc(scores_pos, scores_neg):
    """Area under the ROC curve as the Mann-Whitney statistic.

    Equals ``(#{p > n} + 0.5 #{p == n}) / (|pos| |neg|)`` over all
    positive/negative score pairs; computed from mid-ranks in O(n log n).
    """
    pos = np.asarray(scores_pos, dtype=np.float64).ravel()
    neg = np.asarray(scores_neg, dtype=np.float64).ravel()
    if not len(pos) or not len(neg):
        raise ValueError("auc_roc needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def contingency(labels_a, labels_b):
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if len(a) != len(b):
        raise ValueError("partitions differ in length")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1 if len(ia) else 0, ib.max() + 1 if len(ib) else 0))
    np.add.at(table, (ia, ib), 1)
    return table


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(labels_a, labels_b):
    """Normalised mutual information with the arithmetic mean of entropies.

    Two single-cluster partitions score 1; if only one side has zero
    entropy the score is 0.
    """
    table = contingency(labels_a, labels_b)
    if table.size == 0:
        raise ValueError("empty partitions")
    n = table.sum()
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    nz = table > 0
    mi = float(np.sum(table[nz] / n * np.log(table[nz] * n / outer[nz])))
    return float(np.clip(mi / (0.5 * (ha + hb)), 0.0, 1.0))


def _comb2(x):
    return x * (x - 1) / 2.0


def ari(labels_a, labels_b):
    """Adjusted Rand index from the pair-counting contingency formula."""
    table = contingency(labels_a, labels_b)
    n = table.sum()
    if n < 2:
        raise ValueError("ari needs at least two items")
    index = _comb2(table).sum()
    sa = _comb2(table.sum(axis=1)).sum()
    sb = _comb2(table.sum(axis=0)).sum()
    expected = sa * sb / _comb2(n)
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        # both partitions trivial (all singletons or one block)
        return 1.0 if index == max_index else 0.0
    return float((index - expected) / (max_index - expected))
