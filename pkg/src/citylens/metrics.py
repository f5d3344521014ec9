"""Evaluation metrics, implemented directly so tests can pit them against
independent oracles (pair counting, exhaustive scans, reference loops)."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class UndefinedMetricError(ValueError):
    """A metric's preconditions are not met (single class, constant input)."""


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group average."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _check_binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise UndefinedMetricError("need both classes present")
    return labels


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 P(equal), via rank sums."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    ranks = average_ranks(scores)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    rank_sum_pos = float(ranks[labels].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def max_accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    """Best accuracy of 'score >= t predicts positive' over t in the unique
    scores plus +inf (the all-negative rule)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    n = len(labels)
    best = float(np.sum(~labels)) / n  # t = +inf: everything predicted negative
    for t in np.unique(scores):
        pred = scores >= t
        best = max(best, float(np.sum(pred == labels)) / n)
    return best


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b) or len(a) < 2:
        raise UndefinedMetricError("need two aligned sequences of length >= 2")
    if np.unique(a).size < 2 or np.unique(b).size < 2:
        raise UndefinedMetricError("constant input has no rank correlation")
    ra, rb = average_ranks(a), average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    return float((ra @ rb) / np.sqrt((ra @ ra) * (rb @ rb)))


def confusion_matrix(pred: np.ndarray, true: np.ndarray, k: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.min(initial=0) < 0 or pred.max(initial=0) >= k or true.min(initial=0) < 0 or true.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    matrix = np.zeros((k, k), dtype=np.int64)
    np.add.at(matrix, (true, pred), 1)
    return matrix


def f1_binary(pred: np.ndarray, true: np.ndarray) -> float:
    """2PR/(P+R) for the positive class, 0 by convention when P+R = 0."""
    pred = np.asarray(pred).astype(bool)
    true = np.asarray(true).astype(bool)
    tp = float(np.sum(pred & true))
    fp = float(np.sum(pred & ~true))
    fn = float(np.sum(~pred & true))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def f1_macro(pred: np.ndarray, true: np.ndarray, k: int) -> float:
    """Unweighted mean of one-vs-rest F1 over the k classes."""
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    scores = [f1_binary(pred == c, true == c) for c in range(k)]
    return float(np.mean(scores))


def mae(pred: np.ndarray, true: np.ndarray) -> float:
    pred, true = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("need aligned non-empty arrays")
    return float(np.mean(np.abs(pred - true)))


def rmse(pred: np.ndarray, true: np.ndarray) -> float:
    pred, true = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("need aligned non-empty arrays")
    return float(np.sqrt(np.mean((pred - true) ** 2)))


class MapeValue(NamedTuple):
    value: float
    excluded: int  # entries dropped because the true value was zero


def mape(pred: np.ndarray, true: np.ndarray) -> MapeValue:
    """Mean absolute percentage error, in percent; zero-truth entries are
    excluded and counted."""
    pred, true = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("need aligned non-empty arrays")
    usable = true != 0
    excluded = int(np.sum(~usable))
    if not usable.any():
        raise UndefinedMetricError("all true values are zero")
    value = float(np.mean(np.abs((pred[usable] - true[usable]) / true[usable])) * 100.0)
    return MapeValue(value, excluded)
