"""Benchmark runner: zero-shot and few-shot evaluation with seeded splits.

Zero-shot tasks score points directly (Spearman / ROC-AUC) and, for
regression targets, additionally through quantile calibration to express
MAE/F1 on the ground-truth scale.  Few-shot ("knn") tasks train an
unweighted KNN classifier over quantile bins on a seeded 30% split, predict
bin probabilities, and collapse them to continuous values through the
probability-weighted bin means; metrics are averaged over the draws.
Everything is a pure function of (inputs, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .analytics import _bin_index, apply_quantile_map, bin_expectation, fit_quantile_map, knn_fit, knn_predict
from .core import SeededRng
from .metrics import UndefinedMetricError


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.3
    draws: int = 5
    seed: int = 0
    validation_point_cap: int = 20000

    def __post_init__(self) -> None:
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")


@dataclass
class BenchmarkTask:
    """One evaluation task over aligned per-sample arrays.

    `kind` is "binary" (gt holds 0/1 labels) or "regression" (continuous).
    `mode` picks the protocol: "zero_shot" (direct + calibrated metrics),
    "quantile_calibrated" (calibrated metrics only), or "knn" (few-shot over
    `features`).
    """

    name: str
    kind: str
    mode: str
    gt: np.ndarray
    scores: np.ndarray | None = None
    features: np.ndarray | None = None
    quantile_k: int = 5
    knn_k: int = 5

    def __post_init__(self) -> None:
        if self.kind not in ("binary", "regression"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.mode not in ("zero_shot", "quantile_calibrated", "knn"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.gt = np.asarray(self.gt, dtype=np.float64)
        if self.mode in ("zero_shot", "quantile_calibrated"):
            if self.scores is None:
                raise ValueError(f"mode {self.mode} needs scores")
            self.scores = np.asarray(self.scores, dtype=np.float64)
            if self.scores.shape != self.gt.shape:
                raise ValueError("scores must align with ground truth")
        if self.mode == "knn":
            if self.features is None:
                raise ValueError("mode knn needs features")
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.shape[0] != self.gt.shape[0]:
                raise ValueError("features must align with ground truth")


@dataclass
class TaskResult:
    metrics: dict[str, dict] = field(default_factory=dict)
    confusion: list[list[int]] | None = None
    flags: list[str] = field(default_factory=list)
    sample_count: int = 0

    def put(self, name: str, value: float, unit: str = "", n: int | None = None) -> None:
        self.metrics[name] = {"value": float(value), "unit": unit, "n": int(n if n is not None else self.sample_count)}


@dataclass
class MetricReport:
    seed: int
    split: dict
    tasks: dict[str, TaskResult] = field(default_factory=dict)

    def to_jsonable(self) -> dict:
        return {
            "seed": self.seed,
            "split": self.split,
            "tasks": {
                name: {
                    "metrics": result.metrics,
                    "confusion": result.confusion,
                    "flags": sorted(result.flags),
                    "n": result.sample_count,
                }
                for name, result in self.tasks.items()
            },
        }

    def to_json_bytes(self) -> bytes:
        return (json.dumps(self.to_jsonable(), sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n").encode()

    def to_table(self) -> str:
        preferred = ["spearman", "f1", "mae", "mape", "rmse", "max_accuracy", "roc_auc"]
        names = sorted({m for r in self.tasks.values() for m in r.metrics}, key=lambda m: (preferred.index(m) if m in preferred else len(preferred), m))
        header = ["Task".ljust(28)] + [n.rjust(14) for n in names]
        lines = ["".join(header), "-" * (28 + 14 * len(names))]
        for task in sorted(self.tasks):
            result = self.tasks[task]
            cells = [task.ljust(28)]
            for m in names:
                entry = result.metrics.get(m)
                cells.append(("-" if entry is None else f"{entry['value']:.4f}").rjust(14))
            lines.append("".join(cells))
        return "\n".join(lines) + "\n"


def _best_threshold_f1(scores: np.ndarray, labels: np.ndarray) -> float:
    best = 0.0
    for t in np.unique(scores):
        best = max(best, metrics.f1_binary(scores >= t, labels))
    return best


def _binary_metrics(result: TaskResult, scores: np.ndarray, labels: np.ndarray) -> None:
    try:
        result.put("roc_auc", metrics.roc_auc(scores, labels))
        result.put("max_accuracy", metrics.max_accuracy(scores, labels))
        result.put("f1", _best_threshold_f1(scores, labels.astype(bool)))
    except UndefinedMetricError as e:
        result.flags.append(f"binary-metrics-undefined: {e}")


def _calibrated_metrics(result: TaskResult, scores: np.ndarray, gt: np.ndarray, k: int) -> None:
    qmap = fit_quantile_map(scores, gt, k=k)
    if qmap.reduced:
        result.flags.append("quantile-bins-reduced")
    calibrated = apply_quantile_map(qmap, scores)
    result.put("mae", metrics.mae(calibrated, gt))
    result.put("rmse", metrics.rmse(calibrated, gt))
    try:
        value, excluded = metrics.mape(calibrated, gt)
        result.put("mape", value, unit="%")
        if excluded:
            result.flags.append(f"mape-excluded-zero-truth: {excluded}")
    except UndefinedMetricError:
        result.flags.append("mape-undefined: all true values zero")
    n_bins = qmap.bin_count
    gt_edges = np.quantile(gt, np.linspace(0.0, 1.0, n_bins + 1))
    gt_edges = np.unique(gt_edges)
    pred_bins = _bin_index(qmap.score_edges, scores)
    true_bins = _bin_index(gt_edges, gt)
    k_cm = max(n_bins, len(gt_edges) - 1)
    result.put("f1", metrics.f1_macro(pred_bins, true_bins, k_cm))
    result.confusion = metrics.confusion_matrix(pred_bins, true_bins, k_cm).tolist()


def _zero_shot(task: BenchmarkTask) -> TaskResult:
    result = TaskResult(sample_count=len(task.gt))
    scores = task.scores
    assert scores is not None
    if task.kind == "binary":
        _binary_metrics(result, scores, task.gt.astype(bool))
        return result
    if task.mode == "zero_shot":
        try:
            result.put("spearman", metrics.spearman(scores, task.gt))
        except UndefinedMetricError as e:
            result.flags.append(f"spearman-undefined: {e}")
    _calibrated_metrics(result, scores, task.gt, task.quantile_k)
    return result


def _knn_draw(task: BenchmarkTask, rng: SeededRng, cap: int, train_fraction: float):
    """One seeded draw: returns (per-metric dict, confusion, flags, n_val)."""
    n = len(task.gt)
    g = rng.generator()
    perm = g.permutation(n)
    n_train = min(max(1, int(math.floor(train_fraction * n))), n - 1)
    train_idx, val_idx = perm[:n_train], perm[n_train:]
    if len(val_idx) > cap:
        keep = rng.child("validation-cap").generator().choice(len(val_idx), size=cap, replace=False)
        val_idx = val_idx[np.sort(keep)]

    feats = task.features
    assert feats is not None
    values: dict[str, float] = {}
    flags: list[str] = []
    confusion = None

    if task.kind == "binary":
        labels = task.gt.astype(int)
        model = knn_fit(feats[train_idx], labels[train_idx], k=task.knn_k, task="classification")
        if model.clamped:
            flags.append("knn-k-clamped")
        probs = knn_predict(model, feats[val_idx])
        assert model.classes is not None
        pos_col = np.nonzero(model.classes == 1)[0]
        pos_prob = probs[:, pos_col[0]] if pos_col.size else np.zeros(len(val_idx))
        try:
            values["roc_auc"] = metrics.roc_auc(pos_prob, labels[val_idx].astype(bool))
            values["max_accuracy"] = metrics.max_accuracy(pos_prob, labels[val_idx].astype(bool))
            values["f1"] = _best_threshold_f1(pos_prob, labels[val_idx].astype(bool))
        except UndefinedMetricError as e:
            flags.append(f"draw-metrics-undefined: {e}")
        return values, confusion, flags, len(val_idx)

    qmap = fit_quantile_map(task.gt[train_idx], task.gt[train_idx], k=task.quantile_k)
    if qmap.reduced:
        flags.append("quantile-bins-reduced")
    train_bins = _bin_index(qmap.score_edges, task.gt[train_idx])
    model = knn_fit(feats[train_idx], train_bins, k=task.knn_k, task="classification")
    if model.clamped:
        flags.append("knn-k-clamped")
    probs = knn_predict(model, feats[val_idx])
    assert model.classes is not None
    bin_means = qmap.target_means[model.classes]
    continuous = np.array([bin_expectation(p, bin_means) for p in probs])
    val_gt = task.gt[val_idx]
    try:
        values["spearman"] = metrics.spearman(continuous, val_gt)
    except UndefinedMetricError as e:
        flags.append(f"spearman-undefined: {e}")
    values["mae"] = metrics.mae(continuous, val_gt)
    values["rmse"] = metrics.rmse(continuous, val_gt)
    try:
        values["mape"] = metrics.mape(continuous, val_gt).value
    except UndefinedMetricError:
        flags.append("mape-undefined: all true values zero")
    pred_bins = model.classes[np.argmax(probs, axis=1)]
    true_bins = _bin_index(qmap.score_edges, val_gt)
    k_cm = qmap.bin_count
    values["f1"] = metrics.f1_macro(pred_bins, true_bins, k_cm)
    confusion = metrics.confusion_matrix(pred_bins, true_bins, k_cm)
    return values, confusion, flags, len(val_idx)


def _knn(task: BenchmarkTask, split: SplitSpec, rng: SeededRng) -> TaskResult:
    result = TaskResult()
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    confusion_total = None
    n_val_total = 0
    for draw in range(split.draws):
        values, confusion, flags, n_val = _knn_draw(
            task, rng.child(f"draw-{draw}"), split.validation_point_cap, split.train_fraction
        )
        n_val_total += n_val
        result.flags.extend(f for f in flags if f not in result.flags)
        for name, value in values.items():
            sums[name] = sums.get(name, 0.0) + value
            counts[name] = counts.get(name, 0) + 1
        if confusion is not None:
            confusion_total = confusion if confusion_total is None else confusion_total + confusion
    result.sample_count = n_val_total
    for name in sums:
        if counts[name] < split.draws:
            result.flags.append(f"{name}-missing-in-some-draws")
        result.put(name, sums[name] / counts[name], unit="%" if name == "mape" else "")
    if confusion_total is not None:
        result.confusion = confusion_total.tolist()
    return result


def run_benchmark(tasks: list[BenchmarkTask], split: SplitSpec) -> MetricReport:
    """Evaluate every task; per-task metric failures are flagged, not fatal."""
    rng = SeededRng(split.seed, "benchmark")
    report = MetricReport(
        seed=split.seed,
        split={
            "train_fraction": split.train_fraction,
            "draws": split.draws,
            "validation_point_cap": split.validation_point_cap,
        },
    )
    for task in tasks:
        try:
            if task.mode == "knn":
                result = _knn(task, split, rng.child(f"task-{task.name}"))
            else:
                result = _zero_shot(task)
        except (ValueError, UndefinedMetricError) as e:
            result = TaskResult(flags=[f"task-failed: {e}"], sample_count=len(task.gt))
        report.tasks[task.name] = result
    return report
