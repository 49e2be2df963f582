"""Ranking metrics for inlier-vs-outlier score separation.

Inliers are the positive class throughout: a true positive is an inlier
detected as an inlier. AUROC uses the rank (Mann-Whitney) form
P(in > out) + 0.5*P(in = out); AUPR uses average-precision summation with
tied scores processed as one block; FPR at TPR beta reuses the detector's
threshold rule so the metric and the deployed decision agree.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .detector import ScoreSet, score, select_threshold
from .features import FeatureSet
from .flow import FlowModel


def _as_scores(values) -> np.ndarray:
    arr = np.asarray(values.scores if isinstance(values, ScoreSet) else values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"scores must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty score set")
    if not np.isfinite(arr).all():
        raise ValueError("scores contain non-finite values")
    return arr


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0])
    sorted_vals = values[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(in_scores, out_scores) -> float:
    """P(inlier score > outlier score) + 0.5 * P(equal), via average ranks."""
    s_in = _as_scores(in_scores)
    s_out = _as_scores(out_scores)
    combined = np.concatenate([s_in, s_out])
    ranks = _average_ranks(combined)
    n_in, n_out = len(s_in), len(s_out)
    u = ranks[:n_in].sum() - n_in * (n_in + 1) / 2.0
    return float(u / (n_in * n_out))


def fpr_at_tpr(in_scores, out_scores, beta: float = 0.95) -> float:
    """Fraction of outliers at or above the TPR-beta threshold."""
    s_in = _as_scores(in_scores)
    s_out = _as_scores(out_scores)
    threshold = select_threshold(ScoreSet(scores=s_in), beta=beta)
    return float(np.mean(s_out >= threshold.tau))


def aupr(in_scores, out_scores) -> float:
    """Average precision over descending score thresholds, ties blockwise."""
    s_in = _as_scores(in_scores)
    s_out = _as_scores(out_scores)
    scores = np.concatenate([s_in, s_out])
    positive = np.concatenate([np.ones(len(s_in), bool), np.zeros(len(s_out), bool)])
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    positive = positive[order]
    n_pos = len(s_in)

    ap = 0.0
    tp = 0
    seen = 0
    recall_prev = 0.0
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[j + 1] == scores[i]:
            j += 1
        tp += int(positive[i : j + 1].sum())
        seen += j + 1 - i
        recall = tp / n_pos
        precision = tp / seen
        ap += (recall - recall_prev) * precision
        recall_prev = recall
        i = j + 1
    return float(ap)


@dataclass(frozen=True)
class EvalReport:
    fpr95: float
    auroc: float
    aupr: float
    tau: float
    n_in: int
    n_out: int
    runtime_seconds: float

    def kv_lines(self, include_runtime: bool = True) -> list[str]:
        lines = [
            f"fpr95={self.fpr95!r}",
            f"auroc={self.auroc!r}",
            f"aupr={self.aupr!r}",
            f"tau={self.tau!r}",
            f"n_in={self.n_in}",
            f"n_out={self.n_out}",
        ]
        if include_runtime:
            lines.append(f"runtime_seconds={self.runtime_seconds:.3f}")
        return lines

    def table(self) -> str:
        rows = [
            ("FPR95", f"{100 * self.fpr95:.2f} %"),
            ("AUROC", f"{100 * self.auroc:.2f} %"),
            ("AUPR", f"{100 * self.aupr:.2f} %"),
            ("tau", f"{self.tau:.6f}"),
            ("inliers", str(self.n_in)),
            ("outliers", str(self.n_out)),
            ("runtime", f"{self.runtime_seconds:.3f} s"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def evaluate(
    model: FlowModel,
    inlier_val: FeatureSet,
    outlier: FeatureSet,
    beta: float = 0.95,
) -> tuple[EvalReport, ScoreSet, ScoreSet]:
    """Score both sets and compute FPR-at-beta, AUROC, AUPR, and tau.

    runtime_seconds covers scoring plus metric computation.
    """
    t0 = time.perf_counter()
    in_scores = score(model, inlier_val)
    out_scores = score(model, outlier)
    threshold = select_threshold(in_scores, beta=beta)
    report = EvalReport(
        fpr95=fpr_at_tpr(in_scores, out_scores, beta=beta),
        auroc=auroc(in_scores, out_scores),
        aupr=aupr(in_scores, out_scores),
        tau=threshold.tau,
        n_in=len(in_scores),
        n_out=len(out_scores),
        runtime_seconds=time.perf_counter() - t0,
    )
    return report, in_scores, out_scores
