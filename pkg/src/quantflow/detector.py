"""Scoring, TPR-beta threshold selection, and inlier/outlier decisions.

A sample is an inlier when its log-likelihood is greater than or equal to
the threshold tau (boundary inclusive); tau is picked from inlier
calibration scores so that at least a fraction beta of them are detected.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    NonFiniteValueError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .features import FeatureSet
from .flow import INFERENCE, FlowModel
from .objective import quantile

SCORE_MAGIC = b"QODS"
SCORE_VERSION = 1
_SCORE_HEADER = struct.Struct("<4sII")

_SCORE_CHUNK = 4096


@dataclass(frozen=True)
class ScoreSet:
    """Per-sample log-likelihoods for one feature set under one model.

    Class labels, when the source feature file carried them, are echoed
    through untouched so downstream accuracy tooling can pair them with
    the decisions (the classification head itself is out of scope here).
    """

    scores: np.ndarray
    source: str = ""
    model_id: str = ""
    labels: np.ndarray | None = None

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if scores.ndim != 1:
            raise ShapeMismatchError(f"scores must be 1-D, got shape {scores.shape}")
        if not np.isfinite(scores).all():
            raise NonFiniteValueError("scores contain NaN or infinity")
        scores.flags.writeable = False
        object.__setattr__(self, "scores", scores)
        if self.labels is not None and self.labels.shape != scores.shape:
            raise ShapeMismatchError("labels must match scores in length")

    def __len__(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class Threshold:
    tau: float
    beta: float = 0.95
    calibration_id: str = ""

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not math.isfinite(self.tau):
            raise ValueError("tau must be finite")


def score(model: FlowModel, features: FeatureSet, model_id: str = "") -> ScoreSet:
    """Log-likelihood of every sample, order preserved; inference mode only."""
    if model.mode != INFERENCE:
        raise RuntimeError("scoring requires the model in inference mode")
    if features.dim != model.dim:
        raise ShapeMismatchError(
            f"feature dim {features.dim} does not match model dim {model.dim}"
        )
    data = features.as_float64()
    parts = [
        model.log_prob(data[i : i + _SCORE_CHUNK])
        for i in range(0, features.count, _SCORE_CHUNK)
    ]
    scores = np.concatenate(parts) if parts else np.zeros(0)
    return ScoreSet(
        scores=scores, source=features.name, model_id=model_id, labels=features.labels
    )


def select_threshold(inlier_scores: ScoreSet, beta: float = 0.95) -> Threshold:
    """Largest tau keeping at least a fraction beta of calibration inliers.

    Starts from the interpolated (1-beta)-quantile of the scores (the
    repo-wide quantile convention). For calibration sizes where (1-beta)*N
    is not integral that interpolated point can leave slightly fewer than
    beta*N scores at or above it, so tau is lowered to the order statistic
    v_(N - ceil(beta*N)) whenever needed, restoring detection rate >= beta
    while staying within one sample of it.
    """
    n = len(inlier_scores)
    if n == 0:
        raise ValueError("empty calibration scores")
    if n < 2:
        raise ValueError("threshold calibration needs at least 2 scores")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    values = inlier_scores.scores
    tau, _, _, _ = quantile(values, 1.0 - beta)
    need = math.ceil(beta * n)
    ordered = np.sort(values)
    floor_stat = float(ordered[n - need])
    if tau > floor_stat:
        tau = floor_stat
    return Threshold(tau=float(tau), beta=beta, calibration_id=inlier_scores.source)


def decide(scores: ScoreSet, threshold: Threshold) -> np.ndarray:
    """Boolean inlier mask: True where score >= tau (boundary is inlier)."""
    return scores.scores >= threshold.tau


# ---- persistence -----------------------------------------------------------


def save_scores(scores: ScoreSet, path) -> None:
    """Binary QODS v1: magic, u32 version, u32 count, count float32 scores."""
    with open(path, "wb") as fh:
        fh.write(_SCORE_HEADER.pack(SCORE_MAGIC, SCORE_VERSION, len(scores)))
        fh.write(np.ascontiguousarray(scores.scores, dtype="<f4").tobytes())


def load_scores(path, source: str = "", model_id: str = "") -> ScoreSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _SCORE_HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than the score header")
    magic, version, count = _SCORE_HEADER.unpack(raw[: _SCORE_HEADER.size])
    if magic != SCORE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {SCORE_MAGIC!r}")
    if version != SCORE_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported score version {version}")
    body = raw[_SCORE_HEADER.size :]
    if len(body) != count * 4:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(body)} bytes, header declares {count * 4}"
        )
    values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return ScoreSet(scores=values, source=source or str(path), model_id=model_id)


def save_scores_text(scores: ScoreSet, path) -> None:
    """Two-column text export: sample index, score."""
    with open(path, "w") as fh:
        for i, s in enumerate(scores.scores):
            fh.write(f"{i}\t{float(s)!r}\n")


def save_threshold(threshold: Threshold, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"tau={threshold.tau!r}\n")
        fh.write(f"beta={threshold.beta!r}\n")
        fh.write(f"calibration={threshold.calibration_id}\n")


def load_threshold(path) -> Threshold:
    fields = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    try:
        return Threshold(
            tau=float(fields["tau"]),
            beta=float(fields["beta"]),
            calibration_id=fields.get("calibration", ""),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing threshold field {exc}") from exc
