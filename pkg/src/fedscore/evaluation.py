"""Turning score vectors into detection decisions and contribution metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigurationError


class DegenerateScoresWarning(UserWarning):
    """Scores carry no ordering information (all equal / zero rank variance)."""


@dataclass(frozen=True)
class DetectionResult:
    predicted: np.ndarray
    cluster_means: tuple
    f1: float = float("nan")


@dataclass(frozen=True)
class CeResult:
    transformed: np.ndarray
    l2: float
    spearman: float


def transform(scores):
    """Shift so the minimum is zero, then divide by the sum.

    All-equal input maps to the uniform vector.
    """
    v = np.asarray(scores, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ConfigurationError("transform needs a vector of at least two scores")
    shifted = v - v.min()
    total = shifted.sum()
    if total == 0:
        return np.full(v.size, 1.0 / v.size)
    return shifted / total


def cluster_detect(scores, polarity="low_is_malicious", truth=None, distance="absolute"):
    """Two-cluster single-linkage split of one-dimensional scores.

    On a line, single linkage cut at two clusters separates the points at
    the widest gap between consecutive sorted values; equal gaps resolve to
    the lowest one, and equal scores are ordered by client index.
    ``distance="rank"`` clusters on average ranks instead of raw values.
    """
    v = np.asarray(scores, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ConfigurationError("clustering needs at least two scores")
    if polarity not in ("low_is_malicious", "high_is_malicious"):
        raise ConfigurationError(f"unknown polarity {polarity!r}")
    if distance == "rank":
        v = rankdata(v)
    elif distance != "absolute":
        raise ConfigurationError(f"unknown distance {distance!r}")
    predicted = np.zeros(v.size, dtype=np.int8)
    if np.all(v == v[0]):
        warnings.warn("all scores equal; no client flagged", DegenerateScoresWarning, stacklevel=2)
        means = (float(v[0]), float(v[0]))
    else:
        order = np.argsort(v, kind="stable")
        cut = int(np.argmax(np.diff(v[order]))) + 1
        low, high = order[:cut], order[cut:]
        predicted[low if polarity == "low_is_malicious" else high] = 1
        means = (float(np.asarray(scores, dtype=np.float64)[low].mean()),
                 float(np.asarray(scores, dtype=np.float64)[high].mean()))
    f = float("nan") if truth is None else f1(predicted, truth)
    return DetectionResult(predicted, means, f)


def f1(predicted, truth):
    """F1 with malicious as the positive class; 1.0 when both sets are empty."""
    p = np.asarray(predicted).astype(bool)
    t = np.asarray(truth).astype(bool)
    if p.shape != t.shape:
        raise ConfigurationError("predicted and truth differ in length")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def l2_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError("vectors differ in length")
    return float(np.linalg.norm(a - b))


def spearman(a, b):
    """Pearson correlation of average ranks.

    Zero rank variance on either side is undefined; it is reported as 0
    with a :class:`DegenerateScoresWarning`.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigurationError("vectors differ in length")
    if a.size < 3:
        raise ConfigurationError("spearman needs at least three points")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0:
        warnings.warn("zero rank variance; spearman reported as 0", DegenerateScoresWarning, stacklevel=2)
        return 0.0
    return float(np.clip(ra @ rb / denom, -1.0, 1.0))


def ce_ground_truth(flip_probs):
    """Reference contribution: ``1 - flip probability``, transformed."""
    p = np.asarray(flip_probs, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ConfigurationError("flip probabilities must lie in [0, 1]")
    return transform(1.0 - p)


def ce_metrics(scores, truth):
    """Transform ``scores`` and compare with an already-transformed ``truth``."""
    t = transform(scores)
    return CeResult(t, l2_error(t, truth), spearman(t, truth))
