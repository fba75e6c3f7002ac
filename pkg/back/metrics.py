"""
Calibration metrics: ECE, SCE, ACE and reliability-diagram bin tables
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from back.datamodel import HeadTailPartition
from back.exceptions import DataValidationError, InvalidParameterError

DEFAULT_BINS = 15
DEFAULT_RANGES = 15
ROW_SUM_TOLERANCE = 1e-4
SCHEMES = ("equal_width", "equal_mass")


@dataclass(frozen=True)
class BinStats:
    """Per-bin sample count, mean confidence and accuracy."""

    edges: np.ndarray
    counts: np.ndarray
    confidence: np.ndarray
    accuracy: np.ndarray
    scheme: str

    @property
    def num_samples(self) -> int:
        return int(self.counts.sum())

    def ece(self) -> float:
        """Count-weighted absolute gap; empty bins weigh zero"""
        return _weighted_gap(self.counts, self.confidence, self.accuracy)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "bin_low": self.edges[:-1],
            "bin_high": self.edges[1:],
            "count": self.counts,
            "confidence": self.confidence,
            "accuracy": self.accuracy,
        })


def _weighted_gap(counts: np.ndarray, confidence: np.ndarray, accuracy: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    return float(np.sum(counts / total * np.abs(accuracy - confidence)))


def _check_bins(bins: int) -> None:
    if bins < 1:
        raise InvalidParameterError(f"Number of bins must be >= 1, got {bins}")


def confidences(probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Confidence (row max) and prediction (row argmax, lowest index on ties)

    Raises:
        DataValidationError: If a row does not sum to 1 within 1e-4
    """
    probs = np.asarray(probs, dtype=np.float64)
    bad = np.abs(probs.sum(axis=1) - 1.0) > ROW_SUM_TOLERANCE
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataValidationError(f"Probability row {row} sums to {probs[row].sum():.6f}, not 1")
    return probs.max(axis=1), probs.argmax(axis=1)


def _equal_width_stats(values: np.ndarray, hits: np.ndarray, bins: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    edges = np.linspace(0.0, 1.0, bins + 1)
    # value in (edge_low, edge_high]; 0 falls in the first bin
    index = np.clip(np.searchsorted(edges, values, side="left") - 1, 0, bins - 1)
    counts = np.bincount(index, minlength=bins)
    conf_sum = np.bincount(index, weights=values, minlength=bins)
    hit_sum = np.bincount(index, weights=hits.astype(np.float64), minlength=bins)
    nonempty = counts > 0
    confidence = np.zeros(bins)
    accuracy = np.zeros(bins)
    confidence[nonempty] = conf_sum[nonempty] / counts[nonempty]
    accuracy[nonempty] = hit_sum[nonempty] / counts[nonempty]
    return edges, counts, confidence, accuracy


def _equal_mass_stats(values: np.ndarray, hits: np.ndarray, bins: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    order = np.argsort(values, kind="stable")
    groups = np.array_split(order, bins)
    counts = np.array([g.size for g in groups], dtype=np.int64)
    confidence = np.array([values[g].mean() if g.size else 0.0 for g in groups])
    accuracy = np.array([hits[g].mean() if g.size else 0.0 for g in groups])
    edges = np.zeros(bins + 1)
    upper = 0.0
    for b, g in enumerate(groups):
        if g.size:
            upper = float(values[g].max())
        edges[b + 1] = upper
    edges[-1] = 1.0
    return edges, counts, confidence, accuracy


def ece(probs: np.ndarray, labels: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error over equal-width confidence bins"""
    _check_bins(bins)
    conf, pred = confidences(probs)
    hits = pred == np.asarray(labels)
    edges, counts, confidence, accuracy = _equal_width_stats(conf, hits, bins)
    return _weighted_gap(counts, confidence, accuracy)


def sce(probs: np.ndarray, labels: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Static (classwise) calibration error: per-class-column ECE averaged over classes"""
    _check_bins(bins)
    probs = np.asarray(probs, dtype=np.float64)
    confidences(probs)
    labels = np.asarray(labels)
    per_class = []
    for k in range(probs.shape[1]):
        _, counts, confidence, accuracy = _equal_width_stats(probs[:, k], labels == k, bins)
        per_class.append(_weighted_gap(counts, confidence, accuracy))
    return float(np.mean(per_class))


def ace(probs: np.ndarray, labels: np.ndarray, ranges: int = DEFAULT_RANGES) -> float:
    """
    Adaptive calibration error

    Per class, the sorted class-probability column is cut into `ranges`
    equal-count ranges (the first ranges take the remainder); the absolute
    gaps are averaged uniformly over all classes and ranges.
    """
    if ranges < 1:
        raise InvalidParameterError(f"Number of ranges must be >= 1, got {ranges}")
    probs = np.asarray(probs, dtype=np.float64)
    confidences(probs)
    labels = np.asarray(labels)
    if probs.shape[0] < ranges:
        raise InvalidParameterError(f"ACE needs at least {ranges} samples, got {probs.shape[0]}")
    gaps = []
    for k in range(probs.shape[1]):
        column = probs[:, k]
        order = np.argsort(column, kind="stable")
        for group in np.array_split(order, ranges):
            gaps.append(abs(np.mean(labels[group] == k) - np.mean(column[group])))
    return float(np.mean(gaps))


def reliability_table(
    probs: np.ndarray,
    labels: np.ndarray,
    bins: int = DEFAULT_BINS,
    scheme: str = "equal_width",
) -> BinStats:
    """Confidence-vs-accuracy table for a reliability diagram"""
    _check_bins(bins)
    if scheme not in SCHEMES:
        raise InvalidParameterError(f"Unknown binning scheme {scheme!r}; expected one of {SCHEMES}")
    conf, pred = confidences(probs)
    hits = pred == np.asarray(labels)
    if scheme == "equal_width":
        edges, counts, confidence, accuracy = _equal_width_stats(conf, hits, bins)
    else:
        edges, counts, confidence, accuracy = _equal_mass_stats(conf, hits.astype(np.float64), bins)
    return BinStats(edges=edges, counts=counts, confidence=confidence, accuracy=accuracy, scheme=scheme)


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    _, pred = confidences(probs)
    return float(np.mean(pred == np.asarray(labels)))


def group_ece(
    probs: np.ndarray,
    labels: np.ndarray,
    split: HeadTailPartition,
    bins: int = DEFAULT_BINS,
) -> Dict[str, Optional[float]]:
    """ECE restricted to samples whose true class is a head class, and to tail-class samples"""
    labels = np.asarray(labels)
    probs = np.asarray(probs, dtype=np.float64)
    tail = split.tail_mask(labels)
    result: Dict[str, Optional[float]] = {}
    for name, mask in (("head_ece", ~tail), ("tail_ece", tail)):
        result[name] = ece(probs[mask], labels[mask], bins) if mask.any() else None
    return result


def metric_report(
    probs: np.ndarray,
    labels: np.ndarray,
    bins: int = DEFAULT_BINS,
    ranges: int = DEFAULT_RANGES,
) -> Dict[str, float]:
    """The {ece, sce, ace, accuracy, n, bins} record"""
    return {
        "ece": ece(probs, labels, bins),
        "sce": sce(probs, labels, bins),
        "ace": ace(probs, labels, ranges),
        "accuracy": accuracy(probs, labels),
        "n": int(np.asarray(labels).shape[0]),
        "bins": int(bins),
    }
