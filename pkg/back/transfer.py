"""
Head-to-tail statistics transfer and clipped importance weights
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import softmax

from back.datamodel import HeadTailPartition, LabeledEmbeddingSet
from back.exceptions import DataValidationError, InvalidParameterError
from back.gaussians import STD_FLOOR, ClassGaussian, log_density, wasserstein2
from back.logger import logger

DEFAULT_ALPHA = 0.998
DEFAULT_ETA1 = 0.3
DEFAULT_ETA2 = 5.0


class Strategy(str, Enum):
    """How a tail class distributes its transfer over head classes"""

    ATTENTION = "attention"
    UNIFORM = "uniform"
    ONEHOT = "onehot"


@dataclass(frozen=True)
class TransferPlan:
    """Attention over head classes and merged statistics, per tail class."""

    head: Tuple[int, ...]
    attention: Dict[int, np.ndarray]
    distances: Dict[int, np.ndarray]
    merged: Dict[int, ClassGaussian]
    alpha: float
    strategy: Strategy

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "strategy": self.strategy.value,
            "head": list(self.head),
            "tail": [
                {
                    "label": int(c),
                    "attention": self.attention[c].tolist(),
                    "distances": self.distances[c].tolist(),
                    "merged": self.merged[c].to_dict(),
                }
                for c in sorted(self.merged)
            ],
        }


@dataclass(frozen=True)
class ImportanceWeights:
    """Per-sample weights: 1 for head classes, clipped density ratio for tail classes."""

    weights: np.ndarray
    clip_low: float
    clip_high: float

    def to_dict(self) -> dict:
        return {"clip_low": self.clip_low, "clip_high": self.clip_high, "weights": self.weights.tolist()}

    def fraction_above(self, level: float = 1.0) -> float:
        if self.weights.size == 0:
            return 0.0
        return float(np.mean(self.weights > level))


def _softmax_attention(distances: np.ndarray, feature_dim: int) -> np.ndarray:
    return softmax(-distances / math.sqrt(feature_dim))


def attention_scores(
    tail_c: ClassGaussian,
    heads: Sequence[ClassGaussian],
    feature_dim: int,
    strategy: Union[Strategy, str] = Strategy.ATTENTION,
) -> np.ndarray:
    """
    Transfer weights of one tail class over the head classes

    Args:
        tail_c: source statistics of the tail class
        heads: source statistics of the head classes, in head order
        feature_dim: feature dimension D scaling the distances
        strategy: attention (softmax of -W2/sqrt(D)), uniform, or onehot (nearest head, lowest index on ties)

    Returns:
        non-negative vector summing to 1
    """
    if not heads:
        raise InvalidParameterError("attention_scores needs at least one head class")
    distances = np.array([wasserstein2(tail_c, head) for head in heads])
    return _scores_from_distances(distances, feature_dim, Strategy(strategy))


def _scores_from_distances(distances: np.ndarray, feature_dim: int, strategy: Strategy) -> np.ndarray:
    if strategy is Strategy.ATTENTION:
        return _softmax_attention(distances, feature_dim)
    if strategy is Strategy.UNIFORM:
        return np.full(distances.shape[0], 1.0 / distances.shape[0])
    scores = np.zeros(distances.shape[0])
    scores[int(np.argmin(distances))] = 1.0
    return scores


def merge_statistics(
    tail_c: ClassGaussian,
    heads: Sequence[ClassGaussian],
    s_c: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
) -> ClassGaussian:
    """
    Convex combination of tail and attention-weighted head statistics

    mean* = alpha * mean_c + (1 - alpha) * sum_k s_k mean_k, and likewise for std.
    The count is carried from the tail class.
    """
    s_c = np.asarray(s_c, dtype=np.float64)
    if s_c.shape != (len(heads),):
        raise InvalidParameterError(f"{s_c.shape[0] if s_c.ndim else 1} attention scores for {len(heads)} head classes")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")
    head_means = np.stack([head.mean for head in heads])
    head_stds = np.stack([head.std for head in heads])
    mean = alpha * tail_c.mean + (1.0 - alpha) * (s_c @ head_means)
    std = alpha * tail_c.std + (1.0 - alpha) * (s_c @ head_stds)
    return ClassGaussian(mean=mean, std=np.maximum(std, STD_FLOOR), count=tail_c.count)


def build_transfer_plan(
    stats: Mapping[int, ClassGaussian],
    split: HeadTailPartition,
    alpha: float = DEFAULT_ALPHA,
    strategy: Union[Strategy, str] = Strategy.ATTENTION,
) -> TransferPlan:
    """Attention and merged statistics for every tail class of the partition"""
    strategy = Strategy(strategy)
    if not split.head:
        raise InvalidParameterError("Transfer needs at least one head class")
    heads = [stats[k] for k in split.head]
    feature_dim = heads[0].dim

    attention: Dict[int, np.ndarray] = {}
    distances: Dict[int, np.ndarray] = {}
    merged: Dict[int, ClassGaussian] = {}
    for c in split.tail:
        d_c = np.array([wasserstein2(stats[c], head) for head in heads])
        s_c = _scores_from_distances(d_c, feature_dim, strategy)
        distances[c] = d_c
        attention[c] = s_c
        merged[c] = merge_statistics(stats[c], heads, s_c, alpha)
        logger.debug(f"Tail class {c}: nearest head {split.head[int(np.argmin(d_c))]}, max score {s_c.max():.4f}")

    logger.info(
        f"Built transfer plan ({strategy.value}, alpha={alpha}) for {len(split.tail)} tail classes "
        f"from {len(split.head)} head classes"
    )
    return TransferPlan(
        head=tuple(split.head),
        attention=attention,
        distances=distances,
        merged=merged,
        alpha=float(alpha),
        strategy=strategy,
    )


def importance_weights(
    val: LabeledEmbeddingSet,
    source_stats: Mapping[int, ClassGaussian],
    plan: TransferPlan,
    split: HeadTailPartition,
    eta1: float = DEFAULT_ETA1,
    eta2: float = DEFAULT_ETA2,
) -> ImportanceWeights:
    """
    Clipped density-ratio weights for the validation samples

    Head samples get weight 1. A tail sample x of class c gets
    clip(q*_c(x) / p_c(x), eta1, eta2), the ratio evaluated in log space.

    Raises:
        DataValidationError: If a validation class has no source statistics
        InvalidParameterError: If the clip bounds are invalid
    """
    if not 0.0 < eta1 <= eta2:
        raise InvalidParameterError(f"Clip bounds must satisfy 0 < eta1 <= eta2, got {eta1}, {eta2}")
    present = np.flatnonzero(val.class_counts > 0)
    unknown = [int(c) for c in present if int(c) not in source_stats]
    if unknown:
        raise DataValidationError(f"Validation classes {unknown} have no source statistics")

    features = val.features.astype(np.float64)
    weights = np.ones(val.num_samples)
    for c in split.tail:
        rows = np.flatnonzero(val.labels == c)
        if rows.size == 0:
            continue
        log_ratio = log_density(plan.merged[c], features[rows]) - log_density(source_stats[c], features[rows])
        ratio = np.exp(np.clip(log_ratio, -700.0, 700.0))
        weights[rows] = np.clip(ratio, eta1, eta2)

    tail_rows = split.tail_mask(val.labels)
    clipped = int(np.sum((weights[tail_rows] == eta1) | (weights[tail_rows] == eta2)))
    if clipped:
        logger.warning(f"{clipped} of {int(tail_rows.sum())} tail weights hit a clip bound [{eta1}, {eta2}]")
    logger.info(
        f"Importance weights: {int(tail_rows.sum())} tail samples, "
        f"mean tail weight {weights[tail_rows].mean() if tail_rows.any() else 1.0:.4f}"
    )
    weights.setflags(write=False)
    return ImportanceWeights(weights=weights, clip_low=float(eta1), clip_high=float(eta2))


def weight_histogram(w: ImportanceWeights, bins: int = 20) -> pd.DataFrame:
    """
    Equal-width histogram of the weights over [eta1, eta2]

    Returns:
        DataFrame with bin_left, bin_right, count, density (density integrates to 1)
    """
    if bins < 1:
        raise InvalidParameterError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(w.weights, bins=bins, range=(w.clip_low, w.clip_high))
    widths = np.diff(edges)
    total = counts.sum()
    if total and w.clip_high > w.clip_low:
        density = counts / (total * widths)
    else:
        density = np.zeros(bins)
    return pd.DataFrame({
        "bin_left": edges[:-1],
        "bin_right": edges[1:],
        "count": counts.astype(np.int64),
        "density": density,
    })


def attention_table(plan: TransferPlan, top_k: int = 3) -> pd.DataFrame:
    """Most similar head classes per tail class, ranked by attention score"""
    rows = []
    for c in sorted(plan.attention):
        scores = plan.attention[c]
        order = np.argsort(-scores, kind="stable")[:top_k]
        for rank, k in enumerate(order, start=1):
            rows.append({
                "tail_class": int(c),
                "rank": rank,
                "head_class": int(plan.head[k]),
                "score": float(scores[k]),
                "distance": float(plan.distances[c][k]),
            })
    return pd.DataFrame(rows, columns=["tail_class", "rank", "head_class", "score", "distance"])


def save_json(document: dict, path: Union[str, Path]) -> Path:
    """Write an audit document (plan or weights) as JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2) + "\n")
    return path
