"""
Synthetic long-tailed embedding generator for desk-scale experiments
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.stats import norm

from back.datamodel import LabeledEmbeddingSet
from back.exceptions import InvalidParameterError
from back.logger import logger

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the class-conditional Gaussian generator.

    Class c has n_c = round(max_count * imbalance_factor ** (-c / (C - 1))) train+val
    samples, split 80/20 per class. The test split is balanced with
    `test_per_class` samples per class.

    Training embeddings of class c are contracted toward the class mean by
    (n_c / max_count) ** memorization: a network that has memorized its
    training set maps rare training samples into a tighter cluster than the
    held-out samples of the same class. Validation and test features are
    never contracted, and neither are the class means. `memorization=0`
    gives identically distributed splits.
    """

    num_classes: int = 10
    feature_dim: int = 16
    imbalance_factor: float = 100.0
    max_count: int = 500
    overconfidence_scale: float = 2.5
    prior_bias: bool = True
    seed: int = 0
    test_per_class: int = 1000
    separation: float = 3.0
    memorization: float = 1.0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise InvalidParameterError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.imbalance_factor < 1:
            raise InvalidParameterError(f"imbalance_factor must be >= 1, got {self.imbalance_factor}")
        if self.feature_dim < 1:
            raise InvalidParameterError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.overconfidence_scale <= 0:
            raise InvalidParameterError(f"overconfidence_scale must be > 0, got {self.overconfidence_scale}")
        if self.test_per_class < 1 or self.separation <= 0:
            raise InvalidParameterError("test_per_class and separation must be positive")
        if self.memorization < 0:
            raise InvalidParameterError(f"memorization must be >= 0, got {self.memorization}")
        if not 0 <= self.seed < 2**64:
            raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.class_counts().min() < 1:
            raise InvalidParameterError(
                f"max_count={self.max_count} with imbalance_factor={self.imbalance_factor} "
                f"leaves a class without samples"
            )

    def class_counts(self) -> np.ndarray:
        """Long-tailed train+val count per class, non-increasing"""
        c = np.arange(self.num_classes)
        raw = self.max_count * self.imbalance_factor ** (-c / (self.num_classes - 1))
        return np.floor(raw + 0.5).astype(np.int64)

    def split_counts(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-class (train, val) counts of the 80/20 split"""
        total = self.class_counts()
        train = np.floor(TRAIN_FRACTION * total + 0.5).astype(np.int64)
        return train, total - train


def class_means(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm random directions scaled by the separation, one row per class"""
    directions = rng.standard_normal((spec.num_classes, spec.feature_dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    return spec.separation * directions / norms


def generative_scores(features: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Class-conditional log densities log N(f | m_c, I) for every row and class"""
    features = np.asarray(features, dtype=np.float64)
    scores = np.empty((features.shape[0], means.shape[0]))
    for c, mean in enumerate(means):
        scores[:, c] = norm.logpdf(features, loc=mean, scale=1.0).sum(axis=1)
    return scores


def memorization_scale(spec: SyntheticSpec) -> np.ndarray:
    """Per-class spread of training embeddings relative to held-out ones, in (0, 1]"""
    return (spec.class_counts() / spec.max_count) ** spec.memorization


def _draw_split(
    spec: SyntheticSpec,
    rng: np.random.Generator,
    means: np.ndarray,
    counts: np.ndarray,
    log_prior: np.ndarray,
    spread: np.ndarray,
) -> LabeledEmbeddingSet:
    labels = np.repeat(np.arange(spec.num_classes), counts)
    noise = rng.standard_normal((labels.shape[0], spec.feature_dim))
    features = means[labels] + spread[labels, None] * noise
    order = rng.permutation(labels.shape[0])
    features, labels = features[order], labels[order]
    # Logits come from the float32 features the container will hold
    features = features.astype(np.float32)
    logits = spec.overconfidence_scale * generative_scores(features, means) + log_prior
    return LabeledEmbeddingSet.build(features, logits, labels)


def generate_synthetic(spec: SyntheticSpec) -> Tuple[LabeledEmbeddingSet, LabeledEmbeddingSet, LabeledEmbeddingSet]:
    """
    Draw long-tailed train/val splits and a balanced test split

    Args:
        spec: generator parameters

    Returns:
        (train, val, test)
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec, rng)
    train_counts, val_counts = spec.split_counts()
    if spec.prior_bias:
        log_prior = np.log(train_counts.astype(np.float64))
    else:
        log_prior = np.zeros(spec.num_classes)
    held_out = np.ones(spec.num_classes)

    train = _draw_split(spec, rng, means, train_counts, log_prior, memorization_scale(spec))
    val = _draw_split(spec, rng, means, val_counts, log_prior, held_out)
    test_counts = np.full(spec.num_classes, spec.test_per_class, dtype=np.int64)
    test = _draw_split(spec, rng, means, test_counts, log_prior, held_out)
    logger.info(
        f"Generated synthetic splits (C={spec.num_classes}, D={spec.feature_dim}, IF={spec.imbalance_factor}, "
        f"memorization={spec.memorization}, seed={spec.seed}): train {train.num_samples}, val {val.num_samples}, test {test.num_samples}"
    )
    return train, val, test
