"""
Dataset containers and the head/tail class partition
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from back.exceptions import DataValidationError, EmptyHeadError, InvalidParameterError
from back.logger import logger

DEFAULT_ZETA = 100


def _first_bad_row(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


@dataclass(frozen=True)
class LabeledEmbeddingSet:
    """Features, logits and labels of one split (train, val or test).

    Arrays are stored read-only; features and logits keep the on-disk float32
    precision so a save/load cycle is bit-exact.
    """

    features: np.ndarray
    logits: np.ndarray
    labels: np.ndarray
    class_counts: np.ndarray

    @classmethod
    def build(
        cls,
        features: np.ndarray,
        logits: np.ndarray,
        labels: np.ndarray,
        class_counts: Optional[Sequence[int]] = None,
    ) -> "LabeledEmbeddingSet":
        """
        Validate raw arrays and build the container

        Args:
            features: N x D feature matrix
            logits: N x C logit matrix
            labels: length-N integer labels in [0, C)
            class_counts: optional declared per-class counts, checked against the labels

        Returns:
            LabeledEmbeddingSet

        Raises:
            DataValidationError: If any invariant is violated
        """
        features = np.asarray(features)
        logits = np.asarray(logits)
        labels = np.asarray(labels)

        if features.ndim != 2 or logits.ndim != 2 or labels.ndim != 1:
            raise DataValidationError(
                f"Expected 2-D features and logits and 1-D labels, got shapes "
                f"{features.shape}, {logits.shape}, {labels.shape}"
            )
        n = features.shape[0]
        if n < 1:
            raise DataValidationError("A split needs at least one row")
        if features.shape[1] < 1:
            raise DataValidationError("Features need at least one column")
        if logits.shape[1] < 2:
            raise DataValidationError(f"Logits need at least 2 classes, got {logits.shape[1]}")
        if logits.shape[0] != n or labels.shape[0] != n:
            raise DataValidationError(
                f"Dimension mismatch: features have {n} rows, logits {logits.shape[0]} rows, "
                f"labels {labels.shape[0]} entries (first unmatched row {min(n, logits.shape[0], labels.shape[0])})"
            )

        features = features.astype(np.float32)
        logits = logits.astype(np.float32)

        bad = ~np.isfinite(features).all(axis=1)
        if bad.any():
            raise DataValidationError(f"Non-finite feature value in row {_first_bad_row(bad)}")
        bad = ~np.isfinite(logits).all(axis=1)
        if bad.any():
            raise DataValidationError(f"Non-finite logit value in row {_first_bad_row(bad)}")

        if labels.dtype.kind == "f":
            bad = ~np.isfinite(labels) | (labels != np.round(labels))
            if bad.any():
                raise DataValidationError(f"Non-integer label in row {_first_bad_row(bad)}")
        elif labels.dtype.kind not in "iu":
            raise DataValidationError(f"Labels must be integers, got dtype {labels.dtype}")
        labels = labels.astype(np.int64)

        num_classes = logits.shape[1]
        bad = (labels < 0) | (labels >= num_classes)
        if bad.any():
            row = _first_bad_row(bad)
            raise DataValidationError(
                f"Label {labels[row]} out of range [0, {num_classes}) in row {row}"
            )

        counts = np.bincount(labels, minlength=num_classes).astype(np.int64)
        if class_counts is not None:
            declared = np.asarray(class_counts, dtype=np.int64)
            if declared.shape != counts.shape or not np.array_equal(declared, counts):
                raise DataValidationError(
                    f"Declared class_counts {declared.tolist()} disagree with label counts {counts.tolist()}"
                )

        for array in (features, logits, labels, counts):
            array.setflags(write=False)
        return cls(features=features, logits=logits, labels=labels, class_counts=counts)

    @property
    def num_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.logits.shape[1])

    def summary(self) -> dict:
        """Shape summary for logs and CLI output"""
        return {
            "n": self.num_samples,
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "class_counts": self.class_counts.tolist(),
        }


@dataclass(frozen=True)
class HeadTailPartition:
    """Head classes have at least `threshold` training samples, tail classes fewer."""

    head: Tuple[int, ...]
    tail: Tuple[int, ...]
    threshold: int

    def is_head(self, label: int) -> bool:
        return label in self.head

    def tail_mask(self, labels: np.ndarray) -> np.ndarray:
        """Boolean mask of samples whose label is a tail class"""
        return np.isin(labels, np.asarray(self.tail, dtype=np.int64))

    def to_dict(self) -> dict:
        return {"head": list(self.head), "tail": list(self.tail), "threshold": self.threshold}

    @classmethod
    def from_dict(cls, document: dict) -> "HeadTailPartition":
        return cls(
            head=tuple(int(c) for c in document["head"]),
            tail=tuple(int(c) for c in document["tail"]),
            threshold=int(document["threshold"]),
        )


def partition(counts: Sequence[int], zeta: int = DEFAULT_ZETA) -> HeadTailPartition:
    """
    Split classes into head (n_c >= zeta) and tail (n_c < zeta)

    Args:
        counts: per-class training counts
        zeta: head/tail threshold

    Returns:
        HeadTailPartition with sorted class indices

    Raises:
        InvalidParameterError: If zeta < 1
        EmptyHeadError: If no class reaches the threshold
    """
    if int(zeta) != zeta or zeta < 1:
        raise InvalidParameterError(f"zeta must be a positive integer, got {zeta}")
    counts = np.asarray(counts, dtype=np.int64)
    head = tuple(int(c) for c in np.flatnonzero(counts >= zeta))
    tail = tuple(int(c) for c in np.flatnonzero(counts < zeta))
    if not head:
        raise EmptyHeadError(
            f"No class has at least zeta={zeta} training samples (largest count {int(counts.max(initial=0))}); "
            f"lower --zeta"
        )
    if not tail:
        logger.warning(f"All {len(head)} classes reach zeta={zeta}; no tail class to reweight")
    logger.debug(f"Partition at zeta={zeta}: {len(head)} head, {len(tail)} tail")
    return HeadTailPartition(head=head, tail=tail, threshold=int(zeta))
