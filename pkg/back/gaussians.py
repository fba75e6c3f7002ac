"""
Per-class diagonal Gaussian statistics, Wasserstein-2 distance, densities and Renyi d2
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
from scipy.stats import norm

from back.datamodel import LabeledEmbeddingSet
from back.exceptions import DataLoadError, DataValidationError, InvalidParameterError, MissingArtifactError
from back.logger import logger

# Standard-deviation floor
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class ClassGaussian:
    """N(mean, diag(std**2)) fitted from `count` samples."""

    mean: np.ndarray
    std: np.ndarray
    count: int = 0

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise InvalidParameterError(f"mean has {mean.size} entries, std has {std.size}")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(std)) or np.any(std <= 0):
            raise InvalidParameterError("Gaussian parameters must be finite with positive std")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @property
    def var(self) -> np.ndarray:
        return self.std ** 2

    def to_dict(self) -> dict:
        return {"count": int(self.count), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, document: dict) -> "ClassGaussian":
        return cls(mean=np.array(document["mean"]), std=np.array(document["std"]), count=int(document["count"]))


def _check_same_dim(a: ClassGaussian, b: ClassGaussian) -> None:
    if a.dim != b.dim:
        raise InvalidParameterError(f"Dimension mismatch: {a.dim} vs {b.dim}")


def fit_class_gaussians(data: LabeledEmbeddingSet, min_std: float = STD_FLOOR) -> Dict[int, ClassGaussian]:
    """
    Fit one diagonal Gaussian per class from the split's features

    Args:
        data: split whose features are summarized (normally train)
        min_std: floor applied to every standard deviation

    Returns:
        dict: class index -> ClassGaussian with population (1/n) statistics

    Raises:
        DataValidationError: If a class has no sample
    """
    empty = np.flatnonzero(data.class_counts == 0)
    if empty.size:
        raise DataValidationError(f"Classes {empty.tolist()} have no sample to fit a Gaussian from")

    features = data.features.astype(np.float64)
    stats: Dict[int, ClassGaussian] = {}
    for c in range(data.num_classes):
        rows = features[data.labels == c]
        stats[c] = ClassGaussian(
            mean=rows.mean(axis=0),
            std=np.maximum(rows.std(axis=0), min_std),
            count=int(rows.shape[0]),
        )
    logger.info(f"Fitted {len(stats)} class Gaussians on {data.num_samples} samples ({data.feature_dim}-D)")
    return stats


def wasserstein2(a: ClassGaussian, b: ClassGaussian) -> float:
    """Closed-form W2 between diagonal Gaussians: sqrt(|mu_a - mu_b|^2 + |std_a - std_b|^2)"""
    _check_same_dim(a, b)
    return float(np.sqrt(np.sum((a.mean - b.mean) ** 2) + np.sum((a.std - b.std) ** 2)))


def log_density(g: ClassGaussian, x: np.ndarray) -> Union[float, np.ndarray]:
    """
    Diagonal Gaussian log density

    Args:
        g: Gaussian
        x: a length-D point or an N x D matrix of points

    Returns:
        float for a single point, length-N array for a matrix
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.dim:
        raise InvalidParameterError(f"Point has dimension {x.shape[-1]}, Gaussian has {g.dim}")
    values = norm.logpdf(x, loc=g.mean, scale=g.std).sum(axis=-1)
    if x.ndim == 1:
        return float(values)
    return values


def divergent_dimensions(q: ClassGaussian, p: ClassGaussian) -> List[int]:
    """Dimensions where E_p[(q/p)^2] diverges (2 var_p - var_q <= 0)"""
    _check_same_dim(q, p)
    return [int(d) for d in np.flatnonzero(2.0 * p.var - q.var <= 0)]


def renyi_d2(q: ClassGaussian, p: ClassGaussian) -> float:
    """
    Exponentiated order-2 Renyi divergence d2(q||p) = E_p[(q(x)/p(x))^2]

    Per dimension the integral equals
    var_p / (std_q * sqrt(2 var_p - var_q)) * exp((mu_q - mu_p)^2 / (2 var_p - var_q));
    dimensions multiply. Returns math.inf when any dimension diverges.
    """
    if divergent_dimensions(q, p):
        return math.inf
    gap = 2.0 * p.var - q.var
    log_terms = np.log(p.var) - np.log(q.std) - 0.5 * np.log(gap) + (q.mean - p.mean) ** 2 / gap
    log_d2 = float(np.sum(log_terms))
    if log_d2 > 700:
        return math.inf
    return math.exp(log_d2)


def save_stats(stats: Dict[int, ClassGaussian], path: Union[str, Path]) -> Path:
    """Write fitted statistics as JSON; floats use the shortest round-trip repr"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "feature_dim": next(iter(stats.values())).dim if stats else 0,
        "classes": [dict(label=int(c), **g.to_dict()) for c, g in sorted(stats.items())],
    }
    path.write_text(json.dumps(document, indent=2) + "\n")
    logger.info(f"Wrote statistics of {len(stats)} classes to {path}")
    return path


def load_stats(path: Union[str, Path]) -> Dict[int, ClassGaussian]:
    """Read statistics written by save_stats"""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Class statistics not found: {path} (run `fit` first)")
    try:
        document = json.loads(path.read_text())
        return {int(entry["label"]): ClassGaussian.from_dict(entry) for entry in document["classes"]}
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        error_msg = f"Malformed statistics file {path}: {e}"
        logger.error(error_msg)
        raise DataLoadError(error_msg)
