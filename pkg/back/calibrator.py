"""
Temperature scaling under plain and importance-weighted cross-entropy
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax

from back.exceptions import DataLoadError, InvalidParameterError, MissingArtifactError
from back.logger import logger
from config import Config

DEFAULT_BOUNDS = (0.05, 20.0)
GRID_POINTS = 64
TOLERANCE = 1e-4

# Rows per partial sum; fixed so the reduction does not depend on the worker count
CHUNK_ROWS = 8192

GOLDEN_FRACTION = (math.sqrt(5) - 1) / 2


class Method(str, Enum):
    BASE = "base"
    PLAIN_TS = "plain_ts"
    WEIGHTED_TS = "weighted_ts"


@dataclass(frozen=True)
class TemperatureFit:
    """Fitted temperature with the objective value and the grid pass trace."""

    temperature: float
    objective_value: float
    method: Method
    search_trace: List[Tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "objective": self.objective_value,
            "method": self.method.value,
            "trace": [[t, value] for t, value in self.search_trace],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "TemperatureFit":
        return cls(
            temperature=float(document["temperature"]),
            objective_value=float(document["objective"]),
            method=Method(document["method"]),
            search_trace=[(float(t), float(value)) for t, value in document.get("trace", [])],
        )

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TemperatureFit":
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"Temperature fit not found: {path} (run `calibrate` first)")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataLoadError(f"Malformed temperature fit {path}: {e}")


def _check_temperature(temperature: float) -> None:
    if not temperature > 0 or not math.isfinite(temperature):
        raise InvalidParameterError(f"Temperature must be a positive finite number, got {temperature}")


def _chunk_sums(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray, temperature: float) -> Tuple[float, float]:
    log_probs = log_softmax(logits / temperature, axis=1)
    ce = -log_probs[np.arange(labels.shape[0]), labels]
    return float(np.dot(weights, ce)), float(np.sum(weights))


def weighted_nll(
    logits: np.ndarray,
    labels: np.ndarray,
    weights: Optional[np.ndarray],
    temperature: float,
    workers: Optional[int] = None,
) -> float:
    """
    Weighted mean cross-entropy of softmax(logits / T)

    Args:
        logits: N x C logits
        labels: length-N labels
        weights: length-N positive weights, or None for all ones
        temperature: T > 0
        workers: thread cap, defaults to Config.worker_count()

    Returns:
        sum_i w_i CE_i / sum_i w_i
    """
    _check_temperature(temperature)
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.ones(labels.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != labels.shape or logits.shape[0] != labels.shape[0]:
        raise InvalidParameterError(
            f"Shapes disagree: logits {logits.shape}, labels {labels.shape}, weights {weights.shape}"
        )
    if np.any(weights <= 0):
        raise InvalidParameterError("Weights must be positive")

    starts = range(0, labels.shape[0], CHUNK_ROWS)
    chunks = [(logits[s:s + CHUNK_ROWS], labels[s:s + CHUNK_ROWS], weights[s:s + CHUNK_ROWS]) for s in starts]
    workers = workers or Config.worker_count()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
            partials = list(pool.map(lambda chunk: _chunk_sums(*chunk, temperature), chunks))
    else:
        partials = [_chunk_sums(*chunk, temperature) for chunk in chunks]

    loss_sums = np.array([loss for loss, _ in partials])
    weight_sums = np.array([total for _, total in partials])
    return float(np.sum(loss_sums) / np.sum(weight_sums))


def refine_bracket(
    objective: Callable[[float], float],
    low: float,
    high: float,
    tol: float = TOLERANCE,
    seen: Optional[Dict[float, float]] = None,
) -> Tuple[float, float]:
    """
    Golden-section refinement of a unimodal objective on [low, high]

    Two interior points split the bracket in the golden ratio and the side beyond
    the worse one is dropped until the bracket is narrower than tol. Evaluations
    are memoized in `seen` (T -> objective), which may already hold grid values.

    Returns:
        (T, objective) of the lowest value in `seen`; ties go to the earliest entry
    """
    seen = {} if seen is None else seen

    def score(t: float) -> float:
        if t not in seen:
            seen[t] = objective(t)
        return seen[t]

    low, high = min(low, high), max(low, high)
    score(low)
    score(high)
    left = high - GOLDEN_FRACTION * (high - low)
    right = low + GOLDEN_FRACTION * (high - low)
    while high - low > tol:
        if score(left) < score(right):
            high, right = right, left
            left = high - GOLDEN_FRACTION * (high - low)
        else:
            low, left = left, right
            right = low + GOLDEN_FRACTION * (high - low)
    score(0.5 * (low + high))
    return min(seen.items(), key=lambda item: item[1])


def fit_temperature(
    logits: np.ndarray,
    labels: np.ndarray,
    weights: Optional[np.ndarray] = None,
    bounds: Sequence[float] = DEFAULT_BOUNDS,
    method: Union[Method, str, None] = None,
) -> TemperatureFit:
    """
    Minimize the weighted NLL over T in bounds

    A 64-point log-spaced grid locates the best cell, golden-section search refines
    it to |dT| < 1e-4. With weights None (all ones) this is plain temperature scaling.

    Returns:
        TemperatureFit whose trace holds the grid pass
    """
    t_min, t_max = float(bounds[0]), float(bounds[1])
    if not 0 < t_min < t_max or not math.isfinite(t_max):
        raise InvalidParameterError(f"Temperature bounds must satisfy 0 < T_min < T_max, got {bounds}")
    if np.asarray(labels).shape[0] < 1:
        raise InvalidParameterError("fit_temperature needs at least one sample")
    if method is None:
        method = Method.PLAIN_TS if weights is None else Method.WEIGHTED_TS
    method = Method(method)

    workers = Config.worker_count()

    def objective(t: float) -> float:
        return weighted_nll(logits, labels, weights, t, workers=workers)

    grid = np.geomspace(t_min, t_max, GRID_POINTS)
    seen: Dict[float, float] = {float(t): objective(float(t)) for t in grid}
    trace = list(seen.items())
    best = int(np.argmin([value for _, value in trace]))
    low = trace[max(best - 1, 0)][0]
    high = trace[min(best + 1, GRID_POINTS - 1)][0]
    temperature, value = refine_bracket(objective, low, high, TOLERANCE, seen)
    if t_min <= 1.0 <= t_max:
        identity = seen[1.0] if 1.0 in seen else objective(1.0)
        if identity < value:
            temperature, value = 1.0, identity

    logger.info(f"Fitted {method.value} temperature T={temperature:.5f} (objective {value:.6f})")
    return TemperatureFit(
        temperature=temperature,
        objective_value=value,
        method=method,
        search_trace=trace,
    )


def base_fit(logits: np.ndarray, labels: np.ndarray) -> TemperatureFit:
    """The uncalibrated model as a fit with T = 1"""
    return TemperatureFit(temperature=1.0, objective_value=weighted_nll(logits, labels, None, 1.0), method=Method.BASE)


def apply_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax(logits / T)"""
    _check_temperature(temperature)
    return softmax(np.asarray(logits, dtype=np.float64) / temperature, axis=1)
