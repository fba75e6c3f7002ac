"""
Numerical verification of the importance-weight error bound and the 1-D crossover points
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from back.exceptions import DivergenceError, InvalidParameterError
from back.gaussians import ClassGaussian, divergent_dimensions, log_density, renyi_d2
from back.logger import logger
from config import Config

MIN_MC_SAMPLES = 10_000
SHARD_SIZE = 250_000
CROSSOVER_CASES = 50


@dataclass(frozen=True)
class BoundCheck:
    """Monte-Carlo epsilon = E_p[(w - w*)^2] against its closed-form bounds."""

    epsilon: float
    lower: float
    upper: float
    mc_samples: int
    mc_stderr: float

    def holds(self, sigmas: float = 3.0) -> bool:
        slack = sigmas * self.mc_stderr
        return self.lower - slack <= self.epsilon <= self.upper + slack


def _squared_gaps(p: ClassGaussian, q: ClassGaussian, q_star: ClassGaussian, size: int, seed: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = p.mean + p.std * rng.standard_normal((size, p.dim))
    log_p = log_density(p, x)
    w = np.exp(log_density(q, x) - log_p)
    w_star = np.exp(log_density(q_star, x) - log_p)
    return (w - w_star) ** 2


def check_bound(
    p: ClassGaussian,
    q: ClassGaussian,
    q_star: ClassGaussian,
    samples: int = 1_000_000,
    seed: int = 0,
) -> BoundCheck:
    """
    Estimate epsilon by Monte Carlo under p and compare with
    [(sqrt d2(q||p) - sqrt d2(q*||p))^2, d2(q||p) + d2(q*||p)]

    Samples are drawn in fixed-size shards, each from its own spawned seed,
    and combined in shard order.

    Raises:
        InvalidParameterError: If samples < 10^4
        DivergenceError: If either d2 diverges
    """
    if samples < MIN_MC_SAMPLES:
        raise InvalidParameterError(f"check_bound needs at least {MIN_MC_SAMPLES} samples, got {samples}")
    for name, candidate in (("q", q), ("q*", q_star)):
        bad = divergent_dimensions(candidate, p)
        if bad:
            raise DivergenceError(
                f"d2({name}||p) diverges in dimension {bad[0]}: "
                f"var_{name}={candidate.var[bad[0]]:.6g} >= 2 var_p={2 * p.var[bad[0]]:.6g}"
            )
    d2_q = renyi_d2(q, p)
    d2_star = renyi_d2(q_star, p)
    if math.isinf(d2_q) or math.isinf(d2_star):
        raise DivergenceError("d2 overflows double precision")

    sizes = [min(SHARD_SIZE, samples - start) for start in range(0, samples, SHARD_SIZE)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    workers = min(Config.worker_count(), len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            shards = list(pool.map(lambda job: _squared_gaps(p, q, q_star, *job), zip(sizes, seeds)))
    else:
        shards = [_squared_gaps(p, q, q_star, size, s) for size, s in zip(sizes, seeds)]
    gaps = np.concatenate(shards)

    epsilon = float(np.mean(gaps))
    stderr = float(np.std(gaps, ddof=1) / math.sqrt(samples))
    lower = (math.sqrt(d2_q) - math.sqrt(d2_star)) ** 2
    upper = d2_q + d2_star
    logger.debug(f"Bound check: eps={epsilon:.6g} in [{lower:.6g}, {upper:.6g}] (stderr {stderr:.2g})")
    return BoundCheck(epsilon=epsilon, lower=lower, upper=upper, mc_samples=samples, mc_stderr=stderr)


def crossover_points(p: ClassGaussian, q: ClassGaussian) -> Tuple[float, float]:
    """
    Points where the 1-D densities p = N(mu_a, var_a) and q = N(mu_b, var_b) are equal

    Requires var_a < var_b. Between the points w = q/p < 1, outside them w > 1.
    """
    if p.dim != 1 or q.dim != 1:
        raise InvalidParameterError("crossover_points is defined for 1-D Gaussians")
    mu_a, sigma_a = float(p.mean[0]), float(p.std[0])
    mu_b, sigma_b = float(q.mean[0]), float(q.std[0])
    var_a, var_b = sigma_a ** 2, sigma_b ** 2
    if var_a >= var_b:
        raise InvalidParameterError(f"crossover_points requires var_p < var_q, got {var_a} >= {var_b}")
    delta = math.sqrt((mu_a - mu_b) ** 2 + (var_b - var_a) * (math.log(var_b) - math.log(var_a)))
    center = mu_a * var_b - mu_b * var_a
    spread = sigma_a * sigma_b * delta
    return (center - spread) / (var_b - var_a), (center + spread) / (var_b - var_a)


def log_ratio(q: ClassGaussian, p: ClassGaussian, x: np.ndarray) -> np.ndarray:
    """log(q(x) / p(x)) for 1-D points"""
    points = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    return log_density(q, points) - log_density(p, points)


def bisection_crossovers(p: ClassGaussian, q: ClassGaussian) -> Tuple[float, float]:
    """Root-finding reference for crossover_points"""
    var_a, var_b = float(p.var[0]), float(q.var[0])
    vertex = (float(p.mean[0]) * var_b - float(q.mean[0]) * var_a) / (var_b - var_a)
    gap = abs(float(p.mean[0]) - float(q.mean[0]))
    reach = 10.0 * (abs(vertex) + gap * float(p.std[0] * q.std[0]) / (var_b - var_a) + 50.0 * float(q.std[0]) + 1.0)

    def f(x: float) -> float:
        return float(log_ratio(q, p, np.array([x]))[0])

    left = brentq(f, vertex - reach, vertex, xtol=1e-14, rtol=1e-15, maxiter=500)
    right = brentq(f, vertex, vertex + reach, xtol=1e-14, rtol=1e-15, maxiter=500)
    return left, right


def sign_pattern_holds(p: ClassGaussian, q: ClassGaussian, points: int = 1000) -> bool:
    """w - 1 is positive outside [tau1, tau2] and negative inside, on a +-6 sigma_q grid"""
    tau1, tau2 = crossover_points(p, q)
    center, scale = float(q.mean[0]), float(q.std[0])
    grid = np.linspace(center - 6 * scale, center + 6 * scale, points)
    grid = grid[(np.abs(grid - tau1) > 1e-9) & (np.abs(grid - tau2) > 1e-9)]
    signs = np.sign(log_ratio(q, p, grid))
    inside = (grid > tau1) & (grid < tau2)
    return bool(np.all(signs[inside] < 0) and np.all(signs[~inside] > 0))


def _random_gaussian_1d(rng: np.random.Generator, mean_scale: float, std_low: float, std_high: float) -> ClassGaussian:
    return ClassGaussian(
        mean=np.array([rng.uniform(-mean_scale, mean_scale)]),
        std=np.array([rng.uniform(std_low, std_high)]),
    )


def random_bound_triple(rng: np.random.Generator) -> Tuple[ClassGaussian, ClassGaussian, ClassGaussian]:
    """(p, q, q*) with var_q, var_q* well below 2 var_p so the MC estimate has finite variance"""
    p = _random_gaussian_1d(rng, 1.0, 0.5, 2.0)
    sigma_p = float(p.std[0])
    q, q_star = (
        ClassGaussian(
            mean=p.mean + rng.uniform(-0.5, 0.5) * sigma_p,
            std=p.std * rng.uniform(0.75, 1.05),
        )
        for _ in range(2)
    )
    return p, q, q_star


def random_crossover_pair(rng: np.random.Generator) -> Tuple[ClassGaussian, ClassGaussian]:
    """(p, q) with var_p < var_q"""
    p = _random_gaussian_1d(rng, 3.0, 0.2, 2.0)
    q = ClassGaussian(mean=np.array([rng.uniform(-3.0, 3.0)]), std=p.std * rng.uniform(1.1, 3.0))
    return p, q


def run_theory_suite(
    seed: int = 0,
    cases: int = 20,
    mc_samples: int = 1_000_000,
    crossover_cases: int = CROSSOVER_CASES,
) -> pd.DataFrame:
    """
    Randomized checks of the epsilon bound and the crossover formula

    `cases` Monte-Carlo bound triples plus the q = q* case, then `crossover_cases`
    closed-form crossover pairs checked against root finding.

    Returns:
        DataFrame with case, kind, epsilon, lower, upper, stderr, verdict
    """
    rng = np.random.default_rng(seed)
    rows: List[dict] = []

    for i in range(cases):
        p, q, q_star = random_bound_triple(rng)
        check = check_bound(p, q, q_star, mc_samples, seed=seed + i)
        rows.append({
            "case": f"bound-{i}", "kind": "bound",
            "epsilon": check.epsilon, "lower": check.lower, "upper": check.upper,
            "stderr": check.mc_stderr, "verdict": "pass" if check.holds() else "fail",
        })

    p, q, _ = random_bound_triple(rng)
    check = check_bound(p, q, q, mc_samples, seed=seed + cases)
    exact = check.epsilon == 0.0 and check.lower == 0.0
    rows.append({
        "case": "bound-equal", "kind": "bound",
        "epsilon": check.epsilon, "lower": check.lower, "upper": check.upper,
        "stderr": check.mc_stderr, "verdict": "pass" if exact else "fail",
    })

    for i in range(crossover_cases):
        p, q = random_crossover_pair(rng)
        tau = crossover_points(p, q)
        reference = bisection_crossovers(p, q)
        error = max(abs(tau[0] - reference[0]), abs(tau[1] - reference[1]))
        residual = float(np.max(np.abs(np.expm1(log_ratio(q, p, np.array(tau))))))
        ok = error < 1e-8 and residual < 1e-9 and sign_pattern_holds(p, q)
        rows.append({
            "case": f"crossover-{i}", "kind": "crossover",
            "epsilon": error, "lower": tau[0], "upper": tau[1],
            "stderr": residual, "verdict": "pass" if ok else "fail",
        })

    table = pd.DataFrame(rows, columns=["case", "kind", "epsilon", "lower", "upper", "stderr", "verdict"])
    failed = int((table["verdict"] == "fail").sum())
    logger.info(f"Theory suite: {len(table) - failed} passed, {failed} failed")
    return table
