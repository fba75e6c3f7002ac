"""
Calibration Pipeline - Runs ingestion, fitting, transfer, calibration and evaluation with persisted artifacts
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from back.calibrator import Method, TemperatureFit, apply_temperature, base_fit, fit_temperature
from back.data_handler import load_set, save_set
from back.datamodel import HeadTailPartition, LabeledEmbeddingSet, partition
from back.exceptions import (
    ConfigurationError,
    DataLoadError,
    DataValidationError,
    InvalidParameterError,
    MissingArtifactError,
    TheoryCheckError,
)
from back.gaussians import ClassGaussian, fit_class_gaussians, load_stats, save_stats
from back.logger import logger
from back.metrics import BinStats, group_ece, metric_report, reliability_table
from back.synthetic import SyntheticSpec, generate_synthetic
from back.theory import run_theory_suite
from back.transfer import (
    ImportanceWeights,
    TransferPlan,
    attention_table,
    build_transfer_plan,
    importance_weights,
    save_json,
    weight_histogram,
)
from config import PipelineConfig

METHODS = (Method.BASE, Method.PLAIN_TS, Method.WEIGHTED_TS)


@dataclass(frozen=True)
class CalibrationReport:
    """Metrics of one method on one evaluation split, before and after its temperature."""

    method: Method
    temperature: float
    before: Dict[str, float]
    after: Dict[str, float]
    groups: Dict[str, Optional[float]]
    reliability: BinStats

    def to_dict(self) -> dict:
        return dict(
            self.after,
            method=self.method.value,
            temperature=self.temperature,
            before={key: self.before[key] for key in ("ece", "sce", "ace")},
            **self.groups,
        )


@dataclass(frozen=True)
class CalibrationRun:
    """Everything `calibrate` derives from the validation split."""

    plan: TransferPlan
    weights: ImportanceWeights
    fits: Dict[Method, TemperatureFit]


def synthetic_spec(config: PipelineConfig, seed: Optional[int] = None) -> SyntheticSpec:
    """Generator parameters carried by a run configuration"""
    return SyntheticSpec(
        num_classes=config.num_classes,
        feature_dim=config.feature_dim,
        imbalance_factor=config.imbalance_factor,
        max_count=config.max_count,
        overconfidence_scale=config.gamma,
        prior_bias=config.prior_bias,
        seed=config.seed if seed is None else seed,
        test_per_class=config.test_per_class,
        separation=config.separation,
        memorization=config.memorization,
    )


def check_class_count(data: LabeledEmbeddingSet, stats: Dict[int, ClassGaussian], name: str) -> None:
    if data.num_classes != len(stats):
        raise DataValidationError(
            f"Class-count mismatch: {name} split has {data.num_classes} classes, "
            f"training statistics have {len(stats)}"
        )


def calibrate_split(
    val: LabeledEmbeddingSet,
    stats: Dict[int, ClassGaussian],
    split: HeadTailPartition,
    config: PipelineConfig,
    alpha: Optional[float] = None,
) -> CalibrationRun:
    """Transfer plan, importance weights and the three temperature fits on the validation split"""
    alpha = config.alpha if alpha is None else alpha
    bounds = (config.tmin, config.tmax)
    plan = build_transfer_plan(stats, split, alpha, config.strategy)
    weights = importance_weights(val, stats, plan, split, config.eta1, config.eta2)
    fits = {
        Method.BASE: base_fit(val.logits, val.labels),
        Method.PLAIN_TS: fit_temperature(val.logits, val.labels, None, bounds, Method.PLAIN_TS),
        Method.WEIGHTED_TS: fit_temperature(val.logits, val.labels, weights.weights, bounds, Method.WEIGHTED_TS),
    }
    return CalibrationRun(plan=plan, weights=weights, fits=fits)


def evaluate_split(
    data: LabeledEmbeddingSet,
    fit: TemperatureFit,
    split: HeadTailPartition,
    config: PipelineConfig,
) -> CalibrationReport:
    """Apply a fitted temperature and score the result"""
    before = metric_report(apply_temperature(data.logits, 1.0), data.labels, config.bins, config.ranges)
    probs = apply_temperature(data.logits, fit.temperature)
    return CalibrationReport(
        method=fit.method,
        temperature=fit.temperature,
        before=before,
        after=metric_report(probs, data.labels, config.bins, config.ranges),
        groups=group_ece(probs, data.labels, split, config.bins),
        reliability=reliability_table(probs, data.labels, config.bins, config.scheme),
    )


class CalibrationPipeline:
    """Runs each CLI subcommand against one configuration and output directory"""

    def __init__(self, config: PipelineConfig):
        """
        Initialize with a validated configuration

        Args:
            config: run configuration; every artifact goes under config.out
        """
        self.config = config
        self.out = Path(config.out)

    # ------------------------------------------------------------------ #
    # Artifact paths
    # ------------------------------------------------------------------ #
    @property
    def stats_path(self) -> Path:
        return self.out / "stats.json"

    @property
    def partition_path(self) -> Path:
        return self.out / "partition.json"

    def fit_path(self, method: Method) -> Path:
        return self.out / "fits" / f"{method.value}.json"

    def _prepare_out(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        self.config.save(self.out / "config.json")

    def _require(self, value: Any, flag: str, command: str) -> Any:
        if value is None or value == []:
            raise ConfigurationError(f"{flag} is required for {command}")
        return value

    def _load_partition(self) -> HeadTailPartition:
        if not self.partition_path.exists():
            raise MissingArtifactError(f"Partition not found: {self.partition_path} (run `fit` first)")
        try:
            return HeadTailPartition.from_dict(json.loads(self.partition_path.read_text()))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataLoadError(f"Malformed partition file {self.partition_path}: {e}")

    def _load_fits(self) -> Dict[Method, TemperatureFit]:
        return {method: TemperatureFit.load(self.fit_path(method)) for method in METHODS}

    def _test_sets(self) -> List[Tuple[str, LabeledEmbeddingSet]]:
        paths = self._require(self.config.test, "--test", "evaluation")
        named = []
        seen: Dict[str, int] = {}
        for path in paths:
            name = Path(path).stem
            seen[name] = seen.get(name, 0) + 1
            if seen[name] > 1:
                name = f"{name}-{seen[name]}"
            named.append((name, load_set(path)))
        return named

    # ------------------------------------------------------------------ #
    # Subcommands
    # ------------------------------------------------------------------ #
    def synth(self) -> pd.DataFrame:
        """Generate synthetic train/val/test bundles under out/data"""
        self._prepare_out()
        spec = synthetic_spec(self.config)
        splits = dict(zip(("train", "val", "test"), generate_synthetic(spec)))
        rows = []
        for name, data in splits.items():
            manifest = save_set(data, self.out / "data", name, self.config.data_format)
            rows.append({"split": name, "manifest": str(manifest), "n": data.num_samples})
        return pd.DataFrame(rows)

    def fit(self) -> pd.DataFrame:
        """Fit class Gaussians on train and persist them with the head/tail partition"""
        train = load_set(self._require(self.config.train, "--train", "fit"))
        self._prepare_out()
        stats = fit_class_gaussians(train)
        split = partition(train.class_counts, self.config.zeta)
        save_stats(stats, self.stats_path)
        save_json(split.to_dict(), self.partition_path)
        logger.info(f"Partition at zeta={split.threshold}: head {list(split.head)}, tail {list(split.tail)}")
        return pd.DataFrame({
            "class": np.arange(train.num_classes),
            "count": train.class_counts,
            "group": ["head" if split.is_head(c) else "tail" for c in range(train.num_classes)],
        })

    def calibrate(self) -> pd.DataFrame:
        """Fit base, plain and weighted temperatures on val and persist every intermediate"""
        stats = load_stats(self.stats_path)
        split = self._load_partition()
        val = load_set(self._require(self.config.val, "--val", "calibrate"))
        check_class_count(val, stats, "val")
        self._prepare_out()

        run = calibrate_split(val, stats, split, self.config)
        save_json(run.plan.to_dict(), self.out / "transfer_plan.json")
        save_json(run.weights.to_dict(), self.out / "weights.json")
        weight_histogram(run.weights, self.config.hist_bins).to_csv(self.out / "weights_histogram.csv", index=False)
        attention_table(run.plan, self.config.top_k).to_csv(self.out / "attention.csv", index=False)
        for method, fit in run.fits.items():
            fit.save(self.fit_path(method))

        return pd.DataFrame([
            {"method": method.value, "temperature": fit.temperature, "objective": fit.objective_value}
            for method, fit in run.fits.items()
        ])

    def evaluate(self) -> Dict[str, Dict[str, dict]]:
        """Score every fitted method on every test split"""
        stats = load_stats(self.stats_path)
        split = self._load_partition()
        fits = self._load_fits()
        tests = self._test_sets()
        self._prepare_out()
        reliability = self.out / "reliability"
        reliability.mkdir(parents=True, exist_ok=True)

        report: Dict[str, Dict[str, dict]] = {}
        for name, data in tests:
            check_class_count(data, stats, name)
            report[name] = {}
            for method, fit in fits.items():
                result = evaluate_split(data, fit, split, self.config)
                report[name][method.value] = result.to_dict()
                result.reliability.to_frame().to_csv(reliability / f"{name}_{method.value}.csv", index=False)
                logger.info(f"{name} / {method.value}: ECE {result.after['ece']:.4f} (T={fit.temperature:.4f})")
        (self.out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        return report

    def diagram(self) -> pd.DataFrame:
        """Reliability tables for val and test under base and each fitted temperature"""
        stats = load_stats(self.stats_path)
        fits = self._load_fits()
        splits: List[Tuple[str, LabeledEmbeddingSet]] = []
        if self.config.val is not None:
            splits.append(("val", load_set(self.config.val)))
        splits.extend(self._test_sets())
        self._prepare_out()

        directory = self.out / "diagrams"
        directory.mkdir(parents=True, exist_ok=True)
        rows = []
        for name, data in splits:
            check_class_count(data, stats, name)
            for method, fit in fits.items():
                table = reliability_table(
                    apply_temperature(data.logits, fit.temperature), data.labels, self.config.bins, self.config.scheme
                )
                path = directory / f"{name}_{method.value}.csv"
                table.to_frame().to_csv(path, index=False)
                rows.append({"split": name, "method": method.value, "ece": table.ece(), "path": str(path)})
        return pd.DataFrame(rows)

    def sweep_alpha(self, alphas: Optional[List[float]] = None) -> pd.DataFrame:
        """Weighted temperature and test metrics for each alpha, sorted by alpha"""
        alphas = sorted(self.config.alphas if alphas is None else alphas)
        if len(alphas) < 2:
            raise InvalidParameterError(f"sweep-alpha needs at least 2 alphas, got {alphas}")
        train = load_set(self._require(self.config.train, "--train", "sweep-alpha"))
        val = load_set(self._require(self.config.val, "--val", "sweep-alpha"))
        test_path = Path(self._require(self.config.test, "--test", "sweep-alpha")[0])
        test_name, test = test_path.stem, load_set(test_path)
        self._prepare_out()

        stats = fit_class_gaussians(train)
        split = partition(train.class_counts, self.config.zeta)
        check_class_count(val, stats, "val")
        check_class_count(test, stats, test_name)

        rows = []
        for alpha in alphas:
            plan = build_transfer_plan(stats, split, alpha, self.config.strategy)
            weights = importance_weights(val, stats, plan, split, self.config.eta1, self.config.eta2)
            fit = fit_temperature(
                val.logits, val.labels, weights.weights, (self.config.tmin, self.config.tmax), Method.WEIGHTED_TS
            )
            scores = metric_report(apply_temperature(test.logits, fit.temperature), test.labels,
                                   self.config.bins, self.config.ranges)
            rows.append({
                "alpha": alpha,
                "temperature": fit.temperature,
                "test_ece": scores["ece"],
                "sce": scores["sce"],
                "ace": scores["ace"],
                "fraction_above_1": weights.fraction_above(1.0),
            })
            logger.info(f"alpha={alpha}: T={fit.temperature:.4f}, {test_name} ECE {scores['ece']:.4f}")

        table = pd.DataFrame(rows)
        table.to_csv(self.out / "alpha_sweep.csv", index=False)
        return table

    def verify_theory(self) -> pd.DataFrame:
        """Run the randomized theory checks and persist the table"""
        self._prepare_out()
        table = run_theory_suite(self.config.seed, self.config.theory_cases, self.config.mc_samples)
        table.to_csv(self.out / "theory.csv", index=False)
        return table

    @staticmethod
    def assert_theory(table: pd.DataFrame) -> None:
        failed = table.loc[table["verdict"] != "pass", "case"].tolist()
        if failed:
            raise TheoryCheckError(f"Theory checks failed: {failed}")
