import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from back.calibrator import Method, TemperatureFit, fit_temperature
from back.data_handler import load_set, save_set
from back.datamodel import LabeledEmbeddingSet
from back.exceptions import ConfigurationError, DataValidationError, InvalidParameterError, MissingArtifactError
from back.pipeline import CalibrationPipeline


def synthesize(config):
    table = CalibrationPipeline(config).synth()
    manifests = {split: Path(manifest) for split, manifest in zip(table["split"], table["manifest"])}
    return config.model_copy(update={"train": manifests["train"], "val": manifests["val"], "test": [manifests["test"]]})


@pytest.fixture
def ready_config(run_config):
    return synthesize(run_config)


def run_all(config):
    pipeline = CalibrationPipeline(config)
    pipeline.fit()
    pipeline.calibrate()
    return pipeline, pipeline.evaluate()


def test_synth_writes_manifests(run_config):
    table = CalibrationPipeline(run_config).synth()
    assert list(table["split"]) == ["train", "val", "test"]
    for manifest in table["manifest"]:
        assert load_set(manifest).num_classes == 6


def test_fit_persists_stats_and_partition(ready_config):
    counts = CalibrationPipeline(ready_config).fit()
    out = ready_config.out
    stats = json.loads((out / "stats.json").read_text())
    assert len(stats["classes"]) == 6
    split = json.loads((out / "partition.json").read_text())
    assert sorted(split["head"] + split["tail"]) == list(range(6))
    assert list(counts["group"]) == ["head", "head", "tail", "tail", "tail", "tail"]


def test_fit_requires_train(run_config):
    with pytest.raises(ConfigurationError, match="--train"):
        CalibrationPipeline(run_config).fit()


def test_calibrate_before_fit(ready_config):
    with pytest.raises(MissingArtifactError, match="fit"):
        CalibrationPipeline(ready_config).calibrate()


def test_evaluate_before_calibrate(ready_config):
    pipeline = CalibrationPipeline(ready_config)
    pipeline.fit()
    with pytest.raises(MissingArtifactError, match="calibrate"):
        pipeline.evaluate()


def test_calibrate_artifacts(ready_config):
    pipeline = CalibrationPipeline(ready_config)
    pipeline.fit()
    table = pipeline.calibrate()
    assert list(table["method"]) == ["base", "plain_ts", "weighted_ts"]
    out = ready_config.out
    for name in ("transfer_plan.json", "weights.json", "weights_histogram.csv", "attention.csv"):
        assert (out / name).exists()
    for method in ("base", "plain_ts", "weighted_ts"):
        fit = TemperatureFit.load(out / "fits" / f"{method}.json")
        assert fit.method is Method(method)
    assert len(TemperatureFit.load(out / "fits" / "weighted_ts.json").search_trace) >= 64
    histogram = pd.read_csv(out / "weights_histogram.csv")
    assert histogram["count"].sum() == load_set(ready_config.val).num_samples


def test_evaluate_report(ready_config):
    _, report = run_all(ready_config)
    assert list(report) == ["test"]
    methods = report["test"]
    assert set(methods) == {"base", "plain_ts", "weighted_ts"}
    for record in methods.values():
        for key in ("ece", "sce", "ace", "accuracy", "head_ece", "tail_ece"):
            assert np.isfinite(record[key])
        assert record["n"] == 600
    assert len({record["accuracy"] for record in methods.values()}) == 1
    assert methods["base"]["temperature"] == 1.0
    assert methods["plain_ts"]["ece"] < methods["base"]["ece"]
    assert (ready_config.out / "reliability" / "test_weighted_ts.csv").exists()


def test_evaluate_several_test_sets(ready_config, small_splits):
    shifted = save_set(small_splits[2], ready_config.out / "extra", "shifted")
    config = ready_config.model_copy(update={"test": [*ready_config.test, shifted]})
    _, report = run_all(config)
    assert list(report) == ["test", "shifted"]


def test_evaluate_rejects_class_count_mismatch(ready_config):
    rng = np.random.default_rng(0)
    other = LabeledEmbeddingSet.build(rng.normal(size=(20, 8)), rng.normal(size=(20, 4)), np.arange(20) % 4)
    manifest = save_set(other, ready_config.out / "extra", "four")
    pipeline = CalibrationPipeline(ready_config)
    pipeline.fit()
    pipeline.calibrate()
    mismatched = CalibrationPipeline(ready_config.model_copy(update={"test": [manifest]}))
    with pytest.raises(DataValidationError, match="Class-count mismatch"):
        mismatched.evaluate()


def test_reruns_are_byte_identical(run_config, tmp_path):
    first = synthesize(run_config)
    run_all(first)
    second = first.model_copy(update={"out": tmp_path / "again"})
    run_all(second)
    for name in ("stats.json", "partition.json", "weights.json", "fits/weighted_ts.json", "report.json"):
        assert (first.out / name).read_bytes() == (second.out / name).read_bytes()


def test_diagram_tables(ready_config):
    pipeline, _ = run_all(ready_config)
    table = pipeline.diagram()
    assert set(table["split"]) == {"val", "test"}
    assert len(table) == 6
    frame = pd.read_csv(ready_config.out / "diagrams" / "val_plain_ts.csv")
    assert len(frame) == ready_config.bins


def test_diagram_equal_mass(ready_config):
    config = ready_config.model_copy(update={"scheme": "equal_mass", "bins": 10})
    pipeline, _ = run_all(config)
    pipeline.diagram()
    frame = pd.read_csv(config.out / "diagrams" / "test_base.csv")
    assert frame["count"].max() - frame["count"].min() <= 1


@pytest.mark.parametrize("strategy", ["attention", "uniform", "onehot"])
def test_strategies_run_to_completion(ready_config, strategy):
    _, report = run_all(ready_config.model_copy(update={"strategy": strategy}))
    assert np.isfinite(report["test"]["weighted_ts"]["ece"])


def test_sweep_alpha(ready_config):
    config = ready_config.model_copy(update={"alphas": [1.0, 0.99, 0.995]})
    table = CalibrationPipeline(config).sweep_alpha()
    assert list(table["alpha"]) == [0.99, 0.995, 1.0]
    assert list(table.columns) == ["alpha", "temperature", "test_ece", "sce", "ace", "fraction_above_1"]
    val = load_set(config.val)
    plain = fit_temperature(val.logits, val.labels, None, (config.tmin, config.tmax))
    assert table["temperature"].iloc[-1] == pytest.approx(plain.temperature, abs=1e-6)
    assert table["fraction_above_1"].iloc[-1] == 0.0
    assert (config.out / "alpha_sweep.csv").exists()


def test_sweep_alpha_reads_only_the_first_test_manifest(ready_config, tmp_path):
    missing = tmp_path / "not_written.json"
    config = ready_config.model_copy(update={"test": [ready_config.test[0], missing], "alphas": [0.998, 1.0]})
    table = CalibrationPipeline(config).sweep_alpha()
    assert len(table) == 2
    assert not missing.exists()


def test_sweep_needs_two_alphas(ready_config):
    with pytest.raises(InvalidParameterError):
        CalibrationPipeline(ready_config).sweep_alpha([0.998])


def test_verify_theory(run_config):
    config = run_config.model_copy(update={"theory_cases": 2, "mc_samples": 20_000})
    pipeline = CalibrationPipeline(config)
    table = pipeline.verify_theory()
    assert (config.out / "theory.csv").exists()
    pipeline.assert_theory(table)
