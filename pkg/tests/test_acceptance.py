"""
End-to-end behaviour on the default synthetic long-tailed setting, over ten seeds

Default generator: C=10, D=16, IF=100, n_1=500, gamma=2.5, prior bias on,
balanced test split of 10^4 samples.
"""
import numpy as np
import pytest
from scipy.stats import spearmanr

from back.calibrator import Method
from back.datamodel import partition
from back.gaussians import fit_class_gaussians
from back.pipeline import calibrate_split, evaluate_split, synthetic_spec
from back.synthetic import generate_synthetic
from config import DEFAULT_ALPHAS, PipelineConfig

SEEDS = range(10)


def run_seed(seed, imbalance_factor=100.0, evaluate=True):
    config = PipelineConfig.build(imbalance_factor=imbalance_factor)
    train, val, test = generate_synthetic(synthetic_spec(config, seed))
    stats = fit_class_gaussians(train)
    split = partition(train.class_counts, config.zeta)
    run = calibrate_split(val, stats, split, config)
    reports, sweep = {}, []
    if evaluate:
        reports = {method: evaluate_split(test, fit, split, config) for method, fit in run.fits.items()}
        sweep = [calibrate_split(val, stats, split, config, alpha).fits for alpha in DEFAULT_ALPHAS]
    return dict(run=run, split=split, val=val, test=test, reports=reports, sweep=sweep)


@pytest.fixture(scope="module")
def heavy_runs():
    return [run_seed(seed) for seed in SEEDS]


@pytest.fixture(scope="module")
def mild_runs():
    return [run_seed(seed, imbalance_factor=10.0, evaluate=False) for seed in SEEDS]


def median_ece(runs, method):
    return float(np.median([r["reports"][method].after["ece"] for r in runs]))


def test_test_split_is_balanced(heavy_runs):
    for r in heavy_runs:
        assert r["test"].num_samples == 10_000
        np.testing.assert_array_equal(r["test"].class_counts, np.full(10, 1000))


def test_weighted_scaling_beats_plain_scaling(heavy_runs):
    base = median_ece(heavy_runs, Method.BASE)
    plain = median_ece(heavy_runs, Method.PLAIN_TS)
    weighted = median_ece(heavy_runs, Method.WEIGHTED_TS)
    assert weighted < plain < base
    assert weighted <= 0.9 * plain


def test_accuracy_is_preserved(heavy_runs):
    for r in heavy_runs:
        predictions = {
            method: np.argmax(r["test"].logits.astype(np.float64) / report.temperature, axis=1)
            for method, report in r["reports"].items()
        }
        np.testing.assert_array_equal(predictions[Method.BASE], predictions[Method.PLAIN_TS])
        np.testing.assert_array_equal(predictions[Method.BASE], predictions[Method.WEIGHTED_TS])
        assert len({report.after["accuracy"] for report in r["reports"].values()}) == 1


def test_weight_contract_holds(heavy_runs, mild_runs):
    for r in heavy_runs + mild_runs:
        weights = r["run"].weights.weights
        tail = r["split"].tail_mask(r["val"].labels)
        assert np.all(weights[~tail] == 1.0)
        assert np.all((weights[tail] >= 0.3) & (weights[tail] <= 5.0))


def test_heavier_imbalance_has_more_large_weights(heavy_runs, mild_runs):
    heavy = np.median([r["run"].weights.fraction_above(1.0) for r in heavy_runs])
    mild = np.median([r["run"].weights.fraction_above(1.0) for r in mild_runs])
    assert heavy > mild


def test_heavy_imbalance_raises_the_temperature(heavy_runs):
    weighted = np.median([r["run"].fits[Method.WEIGHTED_TS].temperature for r in heavy_runs])
    plain = np.median([r["run"].fits[Method.PLAIN_TS].temperature for r in heavy_runs])
    assert weighted >= plain


def test_temperature_falls_as_alpha_grows(heavy_runs):
    curves = np.array([[fits[Method.WEIGHTED_TS].temperature for fits in r["sweep"]] for r in heavy_runs])
    assert spearmanr(DEFAULT_ALPHAS, np.median(curves, axis=0))[0] <= 0
    per_seed = [spearmanr(DEFAULT_ALPHAS, curve)[0] for curve in curves]
    assert np.nanmedian(per_seed) <= 0


def test_alpha_one_reduces_to_plain_scaling(heavy_runs):
    assert DEFAULT_ALPHAS[-1] == 1.0
    for r in heavy_runs:
        fits = r["sweep"][-1]
        assert fits[Method.WEIGHTED_TS].temperature == pytest.approx(fits[Method.PLAIN_TS].temperature, abs=1e-6)


def test_temperatures_stay_inside_bounds(heavy_runs):
    for r in heavy_runs:
        for fit in r["run"].fits.values():
            assert 0.05 <= fit.temperature <= 20.0
