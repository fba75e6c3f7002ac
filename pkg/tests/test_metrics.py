import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import softmax

from back.datamodel import partition
from back.exceptions import DataValidationError, InvalidParameterError
from back.metrics import ace, accuracy, ece, group_ece, metric_report, reliability_table, sce


def two_class(confidence, labels):
    labels = np.asarray(labels)
    probs = np.tile([confidence, 1.0 - confidence], (labels.shape[0], 1))
    return probs, labels


def test_confident_and_correct_is_calibrated():
    probs = np.eye(3)[[0, 1, 2, 1]]
    assert ece(probs, np.array([0, 1, 2, 1])) == 0.0


def test_overconfidence_gap():
    probs, labels = two_class(0.9, [0, 1, 0, 1])
    assert ece(probs, labels) == pytest.approx(0.4)


def test_single_bin_hand_example():
    probs, labels = two_class(0.9, [0, 0, 0, 1])
    assert ece(probs, labels, bins=10) == pytest.approx(0.15)


def test_two_bin_hand_example():
    conf = np.array([0.55, 0.55, 0.95, 0.95])
    probs = np.column_stack([conf, 1.0 - conf])
    labels = np.array([0, 1, 0, 0])
    assert ece(probs, labels, bins=10) == pytest.approx(0.05, abs=1e-12)
    table = reliability_table(probs, labels, bins=10)
    assert abs(table.ece() - ece(probs, labels, bins=10)) <= 1e-12


def test_classwise_hand_example():
    probs, labels = two_class(0.9, [0, 0, 0, 0, 0])
    assert sce(probs, labels, bins=10) == pytest.approx(0.1, abs=1e-12)
    # a single range reduces ACE to the classwise gap
    assert ace(probs, labels, ranges=1) == pytest.approx(0.1, abs=1e-12)


def test_bin_membership_is_left_open():
    probs, labels = two_class(0.5, [0])
    table = reliability_table(probs, labels, bins=2)
    np.testing.assert_array_equal(table.counts, [1, 0])


def test_empty_bins_weigh_zero():
    probs, labels = two_class(0.95, [0, 0, 1, 0])
    table = reliability_table(probs, labels, bins=15)
    assert table.counts.sum() == 4
    assert np.count_nonzero(table.counts) == 1
    assert table.ece() == pytest.approx(0.2)


def test_rows_must_sum_to_one():
    with pytest.raises(DataValidationError, match="row 1"):
        ece(np.array([[0.5, 0.5], [0.6, 0.6]]), np.array([0, 1]))


def test_bin_and_range_preconditions():
    probs, labels = two_class(0.7, [0, 1, 0])
    with pytest.raises(InvalidParameterError):
        ece(probs, labels, bins=0)
    with pytest.raises(InvalidParameterError, match="at least 15"):
        ace(probs, labels, ranges=15)


def test_sce_averages_classwise_gaps():
    probs, labels = two_class(0.9, [0, 1, 0, 1])
    # class 0 column: conf 0.9, freq 0.5; class 1 column: conf 0.1, freq 0.5
    assert sce(probs, labels) == pytest.approx(0.4)


def test_ace_on_known_ranges():
    probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.2, 0.8]])
    labels = np.array([0, 0, 1, 1])
    # per column, the low range misses with mean 0.25 or 0.15 and the high range hits with mean 0.85 or 0.75
    assert ace(probs, labels, ranges=2) == pytest.approx(0.2)


def test_equal_mass_bins():
    rng = np.random.default_rng(0)
    conf = rng.uniform(0.5, 1.0, 103)
    probs = np.column_stack([conf, 1.0 - conf])
    labels = (rng.random(103) > conf).astype(int)
    table = reliability_table(probs, labels, bins=10, scheme="equal_mass")
    assert table.counts.max() - table.counts.min() <= 1
    assert np.all(np.diff(table.edges) >= 0)
    frame = table.to_frame()
    assert list(frame.columns) == ["bin_low", "bin_high", "count", "confidence", "accuracy"]


def test_unknown_scheme():
    probs, labels = two_class(0.7, [0, 1])
    with pytest.raises(InvalidParameterError):
        reliability_table(probs, labels, scheme="quantile")


@st.composite
def probability_batches(draw):
    n = draw(st.integers(min_value=15, max_value=80))
    c = draw(st.integers(min_value=2, max_value=5))
    raw = draw(arrays(np.float64, (n, c), elements=st.floats(min_value=0.01, max_value=1.0)))
    labels = draw(arrays(np.int64, n, elements=st.integers(min_value=0, max_value=c - 1)))
    return raw / raw.sum(axis=1, keepdims=True), labels


@settings(max_examples=50, deadline=None)
@given(probability_batches())
def test_metrics_lie_in_unit_interval(batch):
    probs, labels = batch
    for value in (ece(probs, labels), sce(probs, labels), ace(probs, labels)):
        assert 0.0 <= value <= 1.0
    assert reliability_table(probs, labels).num_samples == labels.shape[0]


def test_group_ece_splits_by_true_class():
    probs = np.eye(3)[[0, 1, 2, 2]]
    labels = np.array([0, 1, 2, 1])
    split = partition([500, 200, 10], zeta=100)
    groups = group_ece(probs, labels, split)
    assert groups["tail_ece"] == 0.0
    assert groups["head_ece"] == pytest.approx(1.0 / 3.0)


def test_group_ece_without_tail():
    probs = np.eye(2)[[0, 1]]
    groups = group_ece(probs, np.array([0, 1]), partition([500, 200], zeta=100))
    assert groups["tail_ece"] is None


def test_metric_report_fields(small_splits):
    _, _, test = small_splits
    probs = softmax(test.logits.astype(float), axis=1)
    report = metric_report(probs, test.labels, bins=15, ranges=15)
    assert set(report) == {"ece", "sce", "ace", "accuracy", "n", "bins"}
    assert report["n"] == test.num_samples
    assert report["accuracy"] == accuracy(probs, test.labels)
    assert all(np.isfinite(v) for v in report.values())
