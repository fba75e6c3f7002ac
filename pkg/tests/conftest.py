"""
Shared fixtures
"""
import numpy as np
import pytest

from back.datamodel import LabeledEmbeddingSet
from back.synthetic import SyntheticSpec, generate_synthetic
from config import PipelineConfig


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(
        num_classes=6,
        feature_dim=8,
        imbalance_factor=30.0,
        max_count=300,
        seed=11,
        test_per_class=100,
    )


@pytest.fixture(scope="session")
def small_splits(small_spec):
    """(train, val, test) with head classes {0, 1} at zeta=100"""
    return generate_synthetic(small_spec)


@pytest.fixture
def tiny_set():
    features = np.array([[0.0, 1.0], [1.0, 3.0], [2.0, 0.5], [4.0, 4.0]])
    logits = np.array([[2.0, 0.0, -1.0], [0.5, 1.5, 0.0], [0.0, 0.0, 3.0], [1.0, 2.0, 0.5]])
    labels = np.array([0, 1, 2, 1])
    return LabeledEmbeddingSet.build(features, logits, labels)


@pytest.fixture
def run_config(tmp_path):
    """Config for a small synthetic run under tmp_path"""
    return PipelineConfig.build(
        out=tmp_path / "run",
        num_classes=6,
        feature_dim=8,
        imbalance_factor=30.0,
        max_count=300,
        test_per_class=100,
        seed=5,
    )
