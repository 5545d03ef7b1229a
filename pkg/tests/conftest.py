import numpy as np
import pytest

from radargest import ModelConfig, build_network, build_synthetic_corpus
from radargest.pipeline import dataset_from_recordings

TOY_CONFIG = ModelConfig(tw=8, rp=32, sensors=1, classes=5, tcn_filters=8, time_steps=5)


@pytest.fixture
def toy_net():
    return build_network(TOY_CONFIG, seed=11)


@pytest.fixture
def toy_frames():
    rng = np.random.default_rng(5)
    return rng.random((5, 8, 32, 1))


@pytest.fixture(scope="session")
def small_dataset():
    """5 classes x 20 recordings at reduced geometry; one sequence each."""
    recs = build_synthetic_corpus(per_class=20, seed=7)
    cfg = ModelConfig(tw=32, rp=64, sensors=1, classes=5, tcn_filters=16, time_steps=5)
    ds, dropped = dataset_from_recordings(recs, cfg)
    assert dropped == 0
    return ds
