"""
Shared fixtures: seeded random streams, a tiny run configuration and a small synthetic corpus.
"""
import numpy as np
import pytest

from sdtm.config import load_run_config
from sdtm.data import load_dataset_dir
from sdtm.schemas import SyntheticSpec
from sdtm.synthetic import synth_generate

TINY = dict(
    width=4,
    structd_width=4,
    fred_width=4,
    image_size=16,
    k=3,
    batch_size=2,
    total_iters=10,
    synthetic_categories=4,
    synthetic_images=6,
    eval_episodes=2,
    checkpoint_interval=0,
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the multi-seed smoke experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-seed training experiments, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("SDTM_SEED", "SDTM_LOG_LEVEL", "SDTM_LAMBDA_STR", "SDTM_K"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config(tmp_path):
    return load_run_config(output_dir=tmp_path / "run", **TINY)


@pytest.fixture
def make_config(tmp_path):
    def make(**overrides):
        values = dict(TINY, output_dir=tmp_path / "run")
        values.update(overrides)
        return load_run_config(**values)

    return make


@pytest.fixture
def synthetic_root(tmp_path):
    root = tmp_path / "data"
    synth_generate(SyntheticSpec(n_categories=4, images_per_category=6, image_size=16, seed=7), root)
    return root


@pytest.fixture
def synthetic_index(synthetic_root):
    return load_dataset_dir(synthetic_root, k=3, seed=7)
