"""Shared fixtures: the two-input worked-example network and small helpers."""

from pathlib import Path

import numpy as np
import pytest

from absdomain import InputRegion
from config import load_settings
from model_parser import load_model

ROOT = Path(__file__).resolve().parent.parent
NETWORKS = ROOT / "networks"


@pytest.fixture
def networks_dir() -> Path:
    return NETWORKS


@pytest.fixture
def example_net():
    """Q=4 network: W2 = [[-7,-3],[3,7]]*0.1 with ReLU, W3 = [[-7,0],[6,-1]]/7."""
    return load_model(NETWORKS / "two_layer_relu.json")


@pytest.fixture
def example_point():
    """The single input (1, 1)."""
    return InputRegion.linf_ball([1.0, 1.0], 0.0)


@pytest.fixture
def split_gain_net():
    """One weight whose flip hull fails while both halves of it prove."""
    return load_model(NETWORKS / "split_gain.json")


@pytest.fixture
def unit_point():
    return InputRegion.linf_ball([1.0], 0.0)


@pytest.fixture
def settings():
    return load_settings()


@pytest.fixture
def rng():
    return np.random.default_rng(42)
