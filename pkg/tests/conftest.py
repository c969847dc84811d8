# tests/conftest.py
from pathlib import Path

import numpy as np
import pytest

from data import synth_generate, stratified_split
from runners.trainer import TrainConfig

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset():
    return synth_generate(3, 6, audio_dim=4, visual_dim=5, class_separation=10.0,
                          noise_sigma=0.5, seed=3)


@pytest.fixture
def small_split(small_dataset):
    return stratified_split(small_dataset, 0.5, seed=3)


@pytest.fixture
def tiny_cfg():
    return TrainConfig(epochs=2, batch_size=6, hidden=8, dropout=0.1, eval_every=1, seed=5)


def one_hot(classes, c):
    return np.eye(c, dtype=np.uint8)[np.asarray(classes)]
