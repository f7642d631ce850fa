import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from npcselect.datamodel import SampleSet  # noqa: E402
from npcselect.synthgen import GeneratorConfig  # noqa: E402


@pytest.fixture
def small_samples():
    """Three samples x five reps x four variables x two responses."""
    rng = np.random.default_rng(42)
    measurements = rng.normal(size=(3, 5, 4))
    responses = np.array([[0.5, 1.0], [1.0, 1.5], [1.5, 0.5]])
    return SampleSet(measurements, responses, ('A', 'B', 'C'))


@pytest.fixture
def small_generator():
    return GeneratorConfig(n_samples=40, n_components=3, n_levels=4, n_reps=5, n_vars=40,
                           noise_sigma=0.05, seed=3)


@pytest.fixture
def lasso_grid():
    return tuple(np.geomspace(0.5, 0.005, 12))
