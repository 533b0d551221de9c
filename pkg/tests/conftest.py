import numpy as np
import pytest

from rcme import synth
from rcme.core import NoiseModel


@pytest.fixture
def noise():
    return NoiseModel(0.5)


@pytest.fixture
def clean_scene():
    return synth.generate(synth.SceneConfig(n_points=60, sigma=0.0, rng_seed=11))


@pytest.fixture
def noisy_scene():
    return synth.generate(synth.SceneConfig(n_points=200, sigma=0.5, rng_seed=5))


def random_scene(seed, **kw):
    rng = np.random.default_rng(seed)
    kw.setdefault("motion_truth", synth.random_motion(rng))
    return synth.generate(synth.SceneConfig(rng_seed=seed, **kw))


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
