import pytest

from tapetrack.synth import SceneConfig, generate_scene


@pytest.fixture(scope="session")
def clean_scene():
    return generate_scene(SceneConfig(frame_count=2))


@pytest.fixture(scope="session")
def noisy_scene():
    return generate_scene(SceneConfig(frame_count=2, pixel_noise_sigma=0.5, rng_seed=7))
