import numpy as np
import pytest

from octseg.data import Sample
from octseg.phantom import PhantomConfig, generate_phantom


@pytest.fixture(scope="session")
def small_phantom_config() -> PhantomConfig:
    return PhantomConfig.for_size(96, 128)


@pytest.fixture(scope="session")
def phantom_pair(small_phantom_config):
    healthy = generate_phantom(small_phantom_config, 7, "healthy-like")
    glaucoma = generate_phantom(small_phantom_config, 7, "glaucoma-like")
    return healthy, glaucoma


def make_sample(seed: int = 0, h: int = 32, w: int = 40,
                group: str = "healthy-like") -> Sample:
    """A tiny random-but-structured sample for transform tests."""
    rng = np.random.default_rng(seed)
    image = rng.uniform(0.0, 1.0, size=(h, w)).astype(np.float32)
    labels = (np.arange(h)[:, None] * 8 // h).astype(np.uint8) \
        % 8 * np.ones((1, w), dtype=np.uint8)
    return Sample(image=image, labels=labels, group=group,
                  id=f"tiny{seed}").validate()
