import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from viground.data import CaptionSample, make_batch  # noqa: E402
from viground.model import init_model  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def random_model_and_batch(seed, languages=("en", "de"), d=3, c=4, h=3, vocab=6, batch=2, max_len=3,
                           jitter=0.1):
    """Small model with perturbed parameters and a random padded batch."""
    rng = np.random.default_rng(seed)
    lookups = {lang: rng.standard_normal((vocab, d)) for lang in languages}
    model = init_model(lookups, c, h, seed=seed)
    params = {k: v + jitter * rng.standard_normal(v.shape) for k, v in model.parameters().items()}
    model = model.with_parameters(params)
    samples = [
        CaptionSample(str(i), 0.5 * rng.standard_normal(h),
                      {lang: tuple(int(t) for t in rng.integers(0, vocab, size=int(rng.integers(1, max_len + 1))))
                       for lang in languages})
        for i in range(batch)
    ]
    return model, make_batch(samples, languages)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_dir():
    return FIXTURES / "toy"
