import numpy as np
import pytest

from powerlag import MatchedDesign, Stratum


def pair_design(diffs):
    """1:1 strata whose case-minus-control exposure differences are ``diffs``."""
    return MatchedDesign.from_strata([Stratum(np.array([[d], [0.0]])) for d in diffs])


def random_design(rng, n=40, m_range=(2, 6), p=1, scale=1.0):
    """Random padded design with ragged stratum sizes."""
    sizes = rng.integers(m_range[0], m_range[1] + 1, size=n)
    lags = rng.normal(0.0, scale, size=(n, int(sizes.max()), p))
    return MatchedDesign(lags, sizes)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
