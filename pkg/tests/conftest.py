import numpy as np
import pytest

from irs_aircomp import ChannelSet


def make_channels(direct, reflect, irs_ap):
    """Hand-built ChannelSet from nested lists; one row per device."""
    return ChannelSet(
        direct=tuple(np.atleast_1d(np.asarray(d, dtype=complex)) for d in direct),
        reflect=tuple(np.atleast_2d(np.asarray(r, dtype=complex)) for r in reflect),
        irs_ap=np.asarray(irs_ap, dtype=complex),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
