import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_field(rng, d=4, h=3, w=3):
    from descalign import DescriptorField
    return DescriptorField(rng.standard_normal((d, h, w)))
