import numpy as np
import pytest

from smallpia.rng import ARGMAX_NOISE
from smallpia.rng import PDE_NOISE
from smallpia.rng import counter_generator
from smallpia.rng import node_uniforms
from smallpia.rng import philox_key


def test_node_uniforms_are_keyed():
    first = node_uniforms(7, PDE_NOISE, 3, (4, 5), 0.1)
    # drawing other keys in between changes nothing
    node_uniforms(7, PDE_NOISE, 2, (4, 5), 0.1)
    node_uniforms(8, PDE_NOISE, 3, (4, 5), 0.1)
    again = node_uniforms(7, PDE_NOISE, 3, (4, 5), 0.1)
    assert np.array_equal(first, again)

    assert not np.array_equal(first, node_uniforms(7, PDE_NOISE, 4, (4, 5), 0.1))
    assert not np.array_equal(first, node_uniforms(7, ARGMAX_NOISE, 3, (4, 5), 0.1))
    assert not np.array_equal(first, node_uniforms(6, PDE_NOISE, 3, (4, 5), 0.1))


def test_node_uniforms_range():
    noise = node_uniforms(0, PDE_NOISE, 0, (100, 100), 0.5)
    assert noise.shape == (100, 100)
    assert noise.min() >= -0.5
    assert noise.max() <= 0.5
    assert abs(noise.mean()) < 0.01


def test_zero_amplitude():
    assert not node_uniforms(0, PDE_NOISE, 0, (3, 3), 0.0).any()


def test_row_major_prefix():
    """A draw depends on its position, not on the shape it is reshaped into."""
    flat = counter_generator(1, PDE_NOISE, 0).uniform(-1, 1, size=12)
    assert np.array_equal(node_uniforms(1, PDE_NOISE, 0, (3, 4), 1.0).ravel(), flat)


def test_philox_key():
    assert philox_key(0, 0, 0) == 0
    assert philox_key(1, 0, 0) != philox_key(0, 1, 0) != philox_key(0, 0, 1)
    assert philox_key(2 ** 64 - 1, 0xFFFF, 2 ** 48 - 1) == 2 ** 128 - 1
    with pytest.raises(ValueError):
        philox_key(-1, 0, 0)
    with pytest.raises(ValueError):
        philox_key(0, 0, -1)
