"""Counter-based random streams.

Every stream is a Philox generator keyed by (seed, stream, index), so the
numbers drawn for a given key never depend on what was drawn before or in
which order the keys are visited. Within a stream, the k-th draw sits at
counter position k; arrays are filled in row-major order, so the draw for
node (i, j) of a field is fixed by the key and the field's shape alone.

"""
import numpy as np

PDE_NOISE = 1
ARGMAX_NOISE = 2
PATHS = 3

_MASK64 = (1 << 64) - 1
_MASK48 = (1 << 48) - 1


def philox_key(seed, stream, index):
    if seed < 0 or index < 0:
        raise ValueError(f"seed and index must be nonnegative, got {seed}, {index}")
    return (int(seed) & _MASK64) | ((stream & 0xFFFF) << 64) | ((index & _MASK48) << 80)


def counter_generator(seed, stream, index):
    return np.random.Generator(np.random.Philox(key=philox_key(seed, stream, index)))


def node_uniforms(seed, stream, index, shape, amplitude):
    """Uniform noise in [-amplitude, amplitude], one value per node."""
    rng = counter_generator(seed, stream, index)
    return rng.uniform(-amplitude, amplitude, size=shape)
