"""Counter-based random streams.

Every draw in the package comes from a Philox stream whose key is the root
seed and whose counter is derived from (index, layer, role).  Streams are
therefore addressable: the values for sample 17 never depend on which
samples were generated before it, or on how work was split across threads.
Within a stream values are consumed in row-major order, so a stream that is
asked for more rows yields the shorter request as a prefix.
"""

import numpy as np

MASK64 = (1 << 64) - 1

# stream roles
WEIGHTS = 1
BIASES = 2
GP = 3
BOOTSTRAP = 4
INPUTS = 5


def stream(seed: int, index: int, layer: int = 0, role: int = WEIGHTS) -> np.random.Generator:
    """Return the generator for one (index, layer, role) cell of a root seed."""
    if seed < 0:
        raise ValueError("seed must be a non-negative 64-bit integer")
    key = [seed & MASK64, (seed >> 64) & MASK64]
    # counter word 0 is incremented by Philox itself; the other words address the cell
    counter = [0, ((layer & 0xFFFFFFFF) << 8) | (role & 0xFF), index & MASK64, 0]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
