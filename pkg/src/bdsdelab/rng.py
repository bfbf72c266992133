"""Counter-based random number streams.

Every random draw in the package comes from a Philox generator keyed by
(seed, stream_id) with the 256-bit counter partitioned into (domain, substream)
blocks.  Values are therefore a pure function of the key tuple: sampling order,
chunking and thread count never change them, and any block can be regenerated
in isolation for replay.
"""

from __future__ import annotations

import numpy as np

# Counter word 2 tags the consumer domain so that independent subsystems keyed
# with the same (seed, stream_id) never share a counter block.
DOMAIN_NOISE = 0
DOMAIN_PATHS = 1
DOMAIN_PROBE = 2
DOMAIN_STABLE = 3

_MASK64 = (1 << 64) - 1


def philox_generator(seed: int, stream_id: int, domain: int, substream: int = 0) -> np.random.Generator:
    """Generator for the (seed, stream_id, domain, substream) block."""
    key = np.array([seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, domain & _MASK64, substream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def normals(seed: int, stream_id: int, domain: int, substream: int, shape) -> np.ndarray:
    """Standard normal block, fixed C-order layout."""
    return philox_generator(seed, stream_id, domain, substream).standard_normal(shape)


def uniforms(seed: int, stream_id: int, domain: int, substream: int, shape) -> np.ndarray:
    return philox_generator(seed, stream_id, domain, substream).random(shape)
