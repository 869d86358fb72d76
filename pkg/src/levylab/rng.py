"""Reproducible random streams for batch simulation.

Every simulator draws from counter-based Philox streams keyed by the run
seed plus a (namespace, index) pair.  Path batches are split into fixed-size
blocks, each block owning its own stream, so results are bit-identical
regardless of how many workers process the blocks or in which order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream namespaces.  Keeping them disjoint guarantees that e.g. environment
# draws never share a stream with path blocks under the same seed.
PATHS = 0
ENVIRONMENTS = 1
CLOCKS = 2
SCRATCH = 3


def stream(seed: int, index: int = 0, namespace: int = PATHS) -> np.random.Generator:
    """Return the Philox generator for (seed, namespace, index)."""
    key = np.array(
        [int(seed) & _MASK64, ((namespace << 48) | (index & ((1 << 48) - 1))) & _MASK64],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def path_blocks(n_paths: int, block_size: int) -> list[tuple[int, int, int]]:
    """Split ``range(n_paths)`` into (start, stop, block_index) triples."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    blocks = []
    start = 0
    index = 0
    while start < n_paths:
        stop = min(start + block_size, n_paths)
        blocks.append((start, stop, index))
        start = stop
        index += 1
    return blocks


def exponential(rng: np.random.Generator, size) -> np.ndarray:
    """Unit-rate exponentials via inverse CDF.

    ``-log1p(-u)`` with u in [0, 1) is strictly positive and reproduces the
    same values on every platform for a given stream.
    """
    return -np.log1p(-rng.random(size))


def uniform_open_closed(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on (0, 1]; the closed right end keeps inverse-power jumps finite."""
    return 1.0 - rng.random(size)


def unit_sphere(rng: np.random.Generator, size: int, dim: int) -> np.ndarray:
    """Uniform points on the unit sphere via normalized Gaussians; exact in all dims."""
    if dim == 1:
        return np.where(rng.random(size) < 0.5, -1.0, 1.0).reshape(size, 1)
    g = rng.standard_normal((size, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # A zero Gaussian vector has probability zero; guard anyway.
    norms[norms == 0.0] = 1.0
    return g / norms
