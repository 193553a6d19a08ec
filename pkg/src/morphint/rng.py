"""Counter-based random streams.

Every trajectory owns a 64-bit key.  Draw number ``k`` of a stream is the
SplitMix64 finalizer applied to ``key + (k + 1) * GOLDEN``, so any draw can be
produced without touching shared state and streams do not depend on the order
in which trajectories are executed.
"""

import numpy as np
from numba import njit, uint64

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_BRANCH = 0x632BE59BD9B4E019


@njit(inline="always")
def mix64(z):
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(inline="always")
def draw_bits(key, ctr):
    return mix64(key + (ctr + uint64(1)) * uint64(GOLDEN))


@njit(inline="always")
def draw_uniform(key, ctr):
    """Uniform double in the open interval (0, 1)."""
    return ((draw_bits(key, ctr) >> uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


def _mix64_py(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_key(parent: int, index: int) -> int:
    """Child key for branch ``index`` of ``parent`` (both unsigned 64-bit)."""
    return _mix64_py((parent & _MASK) ^ _mix64_py((index + _BRANCH) & _MASK))


def trajectory_keys(master_seed: int, n_blocks: int, block_size: int) -> np.ndarray:
    """Keys for all trajectories, block-major: key = h(h(master, block), j)."""
    keys = np.empty(n_blocks * block_size, dtype=np.uint64)
    for b in range(n_blocks):
        bkey = derive_key(master_seed, b)
        for j in range(block_size):
            keys[b * block_size + j] = derive_key(bkey, j)
    return keys


class CounterStream:
    """Sequential view of one counter-based stream.

    Produces exactly the values the compiled kernels draw for the same key, in
    the same order, which is what the pure-Python propagators rely on.
    """

    def __init__(self, key: int, counter: int = 0):
        self.key = int(key) & _MASK
        self.counter = int(counter)

    def bits(self, n: int) -> np.ndarray:
        ctr = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + ctr * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        return ((self.bits(n) >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)

    def normal(self, n: int) -> np.ndarray:
        """Box-Muller normals; consumes ``2 * ceil(n / 2)`` uniforms."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        g = np.empty(2 * m)
        g[0::2] = r * np.cos(2.0 * np.pi * u[1::2])
        g[1::2] = r * np.sin(2.0 * np.pi * u[1::2])
        return g[:n]
