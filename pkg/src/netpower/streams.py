"""Counter-based random streams keyed by (seed, run, node).

Each simulation run draws the permutation of a node's shareholders from a
stream that depends only on the master seed, the run index and the node id.
Nothing is carried between runs, so runs can be split over any number of
workers in any order and still reproduce the same draws bit for bit.

The mixing function is the SplitMix64 finalizer.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64, which is what we want.
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_M1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_M2)
    z ^= z >> np.uint64(31)
    return z


def node_key(node_id: str) -> int:
    """Stable 64-bit key for a node id (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.blake2b(node_id.encode("utf-8"), digest_size=8).digest(), "little")


def node_base(master_seed: int, node_id: str) -> int:
    return mix64(mix64(master_seed & MASK64) ^ node_key(node_id))


def run_states(base: int, runs: np.ndarray) -> np.ndarray:
    """Per-run stream states for one node; ``runs`` holds run indices."""
    offsets = (runs.astype(np.uint64) + np.uint64(1)) * np.uint64(GOLDEN)
    return mix64_array(offsets + np.uint64(base))


def draw_keys(states: np.ndarray, n: int) -> np.ndarray:
    """``len(states) x n`` matrix of uniform 64-bit draws, one row per run."""
    k = (np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN))[None, :]
    return mix64_array(states[:, None] + k)


def stream_keys(master_seed: int, run: int, node_id: str, n: int) -> np.ndarray:
    """The ``n`` draws of a single (run, node) stream."""
    states = run_states(node_base(master_seed, node_id), np.array([run], dtype=np.uint64))
    return draw_keys(states, n)[0]
