"""Per-path counter-based random streams.

Every path owns a Philox stream keyed by (seed, path_index, stream id), so a
path's normals depend only on those three numbers and on how many draws it
has made, never on batch composition or thread scheduling.
"""
from __future__ import annotations

import numpy as np


def path_generator(seed: int, path_index: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index), int(stream)))
    key = ss.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class NormalStreams:
    """Standard normals of shape (n_paths, dim) per step, drawn in blocks."""

    def __init__(self, seed: int, path_indices, dim: int, stream: int = 0, block: int = 256):
        self.gens = [path_generator(seed, i, stream) for i in path_indices]
        self.dim = dim
        self.block = block
        self._buf = None
        self._pos = block

    def next(self) -> np.ndarray:
        if self._pos == self.block:
            self._buf = np.stack([g.standard_normal((self.block, self.dim)) for g in self.gens])
            self._pos = 0
        out = self._buf[:, self._pos, :]
        self._pos += 1
        return out


def path_uniforms(seed: int, path_indices, stream: int, size: int = 1) -> np.ndarray:
    """One row of ``size`` uniforms per path from a dedicated stream."""
    return np.stack([path_generator(seed, i, stream).random(size) for i in path_indices])
