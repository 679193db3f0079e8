"""Path-addressed random streams.

Every random draw in the simulator is keyed by a (seed, path) pair, where the
path is an ordered tuple of labels such as ("run", 3, "round", 17,
"grad_noise", 2).  Two streams with different paths are statistically
independent, and the same (seed, path) reproduces the same draws no matter
what else has been sampled, which makes runs reproducible under any
parallel schedule.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngStream:
    """A deterministic random stream addressed by a seed and a label path."""

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)

    def child(self, *labels) -> "RngStream":
        """Derive a sub-stream by extending the path."""
        return RngStream(self.seed, self.path + labels)

    def generator(self) -> np.random.Generator:
        """A fresh Generator keyed by sha256(seed, path).

        Calling this twice on the same stream returns identical generators;
        the stream is a pure address, not a stateful source.
        """
        tag = repr((self.seed, self.path)).encode()
        digest = hashlib.sha256(tag).digest()
        key = np.frombuffer(digest[:16], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        out = self.generator().standard_normal(size)
        if scale != 1.0:
            out *= scale
        return out

    def uniform(self) -> float:
        return float(self.generator().random())

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"
