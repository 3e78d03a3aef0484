"""Counter-based, splittable random streams.

Every stochastic draw in the package goes through :class:`Rng`. Streams are
identified by ``(seed, stream)`` where ``stream`` is a tuple of non-negative
integers; children are derived with :meth:`Rng.child` and never share state
with their parent.
"""
from __future__ import annotations

import numpy as np
import torch

ALGORITHM = "philox4x64-10/numpy-seedsequence"


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [int(x) for x in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(state):
    inner = state["state"]
    return {
        **state,
        "state": {
            "counter": np.asarray(inner["counter"], dtype=np.uint64),
            "key": np.asarray(inner["key"], dtype=np.uint64),
        },
        "buffer": np.asarray(state["buffer"], dtype=np.uint64),
    }


class Rng:
    """Deterministic random stream backed by numpy's Philox bit generator."""

    algorithm = ALGORITHM

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(keys))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, shape=None):
        return self._gen.uniform(low, high, shape)

    def beta(self, alpha: float, beta: float, shape=None):
        return self._gen.beta(alpha, beta, shape)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "stream": list(self.stream),
            "bit_generator": _to_jsonable(self._gen.bit_generator.state),
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        if state["algorithm"] != ALGORITHM:
            raise ValueError(f"unknown rng algorithm {state['algorithm']!r}")
        rng = cls(state["seed"], tuple(state["stream"]))
        rng._gen.bit_generator.state = _from_jsonable(state["bit_generator"])
        return rng

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"


def sample_gaussian(rng: Rng, shape, dtype=torch.float32) -> torch.Tensor:
    """I.i.d. standard normals, drawn in float64 and cast to ``dtype``."""
    return torch.from_numpy(rng.normal(tuple(shape))).to(dtype)
