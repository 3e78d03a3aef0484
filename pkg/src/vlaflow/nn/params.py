"""Named parameter storage with freeze flags and optimizer state."""
from __future__ import annotations

import hashlib
from collections.abc import Iterator

import numpy as np
import torch

from ..errors import ConfigError


class ParamStore:
    """Flat map of hierarchical names (``"expert.blocks.0.attn.wq"``) to tensors.

    Trainable parameters carry ``requires_grad=True``; frozen ones do not, so
    autograd never builds a graph through them.
    """

    def __init__(self, dtype: torch.dtype = torch.float32):
        self.dtype = dtype
        self._params: dict[str, torch.Tensor] = {}
        self._frozen: dict[str, bool] = {}
        self.opt_state: dict[str, dict] = {}

    def add(self, name: str, value, frozen: bool = False) -> torch.Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = torch.as_tensor(value, dtype=self.dtype).clone().contiguous()
        t.requires_grad_(not frozen)
        self._params[name] = t
        self._frozen[name] = frozen
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def items(self):
        return self._params.items()

    def view(self, prefix: str) -> "ParamView":
        return ParamView(self, prefix)

    def is_frozen(self, name: str) -> bool:
        return self._frozen[name]

    def set_frozen(self, prefix: str, frozen: bool) -> int:
        """Freeze or unfreeze every parameter under ``prefix``; returns the count."""
        names = self.names(prefix)
        for n in names:
            self._frozen[n] = frozen
            self._params[n].requires_grad_(not frozen)
        return len(names)

    def freeze(self, prefix: str = "") -> int:
        return self.set_frozen(prefix, True)

    def unfreeze(self, prefix: str = "") -> int:
        return self.set_frozen(prefix, False)

    def trainable_names(self) -> list[str]:
        return [n for n, f in self._frozen.items() if not f]

    def count(self, prefix: str = "", trainable_only: bool = False) -> int:
        return sum(
            p.numel()
            for n, p in self._params.items()
            if n.startswith(prefix) and not (trainable_only and self._frozen[n])
        )

    def to(self, dtype: torch.dtype) -> "ParamStore":
        """Copy of this store in another precision (optimizer state dropped)."""
        out = ParamStore(dtype)
        for n, p in self._params.items():
            out.add(n, p.detach(), frozen=self._frozen[n])
        return out

    def numpy(self, name: str) -> np.ndarray:
        return self._params[name].detach().cpu().numpy()

    def digest(self, prefix: str = "") -> str:
        """SHA-256 over names, shapes and raw bytes of parameters under ``prefix``."""
        h = hashlib.sha256()
        for n in sorted(self.names(prefix)):
            arr = np.ascontiguousarray(self.numpy(n))
            h.update(n.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def state_for(self, name: str) -> dict:
        st = self.opt_state.get(name)
        if st is None:
            p = self._params[name]
            st = {"m": torch.zeros_like(p, requires_grad=False),
                  "v": torch.zeros_like(p, requires_grad=False),
                  "step": 0}
            self.opt_state[name] = st
        return st


class ParamView:
    """Read-only window onto a :class:`ParamStore` subtree."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix if not prefix or prefix.endswith(".") else prefix + "."

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.store[self.prefix + name]

    def __contains__(self, name: str) -> bool:
        return (self.prefix + name) in self.store

    def view(self, sub: str) -> "ParamView":
        return ParamView(self.store, self.prefix + sub)

    @property
    def dtype(self):
        return self.store.dtype
