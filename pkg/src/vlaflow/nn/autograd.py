"""Reverse-mode gradients aligned with a :class:`ParamStore`."""
from __future__ import annotations

import torch

from .params import ParamStore


def backward(loss: torch.Tensor, store: ParamStore) -> dict[str, torch.Tensor]:
    """Gradient of a scalar ``loss`` for every parameter in ``store``.

    Frozen parameters get an exact zero tensor; trainable parameters that the
    loss does not reach also get zeros.
    """
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    names = store.trainable_names()
    grads: dict[str, torch.Tensor] = {}
    if names and loss.requires_grad:
        got = torch.autograd.grad(loss, [store[n] for n in names], allow_unused=True)
        grads.update(zip(names, got))
    out = {}
    for n, p in store.items():
        g = grads.get(n)
        out[n] = torch.zeros_like(p, requires_grad=False) if g is None else g.detach()
    return out
