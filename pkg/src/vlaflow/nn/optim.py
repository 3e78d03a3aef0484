"""Decoupled-weight-decay Adam."""
from __future__ import annotations

import math

import torch

from .params import ParamStore

DEFAULT_BETAS = (0.9, 0.95)


@torch.no_grad()
def adamw_step(store: ParamStore, grads: dict, lr: float, betas=DEFAULT_BETAS,
               eps: float = 1e-8, weight_decay: float = 1e-4) -> None:
    """Apply one AdamW update in place to every unfrozen parameter in ``grads``.

    Frozen parameters are skipped entirely: neither their values nor their
    moment estimates change.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    live = [(n, g) for n, g in grads.items() if not store.is_frozen(n)]
    if not live:
        return
    params, gs, ms, vs, steps = [], [], [], [], []
    for name, g in live:
        p = store[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {tuple(g.shape)}, expected {tuple(p.shape)}")
        st = store.state_for(name)
        st["step"] += 1
        params.append(p)
        gs.append(g)
        ms.append(st["m"])
        vs.append(st["v"])
        steps.append(st["step"])
    torch._foreach_mul_(ms, b1)
    torch._foreach_add_(ms, gs, alpha=1 - b1)
    torch._foreach_mul_(vs, b2)
    torch._foreach_addcmul_(vs, gs, gs, value=1 - b2)
    if weight_decay:
        torch._foreach_mul_(params, 1 - lr * weight_decay)
    # Bias corrections differ per parameter only if step counts differ.
    for step in sorted(set(steps)):
        idx = [i for i, s in enumerate(steps) if s == step]
        c1 = 1 - b1**step
        c2 = 1 - b2**step
        denom = torch._foreach_div([vs[i] for i in idx], c2)
        torch._foreach_sqrt_(denom)
        torch._foreach_add_(denom, eps)
        num = torch._foreach_div([ms[i] for i in idx], c1)
        torch._foreach_div_(num, denom)
        torch._foreach_mul_(num, lr)
        torch._foreach_sub_([params[i] for i in idx], num)


def global_grad_norm(grads: dict) -> float:
    return math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
