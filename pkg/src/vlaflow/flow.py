"""Rectified-flow objective and Euler sampling for action chunks.

Noisy chunks sit on the straight line between noise (tau = 0) and data
(tau = 1); the regression target is the constant velocity ``A - eps``.
"""
from __future__ import annotations

from collections.abc import Callable

import numpy as np
import torch

from .errors import SamplingError, ShapeError
from .nn.rng import Rng, sample_gaussian

TAU_CLAMP = (0.02, 0.98)


def sample_tau(rng: Rng, alpha: float, beta: float, size=None, clamp=TAU_CLAMP):
    """Beta(alpha, beta) draw(s) clamped to ``clamp``."""
    if not (alpha > 0 and beta > 0):
        raise ValueError(f"Beta parameters must be positive, got ({alpha}, {beta})")
    draw = rng.beta(alpha, beta, size)
    out = np.clip(draw, clamp[0], clamp[1])
    return float(out) if size is None else out


def _check(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def _tau_like(tau, ref):
    t = torch.as_tensor(tau, dtype=ref.dtype)
    while t.dim() < ref.dim():
        t = t.unsqueeze(-1)
    return t


def interpolate(actions: torch.Tensor, eps: torch.Tensor, tau) -> torch.Tensor:
    """``tau * A + (1 - tau) * eps``; ``tau`` is scalar or per batch row."""
    _check(actions, eps, "interpolate")
    t = _tau_like(tau, actions)
    return t * actions + (1 - t) * eps


def flow_target(actions: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    _check(actions, eps, "flow_target")
    return actions - eps


def fm_loss(v_pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over batch, horizon and action dims."""
    _check(v_pred, target, "fm_loss")
    diff = v_pred - target
    return (diff * diff).mean()


def euler_integrate(velocity: Callable, a0: torch.Tensor, steps: int) -> torch.Tensor:
    """Forward Euler from tau = 0 to tau = 1 in ``steps`` uniform steps.

    ``velocity(a, tau)`` returns a tensor shaped like ``a``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    a = a0
    dt = 1.0 / steps
    for k in range(steps):
        tau = k / steps
        v = velocity(a, tau)
        if not bool(torch.isfinite(v).all()):
            raise SamplingError(tau)
        a = a + dt * v
    return a


def sample_actions(velocity: Callable, shape, steps: int, rng: Rng, dtype=torch.float32,
                   denormalize: Callable | None = None) -> torch.Tensor:
    """Draw noise, integrate the velocity field, and map back to action units."""
    a = euler_integrate(velocity, sample_gaussian(rng, shape, dtype), steps)
    return denormalize(a) if denormalize is not None else a
