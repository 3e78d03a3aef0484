"""Anti-aliased disc rendering of a task state into small RGB views.

View 0 is the whole workspace; view 1 is a 0.5 x 0.5 window centred on the
agent (pixels outside the workspace are black).
"""
from __future__ import annotations

import numpy as np

from .vocab import PALETTE

IMAGE_SIZE = 32
N_VIEWS = 2
BACKGROUND = np.array([0.15, 0.15, 0.15], dtype=np.float32)
OUTSIDE = np.zeros(3, dtype=np.float32)
AGENT_COLOR = np.array([1.0, 1.0, 1.0], dtype=np.float32)
ZONE_COLOR = np.array([0.55, 0.55, 0.55], dtype=np.float32)
AGENT_RADIUS = 0.03
OBJECT_RADIUS = 0.045
ZONE_RADIUS = 0.07
CROP_HALF = 0.25


def _grid(view: int, agent, size: int):
    if view == 0:
        lo, span = np.zeros(2), 1.0
    elif view == 1:
        center = (0.5, 0.5) if agent is None else agent
        lo, span = np.asarray(center) - CROP_HALF, 2 * CROP_HALF
    else:
        raise ValueError(f"view index must be 0 or 1, got {view}")
    c = (np.arange(size) + 0.5) / size * span
    xs = lo[0] + c[None, :]
    ys = lo[1] + c[:, None]
    return np.broadcast_to(xs, (size, size)), np.broadcast_to(ys, (size, size)), span / size


def _disc(img, xs, ys, px, center, radius, color):
    d = np.hypot(xs - center[0], ys - center[1])
    cov = np.clip((radius - d) / px + 0.5, 0.0, 1.0)[..., None]
    img *= 1.0 - cov
    img += cov * color


def render(state, view: int, size: int = IMAGE_SIZE) -> np.ndarray:
    """``size x size x 3`` float32 image in [0, 1]."""
    xs, ys, px = _grid(view, state.agent, size)
    inside = (xs >= 0) & (xs <= 1) & (ys >= 0) & (ys <= 1)
    img = np.where(inside[..., None], BACKGROUND, OUTSIDE).astype(np.float64)
    if state.zone is not None:
        _disc(img, xs, ys, px, state.zone, ZONE_RADIUS, ZONE_COLOR)
    for x, y, c in state.objects:
        _disc(img, xs, ys, px, (x, y), OBJECT_RADIUS, PALETTE[c])
    if state.agent is not None:
        _disc(img, xs, ys, px, state.agent, AGENT_RADIUS, AGENT_COLOR)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def observe(state, n_views: int = N_VIEWS, size: int = IMAGE_SIZE) -> np.ndarray:
    """All views stacked: ``[n_views, size, size, 3]``."""
    return np.stack([render(state, v, size) for v in range(n_views)])
