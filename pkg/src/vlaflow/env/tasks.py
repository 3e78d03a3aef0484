"""Deterministic 2-D manipulation tasks: Reach, Push and PickPlace.

The workspace is the unit square. The agent moves 0.05 per unit action and
carries an object while its gripper is closed and the object is within
contact distance (Push drags whatever it touches, no gripper needed). All
transitions are pure functions of ``(state, action)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..errors import EpisodeDoneError
from ..nn.rng import Rng
from . import vocab

TASKS = ("reach", "push", "pickplace")
STEP_SIZE = 0.05
CONTACT = 0.05
SUCCESS_RADIUS = 0.05
MIN_SEPARATION = 0.15
HORIZON = 60
PLACEMENT = (0.1, 0.9)
N_OBJECTS = {"reach": 2, "push": 2, "pickplace": 2}
ENV_STREAM = 1


@dataclass(frozen=True)
class EnvState:
    task: str
    agent: tuple
    gripper: float
    objects: tuple  # ((x, y, color), ...); objects[goal] is the target
    goal: int
    zone: tuple | None
    held: int = -1
    t: int = 0
    horizon: int = HORIZON
    success: bool = False
    done: bool = False
    success_radius: float = SUCCESS_RADIUS

    @property
    def goal_color(self) -> int:
        return int(self.objects[self.goal][2])

    def object_xy(self, i: int) -> np.ndarray:
        return np.array(self.objects[i][:2])

    def robot_state(self) -> np.ndarray:
        """Proprioceptive vector ``[x, y, gripper, holding]``."""
        return np.array([self.agent[0], self.agent[1], self.gripper, float(self.held >= 0)], dtype=np.float32)


def _sample_points(rng: Rng, n: int) -> np.ndarray:
    lo, hi = PLACEMENT
    while True:
        pts = rng.uniform(lo, hi, (n, 2))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        if np.all(d[np.triu_indices(n, 1)] >= MIN_SEPARATION):
            return pts


def reset(task: str, seed: int, horizon: int = HORIZON):
    """New episode. Returns ``(state, observation, instruction)``."""
    from .render import observe

    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    rng = Rng(seed, (ENV_STREAM,))
    n_obj = N_OBJECTS[task]
    has_zone = task != "reach"
    pts = _sample_points(rng, 1 + n_obj + int(has_zone))
    colors = rng.permutation(len(vocab.PALETTE))[:n_obj]
    objects = tuple((float(pts[1 + i, 0]), float(pts[1 + i, 1]), int(colors[i])) for i in range(n_obj))
    state = EnvState(
        task=task,
        agent=(float(pts[0, 0]), float(pts[0, 1])),
        gripper=0.0,
        objects=objects,
        goal=0,
        zone=(float(pts[-1, 0]), float(pts[-1, 1])) if has_zone else None,
        horizon=horizon,
    )
    return state, observe(state), vocab.instruction(task, state.goal_color)


def _nearest_within(state: EnvState, pos, radius) -> int:
    best, best_d = -1, radius
    for i, (x, y, _) in enumerate(state.objects):
        d = float(np.hypot(x - pos[0], y - pos[1]))
        if d < best_d:
            best, best_d = i, d
    return best


def is_success(state: EnvState, radius: float | None = None) -> bool:
    r = state.success_radius if radius is None else radius
    goal = state.object_xy(state.goal)
    if state.task == "reach":
        return bool(np.linalg.norm(np.array(state.agent) - goal) < r)
    in_zone = bool(np.linalg.norm(goal - np.array(state.zone)) < r)
    if state.task == "push":
        return in_zone
    return in_zone and state.held != state.goal


def transition(state: EnvState, action) -> EnvState:
    """Pure dynamics: the next state for ``action`` (clipped to [-1, 1])."""
    if state.done:
        raise EpisodeDoneError("step() called on a finished episode")
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    gripper = float(np.clip(state.gripper + a[2], 0.0, 1.0))
    pos = np.array(state.agent)
    if state.task == "pickplace":
        if gripper > 0.5:
            held = state.held if state.held >= 0 else _nearest_within(state, pos, CONTACT)
        else:
            held = -1
    elif state.task == "push":
        held = _nearest_within(state, pos, CONTACT)
    else:
        held = -1
    new_pos = np.clip(pos + STEP_SIZE * a[:2], 0.0, 1.0)
    delta = new_pos - pos
    objects = list(state.objects)
    if held >= 0:
        x, y, c = objects[held]
        objects[held] = (float(np.clip(x + delta[0], 0.0, 1.0)), float(np.clip(y + delta[1], 0.0, 1.0)), c)
    nxt = dataclasses.replace(
        state, agent=(float(new_pos[0]), float(new_pos[1])), gripper=gripper,
        objects=tuple(objects), held=held, t=state.t + 1)
    success = is_success(nxt)
    return dataclasses.replace(nxt, success=success, done=success or nxt.t >= nxt.horizon)


def step(state: EnvState, action):
    """Advance one step. Returns ``(state', observation, done, success)``."""
    from .render import observe

    nxt = transition(state, action)
    return nxt, observe(nxt), nxt.done, nxt.success


def _toward(pos, target) -> np.ndarray:
    v = (np.asarray(target) - np.asarray(pos)) / STEP_SIZE
    n = float(np.linalg.norm(v))
    return v / n if n > 1.0 else v


def _detour(pos, target, obstacles, clearance=0.08, offset=0.11):
    """Waypoint steering the straight segment ``pos -> target`` around obstacles."""
    seg = np.asarray(target) - pos
    length = float(np.linalg.norm(seg))
    if length < 1e-9:
        return target
    u = seg / length
    for o in obstacles:
        rel = np.asarray(o) - pos
        along = float(rel @ u)
        if not 0.0 < along < length:
            continue
        perp = rel - along * u
        if np.linalg.norm(perp) < clearance:
            side = -perp if np.linalg.norm(perp) > 1e-9 else np.array([-u[1], u[0]])
            side = side / np.linalg.norm(side)
            return np.clip(np.asarray(o) + offset * side, 0.02, 0.98)
    return target


def expert_action(state: EnvState) -> np.ndarray:
    """Scripted proportional controller: approach, grasp, transport, release."""
    pos = np.array(state.agent)
    goal = state.object_xy(state.goal)
    a = np.zeros(3)
    if state.task == "reach":
        a[:2] = _toward(pos, goal)
    elif state.task == "push":
        others = [state.object_xy(i) for i in range(len(state.objects)) if i != state.goal]
        if np.linalg.norm(pos - goal) < CONTACT:
            target = np.asarray(state.zone) + (pos - goal)
        else:
            target = goal
        a[:2] = _toward(pos, _detour(pos, target, others))
    else:
        if state.held == state.goal:
            if np.linalg.norm(goal - np.array(state.zone)) < 0.5 * SUCCESS_RADIUS:
                a[2] = -1.0
            else:
                a[:2] = _toward(goal, state.zone)
                a[2] = 1.0
        elif state.held >= 0:
            a[2] = -1.0
        elif np.linalg.norm(pos - goal) < 1e-6:
            a[2] = 1.0
        else:
            a[:2] = _toward(pos, goal)
            a[2] = -1.0
    return a.astype(np.float32)
