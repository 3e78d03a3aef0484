"""Closed-loop evaluation of chunk-predicting policies."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..nn.rng import Rng
from .tasks import HORIZON, expert_action, reset, step, transition

EVAL_STREAM = 3


@dataclass
class EvalResult:
    task: str
    trials: int
    success_rate: float
    episodes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(policy, task: str, trials: int, seed: int, replan_every: int | None = None,
             horizon: int = HORIZON) -> EvalResult:
    """Roll out ``policy`` for ``trials`` seeded episodes.

    ``policy(obs, instruction, robot_state, rng)`` returns an ``[H, d_a]``
    chunk; the first ``replan_every`` actions (all of them by default) are
    executed before the policy is queried again.
    """
    root = Rng(seed, (EVAL_STREAM,))
    episodes, successes = [], 0
    for trial in range(trials):
        ep_rng = root.child(trial)
        ep_seed = int(ep_rng.integers(0, 2**63))
        policy_rng = ep_rng.child(0)
        state, obs, instr = reset(task, ep_seed, horizon)
        queries = 0
        while not state.done:
            if getattr(policy, "privileged", False):
                chunk = policy(obs, instr, state.robot_state(), policy_rng, env_state=state)
            else:
                chunk = policy(obs, instr, state.robot_state(), policy_rng)
            chunk = np.asarray(chunk)
            queries += 1
            k = len(chunk) if not replan_every else min(replan_every, len(chunk))
            for a in chunk[:k]:
                state, obs, done, _ = step(state, a)
                if done:
                    break
        successes += int(state.success)
        episodes.append({"trial": trial, "seed": ep_seed, "success": bool(state.success),
                         "steps": state.t, "queries": queries})
    return EvalResult(task, trials, successes / trials if trials else 0.0, episodes)


class ExpertChunkPolicy:
    """Scripted expert packaged as a chunk policy.

    It plans ``h`` actions by simulating the pure dynamics from the true
    environment state, which :func:`evaluate` passes as ``env_state``.
    """

    privileged = True

    def __init__(self, h: int = 8):
        self.h = h

    def __call__(self, obs, instr, robot_state, rng, env_state=None):
        if env_state is None:
            raise ValueError("the expert needs the true environment state")
        chunk, state = [], env_state
        for _ in range(self.h):
            if state.done:
                chunk.append(np.zeros_like(chunk[-1]))
                continue
            a = expert_action(state)
            chunk.append(a)
            state = transition(state, a)
        return np.stack(chunk)


def random_policy(h: int = 8, d_action: int = 3):
    def policy(obs, instr, robot_state, rng):
        return rng.uniform(-1.0, 1.0, (h, d_action))

    return policy
