"""Scripted-expert demonstrations and the on-disk dataset format.

A dataset is a JSON-lines index plus a binary sidecar holding the images.
See ``docs/formats.md`` for the byte-level layout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ExpertFailureError
from ..nn.rng import Rng
from .render import IMAGE_SIZE, N_VIEWS
from .tasks import HORIZON, expert_action, reset, step
from .vocab import PALETTE

FORMAT = "vlaflow-demos"
VERSION = 1
DEMO_STREAM = 2


@dataclass
class Episode:
    seed: int
    instruction: np.ndarray
    observations: np.ndarray  # [T, N, S, S, 3], observation before each action
    states: np.ndarray  # [T, d_s]
    actions: np.ndarray  # [T, d_a]
    success: bool

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class DemoDataset:
    """Training tuples: observation, instruction, state and the next H actions."""

    task: str
    horizon: int
    images: np.ndarray  # [M, N, S, S, 3] float32
    instructions: np.ndarray  # [M, L] int64
    states: np.ndarray  # [M, d_s] float32
    actions: np.ndarray  # [M, H, d_a] float32
    episode: np.ndarray  # [M] int64
    t: np.ndarray  # [M] int64
    seed: int = 0
    n_episodes: int = 0

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def d_action(self) -> int:
        return self.actions.shape[-1]

    @property
    def d_state(self) -> int:
        return self.states.shape[-1]

    def subset(self, idx) -> "DemoDataset":
        idx = np.asarray(idx)
        return DemoDataset(self.task, self.horizon, self.images[idx], self.instructions[idx],
                           self.states[idx], self.actions[idx], self.episode[idx], self.t[idx],
                           self.seed, len(np.unique(self.episode[idx])))


def rollout_expert(task: str, seed: int, horizon: int = HORIZON) -> Episode:
    state, obs, instr = reset(task, seed, horizon)
    observations, states, actions = [], [], []
    while not state.done:
        a = expert_action(state)
        observations.append(obs)
        states.append(state.robot_state())
        actions.append(a)
        state, obs, _, _ = step(state, a)
    return Episode(seed, instr, np.stack(observations), np.stack(states), np.stack(actions), state.success)


def chunk_actions(actions: np.ndarray, h: int) -> np.ndarray:
    """Windows ``actions[t:t+h]`` for every t, padded by repeating the last action."""
    pad = np.repeat(actions[-1:], h - 1, axis=0)
    ext = np.concatenate([actions, pad], axis=0)
    return np.stack([ext[t:t + h] for t in range(len(actions))])


def collect_episodes(task: str, n: int, seed: int, horizon: int = HORIZON) -> list[Episode]:
    """``n`` successful expert episodes; failed attempts are discarded."""
    if n < 1:
        raise ValueError("number of demonstrations must be >= 1")
    rng = Rng(seed, (DEMO_STREAM,))
    episodes, failures = [], 0
    while len(episodes) < n:
        ep = rollout_expert(task, int(rng.integers(0, 2**63)), horizon)
        if ep.success:
            episodes.append(ep)
        else:
            failures += 1
            if failures > max(n, 10):
                raise ExpertFailureError(
                    f"expert failed {failures} of {failures + len(episodes)} {task} episodes")
    if failures > len(episodes):
        raise ExpertFailureError(f"expert failure rate above 50% on {task}")
    return episodes


def episodes_to_dataset(task: str, episodes: list[Episode], h: int, seed: int = 0) -> DemoDataset:
    imgs, instr, states, acts, eps, ts = [], [], [], [], [], []
    for e, ep in enumerate(episodes):
        imgs.append(ep.observations)
        instr.append(np.repeat(ep.instruction[None], len(ep), axis=0))
        states.append(ep.states)
        acts.append(chunk_actions(ep.actions, h))
        eps.append(np.full(len(ep), e))
        ts.append(np.arange(len(ep)))
    return DemoDataset(task, h, np.concatenate(imgs).astype(np.float32), np.concatenate(instr),
                       np.concatenate(states).astype(np.float32), np.concatenate(acts).astype(np.float32),
                       np.concatenate(eps), np.concatenate(ts), seed, len(episodes))


def generate_demos(task: str, n: int, seed: int, path=None, h: int = 8,
                   horizon: int = HORIZON) -> DemoDataset:
    """Collect ``n`` expert episodes, chunk them, and optionally write them to ``path``."""
    episodes = collect_episodes(task, n, seed, horizon)
    ds = episodes_to_dataset(task, episodes, h, seed)
    if path is not None:
        save_demos(ds, path, episodes)
    return ds


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name.removesuffix(".jsonl") + ".bin")


def _floats(arr) -> list:
    return np.asarray(arr, dtype=np.float32).astype(np.float64).tolist()


def save_demos(ds: DemoDataset, path, episodes: list[Episode] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    side = sidecar_path(path)
    n_views, size = ds.images.shape[1], ds.images.shape[2]
    header = {
        "type": "header", "format": FORMAT, "version": VERSION, "task": ds.task, "H": ds.horizon,
        "d_a": ds.d_action, "d_s": ds.d_state, "n_views": n_views, "image": [size, size, 3],
        "palette": _floats(PALETTE), "seed": ds.seed, "n_episodes": ds.n_episodes,
        "n_tuples": len(ds), "sidecar": side.name,
        "image_layout": "per tuple: views in order, each as R,G,B planes of size*size float32 little-endian",
    }
    per_tuple = n_views * 3 * size * size * 4
    lines = [header]
    for e in range(ds.n_episodes):
        rows = np.flatnonzero(ds.episode == e)
        rec = {"type": "episode", "episode": e, "length": int(len(rows)),
               "instruction": ds.instructions[rows[0]].tolist()}
        if episodes is not None:
            rec.update(seed=episodes[e].seed, success=bool(episodes[e].success))
        lines.append(rec)
    for i in range(len(ds)):
        lines.append({"type": "tuple", "episode": int(ds.episode[i]), "t": int(ds.t[i]),
                      "state": _floats(ds.states[i]), "actions": _floats(ds.actions[i]),
                      "obs_offset": i * per_tuple, "obs_bytes": per_tuple})
    with open(path, "w") as f:
        for rec in lines:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    planes = np.ascontiguousarray(ds.images.transpose(0, 1, 4, 2, 3)).astype("<f4")
    side.write_bytes(planes.tobytes())
    return path


def load_demos(path) -> DemoDataset:
    path = Path(path)
    with open(path) as f:
        records = [json.loads(line) for line in f if line.strip()]
    header = records[0]
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise ValueError(f"{path} is not a {FORMAT} v{VERSION} file")
    episodes = {r["episode"]: r for r in records if r["type"] == "episode"}
    tuples = [r for r in records if r["type"] == "tuple"]
    n_views = header["n_views"]
    size = header["image"][0]
    raw = np.fromfile(path.with_name(header["sidecar"]), dtype="<f4")
    images = np.empty((len(tuples), n_views, size, size, 3), dtype=np.float32)
    for i, r in enumerate(tuples):
        start = r["obs_offset"] // 4
        planes = raw[start:start + r["obs_bytes"] // 4].reshape(n_views, 3, size, size)
        images[i] = planes.transpose(0, 2, 3, 1)
    return DemoDataset(
        task=header["task"], horizon=header["H"], images=images,
        instructions=np.array([episodes[r["episode"]]["instruction"] for r in tuples], dtype=np.int64),
        states=np.array([r["state"] for r in tuples], dtype=np.float32),
        actions=np.array([r["actions"] for r in tuples], dtype=np.float32),
        episode=np.array([r["episode"] for r in tuples], dtype=np.int64),
        t=np.array([r["t"] for r in tuples], dtype=np.int64),
        seed=header["seed"], n_episodes=header["n_episodes"])
