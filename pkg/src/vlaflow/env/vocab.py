"""Fixed toy vocabulary and instruction templates."""
from __future__ import annotations

import numpy as np

from ..backbone import IMG_ID, PAD_ID

COLOR_NAMES = ("red", "green", "blue", "yellow", "magenta", "cyan")
PALETTE = np.array([
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.20],
    [0.20, 0.35, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85],
    [0.10, 0.85, 0.85],
], dtype=np.float32)

WORDS = ["<pad>", "<img>", "<bos>", *COLOR_NAMES, "reach", "push", "pick", "place", "object", "to", "zone", "the"]
TOKEN = {w: i for i, w in enumerate(WORDS)}
assert TOKEN["<pad>"] == PAD_ID and TOKEN["<img>"] == IMG_ID

_TEMPLATES = {
    "reach": "<img> <img> <bos> reach the {color} object",
    "push": "<img> <img> <bos> push the {color} object to the zone",
    "pickplace": "<img> <img> <bos> pick the {color} object place to zone",
}


def color_token(color: int) -> int:
    return TOKEN[COLOR_NAMES[color]]


def instruction(task: str, color: int) -> np.ndarray:
    words = _TEMPLATES[task].format(color=COLOR_NAMES[color]).split()
    return np.array([TOKEN[w] for w in words], dtype=np.int64)


def decode(ids) -> str:
    return " ".join(WORDS[int(i)] for i in ids)
