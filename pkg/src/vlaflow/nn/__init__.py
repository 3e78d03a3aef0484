from .autograd import backward
from .functional import (
    layer_norm,
    linear_forward,
    multi_head_attention,
    sinusoidal_embedding,
    softmax,
)
from .optim import adamw_step
from .params import ParamStore, ParamView
from .rng import Rng, sample_gaussian

__all__ = [
    "ParamStore",
    "ParamView",
    "Rng",
    "adamw_step",
    "backward",
    "layer_norm",
    "linear_forward",
    "multi_head_attention",
    "sample_gaussian",
    "sinusoidal_embedding",
    "softmax",
]
