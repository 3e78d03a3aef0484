from .demos import DemoDataset, Episode, generate_demos, load_demos, save_demos
from .render import observe, render
from .rollout import EvalResult, ExpertChunkPolicy, evaluate, random_policy
from .tasks import TASKS, EnvState, expert_action, is_success, reset, step, transition

__all__ = [
    "TASKS",
    "DemoDataset",
    "EnvState",
    "Episode",
    "EvalResult",
    "ExpertChunkPolicy",
    "evaluate",
    "expert_action",
    "generate_demos",
    "is_success",
    "load_demos",
    "observe",
    "random_policy",
    "render",
    "reset",
    "save_demos",
    "step",
    "transition",
]
