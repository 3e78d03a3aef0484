"""Command-line entry point: ``vlaflow <command> [options]``.

Every command writes under ``<out>/<run-id>/`` together with the resolved
configuration. Exit codes: 0 success, 1 usage or configuration error,
2 runtime abort (divergence, expert failure, corrupt checkpoint, ...).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import TASKS, VARIANTS, RunConfig, load_config
from .errors import CheckpointError, ConfigError, VLAError
from .model import VLAModel, count_params
from .nn.rng import Rng

log = logging.getLogger("vlaflow")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
PROBE_STREAM = 8


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv(kind):
    def parse(text):
        return [kind(x) for x in text.split(",") if x]
    return parse


def _global_flags(default) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="JSON config file")
    p.add_argument("--seed", type=int, default=default, help="master seed")
    p.add_argument("--out", default=default, help="output root (default: runs)")
    p.add_argument("--run-id", default=default, help="run directory name")
    p.add_argument("--set", action="append", default=default, metavar="KEY=VALUE",
                   help="config override, e.g. --set integration.variant=C (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", default=default)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vlaflow", description="Toy flow-matching vision-language-action policies.",
                     parents=[_global_flags(None)])
    sub_flags = _global_flags(argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[sub_flags], help="collect expert demonstrations")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--n", type=int, required=True, help="number of episodes")
    p.add_argument("--path", help="dataset path (default: <run>/demos-<task>.jsonl)")

    p = sub.add_parser("train", parents=[sub_flags], help="train a policy")
    p.add_argument("--data", required=True, help="dataset written by gen-data")
    p.add_argument("--stage", choices=["1", "2", "single", "two-stage"], default="two-stage")
    p.add_argument("--from", dest="from_ckpt", help="checkpoint to continue from (required for --stage 2)")
    p.add_argument("--steps", type=int, help="stop after this many further steps")

    p = sub.add_parser("eval", parents=[sub_flags], help="closed-loop evaluation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--replan-every", type=int, default=None)

    p = sub.add_parser("ablate", parents=[sub_flags], help="integration-variant ablation")
    p.add_argument("--tasks", type=_csv(str), default=["reach", "pickplace"])
    p.add_argument("--variants", type=_csv(str), default=list(VARIANTS))
    p.add_argument("--seeds", type=_csv(int), default=[0, 1, 2])
    p.add_argument("--demos", type=int, default=100)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--paradigms", action="store_true", help="also compare two-stage vs single-stage")

    p = sub.add_parser("bench", parents=[sub_flags], help="inference latency and memory")
    p.add_argument("--ckpt", help="checkpoint (default: freshly initialized model)")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--steps", type=_csv(int), default=None, help="sampler step counts, e.g. 5,10,20")

    p = sub.add_parser("inspect-attn", parents=[sub_flags], help="attention drift and heatmaps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ref", help="reference checkpoint (default: the initialization)")
    p.add_argument("--task", choices=TASKS, default="reach")
    p.add_argument("--n-probe", type=int, default=8)
    p.add_argument("--layer", type=int, default=None, help="backbone layer (default: extraction layer)")
    return parser


def _overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve_config(args) -> RunConfig:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def run_dir(args, cfg: RunConfig) -> Path:
    run_id = args.run_id or cfg.run_id or f"{args.command}-s{cfg.seed}"
    path = Path(cfg.out_dir) / run_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _snapshot(out: Path, cfg: RunConfig, argv) -> None:
    _write_json(out / "config.json", cfg.to_dict())
    _write_json(out / "command.json", {"argv": list(argv)})


def _load(path):
    from .checkpoint import load_checkpoint

    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_gen_data(args, cfg, out):
    from .env import generate_demos

    if args.n < 1:
        raise UsageError("--n must be >= 1")
    path = Path(args.path) if args.path else out / f"demos-{args.task}.jsonl"
    ds = generate_demos(args.task, args.n, cfg.seed, path=path, h=cfg.chunk.h)
    summary = {"task": args.task, "episodes": ds.n_episodes, "tuples": len(ds), "seed": cfg.seed,
               "path": str(path)}
    _write_json(out / "gen-data.json", summary)
    print(f"wrote {ds.n_episodes} episodes / {len(ds)} tuples to {path}")


def _probe(dataset, seed: int, size: int = 16):
    idx = Rng(seed, (PROBE_STREAM,)).permutation(len(dataset))[:size]
    return dataset.images[idx], dataset.instructions[idx]


def cmd_train(args, cfg, out):
    from .checkpoint import save_checkpoint
    from .env import load_demos
    from .trainer import Trainer, attention_similarity, prepare

    data = load_demos(args.data)
    manifest = out / "manifest.jsonl"
    if args.stage == "2":
        if not args.from_ckpt:
            raise UsageError("--stage 2 requires --from <stage-1 checkpoint>")
        ckpt = _load(args.from_ckpt)
        model = ckpt.model
        cfg = model.config
        if not ckpt.trainer_state or ckpt.trainer_state.get("stage") != "1":
            raise UsageError("--from must point at a Stage-1 checkpoint")
        trainer = Trainer.resume(model, data, ckpt.trainer_state, manifest)
        stages = ["2"]
    else:
        if args.from_ckpt:
            raise UsageError("--from is only valid with --stage 2")
        cfg = cfg.with_overrides({"chunk.h": int(data.actions.shape[1]), "action.dim": data.d_action,
                                  "state.dim": data.d_state}).validate()
        model = prepare(VLAModel.initialize(cfg, cfg.seed), data)
        stage = "single" if args.stage == "single" else "1"
        trainer = Trainer(model, data, cfg.seed, manifest, stage=stage)
        stages = {"1": ["1"], "single": ["single"], "two-stage": ["1", "2"]}[args.stage]
    _snapshot(out, cfg, args.argv)
    with open(manifest, "a") as f:
        f.write(json.dumps({"record": "run", "n_params": count_params(cfg), "stages": stages,
                            "data": str(args.data), "seed": cfg.seed}, sort_keys=True) + "\n")
    for stage in stages:
        trainer.run(stage, args.steps)
        log.info("stage %s done at step %d, loss %.4f", stage, trainer.step,
                 trainer.history[-1].loss if trainer.history else float("nan"))
    tag = {"1": "stage1", "2": "stage2", "single": "single"}[stages[-1]]
    ckpt_path = out / f"{tag}.ckpt"
    digest = save_checkpoint(model, ckpt_path, trainer.state())
    images, instr = _probe(data, cfg.seed)
    sim = attention_similarity(VLAModel.initialize(cfg, cfg.seed), model, images, instr)
    summary = {"record": "summary", "checkpoint": str(ckpt_path), "content_hash": f"{digest:016x}",
               "step": trainer.step, "final_loss": trainer.history[-1].loss if trainer.history else None,
               "attention_similarity_to_init": {str(k): v for k, v in sim.items()}}
    with open(manifest, "a") as f:
        f.write(json.dumps(summary, sort_keys=True) + "\n")
    print(f"trained to step {trainer.step}; checkpoint {ckpt_path} ({digest:016x})")


def cmd_eval(args, cfg, out):
    from .env import evaluate
    from .estimator import FlowVLAPolicy

    model = _load(args.ckpt).model
    _snapshot(out, model.config, args.argv)
    result = evaluate(FlowVLAPolicy.from_model(model), args.task, args.trials, cfg.seed, args.replan_every)
    with open(out / "eval.jsonl", "w") as f:
        for ep in result.episodes:
            f.write(json.dumps(ep, sort_keys=True) + "\n")
    _write_json(out / "eval.json", {"task": args.task, "trials": args.trials, "seed": cfg.seed,
                                    "replan_every": args.replan_every, "success_rate": result.success_rate,
                                    "checkpoint": str(args.ckpt)})
    print(f"{args.task}: success {result.success_rate:.3f} over {args.trials} trials")


def cmd_ablate(args, cfg, out):
    from .bench import ablate_integration, compare_training_paradigms

    bad = [v for v in args.variants if v not in VARIANTS] + [t for t in args.tasks if t not in TASKS]
    if bad:
        raise UsageError(f"unknown variants/tasks: {bad}")
    _snapshot(out, cfg, args.argv)
    table = ablate_integration(args.tasks, args.variants, args.seeds, cfg, args.demos, args.trials,
                               data_seed=cfg.seed, out_dir=out, log=lambda r: log.info("%s", r))
    print(table.to_text(), end="")
    if args.paradigms:
        with open(out / "paradigms.jsonl", "w") as f:
            for task in args.tasks:
                for row in compare_training_paradigms(task, args.seeds, cfg, args.demos, args.trials,
                                                      data_seed=cfg.seed):
                    f.write(json.dumps(row, sort_keys=True) + "\n")
                    print(f"{row['task']:<10}{row['paradigm']:<10} seed {row['seed']}: "
                          f"success {row['success_rate']:.3f}, similarity {row['similarity']:.4f}")


def cmd_bench(args, cfg, out):
    from .bench import benchmark_inference

    if args.iters < 10:
        raise UsageError("--iters must be >= 10")
    model = _load(args.ckpt).model if args.ckpt else VLAModel.initialize(cfg, cfg.seed)
    _snapshot(out, model.config, args.argv)
    reports = []
    for steps in args.steps or [model.config.sampler.steps]:
        rep = benchmark_inference(model, args.warmup, args.iters, steps, seed=cfg.seed,
                                  model_id=str(args.ckpt or "init"))
        reports.append(rep.to_dict())
        print(f"S={steps:>3}: mean {rep.mean_ms:.2f} ms, median {rep.median_ms:.2f} ms, "
              f"{rep.frequency_hz:.1f} Hz, peak {rep.peak_memory_mb:.0f} MB ({rep.memory_method})")
    _write_json(out / "bench.json", reports)


def cmd_inspect_attn(args, cfg, out):
    from .bench import dump_attention_pgm
    from .env import reset
    from .trainer import attention_similarity

    model = _load(args.ckpt).model
    ref = _load(args.ref).model if args.ref else VLAModel.initialize(model.config, model.config.seed)
    _snapshot(out, model.config, args.argv)
    obs = [reset(args.task, cfg.seed + i) for i in range(args.n_probe)]
    images = np.stack([o[1] for o in obs])
    instr = np.stack([o[2] for o in obs])
    sim = attention_similarity(ref, model, images, instr)
    layer = args.layer or model.config.backbone.extract_layer
    if layer not in sim:
        raise UsageError(f"layer {layer} not in retained layers {sorted(sim)}")
    for name, m in (("model", model), ("ref", ref)):
        amap = m.attention_maps(images[:1], instr[:1], layer)[0]
        for view in range(images.shape[1]):
            dump_attention_pgm(amap, images[0, view], out / "attn" / f"{name}-L{layer}-view{view}.pgm", view=view)
    report = {"layer": layer, "drift": 1.0 - sim[layer], "similarity": sim[layer],
              "similarity_per_layer": {str(k): v for k, v in sim.items()},
              "checkpoint": str(args.ckpt), "reference": str(args.ref or "initialization")}
    _write_json(out / "attention.json", report)
    print(f"layer {layer}: similarity {sim[layer]:.4f} (drift {1 - sim[layer]:.4f}); heatmaps in {out / 'attn'}")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "bench": cmd_bench, "inspect-attn": cmd_inspect_attn}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = run_dir(args, cfg)
        args.argv = argv
        _snapshot(out, cfg, argv)
        COMMANDS[args.command](args, cfg, out)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"vlaflow {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VLAError, CheckpointError) as exc:
        print(f"vlaflow {args.command}: aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
