"""Inference benchmarking, ablation tables, and attention-map export."""
from __future__ import annotations

import csv
import io
import json
import platform
import resource
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .env import evaluate, generate_demos, reset
from .errors import TrainingDivergedError
from .model import VLAModel, count_params
from .nn.rng import Rng
from .trainer import Trainer, attention_similarity, prepare

BENCH_STREAM = 7
TIMING_SCOPE = "policy only: observation -> full H-step chunk (backbone + all Euler steps); env stepping excluded"


@dataclass
class BenchReport:
    model_id: str
    n_params: int
    mean_ms: float
    median_ms: float
    frequency_hz: float
    peak_memory_mb: float
    memory_method: str
    sampler_steps: int
    n_warmup: int
    n_iters: int
    hardware: str
    timing_scope: str = TIMING_SCOPE

    def to_dict(self) -> dict:
        return asdict(self)


def hardware_descriptor() -> str:
    return (f"{platform.machine()} {platform.processor() or 'cpu'}; torch {torch.__version__}; "
            f"threads={torch.get_num_threads()}")


def peak_rss_mb() -> float:
    """Process resident-set high-water mark (Linux reports KiB)."""
    kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return kb / 1024.0 if platform.system() != "Darwin" else kb / 2**20


def benchmark_inference(model: VLAModel, n_warmup: int = 5, n_iters: int = 100, steps: int | None = None,
                        task: str = "reach", seed: int = 0, model_id: str = "") -> BenchReport:
    """Time full chunk predictions on a fixed observation."""
    if n_iters < 10:
        raise ValueError(f"n_iters must be >= 10, got {n_iters}")
    steps = steps or model.config.sampler.steps
    state, obs, instr = reset(task, seed)
    robot = state.robot_state()
    rng = Rng(seed, (BENCH_STREAM,))
    for _ in range(n_warmup):
        model.predict(obs, instr, robot, rng, steps)
    times = []
    for _ in range(n_iters):
        t0 = time.perf_counter()
        model.predict(obs, instr, robot, rng, steps)
        times.append((time.perf_counter() - t0) * 1e3)
    mean = statistics.fmean(times)
    return BenchReport(
        model_id=model_id or f"variant-{model.variant}", n_params=model.store.count(),
        mean_ms=mean, median_ms=statistics.median(times), frequency_hz=1000.0 / mean,
        peak_memory_mb=peak_rss_mb(), memory_method="os-rss-high-water (getrusage ru_maxrss)",
        sampler_steps=steps, n_warmup=n_warmup, n_iters=n_iters, hardware=hardware_descriptor())


@dataclass
class AblationRow:
    variant: str
    seed: int
    task: str
    success_rate: float
    steps_trained: int
    status: str = "ok"


@dataclass
class AblationTable:
    rows: list = field(default_factory=list)
    budget: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        """``{(variant, task): (mean, std, n)}`` over successful runs."""
        out = {}
        for key in sorted({(r.variant, r.task) for r in self.rows}):
            vals = [r.success_rate for r in self.rows if (r.variant, r.task) == key and r.status == "ok"]
            mean = statistics.fmean(vals) if vals else float("nan")
            std = statistics.pstdev(vals) if len(vals) > 1 else 0.0
            out[key] = (mean, std, len(vals))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "seed", "task", "success_rate", "steps_trained", "status"])
        for r in self.rows:
            w.writerow([r.variant, r.seed, r.task, f"{r.success_rate:.4f}", r.steps_trained, r.status])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'variant':<8}{'task':<11}{'seed':>5}{'success':>10}{'steps':>8}  status"]
        for r in self.rows:
            lines.append(f"{r.variant:<8}{r.task:<11}{r.seed:>5}{r.success_rate:>10.3f}{r.steps_trained:>8}  {r.status}")
        lines.append("")
        lines.append(f"{'variant':<8}{'task':<11}{'mean':>8}{'std':>8}{'n':>4}")
        for (variant, task), (mean, std, n) in self.aggregate().items():
            lines.append(f"{variant:<8}{task:<11}{mean:>8.3f}{std:>8.3f}{n:>4}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(self.to_csv())
        (out / "ablation.txt").write_text(self.to_text())
        with open(out / "ablation.jsonl", "w") as f:
            f.write(json.dumps({"record": "budget", **self.budget}, sort_keys=True) + "\n")
            for r in self.rows:
                f.write(json.dumps(asdict(r), sort_keys=True) + "\n")
        return out


def ablate_integration(tasks, variants, seeds, config: RunConfig | None = None, n_demos: int = 100,
                       trials: int = 50, data_seed: int = 0, eval_seed: int = 1000,
                       out_dir=None, log=None) -> AblationTable:
    """Train and evaluate every (task, variant, seed) cell on identical data and budget."""
    base = config or RunConfig()
    budget = {"stage1_steps": base.train.stage1_steps, "stage2_steps": base.train.stage2_steps,
              "batch_size": base.train.batch_size, "n_demos": n_demos, "trials": trials,
              "data_seed": data_seed, "eval_seed": eval_seed}
    table = AblationTable(budget=budget)
    for task in tasks:
        data = generate_demos(task, n_demos, data_seed, h=base.chunk.h)
        for variant in variants:
            for seed in seeds:
                cfg = base.with_overrides({"integration.variant": variant, "seed": seed}).validate()
                model = prepare(VLAModel.initialize(cfg, seed), data)
                trainer = Trainer(model, data, seed)
                try:
                    trainer.run("1").run("2")
                    from .estimator import FlowVLAPolicy

                    rate = evaluate(FlowVLAPolicy.from_model(model), task, trials, eval_seed).success_rate
                    row = AblationRow(variant, seed, task, rate, len(trainer.history))
                except TrainingDivergedError as exc:
                    row = AblationRow(variant, seed, task, 0.0, len(trainer.history), f"failed: {exc}")
                table.rows.append(row)
                if log:
                    log(row)
    if out_dir is not None:
        table.write(out_dir)
    return table


def compare_training_paradigms(task: str, seeds, config: RunConfig | None = None, n_demos: int = 100,
                               trials: int = 50, data_seed: int = 0, eval_seed: int = 1000,
                               probe_size: int = 16, log=None) -> list[dict]:
    """Two-stage vs single-stage on identical data: success and attention preservation.

    ``similarity`` is the extraction-layer attention similarity between the
    trained backbone and its initialization on a probe batch (1.0 = unchanged).
    """
    from .estimator import FlowVLAPolicy

    base = config or RunConfig()
    data = generate_demos(task, n_demos, data_seed, h=base.chunk.h)
    probe = Rng(data_seed, (BENCH_STREAM, 1)).permutation(len(data))[:probe_size]
    images, instr = data.images[probe], data.instructions[probe]
    rows = []
    for seed in seeds:
        cfg = base.with_overrides({"seed": seed}).validate()
        for paradigm in ("two-stage", "single"):
            init = VLAModel.initialize(cfg, seed)
            model = prepare(VLAModel.initialize(cfg, seed), data)
            if paradigm == "single":
                Trainer(model, data, seed, stage="single").run("single")
            else:
                Trainer(model, data, seed).run("1").run("2")
            sim = attention_similarity(init, model, images, instr)
            rate = evaluate(FlowVLAPolicy.from_model(model), task, trials, eval_seed).success_rate
            row = {"task": task, "seed": seed, "paradigm": paradigm, "success_rate": rate,
                   "similarity": sim[cfg.backbone.extract_layer],
                   "similarity_per_layer": {str(k): v for k, v in sim.items()}}
            rows.append(row)
            if log:
                log(row)
    return rows


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != magic or int(fields[3]) != 255:
        raise ValueError(f"{path} is not an 8-bit {magic.decode()} file")
    w, h = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + w * h * channels], dtype=np.uint8)
    return pixels.reshape((h, w, channels) if channels > 1 else (h, w))


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def attention_heatmap(attn_map, view: int = 0, query: int = -1, size: int = 32) -> np.ndarray:
    """Attention of one query over a view's image tokens, upsampled to ``size``.

    Returns uint8 intensities: min-max scaled, or constant 128 when the
    attention over the view is uniform.
    """
    cols = attn_map.image_columns(view)
    if len(cols) == 0:
        raise ValueError(f"attention map has no image keys for view {view}")
    row = np.asarray(attn_map.weights[query, cols], dtype=np.float64)
    side = int(round(len(cols) ** 0.5))
    grid = torch.from_numpy(row.reshape(1, 1, side, side))
    up = torch.nn.functional.interpolate(grid, size=(size, size), mode="bilinear", align_corners=False)
    up = up[0, 0].numpy()
    lo, hi = up.min(), up.max()
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        return np.full((size, size), 128, dtype=np.uint8)
    return np.round((up - lo) / (hi - lo) * 255.0).astype(np.uint8)


def dump_attention_pgm(attn_map, image: np.ndarray, path, view: int = 0, query: int = -1) -> np.ndarray:
    """Write the heatmap as PGM and a side-by-side ``.ppm`` composite with ``image``."""
    size = image.shape[0]
    heat = attention_heatmap(attn_map, view, query, size)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(path, heat)
    rgb = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    composite = np.concatenate([rgb, np.repeat(heat[..., None], 3, axis=-1)], axis=1)
    write_ppm(path.with_suffix(".composite.ppm"), composite)
    return heat


def param_report(config: RunConfig) -> dict:
    return {"n_params": count_params(config), "variant": config.integration.variant}
