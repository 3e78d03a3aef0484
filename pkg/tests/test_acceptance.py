"""Acceptance suite: one test per criterion, each printing a PASS/FAIL verdict line.

Run on its own with ``pytest tests/test_acceptance.py -v -s`` or as a script.
Criteria 6 and 8 train real policies and take most of the runtime.
"""
import json
import math
import time
import warnings

import numpy as np
import pytest
import torch

import conftest
from conftest import SMALL, randomize, small_config, tiny_config, tiny_inputs
from oracles import finite_difference_grads, max_relative_error
from vlaflow import FlowVLAPolicy, RunConfig
from vlaflow.action_expert import block_kinds
from vlaflow.bench import BenchReport, ablate_integration, compare_training_paradigms
from vlaflow.checkpoint import from_bytes, load_checkpoint, save_checkpoint, to_bytes
from vlaflow.cli import main as cli_main
from vlaflow.env import generate_demos, reset
from vlaflow.errors import CheckpointError
from vlaflow.flow import TAU_CLAMP, euler_integrate, flow_target, interpolate, sample_tau
from vlaflow.model import VLAModel
from vlaflow.nn.autograd import backward
from vlaflow.nn.rng import Rng
from vlaflow.trainer import Trainer, attention_drift, prepare


def verdict(capsys, number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" | {detail}" if detail else "")
    conftest.ACCEPTANCE.append(line)
    with capsys.disabled():
        print("\n" + line, flush=True)
    assert ok, line


# 1 -------------------------------------------------------------------------------

def test_criterion_01_gradient_check(capsys):
    t0 = time.perf_counter()
    images, instr, states, actions, eps, tau = tiny_inputs(5)
    worst = (0.0, "")
    for variant in "ABCD":
        model = VLAModel.initialize(tiny_config(variant), 5, torch.float64)
        randomize(model.store, 5)

        def loss():
            return model.loss(images, instr, states, actions, tau, eps)

        analytic = backward(loss(), model.store)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            numeric = finite_difference_grads(loss, model.store)
        err, name = max_relative_error(analytic, numeric)
        worst = max(worst, (err, f"{variant}:{name}"))
    sec = time.perf_counter() - t0
    verdict(capsys, 1, "analytic vs finite-difference gradients (float64, tiny pipeline, all variants)",
            worst[0] < 1e-5 and sec < 60, f"max rel err {worst[0]:.2e} at {worst[1]}, {sec:.1f}s")


# 2 -------------------------------------------------------------------------------

def test_criterion_02_flow_identities(capsys):
    g = np.random.default_rng(0)
    a = torch.from_numpy(g.normal(size=(10_000, 8, 3)))
    e = torch.from_numpy(g.normal(size=(10_000, 8, 3)))
    tau = torch.from_numpy(g.uniform(0, 1, 10_000))
    ends = (torch.equal(interpolate(a, e, torch.zeros(10_000, dtype=torch.float64)), e)
            and torch.equal(interpolate(a, e, torch.ones(10_000, dtype=torch.float64)), a))
    recon = interpolate(a, e, tau) + (1 - tau)[:, None, None] * flow_target(a, e)
    gap = float((recon - a).abs().max())
    # e + (a - e) equals a up to one rounding per element
    one_step = euler_integrate(lambda x, t: a - e, e, 1)
    step_err = float((one_step - a).abs().max())
    verdict(capsys, 2, "interpolation endpoints, target identity over 10^4 triples, one-step Euler",
            ends and gap < 1e-6 and step_err < 1e-12,
            f"endpoints bitwise={ends}, identity gap {gap:.1e}, one-step err {step_err:.1e}")


# 3 -------------------------------------------------------------------------------

def test_criterion_03_euler_convergence(capsys):
    a0 = torch.tensor([1.0, -0.5, 2.0], dtype=torch.float64)
    exact = a0 * math.exp(-1.0)

    def err(n):
        return float((euler_integrate(lambda a, t: -a, a0, n) - exact).abs().max())

    ratios = {s: err(s) / err(2 * s) for s in (5, 10, 20)}
    verdict(capsys, 3, "Euler error ratio S vs 2S on v=-A within [1.7, 2.3]",
            all(1.7 <= r <= 2.3 for r in ratios.values()),
            ", ".join(f"S={s}: {r:.3f}" for s, r in ratios.items()))


# 4 -------------------------------------------------------------------------------

def test_criterion_04_tau_sampling(capsys):
    cfg = RunConfig()
    t = sample_tau(Rng(0), cfg.flow.beta_alpha, cfg.flow.beta_beta, 1_000_000)
    in_range = bool(t.min() >= TAU_CLAMP[0] and t.max() <= TAU_CLAMP[1])
    u = sample_tau(Rng(1), 1.0, 1.0, 1_000_000)
    verdict(capsys, 4, "10^6 tau draws inside the clamp, Beta(1,1) mean 0.5 +- 0.005",
            in_range and abs(u.mean() - 0.5) <= 0.005,
            f"range [{t.min():.3f}, {t.max():.3f}], Beta(1,1) mean {u.mean():.5f}")


# 5 -------------------------------------------------------------------------------

def test_criterion_05_stage1_freeze(capsys):
    data = generate_demos("reach", 10, 5)
    cfg = RunConfig().with_overrides({"train.stage1_steps": 500}).validate()
    init = prepare(VLAModel.initialize(cfg, 0), data)
    model = prepare(VLAModel.initialize(cfg, 0), data)
    images, instr = data.images[:8], data.instructions[:8]
    digest0 = model.backbone_digest()
    layers = range(1, cfg.backbone.extract_layer + 1)
    maps0 = [m.weights for layer in layers for m in model.attention_maps(images, instr, layer)]
    Trainer(model, data).run("1")
    maps1 = [m.weights for layer in layers for m in model.attention_maps(images, instr, layer)]
    same_maps = all(np.array_equal(x, y) for x, y in zip(maps0, maps1))
    drift = attention_drift(init, model, images, instr)
    ok = model.backbone_digest() == digest0 and same_maps and drift == 1.0
    verdict(capsys, 5, "500 Stage-1 steps leave backbone bytes and attention maps untouched",
            ok, f"hash unchanged={model.backbone_digest() == digest0}, maps bitwise={same_maps}, "
                f"similarity={drift!r}")


# 6 -------------------------------------------------------------------------------

def _train_and_eval(task, n_demos, seed=0):
    data = generate_demos(task, n_demos, seed + 1)
    t0 = time.perf_counter()
    est = FlowVLAPolicy(seed=seed).fit(data)
    rate = est.evaluate(task, 50, 1000 + seed).success_rate
    # determinism: a fresh run reproduces the first training steps bit for bit
    model = prepare(VLAModel.initialize(est.to_config().with_overrides(
        {"action.dim": data.d_action, "state.dim": data.d_state}), seed), data)
    head = [r.loss for r in Trainer(model, data, seed).run("1", steps=10).history]
    return rate, time.perf_counter() - t0, head == est.loss_curve_[:10]


@pytest.mark.slow
def test_criterion_06_end_to_end_learning(capsys):
    reach, t_reach, det_reach = _train_and_eval("reach", 50)
    pick, t_pick, det_pick = _train_and_eval("pickplace", 100)
    total = t_reach + t_pick
    verdict(capsys, 6, "default budget: Reach >= 0.90 (50 demos), PickPlace >= 0.70 (100 demos), <= 15 min",
            reach >= 0.9 and pick >= 0.7 and total <= 900 and det_reach and det_pick,
            f"reach {reach:.2f} ({t_reach:.0f}s), pickplace {pick:.2f} ({t_pick:.0f}s), "
            f"total {total / 60:.1f} min, deterministic={det_reach and det_pick}")


# 7 -------------------------------------------------------------------------------

def test_criterion_07_architecture(capsys):
    _, obs, instr = reset("reach", 0)
    facts = {}
    for variant in "ABCD":
        cfg = RunConfig().with_overrides({"integration.variant": variant}).validate()
        model = VLAModel.initialize(cfg, 0)
        enc = model.encode(obs, instr)
        s_tok = model.state_token(np.zeros((1, cfg.state.dim)))
        trace = []
        model.velocity(torch.zeros(1, cfg.chunk.h, cfg.action.dim), 0.5, enc, s_tok, trace=trace)
        kinds = [c.kind for c in trace]
        if variant == "A":
            facts["A"] = kinds == ["cross"] * cfg.dit.depth and all("actions" not in c.keys for c in trace)
        elif variant == "B":
            facts["B"] = kinds == block_kinds("B", cfg.dit.depth) == ["cross", "self"] * (cfg.dit.depth // 2)
        elif variant == "C":
            layers = model.bundle(enc, s_tok).source_layers
            facts["C"] = len(layers) == len(set(layers)) == cfg.dit.depth
        else:
            t = enc.states[0].shape[1]
            tokens = torch.zeros(1, cfg.chunk.h, cfg.dit.width)
            bundle = model.bundle(enc, s_tok, tokens)
            facts["D"] = bundle.kv[0].shape[1] == t + 1 + cfg.chunk.h
    verdict(capsys, 7, "A has no action self-attention, B alternates, C uses depth distinct layers, D is T+1+H",
            all(facts.values()), ", ".join(f"{k}={v}" for k, v in facts.items()))


# 8 -------------------------------------------------------------------------------

ABLATION_BUDGET = {**SMALL, "train.stage1_steps": 300, "train.stage2_steps": 300}


@pytest.mark.slow
def test_criterion_08_ablation_harness(capsys, tmp_path):
    cfg = RunConfig().with_overrides(ABLATION_BUDGET).validate()
    table = ablate_integration(["pickplace"], list("ABCD"), [0, 1, 2], cfg, n_demos=30, trials=20,
                               out_dir=tmp_path)
    agg = table.aggregate()
    csv = (tmp_path / "ablation.csv").read_text().splitlines()
    well_formed = (len(table.rows) == 12 and len(csv) == 13
                   and all(r.steps_trained == 600 for r in table.rows if r.status == "ok"))
    means = {v: agg[(v, "pickplace")][0] for v in "ABCD"}
    rows = compare_training_paradigms("reach", [0, 1, 2], cfg, n_demos=30, trials=20)
    sim = {p: float(np.mean([r["similarity"] for r in rows if r["paradigm"] == p])) for p in ("two-stage", "single")}
    (tmp_path / "paradigms.json").write_text(json.dumps(rows))
    a_best = all(means["A"] >= means[v] for v in "BCD")
    verdict(capsys, 8, "ablation over A-D x 3 seeds on PickPlace emits a table; directions recorded",
            well_formed,
            "mean success " + " ".join(f"{v}={m:.2f}" for v, m in means.items())
            + f"; A>=others {a_best}; attention similarity two-stage {sim['two-stage']:.4f} "
              f"vs single {sim['single']:.4f} (single drifts more: {sim['single'] < sim['two-stage']})")


# 9 -------------------------------------------------------------------------------

def test_criterion_09_determinism_and_persistence(capsys, tmp_path, reach_demos):
    cfg = small_config(**{"train.stage1_steps": 60, "train.stage2_steps": 80, "train.warmup": 10})

    def run(k=None):
        model = prepare(VLAModel.initialize(cfg, 7), reach_demos)
        tr = Trainer(model, reach_demos, 7)
        if k is None:
            tr.run("1").run("2")
        else:
            tr.run("1", steps=k)
        return model, tr

    a, _ = run()
    b, _ = run()
    same_hash = save_checkpoint(a, tmp_path / "a.ckpt") == save_checkpoint(b, tmp_path / "b.ckpt")
    # interrupt after 40 steps, save, reload, and train the remaining 100 steps
    part, tr = run(40)
    save_checkpoint(part, tmp_path / "p.ckpt", tr.state())
    ck = load_checkpoint(tmp_path / "p.ckpt")
    resumed = Trainer.resume(ck.model, reach_demos, ck.trainer_state).run("1").run("2")
    resume_ok = len(resumed.history) == 100 and to_bytes(resumed.model) == to_bytes(a)
    data = (tmp_path / "p.ckpt").read_bytes()
    refused = 0
    for bad in (b"X" + data[1:], data[:-3], data[:200] + bytes([data[200] ^ 1]) + data[201:]):
        try:
            from_bytes(bad)
        except CheckpointError:
            refused += 1
    verdict(capsys, 9, "identical runs hash equal, resume matches for 100 steps, corruption refused",
            same_hash and resume_ok and refused == 3,
            f"hash equal={same_hash}, resume bitwise={resume_ok}, corrupted refused {refused}/3")


# 10 ------------------------------------------------------------------------------

def test_criterion_10_bench_report(capsys, tmp_path):
    code = cli_main(["bench", "--out", str(tmp_path), "--run-id", "b", "--iters", "30", "--warmup", "3",
                     "--steps", "5,10,20"])
    reports = json.loads((tmp_path / "b" / "bench.json").read_text())
    schema = all(set(r) == set(BenchReport.__dataclass_fields__) for r in reports)
    lat = [r["mean_ms"] for r in reports]
    mono = [r["sampler_steps"] for r in reports] == [5, 10, 20] and lat[0] < lat[1] < lat[2]
    verdict(capsys, 10, "bench writes the documented schema; latency rises with sampler steps",
            code == 0 and schema and mono,
            "mean ms " + ", ".join(f"S={r['sampler_steps']}: {r['mean_ms']:.1f}" for r in reports)
            + f", {reports[0]['frequency_hz']:.1f} Hz, peak {reports[0]['peak_memory_mb']:.0f} MB")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
