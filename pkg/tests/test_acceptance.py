"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that the terminal summary prints as
``criterion N: PASS|FAIL``.  Criteria 5 and 6 train at desk scale and take
several minutes; set ``OIR_SKIP_TRAINING=1`` to skip them while iterating.
"""
import math
import os
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import VERDICTS
from fixtures import EXAMPLE_ANSWER
from oir import config as rc
from oir import textual as tx
from oir.cli import main
from oir.evalkit import aggregate_score
from oir.instruction_buffer import FAILING, LEARNING, MASTERED, Instruction, InstructionBuffer, record_return, status
from oir.learner import train as tr
from oir.learner.network import QNetwork
from oir.learner.qlearning import lambda_returns
from oir.relabeler import parse_response
from oir.reward import first_passage, relabel_texts, step_rewards
from oir.trajectory import Trajectory, TrajectoryStep

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = (0, 1, 2)
skip_training = pytest.mark.skipif(os.environ.get("OIR_SKIP_TRAINING") == "1", reason="OIR_SKIP_TRAINING=1")

# pinned tolerances
AGG_TOL = 1e-9
COLLAPSE_TOL = 1e-12
CHI2_P_MIN = 0.01
FD_REL_TOL = 1e-4
FD_STEP = 1e-5
LAMBDA_TOL = 1e-10
GT_SUCCESS_MIN = 0.8
GT_SEEDS_NEEDED = 2
OIR_STRICT_WINS_NEEDED = 2


def verdict(n: int, ok: bool, detail: str) -> None:
    VERDICTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# -- 1 --------------------------------------------------------------------------

def test_criterion_1_aggregate_formula():
    rng = np.random.default_rng(1)
    two = aggregate_score([1.0, 0.0])
    ok = abs(two - (math.sqrt(2) - 1)) < AGG_TOL
    for s in rng.random(100):
        ok &= abs(aggregate_score([s] * 7) - s) < COLLAPSE_TOL
    amgm = 0
    for _ in range(1000):
        rates = rng.random(rng.integers(1, 30))
        if rng.random() < 0.2:
            rates[rng.random(rates.size) < 0.5] = 0.0
        amgm += aggregate_score(rates) <= float(np.mean(rates)) + 1e-15
    ok &= amgm == 1000
    verdict(1, ok, f"agg([1,0])={two:.10f}, collapse within {COLLAPSE_TOL}, AM-GM held {amgm}/1000")


# -- 2 --------------------------------------------------------------------------

def _insert_scenarios() -> bool:
    buf = InstructionBuffer(3)
    buf.seed(["A", "B", "C"])
    buf.insert_batch([Instruction("X", mean_return=0.3, seen_count=1), Instruction("Y", seen_count=1)])
    first = [e.text for e in buf.slots] == ["X", "Y", "C"] and buf.cursor == 2
    before = buf.dumps()
    buf.insert_batch([])
    second = buf.dumps() == before
    buf = InstructionBuffer(3)
    cands = [Instruction(t, mean_return=r, seen_count=n)
             for t, r, n in [("m", 0.95, 3), ("f2", 0.0, 4), ("l", 0.5, 1), ("f1", 0.0, 1), ("l2", 0.2, 7)]]
    buf.insert_batch(cands)
    third = sorted(e.text for e in buf.entries) == ["f1", "l", "l2"]
    return first and second and third


def test_criterion_2_buffer():
    table = all(status(Instruction("x", mean_return=r), 0.1, 0.9) == want
                for r, want in [(0.1, FAILING), (0.9, LEARNING), (0.1000001, LEARNING), (0.9000001, MASTERED),
                                (0.0, FAILING), (1.0, MASTERED)])
    scenarios = _insert_scenarios()
    rng = np.random.default_rng(2)
    vocab = [f"i{k}" for k in range(25)]
    capacity_ok = True
    for _ in range(10_000):
        buf = InstructionBuffer(int(rng.integers(1, 8)))
        for _ in range(int(rng.integers(1, 5))):
            op = rng.integers(3)
            if op == 0:
                n = int(rng.integers(0, 10))
                buf.insert_batch([Instruction(vocab[rng.integers(25)], mean_return=float(rng.random()),
                                              seen_count=int(rng.integers(0, 5))) for _ in range(n)])
            elif op == 1 and len(buf):
                buf.record(buf.sample(rng).text, float(rng.integers(2)))
            else:
                buf.seed(vocab[: int(rng.integers(1, 25))])
            capacity_ok &= len(buf) <= buf.capacity and 0 <= buf.cursor < buf.capacity
    buf = InstructionBuffer(10)
    buf.seed(["a", "b", "c", "d"])
    srng = np.random.default_rng(3)
    draws = [buf.sample(srng).text for _ in range(40_000)]
    p = chisquare([draws.count(t) for t in "abcd"]).pvalue
    mean = Instruction("x")
    for v in [1, 1, 0, 0, 1]:
        mean = record_return(mean, v)
    ok = table and scenarios and capacity_ok and p > CHI2_P_MIN and abs(mean.mean_return - 0.6) < 1e-12
    verdict(2, ok, f"status table {table}, insert scenarios {scenarios}, capacity over 10000 sequences "
                   f"{capacity_ok}, chi-square p={p:.3f}")


# -- 3 --------------------------------------------------------------------------

WORDS = ("collect wood stone coal iron diamond drink sapling place table furnace plant make "
         "wooden pickaxe sword eat cow defeat zombie skeleton no change gained lost attempt failed").split()


def test_criterion_3_reward():
    rng = np.random.default_rng(4)
    bounded = passage = monotone = 0
    for _ in range(1000):
        texts = [" ".join(rng.choice(WORDS, rng.integers(1, 6))) for _ in range(rng.integers(1, 12))]
        if rng.random() < 0.3:
            instr = texts[rng.integers(len(texts))]
        else:
            instr = " ".join(rng.choice(WORDS, rng.integers(1, 4)))
        r = step_rewards(texts, instr)
        bounded += bool(((r >= -1) & (r <= 1)).all())
        s = relabel_texts(texts, instr, 0.9)
        idx = first_passage(r, 0.9)
        passage += (s.termination_index == idx and (idx is None or (r[idx] > 0.9 and (r[:idx] <= 0.9).all()))
                    and len(s) == (idx + 1 if idx is not None else len(texts)))
        lo, hi = relabel_texts(texts, instr, 0.5), relabel_texts(texts, instr, 0.9)
        monotone += (not hi.done) or (lo.done and lo.termination_index <= hi.termination_index)
    strict = first_passage(np.array([0.9]), 0.9) is None and first_passage(np.array([0.9 + 1e-9]), 0.9) == 0
    ok = bounded == passage == monotone == 1000 and strict
    verdict(3, ok, f"bounded {bounded}/1000, first-passage {passage}/1000, monotone 0.5 vs 0.9 {monotone}/1000, "
                   f"strict at r=delta {strict}")


# -- 4 --------------------------------------------------------------------------

def _fd_check(net, rng) -> float:
    for k in net.params:
        net.params[k] += rng.normal(scale=0.3, size=net.params[k].shape)
    x = rng.normal(size=(6, net.in_dim))
    a = rng.integers(net.n_actions, size=6)
    t = rng.normal(size=6)
    _, grads = net.loss_and_grads(x, a, t)
    worst = 0.0
    names = net.param_names()
    for _ in range(10):
        k = names[rng.integers(len(names))]
        idx = tuple(rng.integers(s) for s in net.params[k].shape)
        orig = net.params[k][idx]
        net.params[k][idx] = orig + FD_STEP
        lp, _ = net.loss_and_grads(x, a, t)
        net.params[k][idx] = orig - FD_STEP
        lm, _ = net.loss_and_grads(x, a, t)
        net.params[k][idx] = orig
        fd, an = (lp - lm) / (2 * FD_STEP), grads[k][idx]
        worst = max(worst, abs(fd - an) / max(1e-6, abs(fd), abs(an)))
    return worst


def test_criterion_4_numerics():
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(50):
        net = QNetwork(obs_dim=int(rng.integers(2, 6)), emb_dim=int(rng.integers(1, 4)),
                       hidden=int(rng.choice([0, 3, 5, 8])), n_actions=int(rng.integers(2, 6)),
                       layer_norm=bool(i % 2), input_norm=False, dtype=np.float64, seed=i, head_scale=1.0)
        worst = max(worst, _fd_check(net, rng))
    lam_ok = True
    for _ in range(200):
        n = int(rng.integers(1, 10))
        r = rng.random(n)
        d = rng.random(n) < 0.2
        q = rng.random(n)
        one_step = np.where(d, r, r + 0.9 * q)
        lam_ok &= np.allclose(lambda_returns(r, d, q, 0.9, 0.0), one_step, atol=LAMBDA_TOL, rtol=0)
        mc, g = np.empty(n), q[-1]
        for t in range(n - 1, -1, -1):
            g = r[t] if d[t] else r[t] + 0.9 * (q[t] if t == n - 1 else g)
            mc[t] = g
        lam_ok &= np.allclose(lambda_returns(r, d, q, 0.9, 1.0), mc, atol=LAMBDA_TOL, rtol=0)
    verdict(4, worst < FD_REL_TOL and lam_ok,
            f"max finite-difference relative error {worst:.2e} over 50 nets, lambda 0/1 oracles {lam_ok}")


# -- 5 --------------------------------------------------------------------------

def _train(config: str, seed: int):
    cfg = rc.load(CONFIGS / config, [f"seed={seed}"])
    return tr.train(cfg.train, cfg.env, embedder=cfg.embedder)


@skip_training
def test_criterion_5_ground_truth_learning():
    rates = [_train("desk-ground-truth.yaml", s).report.rates[0] for s in SEEDS]
    hits = sum(r >= GT_SUCCESS_MIN for r in rates)
    verdict(5, hits >= GT_SEEDS_NEEDED,
            f"greedy collect-wood success per seed {rates}, {hits}/3 at or above {GT_SUCCESS_MIN}")


# -- 6 --------------------------------------------------------------------------

@skip_training
def test_criterion_6_oir_beats_cosine_baseline():
    oir = [_train("desk-oir.yaml", s).report.completed for s in SEEDS]
    base = [_train("desk-cosine.yaml", s).report.completed for s in SEEDS]
    never_worse = all(o >= b for o, b in zip(oir, base))
    strict = sum(o > b for o, b in zip(oir, base))
    verdict(6, never_worse and strict >= OIR_STRICT_WINS_NEEDED,
            f"completed instructions OIR {oir} vs cosine baseline {base}, strictly greater on {strict}/3")


# -- 7 --------------------------------------------------------------------------

def test_criterion_7_prompt_and_parse():
    traj = Trajectory([
        TrajectoryStep("Facing: tree; Nearby: nothing; Inventory: nothing; "
                       "Status: health 9, food 9, drink 9, energy 9, awake", "tree"),
        TrajectoryStep("Facing: tree; Nearby: nothing; Inventory: wood x1; "
                       "Status: health 9, food 9, drink 9, energy 9, awake", "tree"),
    ])
    expected_block = (
        "What instruction is this trajectory following?\n"
        "timestep 0: Facing: tree; Nearby: nothing; Inventory: nothing; "
        "Status: health 9, food 9, drink 9, energy 9, awake, agent takes action tree\n"
        "timestep 1: Facing: tree; Nearby: nothing; Inventory: wood x1; "
        "Status: health 9, food 9, drink 9, energy 9, awake, agent takes action tree"
    ).encode("utf-8")
    prompt = tx.build_prompt(traj).encode("utf-8")
    block_ok = tx.trajectory_block(traj).encode("utf-8") == expected_block and prompt.endswith(expected_block)
    preamble_ok = prompt.startswith(b"Description in Crafter:") and b"{{trajectory}}" not in prompt
    mid, high = parse_response(EXAMPLE_ANSWER)
    verdict(7, block_ok and preamble_ok and (len(mid), len(high)) == (4, 3),
            f"2-step block byte-identical {block_ok}, preamble {preamble_ok}, parsed {len(mid)} mid + {len(high)} high")


# -- 8 --------------------------------------------------------------------------

def test_criterion_8_reproducibility(tmp_path):
    smoke = str(CONFIGS / "smoke.yaml")
    ov = ["--total_timesteps=96", "--eval_every=32"]
    for name in ("a", "b"):
        assert main(["train", "--config", smoke, "--run-dir", str(tmp_path / name), *ov]) == 0
    same = (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    part = tmp_path / "part"
    assert main(["train", "--config", smoke, "--run-dir", str(part), "--stop-after", "1", *ov]) == 0
    assert main(["train", "--resume", str(part / "checkpoint.npz")]) == 0
    resumed = (part / "metrics.jsonl").read_bytes() == (tmp_path / "a" / "metrics.jsonl").read_bytes()
    verdict(8, same and resumed, f"identical metrics across runs {same}, resume bit-exact {resumed}")
