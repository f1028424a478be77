"""Ground-truth evaluation of instruction-following policies.

A policy maps a batch of environment states plus the instruction each one
is conditioned on to a batch of actions.  An episode succeeds when the
target achievement fires before the episode ends.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import Protocol, Sequence

import numpy as np

from . import gridworld as gw
from .embedding import EmbedderSpec, make_embedder
from .learner.network import QNetwork

SUITE_NAMES = ("original", "simple", "complex")
SUITE_ASSET = "instruction_suites.tsv"


# -- suites -------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteEntry:
    instruction: str
    target: str
    provenance: str = "generated"

    @property
    def target_id(self) -> int:
        return gw.ACHIEVEMENT_INDEX[self.target]


@dataclass(frozen=True)
class InstructionSuite:
    name: str
    entries: tuple

    def __post_init__(self):
        for e in self.entries:
            if e.target not in gw.ACHIEVEMENT_INDEX:
                raise ValueError(f"suite {self.name!r}: unknown target achievement {e.target!r}")
        if self.name == "original" and len(self.entries) != len(gw.ACHIEVEMENTS):
            raise ValueError(f"the original suite must have {len(gw.ACHIEVEMENTS)} entries, got {len(self.entries)}")

    def __len__(self) -> int:
        return len(self.entries)

    def subset(self, targets: Sequence[str]) -> "InstructionSuite":
        keep = set(targets)
        return InstructionSuite(self.name + "-subset", tuple(e for e in self.entries if e.target in keep))


def read_suites(text: str) -> dict[str, InstructionSuite]:
    rows = list(csv.DictReader(io.StringIO(text), delimiter="\t"))
    missing = {"suite", "instruction", "target", "provenance"} - set(rows[0] if rows else {})
    if missing:
        raise ValueError(f"suite file lacks columns {sorted(missing)}")
    grouped: dict[str, list] = {}
    for r in rows:
        grouped.setdefault(r["suite"], []).append(SuiteEntry(r["instruction"], r["target"], r["provenance"]))
    return {name: InstructionSuite(name, tuple(es)) for name, es in grouped.items()}


def load_suites(path=None) -> dict[str, InstructionSuite]:
    if path is None:
        text = resources.files("oir").joinpath("assets", SUITE_ASSET).read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return read_suites(text)


def load_suite(name: str = "original", path=None) -> InstructionSuite:
    suites = load_suites(path)
    if name not in suites:
        raise KeyError(f"no suite named {name!r}; available: {sorted(suites)}")
    return suites[name]


# -- metrics ------------------------------------------------------------------

def aggregate_score(rates) -> float:
    """``exp(mean(log(1 + s_i))) - 1``."""
    rates = [float(s) for s in rates]
    if not rates:
        raise ValueError("aggregate score of an empty rate list is undefined")
    if any(not 0.0 <= s <= 1.0 for s in rates):
        raise ValueError("success rates must lie in [0, 1]")
    return math.exp(math.fsum(math.log1p(s) for s in rates) / len(rates)) - 1.0


def completed_count(rates) -> int:
    return sum(1 for s in rates if s > 0)


# -- policies -----------------------------------------------------------------

class Policy(Protocol):
    def __call__(self, states: Sequence[gw.EnvState], instructions: Sequence[str]) -> np.ndarray: ...


class NoopPolicy:
    def __call__(self, states, instructions):
        return np.zeros(len(states), dtype=np.int64)


class GreedyQPolicy:
    """Acts greedily (epsilon = 0) on a Q network conditioned on instruction embeddings."""

    def __init__(self, net: QNetwork, embedder=None):
        self.net = net
        self.embedder = embedder or make_embedder(EmbedderSpec(dimension=net.emb_dim))

    def __call__(self, states, instructions):
        obs = np.stack([gw.encode_observation(s) for s in states])
        emb = self.embedder.embed_many(list(instructions))
        q = self.net.forward(self.net.inputs(obs, emb))
        return np.argmax(q, axis=1)


def _step_toward(state: gw.EnvState, goal: int) -> int | None:
    """First move of a shortest walkable path to a tile facing ``goal``."""
    grid = state.grid
    h, w = grid.shape
    start = state.pos
    fx, fy = state.faced
    if _inside((fx, fy), w, h) and grid[fy, fx] == goal:
        return int(gw.Action.DO)
    prev = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for k, (dx, dy) in enumerate(gw.DIRECTIONS):
            nx, ny = cur[0] + dx, cur[1] + dy
            if not _inside((nx, ny), w, h):
                continue
            if grid[ny, nx] == goal:
                node, move = cur, k
                while prev[node] is not None:
                    node, move = prev[node]
                return int(gw.Action.LEFT) + move
            if (nx, ny) not in prev and grid[ny, nx] in gw.WALKABLE:
                prev[(nx, ny)] = (cur, k)
                queue.append((nx, ny))
    return None


def _inside(p, w, h) -> bool:
    return 0 <= p[0] < w and 0 <= p[1] < h


class ChopTreePolicy:
    """Walks to the nearest reachable tree and hits it; noops when none is reachable."""

    def __call__(self, states, instructions):
        out = []
        for s in states:
            a = _step_toward(s, gw.TREE)
            out.append(int(gw.Action.NOOP) if a is None else a)
        return np.array(out, dtype=np.int64)


# -- running ------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 20
    seed: int = 10_000
    env: gw.EnvConfig = field(default_factory=gw.EnvConfig)

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")

    @property
    def seeds(self) -> list[int]:
        return [self.seed + e for e in range(self.episodes)]


@dataclass
class EvalReport:
    suite: str
    instructions: list
    targets: list
    rates: list
    episodes: int
    seeds: list

    @property
    def mean_success(self) -> float:
        return float(np.mean(self.rates)) if self.rates else 0.0

    @property
    def completed(self) -> int:
        return completed_count(self.rates)

    @property
    def aggregate(self) -> float:
        return aggregate_score(self.rates)

    def summary(self) -> dict:
        return {"suite": self.suite, "mean_success": self.mean_success, "completed": self.completed,
                "aggregate_score": self.aggregate, "episodes": self.episodes, "n_instructions": len(self.rates)}

    def to_jsonl(self) -> str:
        lines = [json.dumps({"instruction": i, "target": t, "success_rate": r}, sort_keys=True)
                 for i, t, r in zip(self.instructions, self.targets, self.rates)]
        lines.append(json.dumps({"summary": self.summary(), "seeds": self.seeds}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        rows = ["instruction\ttarget\tsuccess_rate"]
        rows += [f"{i}\t{t}\t{r:.4f}" for i, t, r in zip(self.instructions, self.targets, self.rates)]
        s = self.summary()
        rows.append(f"# mean_success={s['mean_success']:.4f} completed={s['completed']} "
                    f"aggregate_score={s['aggregate_score']:.4f}")
        return "\n".join(rows) + "\n"


def _run_episodes(policy, jobs, cfg: EvalConfig) -> np.ndarray:
    """``jobs`` is a list of (instruction, target id, seed); returns success flags."""
    states = [gw.reset(seed, cfg.env) for _, _, seed in jobs]
    success = np.zeros(len(jobs), dtype=bool)
    active = list(range(len(jobs)))
    while active:
        actions = policy([states[j] for j in active], [jobs[j][0] for j in active])
        still = []
        for j, a in zip(active, actions):
            nxt, ev = gw.step(states[j], int(a))
            states[j] = nxt
            if jobs[j][1] in ev.achievements:
                success[j] = True
            elif not gw.is_terminal(nxt):
                still.append(j)
        active = still
    return success


def success_rate(policy, entry: SuiteEntry, episodes: int = 20, seeds=None, env: gw.EnvConfig | None = None) -> float:
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    cfg = EvalConfig(episodes, env=env or gw.EnvConfig())
    seeds = list(seeds) if seeds is not None else cfg.seeds
    jobs = [(entry.instruction, entry.target_id, s) for s in seeds[:episodes]]
    return float(np.mean(_run_episodes(policy, jobs, cfg)))


def run_suite(policy, suite: InstructionSuite, cfg: EvalConfig | None = None) -> EvalReport:
    """Every entry over the same seed set, all episodes stepped in lockstep."""
    cfg = cfg or EvalConfig()
    seeds = cfg.seeds
    jobs = [(e.instruction, e.target_id, s) for e in suite.entries for s in seeds]
    ok = _run_episodes(policy, jobs, cfg).reshape(len(suite.entries), len(seeds)) if jobs else np.zeros((0, 0))
    rates = [float(r) for r in ok.mean(axis=1)] if len(suite.entries) else []
    return EvalReport(suite.name, [e.instruction for e in suite.entries], [e.target for e in suite.entries],
                      rates, cfg.episodes, seeds)
