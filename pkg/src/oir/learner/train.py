"""Rollout, relabel, buffer and update phases of the training loop.

Each iteration steps ``num_envs`` worlds for ``num_steps`` steps under
instructions drawn from the buffer, then (in this order):

1. splits every env's segment into episode pieces and relabels each piece
   (``oir`` mode only);
2. scores each piece under its original instruction and every candidate,
   truncating at the first success, which yields the training batch;
3. folds finished-episode successes into the buffer statistics and inserts
   the new candidates;
4. refreshes the input normaliser, computes Q(lambda) targets and runs the
   minibatch update.

Environments that finish mid-rollout restart immediately with a fresh
instruction sampled from the buffer as it stood at the start of the rollout;
the buffer itself only changes in step 3.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import gridworld as gw
from .. import relabeler as rl
from .. import reward as rw
from .. import textual as tx
from ..embedding import EmbedderSpec, make_embedder
from ..evalkit import EvalConfig, EvalReport, GreedyQPolicy, load_suite, load_suites, run_suite
from ..instruction_buffer import Instruction, InstructionBuffer
from ..trajectory import Trajectory, TrajectoryStep
from .config import TrainConfig
from .network import QNetwork
from .qlearning import act_batch, epsilon_at, make_optimizer, update

log = logging.getLogger(__name__)

METRICS_SCHEMA = "oir-metrics"
METRICS_VERSION = 1
CHECKPOINT_FORMAT = "oir-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Hooks:
    on_insert_batch: Callable | None = None
    on_update: Callable | None = None
    on_record: Callable | None = None


@dataclass
class RunArtifacts:
    net: QNetwork
    buffer: InstructionBuffer
    records: list
    report: EvalReport | None
    run_dir: Path | None = None


@dataclass
class _Piece:
    env: int
    start: int
    end: int            # inclusive
    instruction: str
    success: bool       # the original instruction completed at ``end``
    terminal: bool      # the world ended at ``end`` (death or horizon)
    candidates: list = field(default_factory=list)


def sequence_returns(rewards, dones, last, next_max_q, gamma: float, lam: float) -> np.ndarray:
    """Q(lambda) returns over rows laid out as consecutive sequences.

    ``last[i]`` marks the final row of a sequence; it bootstraps from
    ``next_max_q`` alone.  ``dones`` cut the recursion.
    """
    n = len(rewards)
    g = np.empty(n, dtype=np.float64)
    nxt = 0.0
    for i in range(n - 1, -1, -1):
        if dones[i]:
            g[i] = rewards[i]
        elif last[i]:
            g[i] = rewards[i] + gamma * next_max_q[i]
        else:
            g[i] = rewards[i] + gamma * ((1.0 - lam) * next_max_q[i] + lam * nxt)
        nxt = g[i]
    return g


def target_lookup() -> dict:
    """Casefolded instruction text -> achievement id, over every shipped suite."""
    out = {name.casefold(): i for i, name in enumerate(gw.ACHIEVEMENTS)}
    for suite in load_suites().values():
        for e in suite.entries:
            out.setdefault(e.instruction.casefold(), e.target_id)
    return out


class Trainer:
    def __init__(self, cfg: TrainConfig, env_cfg: gw.EnvConfig | None = None,
                 embedder: EmbedderSpec | None = None, llm: rl.LlmSpec | None = None,
                 hooks: Hooks | None = None, run_dir=None, audit_log=None, suites=None):
        self.cfg = cfg
        self.suites_path = str(suites) if suites is not None else None
        self.env_cfg = env_cfg or gw.EnvConfig()
        self.embedder_spec = embedder or EmbedderSpec()
        self.embedder = make_embedder(self.embedder_spec)
        self.llm = llm or rl.LlmSpec()
        self.hooks = hooks or Hooks()
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.audit = rl.AuditLog(audit_log) if audit_log else None
        self.rng = np.random.default_rng(cfg.seed)
        self.net = QNetwork(gw.OBS_DIM, self.embedder_spec.dimension, cfg.hidden, gw.N_ACTIONS,
                            cfg.layer_norm, cfg.input_norm, np.float32, seed=cfg.seed)
        self.optimizer = make_optimizer(cfg.optimizer)
        self.targets = target_lookup()
        if cfg.mode == "ground-truth-baseline":
            missing = [t for t in cfg.seed_instructions if t.casefold() not in self.targets]
            if missing:
                raise ValueError(f"ground-truth mode needs instructions with known targets; unknown: {missing}")
        seeds = list(cfg.seed_instructions)
        capacity = cfg.buffer_capacity if cfg.mode == "oir" else max(cfg.buffer_capacity, len(seeds))
        self.buffer = InstructionBuffer(capacity, cfg.tau_low, cfg.tau_high,
                                        frozenset(seeds) if cfg.pin_seeds else frozenset())
        self.buffer.seed(seeds)
        self.registry: dict[str, list] = {}     # casefolded text -> [mean, count], survives eviction
        self.iteration = 0
        self.records: list = []
        self.report: EvalReport | None = None
        self.window = {"episodes": 0, "successes": 0}
        self.envs = [self._new_world() for _ in range(cfg.num_envs)]
        self.instr = [self.buffer.sample(self.rng).text for _ in range(cfg.num_envs)]
        self.n_insert_calls = 0
        self.n_update_calls = 0

    # -- helpers --------------------------------------------------------------

    @property
    def step_count(self) -> int:
        return self.iteration * self.cfg.batch_steps

    def _new_world(self) -> gw.EnvState:
        return gw.reset(int(self.rng.integers(2 ** 62)), self.env_cfg)

    def _emb(self, texts) -> np.ndarray:
        return self.embedder.embed_many(list(texts)).astype(np.float32)

    def _lr(self) -> float:
        if not self.cfg.lr_linear_decay:
            return self.cfg.lr
        return self.cfg.lr * (1.0 - self.iteration / self.cfg.iterations)

    # -- phases ---------------------------------------------------------------

    def rollout(self):
        cfg = self.cfg
        E, N = cfg.num_envs, cfg.num_steps
        obs = np.zeros((N, E, gw.OBS_DIM), dtype=np.float32)
        next_obs = np.zeros((N, E, gw.OBS_DIM), dtype=np.float32)
        actions = np.zeros((N, E), dtype=np.int64)
        texts = [[""] * E for _ in range(N)]
        events = [[()] * E for _ in range(N)]
        obs_txt = [[""] * E for _ in range(N)] if cfg.relabeler == "llm" and cfg.mode == "oir" else None
        act_txt = [[""] * E for _ in range(N)] if obs_txt is not None else None
        instr = [[""] * E for _ in range(N)]
        success = np.zeros((N, E), dtype=bool)
        terminal = np.zeros((N, E), dtype=bool)
        need_text = cfg.mode != "ground-truth-baseline"
        cur = np.stack([gw.encode_observation(s) for s in self.envs])
        base = self.step_count
        for t in range(N):
            eps = epsilon_at(base + t * E, cfg.eps_start, cfg.eps_finish, cfg.eps_decay_ratio, cfg.total_timesteps)
            q = self.net.forward(self.net.inputs(cur, self._emb(self.instr)))
            acts = act_batch(q, eps, self.rng)
            obs[t] = cur
            actions[t] = acts
            for e in range(E):
                prev = self.envs[e]
                a = int(acts[e])
                nxt, ev = gw.step(prev, a)
                instr[t][e] = self.instr[e]
                events[t][e] = ev.names
                if need_text:
                    texts[t][e] = tx.render_transition(prev, a, nxt, ev)
                if obs_txt is not None:
                    obs_txt[t][e] = tx.render_observation(prev)
                    act_txt[t][e] = tx.action_phrase(prev, a)
                gw.encode_observation(nxt, next_obs[t, e])
                if cfg.mode == "ground-truth-baseline":
                    ok = self.targets[self.instr[e].casefold()] in ev.achievements
                else:
                    ok = rw.check_termination(rw.semantic_reward(texts[t][e], self.instr[e], self.embedder), cfg.delta)
                success[t, e] = ok
                terminal[t, e] = gw.is_terminal(nxt)
                if ok or terminal[t, e]:
                    self.envs[e] = self._new_world()
                    self.instr[e] = self.buffer.sample(self.rng).text
                    cur[e] = gw.encode_observation(self.envs[e])
                else:
                    self.envs[e] = nxt
                    cur[e] = next_obs[t, e]
        return {"obs": obs, "next_obs": next_obs, "actions": actions, "texts": texts, "events": events,
                "instr": instr, "success": success, "terminal": terminal, "obs_txt": obs_txt, "act_txt": act_txt}

    def pieces(self, roll) -> list[_Piece]:
        out = []
        N, E = roll["actions"].shape
        for e in range(E):
            start = 0
            for t in range(N):
                done = roll["success"][t, e] or roll["terminal"][t, e]
                if done or t == N - 1:
                    out.append(_Piece(e, start, t, roll["instr"][start][e], bool(roll["success"][t, e]),
                                      bool(roll["terminal"][t, e])))
                    start = t + 1
        return out

    def relabel(self, roll, pieces: list[_Piece]) -> None:
        if self.cfg.mode != "oir":
            return
        trajs = []
        for i, p in enumerate(pieces):
            steps = []
            for t in range(p.start, p.end + 1):
                steps.append(TrajectoryStep(
                    observation=roll["obs_txt"][t][p.env] if roll["obs_txt"] is not None else "",
                    action=roll["act_txt"][t][p.env] if roll["act_txt"] is not None else "",
                    transition=roll["texts"][t][p.env],
                    events=roll["events"][t][p.env]))
            trajs.append(Trajectory(steps, id=f"{self.iteration}-{i}", instruction=p.instruction))
        sets = rl.relabel_many(trajs, self.cfg.relabeler, self.cfg.k, self.llm, fallback=self.cfg.llm_fallback,
                               per_sample=self.cfg.llm_per_sample, audit=self.audit) \
            if self.cfg.relabeler == "llm" else rl.relabel_many(trajs, "oracle", self.cfg.k)
        for p, cs in zip(pieces, sets):
            p.candidates = list(cs.candidates)

    def build_batch(self, roll, pieces: list[_Piece]):
        """Rows of the training batch: (t, env, instruction index, reward, done, last)."""
        cfg = self.cfg
        names: dict[str, int] = {}
        rows_t, rows_e, rows_i, rewards, dones, last = [], [], [], [], [], []

        def add(p: _Piece, text: str, r: np.ndarray, done_at_end: bool):
            idx = names.setdefault(text, len(names))
            n = len(r)
            rows_t.extend(range(p.start, p.start + n))
            rows_e.extend([p.env] * n)
            rows_i.extend([idx] * n)
            rewards.extend(r.tolist())
            d = [False] * n
            d[-1] = done_at_end
            dones.extend(d)
            lf = [False] * n
            lf[-1] = True
            last.extend(lf)

        for p in pieces:
            seg = [roll["texts"][t][p.env] for t in range(p.start, p.end + 1)]
            n = p.end - p.start + 1
            if cfg.mode == "ground-truth-baseline":
                r = np.zeros(n)
                r[-1] = 1.0 if p.success else 0.0
                add(p, p.instruction, r, p.success or p.terminal)
                continue
            orig = rw.relabel_texts(seg, p.instruction, cfg.delta, self.embedder)
            # collection already stopped at the first success, so the original sample spans the piece
            add(p, p.instruction, rw.learner_rewards(orig, cfg.reward_mode), p.success or p.terminal)
            seen = {p.instruction.casefold()}
            for c in p.candidates:
                if c.key in seen:
                    continue
                seen.add(c.key)
                s = rw.relabel_texts(seg, c.text, cfg.delta, self.embedder)
                add(p, c.text, rw.learner_rewards(s, cfg.reward_mode), s.done or (p.terminal and len(s) == n))
        return {
            "t": np.array(rows_t, dtype=np.int64), "e": np.array(rows_e, dtype=np.int64),
            "i": np.array(rows_i, dtype=np.int64), "reward": np.array(rewards), "done": np.array(dones),
            "last": np.array(last), "instructions": list(names),
        }

    def update_buffer(self, pieces: list[_Piece]) -> None:
        for p in pieces:
            if p.success or p.terminal:
                ret = 1.0 if p.success else 0.0
                self.buffer.record(p.instruction, ret)
                stat = self.registry.setdefault(p.instruction.casefold(), [0.0, 0])
                stat[0] = (stat[0] * stat[1] + ret) / (stat[1] + 1)
                stat[1] += 1
                self.window["episodes"] += 1
                self.window["successes"] += int(p.success)
        if self.cfg.mode != "oir":
            return
        fresh, keys = [], set()
        for p in pieces:
            for c in p.candidates:
                if c.key in keys or c.key in self.buffer:
                    continue
                keys.add(c.key)
                mean, n = self.registry.get(c.key, (0.0, 0))
                fresh.append(Instruction(c.text, c.source, mean, n))
        self.buffer.insert_batch(fresh)
        self.n_insert_calls += 1
        if self.hooks.on_insert_batch:
            self.hooks.on_insert_batch(self.iteration, fresh)

    def learn(self, roll, batch) -> dict:
        cfg = self.cfg
        emb = self._emb(batch["instructions"])
        obs = roll["obs"][batch["t"], batch["e"]]
        nxt = roll["next_obs"][batch["t"], batch["e"]]
        instr_emb = emb[batch["i"]]
        if self.net.norm is not None:
            self.net.norm.update(np.concatenate([obs, instr_emb], axis=1))
        next_q = self.net.forward(self.net.inputs(nxt, instr_emb)).max(axis=1).astype(np.float64)
        targets = sequence_returns(batch["reward"], batch["done"], batch["last"], next_q, cfg.gamma, cfg.lam)
        x = self.net.inputs(obs, instr_emb)
        stats = update(self.net, self.optimizer, x, roll["actions"][batch["t"], batch["e"]], targets, self._lr(),
                       self.rng, cfg.epochs, cfg.minibatches, cfg.max_grad_norm, dump_dir=self.run_dir)
        stats["batch_size"] = int(len(targets))
        self.n_update_calls += 1
        if self.hooks.on_update:
            self.hooks.on_update(self.iteration, stats)
        return stats

    # -- evaluation & records -------------------------------------------------

    def evaluate(self) -> EvalReport:
        suite = load_suite("original", self.suites_path)
        if self.cfg.eval_targets is not None:
            suite = suite.subset(self.cfg.eval_targets)
        cfg = EvalConfig(self.cfg.eval_episodes, self.cfg.eval_seed, self.env_cfg)
        return run_suite(GreedyQPolicy(self.net, self.embedder), suite, cfg)

    def _record(self, stats: dict, report: EvalReport | None) -> dict:
        w = self.window
        rec = {
            "step": self.step_count,
            "iteration": self.iteration,
            "epsilon": epsilon_at(self.step_count, self.cfg.eps_start, self.cfg.eps_finish,
                                  self.cfg.eps_decay_ratio, self.cfg.total_timesteps),
            "loss": stats.get("loss"),
            "grad_norm": stats.get("grad_norm"),
            "batch_size": stats.get("batch_size"),
            "episodes": w["episodes"],
            "train_success": (w["successes"] / w["episodes"]) if w["episodes"] else None,
            "buffer_size": len(self.buffer),
            "buffer_status": self.buffer.histogram(),
            "mean_success": None,
            "completed": None,
            "aggregate_score": None,
        }
        if report is not None:
            rec["mean_success"] = report.mean_success
            rec["completed"] = report.completed
            rec["aggregate_score"] = report.aggregate
            rec["eval_rates"] = dict(zip(report.targets, report.rates))
        self.window = {"episodes": 0, "successes": 0}
        return rec

    def train_iteration(self) -> dict | None:
        roll = self.rollout()
        pieces = self.pieces(roll)
        self.relabel(roll, pieces)
        batch = self.build_batch(roll, pieces)
        self.update_buffer(pieces)
        stats = self.learn(roll, batch)
        self.iteration += 1
        final = self.iteration >= self.cfg.iterations
        eval_due = final or (self.cfg.eval_every > 0 and
                             self.step_count // self.cfg.eval_every > (self.step_count - self.cfg.batch_steps) // self.cfg.eval_every)
        report = self.evaluate() if eval_due else None
        if report is not None:
            self.report = report
        if final or eval_due or self.iteration % self.cfg.log_every == 0:
            rec = self._record(stats, report)
            self.records.append(rec)
            if self.hooks.on_record:
                self.hooks.on_record(rec)
            return rec
        return None

    # -- persistence ----------------------------------------------------------

    def metrics_header(self) -> dict:
        return {"schema": METRICS_SCHEMA, "version": METRICS_VERSION, "mode": self.cfg.mode,
                "train": self.cfg.to_dict(), "env": _asdict(self.env_cfg),
                "embedder": _asdict(self.embedder_spec)}

    def save_checkpoint(self, path) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "train": self.cfg.to_dict(), "env": _asdict(self.env_cfg), "embedder": _asdict(self.embedder_spec),
            "llm": _asdict(self.llm), "network": self.net.config(), "optimizer": self.optimizer.name,
            "iteration": self.iteration, "step": self.step_count, "suites": self.suites_path,
            "rng": self.rng.bit_generator.state, "buffer": self.buffer.dumps(),
            "registry": self.registry, "window": self.window,
            "envs": [gw.state_to_dict(s) for s in self.envs], "instr": self.instr,
        }
        arrays = dict(self.net.state())
        arrays.update({f"opt/{k}": v for k, v in self.optimizer.state().items()})
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        tmp.replace(path)

    @classmethod
    def from_checkpoint(cls, path, hooks: Hooks | None = None, run_dir=None, **overrides) -> "Trainer":
        arrays, meta = read_checkpoint(path)
        cfg = TrainConfig.from_dict({**meta["train"], **overrides})
        trainer = cls(cfg, gw.EnvConfig(**meta["env"]), EmbedderSpec(**meta["embedder"]),
                      rl.LlmSpec(**meta["llm"]), hooks, run_dir, suites=meta.get("suites"))
        trainer.net.load(arrays)
        trainer.optimizer.load({k[4:]: v for k, v in arrays.items() if k.startswith("opt/")})
        trainer.iteration = int(meta["iteration"])
        trainer.rng.bit_generator.state = meta["rng"]
        trainer.buffer = InstructionBuffer.loads(meta["buffer"])
        trainer.registry = {k: list(v) for k, v in meta["registry"].items()}
        trainer.window = dict(meta["window"])
        trainer.envs = [gw.state_from_dict(d) for d in meta["envs"]]
        trainer.instr = list(meta["instr"])
        return trainer


def _asdict(obj) -> dict:
    from dataclasses import asdict
    return asdict(obj)


def read_checkpoint(path):
    """(arrays, meta) from a checkpoint file; raises :class:`CheckpointError` on any damage."""
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(arrays.pop("meta").tobytes().decode("utf-8"))
    except (OSError, ValueError, KeyError, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    except Exception as exc:  # zipfile.BadZipFile and friends
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    return arrays, meta


def load_network(path) -> tuple[QNetwork, dict]:
    arrays, meta = read_checkpoint(path)
    try:
        net = QNetwork.from_config(meta["network"])
        net.load(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} has inconsistent network data: {exc}") from None
    return net, meta


def train(cfg: TrainConfig, env_cfg: gw.EnvConfig | None = None, hooks: Hooks | None = None,
          embedder: EmbedderSpec | None = None, llm: rl.LlmSpec | None = None, run_dir=None,
          trainer: Trainer | None = None, stop_after: int | None = None) -> RunArtifacts:
    """Run training to completion (or for ``stop_after`` more iterations).

    With ``run_dir`` set, writes ``metrics.jsonl`` (header first), a
    ``timing.jsonl`` of wall-clock stamps, ``buffer.jsonl`` and
    ``checkpoint.npz``.
    """
    trainer = trainer or Trainer(cfg, env_cfg, embedder, llm, hooks, run_dir)
    run_dir = Path(run_dir) if run_dir is not None else None
    metrics_fh = timing_fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        trainer.run_dir = run_dir
        metrics_path = run_dir / "metrics.jsonl"
        fresh = not metrics_path.exists()
        metrics_fh = open(metrics_path, "a", encoding="utf-8")
        timing_fh = open(run_dir / "timing.jsonl", "a", encoding="utf-8")
        if fresh:
            metrics_fh.write(json.dumps(trainer.metrics_header(), sort_keys=True) + "\n")
    t0 = time.monotonic()
    done_iters = 0
    try:
        while trainer.iteration < trainer.cfg.iterations:
            rec = trainer.train_iteration()
            done_iters += 1
            if rec is not None and metrics_fh is not None:
                metrics_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                metrics_fh.flush()
                timing_fh.write(json.dumps({"step": rec["step"], "wall_clock": round(time.monotonic() - t0, 3)}) + "\n")
                timing_fh.flush()
            if rec is not None:
                log.info("step %d loss %.4f buffer %s", rec["step"], rec["loss"] or 0.0, rec["buffer_status"])
            ce = trainer.cfg.checkpoint_every
            if run_dir is not None and ce > 0 and trainer.iteration % ce == 0:
                trainer.save_checkpoint(run_dir / "checkpoint.npz")
            if stop_after is not None and done_iters >= stop_after:
                break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timing_fh.close()
    if run_dir is not None:
        trainer.save_checkpoint(run_dir / "checkpoint.npz")
        trainer.buffer.export(run_dir / "buffer.jsonl")
        if trainer.report is not None:
            (run_dir / "eval_report.jsonl").write_text(trainer.report.to_jsonl(), encoding="utf-8")
    return RunArtifacts(trainer.net, trainer.buffer, trainer.records, trainer.report, run_dir)
