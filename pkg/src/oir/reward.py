"""Cosine rewards between transition descriptions and an instruction.

A step earns ``r_t = cos(embed(transition_t), embed(instruction))``.  The
first step with ``r_t > delta`` completes the instruction: later steps are
discarded and the sample is marked done there.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import EmbedderSpec, cosine, make_embedder
from .trajectory import Trajectory

REWARD_MODES = ("binary", "continuous")


@dataclass(frozen=True)
class RelabeledSample:
    instruction: str
    rewards: np.ndarray          # cosine per kept step
    termination_index: int | None
    delta: float

    @property
    def done(self) -> bool:
        return self.termination_index is not None

    def __len__(self) -> int:
        return len(self.rewards)


def _text(instruction) -> str:
    text = instruction if isinstance(instruction, str) else instruction.text
    if not text or not text.strip():
        raise ValueError("instruction text must be non-empty")
    return text


def _embedder(embedder):
    if embedder is None:
        return make_embedder(EmbedderSpec())
    if isinstance(embedder, EmbedderSpec):
        return make_embedder(embedder)
    return embedder


def semantic_reward(transition_text: str, instruction, embedder=None) -> float:
    emb = _embedder(embedder)
    return cosine(emb.embed(transition_text), emb.embed(_text(instruction)))


def check_termination(r: float, delta: float) -> bool:
    return r > delta


def step_rewards(texts: Sequence[str], instruction, embedder=None) -> np.ndarray:
    """Cosine of every transition text against one instruction, in [-1, 1]."""
    emb = _embedder(embedder)
    target = emb.embed(_text(instruction))
    if len(texts) == 0:
        return np.zeros(0)
    t_norm = float(np.linalg.norm(target))
    if t_norm == 0.0:
        return np.zeros(len(texts))
    mat = emb.embed_many(texts)
    norms = np.linalg.norm(mat, axis=1)
    dots = mat @ target
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(norms > 0, dots / (norms * t_norm), 0.0)
    return np.clip(r, -1.0, 1.0)


def first_passage(rewards: np.ndarray, delta: float) -> int | None:
    hits = np.flatnonzero(np.asarray(rewards) > delta)
    return int(hits[0]) if hits.size else None


def relabel_texts(texts: Sequence[str], instruction, delta: float, embedder=None) -> RelabeledSample:
    if len(texts) == 0:
        raise ValueError("cannot relabel an empty trajectory")
    r = step_rewards(texts, instruction, embedder)
    end = first_passage(r, delta)
    if end is not None:
        r = r[: end + 1]
    return RelabeledSample(_text(instruction), r, end, float(delta))


def relabel_trajectory(traj: Trajectory, instruction, delta: float, embedder=None) -> RelabeledSample:
    """Re-score ``traj`` under ``instruction``; see :func:`relabel_texts`."""
    return relabel_texts([s.transition for s in traj.steps], instruction, delta, embedder)


def achievement_sample(events: Sequence[Sequence[str]], instruction: str, target: str) -> RelabeledSample:
    """Ground-truth counterpart: reward 1 at the first step that fires ``target``."""
    if len(events) == 0:
        raise ValueError("cannot relabel an empty trajectory")
    r = np.array([1.0 if target in ev else 0.0 for ev in events])
    end = first_passage(r, 0.5)
    if end is not None:
        r = r[: end + 1]
    return RelabeledSample(instruction, r, end, 0.5)


def learner_rewards(sample: RelabeledSample, mode: str = "binary") -> np.ndarray:
    """Rewards handed to the TD targets.

    ``binary`` gives +1 at the completion step and 0 elsewhere;
    ``continuous`` passes the raw cosine through.
    """
    if mode == "continuous":
        return np.asarray(sample.rewards, dtype=np.float64)
    if mode != "binary":
        raise ValueError(f"unknown reward mode {mode!r}; expected one of {REWARD_MODES}")
    out = np.zeros(len(sample.rewards))
    if sample.done:
        out[sample.termination_index] = 1.0
    return out
