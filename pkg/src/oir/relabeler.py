"""Candidate instructions for finished trajectories.

Two sources:

* the rule relabeler, which names every distinct achievement the trajectory
  fired (offline, deterministic, the default);
* an OpenAI-compatible chat endpoint prompted with the trajectory, whose
  answer is a JSON object with ``Mid-Level`` and ``High-Level`` lists.

LLM failures degrade to rule candidates unless fallback is disabled.
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import gridworld as gw
from .instruction_buffer import Instruction
from .textual import DEFAULT_MAX_PROMPT_STEPS, PromptTemplate, build_messages
from .trajectory import Trajectory

log = logging.getLogger(__name__)

DEFAULT_K = 8
MODES = ("oracle", "llm")
FORBIDDEN = re.compile(r"\b(move[sd]?|moving|explor\w*|navigat\w*|go(?:es|ing)? to)\b", re.IGNORECASE)
_CANONICAL = frozenset(gw.ACHIEVEMENTS)


class ParseError(ValueError):
    def __init__(self, message: str, snippet: str = ""):
        super().__init__(f"{message}: {snippet[:120]!r}" if snippet else message)
        self.snippet = snippet


class LlmError(RuntimeError):
    """The chat endpoint could not produce a usable answer."""


@dataclass(frozen=True)
class LlmSpec:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "Qwen/Qwen3-8B"
    temperature: float = 0.7
    max_tokens: int = 512
    timeout: float = 60.0
    retries: int = 2
    api_key_env: str = "OIR_LLM_API_KEY"
    max_in_flight: int = 8

    def __post_init__(self):
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


@dataclass
class CandidateSet:
    trajectory_id: str
    candidates: list = field(default_factory=list)
    raw: str | None = None

    @property
    def texts(self) -> list[str]:
        return [c.text for c in self.candidates]

    def __len__(self) -> int:
        return len(self.candidates)


# -- parsing ------------------------------------------------------------------

def _first_object(text: str):
    dec = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = dec.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def parse_response(text: str) -> tuple[list[str], list[str]]:
    """(mid, high) lists from the first JSON object in ``text``."""
    obj = _first_object(text)
    if obj is None:
        raise ParseError("no JSON object in response", text)
    done = obj.get("Completed Instructions")
    if not isinstance(done, dict):
        raise ParseError("missing 'Completed Instructions'", json.dumps(obj)[:200])
    out = []
    for key in ("Mid-Level", "High-Level"):
        items = done.get(key)
        if not isinstance(items, list):
            raise ParseError(f"missing {key!r} list", json.dumps(done)[:200])
        bad = [x for x in items if not isinstance(x, str)]
        if bad:
            raise ParseError(f"non-string entry in {key!r}", json.dumps(bad[0]))
        out.append(list(items))
    return out[0], out[1]


def serialize_response(mid, high, analysis: str = "") -> str:
    return json.dumps({"Analysis": analysis, "Completed Instructions": {"Mid-Level": list(mid), "High-Level": list(high)}},
                      indent=2)


# -- candidate assembly -------------------------------------------------------

def rule_relabel(traj: Trajectory) -> list[Instruction]:
    seen = []
    for name in traj.fired():
        if name in _CANONICAL and name not in seen:
            seen.append(name)
    return [Instruction(name, "rule") for name in seen]


def assemble(mid, high, rule, k: int) -> list[Instruction]:
    """Order mid, high, rule; trim, drop empties, forbidden verbs and case-insensitive repeats; keep ``k``."""
    if k < 1:
        raise ValueError("K must be >= 1")
    out, keys = [], set()
    pools = [(t, "llm-mid") for t in mid] + [(t, "llm-high") for t in high]
    pools += [(c.text, "rule") for c in rule]
    for text, source in pools:
        text = " ".join(text.split())
        if not text or FORBIDDEN.search(text) or text.casefold() in keys:
            continue
        keys.add(text.casefold())
        out.append(Instruction(text, source))
        if len(out) == k:
            break
    return out


class ChatClient:
    """Minimal chat-completions client with retries."""

    def __init__(self, spec: LlmSpec, client=None):
        import httpx

        self.spec = spec
        self._client = client or httpx.Client(timeout=spec.timeout)

    def complete(self, messages: list[dict]) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.spec.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {"model": self.spec.model, "messages": messages,
                   "temperature": self.spec.temperature, "max_tokens": self.spec.max_tokens}
        last = None
        for attempt in range(1, self.spec.retries + 2):
            try:
                resp = self._client.post(self.spec.endpoint, json=payload, headers=headers)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as exc:
                last = exc
                log.warning("chat request failed (attempt %d): %s", attempt, exc)
                if attempt <= self.spec.retries:
                    time.sleep(min(2.0, 0.1 * 2 ** (attempt - 1)))
        raise LlmError(f"chat request to {self.spec.endpoint} failed after {self.spec.retries + 1} attempt(s): {last}")


class AuditLog:
    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def write(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def llm_relabel(traj: Trajectory, k: int = DEFAULT_K, spec: LlmSpec | None = None, *,
                client: ChatClient | None = None, fallback: bool = True, include_rule: bool = True,
                per_sample: bool = False, template: PromptTemplate | None = None,
                max_prompt_steps: int = DEFAULT_MAX_PROMPT_STEPS, audit: AuditLog | None = None) -> CandidateSet:
    """Ask the chat endpoint for candidates.

    ``per_sample`` issues ``k`` separate requests and pools their answers;
    otherwise a single answer supplies every candidate.
    """
    spec = spec or LlmSpec()
    client = client or ChatClient(spec)
    rule = rule_relabel(traj) if include_rule else []
    messages = build_messages(traj, template, max_prompt_steps)
    mid, high, raws = [], [], []
    try:
        for _ in range(k if per_sample else 1):
            raw = client.complete(messages)
            raws.append(raw)
            if audit is not None:
                audit.write({"trajectory": traj.id, "messages": messages, "response": raw})
            m, h = parse_response(raw)
            mid += m
            high += h
    except (LlmError, ParseError) as exc:
        if audit is not None:
            audit.write({"trajectory": traj.id, "messages": messages, "error": str(exc)})
        if not fallback:
            raise
        log.warning("relabeling trajectory %s fell back to rule candidates: %s", traj.id, exc)
        return CandidateSet(traj.id, assemble([], [], rule_relabel(traj), k), "\n".join(raws) or None)
    return CandidateSet(traj.id, assemble(mid, high, rule, k), "\n".join(raws))


def oracle_relabel(traj: Trajectory, k: int = DEFAULT_K) -> CandidateSet:
    return CandidateSet(traj.id, assemble([], [], rule_relabel(traj), k))


def relabel_many(trajectories, mode: str = "oracle", k: int = DEFAULT_K, spec: LlmSpec | None = None,
                 **kwargs) -> list[CandidateSet]:
    """Relabel a batch; LLM calls run concurrently up to ``spec.max_in_flight``."""
    if mode not in MODES:
        raise ValueError(f"unknown relabeler mode {mode!r}; expected one of {MODES}")
    trajectories = list(trajectories)
    if mode == "oracle":
        return [oracle_relabel(t, k) for t in trajectories]
    spec = spec or LlmSpec()
    kwargs.setdefault("client", ChatClient(spec))
    with ThreadPoolExecutor(max_workers=spec.max_in_flight) as pool:
        return list(pool.map(lambda t: llm_relabel(t, k, spec, **kwargs), trajectories))
