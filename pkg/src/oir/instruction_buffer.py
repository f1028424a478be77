"""Fixed-capacity instruction store with status-ordered round-robin writes.

Each instruction carries a running mean return ``R`` and a visit count.
Status buckets (``tau_low < tau_high``)::

    0  learning boundary   tau_low < R <= tau_high
    1  failing             R <= tau_low
    2  mastered            R > tau_high

Incoming candidates are sorted by ``(status, R, seen_count)`` and written
over the circular array starting at the cursor, so a batch never grows the
buffer past capacity.  Sampling is uniform over occupied slots.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

SOURCES = ("seed", "llm-mid", "llm-high", "rule")
SNAPSHOT_FORMAT = "oir-instruction-buffer"
SNAPSHOT_VERSION = 1

LEARNING, FAILING, MASTERED = 0, 1, 2
STATUS_NAMES = {LEARNING: "learning-boundary", FAILING: "failing", MASTERED: "mastered"}


@dataclass(frozen=True)
class Instruction:
    text: str
    source: str = "seed"
    mean_return: float = 0.0
    seen_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "text", self.text.strip())
        if not self.text:
            raise ValueError("instruction text must be non-empty")
        if self.source not in SOURCES:
            raise ValueError(f"unknown instruction source {self.source!r}")
        if self.seen_count < 0:
            raise ValueError("seen_count must be >= 0")

    @property
    def key(self) -> str:
        return self.text.casefold()


def status(instr: Instruction, tau_low: float = 0.1, tau_high: float = 0.9) -> int:
    r = instr.mean_return
    if r <= tau_low:
        return FAILING
    if r > tau_high:
        return MASTERED
    return LEARNING


def record_return(instr: Instruction, episode_return: float) -> Instruction:
    n = instr.seen_count
    mean = (instr.mean_return * n + float(episode_return)) / (n + 1)
    return replace(instr, mean_return=mean, seen_count=n + 1)


def merge_stats(a: Instruction, b: Instruction) -> Instruction:
    """Pool two records of the same instruction; ``a`` keeps its text and source."""
    n = a.seen_count + b.seen_count
    if n == 0:
        return a
    mean = (a.mean_return * a.seen_count + b.mean_return * b.seen_count) / n
    return replace(a, mean_return=mean, seen_count=n)


class SnapshotError(ValueError):
    pass


class InstructionBuffer:
    def __init__(self, capacity: int = 10, tau_low: float = 0.1, tau_high: float = 0.9,
                 pinned: frozenset = frozenset()):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        if not 0 < tau_low < tau_high:
            raise ValueError("thresholds must satisfy 0 < tau_low < tau_high")
        self.capacity = capacity
        self.tau_low = tau_low
        self.tau_high = tau_high
        self.slots: list[Instruction | None] = [None] * capacity
        self.cursor = 0
        # casefolded texts that round-robin writes skip over
        self.pinned = frozenset(t.casefold() for t in pinned)

    # -- queries --------------------------------------------------------------

    @property
    def entries(self) -> list[Instruction]:
        return [e for e in self.slots if e is not None]

    def __len__(self) -> int:
        return sum(e is not None for e in self.slots)

    def __contains__(self, text: str) -> bool:
        return self.find(text) is not None

    def find(self, text: str) -> int | None:
        key = text.strip().casefold()
        for i, e in enumerate(self.slots):
            if e is not None and e.key == key:
                return i
        return None

    def status_of(self, instr: Instruction) -> int:
        return status(instr, self.tau_low, self.tau_high)

    def histogram(self) -> dict[str, int]:
        counts = Counter(self.status_of(e) for e in self.entries)
        return {STATUS_NAMES[s]: counts.get(s, 0) for s in (LEARNING, FAILING, MASTERED)}

    # -- mutation -------------------------------------------------------------

    def seed(self, instructions) -> None:
        """Start from ``instructions`` as fresh seed entries (first ``capacity`` kept)."""
        self.slots = [None] * self.capacity
        self.cursor = 0
        self.insert_batch([Instruction(t, "seed") if isinstance(t, str) else t for t in instructions])

    def record(self, text: str, episode_return: float) -> bool:
        """Fold one episode return into the matching entry, if still buffered."""
        i = self.find(text)
        if i is None:
            return False
        self.slots[i] = record_return(self.slots[i], episode_return)
        return True

    def priority(self, instr: Instruction) -> tuple:
        return (self.status_of(instr), instr.mean_return, instr.seen_count)

    def insert_batch(self, candidates) -> list[Instruction]:
        """Write candidates in priority order; returns the instructions evicted.

        Candidates already present merge their statistics into the buffered
        entry; duplicates inside the batch are pooled first.
        """
        pooled: dict[str, Instruction] = {}
        for c in candidates:
            pooled[c.key] = merge_stats(pooled[c.key], c) if c.key in pooled else c
        fresh = []
        for key, c in pooled.items():
            i = self.find(c.text)
            if i is None:
                fresh.append(c)
            else:
                self.slots[i] = merge_stats(self.slots[i], c)
        fresh.sort(key=self.priority)
        writable = [i for i, e in enumerate(self.slots) if e is None or e.key not in self.pinned]
        evicted = []
        for c in fresh[: len(writable)]:
            while self.slots[self.cursor] is not None and self.slots[self.cursor].key in self.pinned:
                self.cursor = (self.cursor + 1) % self.capacity
            old = self.slots[self.cursor]
            if old is not None:
                evicted.append(old)
            self.slots[self.cursor] = c
            self.cursor = (self.cursor + 1) % self.capacity
        return evicted

    def sample(self, rng) -> Instruction:
        occupied = self.entries
        if not occupied:
            raise IndexError("cannot sample from an empty instruction buffer")
        return occupied[int(rng.integers(len(occupied)))]

    # -- persistence ----------------------------------------------------------

    def to_records(self) -> list[dict]:
        return [
            {"slot": i, "text": e.text, "source": e.source,
             "mean_return": e.mean_return, "seen_count": e.seen_count}
            for i, e in enumerate(self.slots) if e is not None
        ]

    def header(self) -> dict:
        return {"format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION, "capacity": self.capacity,
                "cursor": self.cursor, "tau_low": self.tau_low, "tau_high": self.tau_high,
                "pinned": sorted(self.pinned)}

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.to_records()]
        return "\n".join(lines) + "\n"

    def export(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_header(cls, header: dict, records) -> "InstructionBuffer":
        buf = cls(header["capacity"], header["tau_low"], header["tau_high"],
                  frozenset(header.get("pinned", ())))
        for r in records:
            slot = r["slot"]
            if not 0 <= slot < buf.capacity:
                raise SnapshotError(f"slot {slot} outside capacity {buf.capacity}")
            buf.slots[slot] = Instruction(r["text"], r["source"], float(r["mean_return"]), int(r["seen_count"]))
        buf.cursor = int(header["cursor"]) % buf.capacity
        return buf

    @classmethod
    def loads(cls, text: str) -> "InstructionBuffer":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise SnapshotError("empty buffer snapshot")
        try:
            header = json.loads(lines[0])
            records = [json.loads(ln) for ln in lines[1:]]
        except json.JSONDecodeError as exc:
            raise SnapshotError(f"snapshot is not valid JSONL: {exc.msg}") from None
        if not isinstance(header, dict) or header.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotError("missing buffer snapshot header")
        if header.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(
                f"snapshot version {header.get('version')!r} is not supported (expected {SNAPSHOT_VERSION})")
        try:
            return cls.from_header(header, records)
        except (KeyError, TypeError, ValueError) as exc:
            raise SnapshotError(f"malformed snapshot entry: {exc}") from None

    @classmethod
    def load(cls, path) -> "InstructionBuffer":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
