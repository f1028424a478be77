"""Trajectory records shared by the renderer, relabelers and reward.

On disk a trajectory file is JSONL with one step per line::

    {"trajectory": "0", "step": 0, "observation": "Facing: ...", "action": "tree",
     "events": ["collect wood"], "transition": "tree: gained wood, collect wood"}

``trajectory`` defaults to ``"0"``; ``transition`` and ``died`` are optional.
Consecutive lines with the same id form one trajectory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class TrajectoryStep:
    observation: str
    action: str
    transition: str = ""
    events: tuple = ()
    died: bool = False


@dataclass
class Trajectory:
    steps: list = field(default_factory=list)
    id: str = "0"
    instruction: str | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def fired(self) -> list[str]:
        """Achievement names in firing order (repeats kept)."""
        return [name for s in self.steps for name in s.events]


class TrajectoryFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def step_to_json(traj_id: str, t: int, step: TrajectoryStep) -> str:
    rec = {
        "trajectory": traj_id,
        "step": t,
        "observation": step.observation,
        "action": step.action,
        "events": list(step.events),
    }
    if step.transition:
        rec["transition"] = step.transition
    if step.died:
        rec["died"] = True
    return json.dumps(rec, sort_keys=True)


def write_trajectories(path, trajectories) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            for t, s in enumerate(traj.steps):
                fh.write(step_to_json(traj.id, t, s) + "\n")


def read_trajectories(path) -> list[Trajectory]:
    out: list[Trajectory] = []
    current = None
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TrajectoryFormatError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise TrajectoryFormatError(lineno, "expected a JSON object")
        for key, kind in (("observation", str), ("action", str)):
            if not isinstance(rec.get(key), kind):
                raise TrajectoryFormatError(lineno, f"missing or non-string {key!r}")
        events = rec.get("events", [])
        if not isinstance(events, list) or not all(isinstance(e, str) for e in events):
            raise TrajectoryFormatError(lineno, "'events' must be a list of strings")
        step_idx = rec.get("step")
        if step_idx is not None and not isinstance(step_idx, int):
            raise TrajectoryFormatError(lineno, "'step' must be an integer")
        tid = str(rec.get("trajectory", "0"))
        if current is None or current.id != tid:
            current = Trajectory(id=tid)
            out.append(current)
        current.steps.append(
            TrajectoryStep(
                observation=rec["observation"],
                action=rec["action"],
                transition=str(rec.get("transition", "")),
                events=tuple(events),
                died=bool(rec.get("died", False)),
            )
        )
    return out
