"""Text renderings of states, transitions and trajectories.

The observation line follows the grammar
``Facing: <x>; Nearby: <groups>; Inventory: <items>; Status: <vitals>``.
Nearby groups are ordered by Chebyshev distance and alphabetised inside a
group; grass, sand and path count as background and are not listed, nor is
the faced tile (it already appears under Facing).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from . import gridworld as gw
from .trajectory import Trajectory

BACKGROUND = frozenset({gw.GRASS, gw.SAND, gw.PATH})
ITEM_TEXT = tuple(name.replace("wood ", "wooden ") for name in gw.INVENTORY_ITEMS)
DEFAULT_MAX_PROMPT_STEPS = 64
_CONSTRUCTIVE = frozenset(range(gw.Action.PLACE_STONE, gw.N_ACTIONS))


def _asset(name: str) -> str:
    return resources.files("oir").joinpath("assets", name).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def transition_phrases() -> dict:
    return json.loads(_asset("transition_phrases.json"))


def _nearby(state: gw.EnvState) -> str:
    grid = state.grid
    h, w = grid.shape
    x, y = state.pos
    fx, fy = state.faced
    r = gw.VIEW_RADIUS
    groups: dict[int, list[str]] = {}
    for yy in range(max(0, y - r), min(h, y + r + 1)):
        for xx in range(max(0, x - r), min(w, x + r + 1)):
            d = max(abs(xx - x), abs(yy - y))
            if d == 0 or (xx, yy) == (fx, fy):
                continue
            b = int(grid[yy, xx])
            if b not in BACKGROUND:
                groups.setdefault(d, []).append(gw.BLOCK_NAMES[b])
    for m in state.mobs:
        if not m.alive or m.kind == gw.PLANT_GROWING:
            continue
        d = max(abs(m.x - x), abs(m.y - y))
        if 1 <= d <= r and (m.x, m.y) != (fx, fy):
            groups.setdefault(d, []).append(gw.MOB_NAMES[m.kind])
    if not groups:
        return "nothing"
    return " ".join(f"[distance {d}] " + ", ".join(sorted(groups[d])) for d in sorted(groups))


def _inventory(inv) -> str:
    items = [f"{name} x{n}" for name, n in zip(ITEM_TEXT, inv) if n > 0]
    return ", ".join(items) if items else "nothing"


def render_observation(state: gw.EnvState) -> str:
    status = (
        f"health {state.health}, food {state.food}, drink {state.drink}, energy {state.energy}, "
        + ("asleep" if state.sleeping else "awake")
    )
    return (
        f"Facing: {gw.faced_name(state)}; Nearby: {_nearby(state)}; "
        f"Inventory: {_inventory(state.inventory)}; Status: {status}"
    )


def action_phrase(state: gw.EnvState, action: int) -> str:
    """Action name, with ``do`` replaced by the object the avatar faces.

    A sleeping avatar ignores its input, so the phrase is ``sleep``.
    """
    if state.sleeping:
        return gw.ACTION_NAMES[gw.Action.SLEEP]
    action = int(action)
    if action == gw.Action.DO:
        return gw.faced_name(state)
    return gw.ACTION_NAMES[action]


def render_transition(prev: gw.EnvState, action: int, nxt: gw.EnvState, events: gw.StepEvents) -> str:
    p = transition_phrases()
    parts = []
    for name, a, b in zip(ITEM_TEXT, prev.inventory, nxt.inventory):
        if b > a:
            parts.append(p["gained"].format(item=name))
    for name, a, b in zip(ITEM_TEXT, prev.inventory, nxt.inventory):
        if b < a:
            parts.append(p["lost"].format(item=name))
    for before, after in zip(prev.mobs, nxt.mobs):
        if before.alive and not after.alive and before.kind in (gw.ZOMBIE, gw.SKELETON) and after.health <= 0:
            parts.append(p["defeated"].format(mob=gw.MOB_NAMES[before.kind]))
    parts.extend(events.names)
    if parts:
        body = p["joiner"].join(parts)
    elif not prev.sleeping and int(action) in _CONSTRUCTIVE:
        # a craft or placement that did nothing should not read like one that worked
        body = p["failed"] + p["joiner"] + p["no_change"]
    else:
        body = p["no_change"]
    return action_phrase(prev, action) + p["separator"] + body


# -- prompts ------------------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    system: str
    block: str
    step: str

    @classmethod
    def default(cls) -> "PromptTemplate":
        return cls(
            system=_asset("oir_prompt.txt").rstrip("\n"),
            block=_asset("trajectory_block.txt").rstrip("\n"),
            step=_asset("trajectory_step.txt").rstrip("\n"),
        )

    @classmethod
    def from_file(cls, path) -> "PromptTemplate":
        base = cls.default()
        with open(path, encoding="utf-8") as fh:
            return cls(system=fh.read().rstrip("\n"), block=base.block, step=base.step)

    @property
    def preamble(self) -> str:
        return self.system.replace("{{trajectory}}", "").rstrip()


def stride_indices(n: int, max_steps: int) -> list[int]:
    """``min(n, max_steps)`` evenly spread indices, first and last always kept."""
    if n <= max_steps:
        return list(range(n))
    if max_steps == 1:
        return [n - 1]
    return [int(i) for i in np.round(np.linspace(0, n - 1, max_steps)).astype(int)]


def trajectory_block(trajectory: Trajectory, template: PromptTemplate | None = None,
                     max_steps: int = DEFAULT_MAX_PROMPT_STEPS) -> str:
    template = template or PromptTemplate.default()
    if len(trajectory) == 0:
        raise ValueError("cannot build a prompt from an empty trajectory")
    lines = []
    for t in stride_indices(len(trajectory), max_steps):
        s = trajectory.steps[t]
        lines.append(
            template.step.replace("{{t}}", str(t))
            .replace("{{observation}}", s.observation)
            .replace("{{action}}", s.action)
        )
    return template.block.replace("{{steps}}", "\n".join(lines))


def build_prompt(trajectory: Trajectory, template: PromptTemplate | None = None,
                 max_steps: int = DEFAULT_MAX_PROMPT_STEPS) -> str:
    """Full relabeling prompt: the system text with the trajectory block substituted."""
    template = template or PromptTemplate.default()
    return template.system.replace("{{trajectory}}", trajectory_block(trajectory, template, max_steps))


def build_messages(trajectory: Trajectory, template: PromptTemplate | None = None,
                   max_steps: int = DEFAULT_MAX_PROMPT_STEPS) -> list[dict]:
    template = template or PromptTemplate.default()
    return [
        {"role": "system", "content": template.preamble},
        {"role": "user", "content": trajectory_block(trajectory, template, max_steps)},
    ]
