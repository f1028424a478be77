"""Crafter-style survival gridworld.

States are immutable values: :func:`step` never mutates its input and all
randomness is drawn from a splitmix64 counter carried inside the state, so
``(state, action)`` fully determines the successor.

Coordinates are ``(x, y)`` with ``grid[y, x]``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

import numpy as np

OBSERVATION_LAYOUT_VERSION = 1
VIEW_RADIUS = 3
VIEW_SIZE = 2 * VIEW_RADIUS + 1

# block ids
GRASS, TREE, STONE, COAL, IRON, DIAMOND, WATER, SAND, PATH, TABLE, FURNACE, PLANT, SAPLING = range(13)
BLOCK_NAMES = (
    "grass", "tree", "stone", "coal", "iron", "diamond", "water",
    "sand", "path", "table", "furnace", "plant", "sapling",
)
N_BLOCKS = len(BLOCK_NAMES)
WALKABLE = frozenset({GRASS, SAND, PATH})

# mob kinds
ZOMBIE, SKELETON, COW, ARROW, PLANT_GROWING = range(5)
MOB_NAMES = ("zombie", "skeleton", "cow", "arrow", "plant")
N_MOB_KINDS = len(MOB_NAMES)

INVENTORY_ITEMS = (
    "wood", "stone", "coal", "iron", "diamond", "sapling",
    "wood pickaxe", "stone pickaxe", "iron pickaxe",
    "wood sword", "stone sword", "iron sword",
)
(WOOD_I, STONE_I, COAL_I, IRON_I, DIAMOND_I, SAPLING_I,
 WOOD_PICKAXE_I, STONE_PICKAXE_I, IRON_PICKAXE_I,
 WOOD_SWORD_I, STONE_SWORD_I, IRON_SWORD_I) = range(12)
MAX_COUNT = 9

ACHIEVEMENTS = (
    "collect wood",
    "place table",
    "eat cow",
    "collect sapling",
    "collect drink",
    "make wooden pickaxe",
    "make wooden sword",
    "place plant",
    "defeat zombie",
    "collect stone",
    "place stone",
    "eat plant",
    "defeat skeleton",
    "make stone pickaxe",
    "make stone sword",
    "wake up",
    "place furnace",
    "collect coal",
    "collect iron",
    "collect diamond",
    "make iron pickaxe",
    "make iron sword",
)
ACHIEVEMENT_INDEX = {name: i for i, name in enumerate(ACHIEVEMENTS)}

FACINGS = ("left", "right", "up", "down")
DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class Action(IntEnum):
    NOOP = 0
    LEFT = 1
    RIGHT = 2
    UP = 3
    DOWN = 4
    DO = 5
    SLEEP = 6
    PLACE_STONE = 7
    PLACE_TABLE = 8
    PLACE_FURNACE = 9
    PLACE_PLANT = 10
    MAKE_WOOD_PICKAXE = 11
    MAKE_STONE_PICKAXE = 12
    MAKE_IRON_PICKAXE = 13
    MAKE_WOOD_SWORD = 14
    MAKE_STONE_SWORD = 15
    MAKE_IRON_SWORD = 16

    @property
    def label(self) -> str:
        return self.name.lower()


N_ACTIONS = len(Action)
ACTION_NAMES = tuple(a.label for a in Action)


def achievement_names() -> list[str]:
    """The 22 canonical achievement strings, in their fixed order."""
    return list(ACHIEVEMENTS)


class Mob(NamedTuple):
    kind: int
    x: int
    y: int
    health: int = 0
    cooldown: int = 0
    alive: bool = False
    facing: int = 0


@dataclass(frozen=True)
class EnvConfig:
    height: int = 16
    width: int = 16
    horizon: int = 500
    zombie_budget: int = 4
    skeleton_budget: int = 4
    cow_budget: int = 4
    arrow_budget: int = 4
    plant_budget: int = 4
    zombies: int = 2
    skeletons: int = 2
    cows: int = 3
    vital_interval: int = 25
    health_interval: int = 10
    sleep_regen_interval: int = 5
    plant_grow_time: int = 20
    sapling_prob: float = 0.1
    zombie_health: int = 5
    skeleton_health: int = 3
    cow_health: int = 3
    zombie_damage: int = 2
    zombie_cooldown: int = 5
    arrow_damage: int = 2
    skeleton_cooldown: int = 4
    skeleton_range: int = 4
    day_length: int = 300
    tree_density: float = 0.12
    mountain_fraction: float = 0.2
    lake_fraction: float = 0.06

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("zombie_budget", "skeleton_budget", "cow_budget", "arrow_budget", "plant_budget"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.zombies > self.zombie_budget or self.skeletons > self.skeleton_budget or self.cows > self.cow_budget:
            raise ValueError("initial mob counts exceed their budgets")

    def budget(self, kind: int) -> int:
        return (self.zombie_budget, self.skeleton_budget, self.cow_budget,
                self.arrow_budget, self.plant_budget)[kind]

    def slot_ranges(self) -> list[range]:
        """Index range of each mob kind inside ``EnvState.mobs``."""
        out, start = [], 0
        for kind in range(N_MOB_KINDS):
            n = self.budget(kind)
            out.append(range(start, start + n))
            start += n
        return out


@dataclass(frozen=True)
class EnvState:
    config: EnvConfig
    grid: np.ndarray
    mobs: tuple
    pos: tuple
    facing: int
    health: int
    food: int
    drink: int
    energy: int
    sleeping: bool
    inventory: tuple
    achievements: tuple
    time: int
    light: float
    rng: int = field(repr=False)

    def mob_at(self, x: int, y: int) -> int:
        for i, m in enumerate(self.mobs):
            if m.alive and m.x == x and m.y == y and m.kind != PLANT_GROWING:
                return i
        return -1

    @property
    def faced(self) -> tuple:
        dx, dy = DIRECTIONS[self.facing]
        return self.pos[0] + dx, self.pos[1] + dy

    @property
    def dead(self) -> bool:
        return self.health <= 0

    def replace(self, **changes) -> "EnvState":
        if "grid" in changes:
            g = np.array(changes["grid"], dtype=np.int8)
            g.flags.writeable = False
            changes["grid"] = g
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class StepEvents:
    achievements: tuple = ()
    died: bool = False

    @property
    def names(self) -> tuple:
        return tuple(ACHIEVEMENTS[i] for i in self.achievements)


def is_terminal(state: EnvState) -> bool:
    return state.dead or state.time >= state.config.horizon


# -- randomness ---------------------------------------------------------------

_MASK = (1 << 64) - 1


def _mix(s: int) -> tuple:
    s = (s + 0x9E3779B97F4A7C15) & _MASK
    z = s
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return s, z ^ (z >> 31)


class _Stream:
    __slots__ = ("s",)

    def __init__(self, s: int):
        self.s = s

    def draw(self) -> int:
        self.s, z = _mix(self.s)
        return z

    def uniform(self) -> float:
        return (self.draw() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        return self.draw() % n


def seed_stream(seed: int) -> int:
    return _mix(int(seed) & _MASK)[1]


# -- world generation ---------------------------------------------------------

def _blob(rng: np.random.Generator, mask: np.ndarray, size: int, free: np.ndarray) -> None:
    h, w = mask.shape
    cand = np.argwhere(free)
    if len(cand) == 0 or size <= 0:
        return
    y, x = cand[rng.integers(len(cand))]
    frontier = [(int(y), int(x))]
    placed = 0
    while frontier and placed < size:
        y, x = frontier.pop(int(rng.integers(len(frontier))))
        if mask[y, x] or not free[y, x]:
            continue
        mask[y, x] = True
        placed += 1
        for dy, dx in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and not mask[ny, nx] and free[ny, nx]:
                frontier.append((ny, nx))


def _reachable(grid: np.ndarray, start: tuple) -> np.ndarray:
    h, w = grid.shape
    seen = np.zeros_like(grid, dtype=bool)
    x0, y0 = start
    seen[y0, x0] = True
    stack = [(x0, y0)]
    while stack:
        x, y = stack.pop()
        for dx, dy in DIRECTIONS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and not seen[ny, nx] and int(grid[ny, nx]) in WALKABLE:
                seen[ny, nx] = True
                stack.append((nx, ny))
    return seen


def _touches(seen: np.ndarray, grid: np.ndarray, block: int) -> bool:
    hit = grid == block
    near = np.zeros_like(hit)
    near[1:, :] |= seen[:-1, :]
    near[:-1, :] |= seen[1:, :]
    near[:, 1:] |= seen[:, :-1]
    near[:, :-1] |= seen[:, 1:]
    return bool((hit & near).any())


def _generate(rng: np.random.Generator, cfg: EnvConfig):
    h, w = cfg.height, cfg.width
    area = h * w
    grid = np.full((h, w), GRASS, dtype=np.int8)

    mountain = np.zeros((h, w), dtype=bool)
    _blob(rng, mountain, max(1, int(cfg.mountain_fraction * area)), np.ones((h, w), dtype=bool))
    r = rng.random((h, w))
    grid[mountain] = STONE
    grid[mountain & (r < 0.10)] = PATH
    grid[mountain & (r >= 0.10) & (r < 0.22)] = COAL
    grid[mountain & (r >= 0.22) & (r < 0.28)] = IRON
    grid[mountain & (r >= 0.28) & (r < 0.30)] = DIAMOND

    lake = np.zeros((h, w), dtype=bool)
    _blob(rng, lake, max(1, int(cfg.lake_fraction * area)), ~mountain)
    grid[lake] = WATER
    shore = np.zeros_like(lake)
    shore[1:, :] |= lake[:-1, :]
    shore[:-1, :] |= lake[1:, :]
    shore[:, 1:] |= lake[:, :-1]
    shore[:, :-1] |= lake[:, 1:]
    shore &= (grid == GRASS) & (rng.random((h, w)) < 0.6)
    grid[shore] = SAND

    forest = np.zeros((h, w), dtype=bool)
    _blob(rng, forest, max(1, int(0.25 * area)), grid == GRASS)
    r = rng.random((h, w))
    trees = (grid == GRASS) & ((forest & (r < cfg.tree_density * 3)) | (r < cfg.tree_density / 3))
    grid[trees] = TREE

    grass = np.argwhere(grid == GRASS)
    if len(grass) == 0:
        return None
    y, x = grass[rng.integers(len(grass))]
    start = (int(x), int(y))
    seen = _reachable(grid, start)
    if not all(_touches(seen, grid, b) for b in (TREE, STONE, WATER)):
        return None
    return grid, start, seen


def _place_mobs(rng: np.random.Generator, cfg: EnvConfig, grid: np.ndarray, start: tuple) -> tuple:
    taken = {start}
    mobs = []
    sx, sy = start
    wanted = (cfg.zombies, cfg.skeletons, cfg.cows, 0, 0)
    spots = {
        ZOMBIE: [(int(x), int(y)) for y, x in np.argwhere(grid == GRASS) if max(abs(x - sx), abs(y - sy)) >= 4],
        SKELETON: [(int(x), int(y)) for y, x in np.argwhere(grid == PATH)],
        COW: [(int(x), int(y)) for y, x in np.argwhere(grid == GRASS)],
    }
    health = {ZOMBIE: cfg.zombie_health, SKELETON: cfg.skeleton_health, COW: cfg.cow_health}
    for kind in range(N_MOB_KINDS):
        placed = 0
        pool = [p for p in spots.get(kind, []) if p not in taken]
        order = rng.permutation(len(pool)) if pool else []
        for j in order:
            if placed >= wanted[kind]:
                break
            p = pool[int(j)]
            if p in taken:
                continue
            taken.add(p)
            mobs.append(Mob(kind, p[0], p[1], health[kind], 0, True, int(rng.integers(4))))
            placed += 1
        mobs.extend(Mob(kind, 0, 0) for _ in range(cfg.budget(kind) - placed))
    return tuple(mobs)


def reset(seed: int, config: EnvConfig | None = None) -> EnvState:
    """Procedurally generate a fresh world.

    Raises ``ValueError`` when the grid is too small for the required
    resources (tree, stone and water reachable from the spawn tile).
    """
    cfg = config or EnvConfig()
    if cfg.height < 8 or cfg.width < 8:
        raise ValueError(
            f"cannot place required resources on a {cfg.height}x{cfg.width} grid (need at least 8x8)"
        )
    for attempt in range(64):
        rng = np.random.default_rng([int(seed) & _MASK, attempt])
        out = _generate(rng, cfg)
        if out is not None:
            break
    else:
        raise ValueError(f"could not place reachable tree/stone/water with seed {seed}")
    grid, start, _ = out
    mobs = _place_mobs(rng, cfg, grid, start)
    grid.flags.writeable = False
    return EnvState(
        config=cfg,
        grid=grid,
        mobs=mobs,
        pos=start,
        facing=3,
        health=9,
        food=9,
        drink=9,
        energy=9,
        sleeping=False,
        inventory=(0,) * len(INVENTORY_ITEMS),
        achievements=(False,) * len(ACHIEVEMENTS),
        time=0,
        light=1.0,
        rng=seed_stream(seed),
    )


# -- dynamics -----------------------------------------------------------------

_RECIPES = {
    # action: (inventory index produced, {index: cost}, needs furnace, achievement)
    Action.MAKE_WOOD_PICKAXE: (WOOD_PICKAXE_I, {WOOD_I: 1}, False, "make wooden pickaxe"),
    Action.MAKE_STONE_PICKAXE: (STONE_PICKAXE_I, {STONE_I: 1}, False, "make stone pickaxe"),
    Action.MAKE_IRON_PICKAXE: (IRON_PICKAXE_I, {IRON_I: 1, COAL_I: 1}, True, "make iron pickaxe"),
    Action.MAKE_WOOD_SWORD: (WOOD_SWORD_I, {WOOD_I: 1}, False, "make wooden sword"),
    Action.MAKE_STONE_SWORD: (STONE_SWORD_I, {STONE_I: 1}, False, "make stone sword"),
    Action.MAKE_IRON_SWORD: (IRON_SWORD_I, {IRON_I: 1, COAL_I: 1}, True, "make iron sword"),
}

# ore: (required pickaxe slot or None, inventory slot, achievement)
_MINEABLE = {
    STONE: (WOOD_PICKAXE_I, STONE_I, "collect stone"),
    COAL: (WOOD_PICKAXE_I, COAL_I, "collect coal"),
    IRON: (STONE_PICKAXE_I, IRON_I, "collect iron"),
    DIAMOND: (IRON_PICKAXE_I, DIAMOND_I, "collect diamond"),
}


def _near(grid: np.ndarray, pos: tuple, block: int) -> bool:
    x, y = pos
    h, w = grid.shape
    return bool((grid[max(0, y - 1):min(h, y + 2), max(0, x - 1):min(w, x + 2)] == block).any())


def _damage(inv) -> int:
    if inv[IRON_SWORD_I]:
        return 5
    if inv[STONE_SWORD_I]:
        return 3
    if inv[WOOD_SWORD_I]:
        return 2
    return 1


def step(state: EnvState, action: int) -> tuple:
    """Advance one tick. Returns ``(next_state, StepEvents)``.

    Actions that cannot be carried out (missing materials, blocked tile)
    leave the world unchanged apart from the clock and scheduled decay.
    """
    cfg = state.config
    rng = _Stream(state.rng)
    grid = state.grid
    h, w = grid.shape
    copied = False
    mobs = list(state.mobs)
    inv = list(state.inventory)
    fired = []
    x, y = state.pos
    facing = state.facing
    health, food, drink, energy = state.health, state.food, state.drink, state.energy
    sleeping = state.sleeping
    was_sleeping = sleeping
    occupied = {(m.x, m.y): i for i, m in enumerate(mobs) if m.alive and m.kind != PLANT_GROWING}
    action = int(action)
    if sleeping:
        action = Action.NOOP

    def put(px, py, block):
        nonlocal grid, copied
        if not copied:
            grid = grid.copy()
            copied = True
        grid[py, px] = block

    if 1 <= action <= 4:
        facing = action - 1
        dx, dy = DIRECTIONS[facing]
        nx, ny = x + dx, y + dy
        if 0 <= nx < w and 0 <= ny < h and int(grid[ny, nx]) in WALKABLE and (nx, ny) not in occupied:
            x, y = nx, ny
    elif action == Action.DO:
        dx, dy = DIRECTIONS[facing]
        tx, ty = x + dx, y + dy
        if 0 <= tx < w and 0 <= ty < h:
            mi = occupied.get((tx, ty), -1)
            if mi >= 0 and mobs[mi].kind != ARROW:
                m = mobs[mi]
                left = m.health - _damage(inv)
                if left > 0:
                    mobs[mi] = m._replace(health=left)
                else:
                    mobs[mi] = m._replace(health=0, alive=False)
                    del occupied[(tx, ty)]
                    if m.kind == ZOMBIE:
                        fired.append("defeat zombie")
                    elif m.kind == SKELETON:
                        fired.append("defeat skeleton")
                    else:
                        food = min(MAX_COUNT, food + 6)
                        fired.append("eat cow")
            elif mi < 0:
                block = int(grid[ty, tx])
                if block == TREE:
                    inv[WOOD_I] = min(MAX_COUNT, inv[WOOD_I] + 1)
                    fired.append("collect wood")
                elif block in _MINEABLE:
                    tool, slot, name = _MINEABLE[block]
                    if inv[tool] > 0:
                        inv[slot] = min(MAX_COUNT, inv[slot] + 1)
                        put(tx, ty, PATH)
                        fired.append(name)
                elif block == WATER:
                    drink = min(MAX_COUNT, drink + 1)
                    fired.append("collect drink")
                elif block == GRASS:
                    if rng.uniform() < cfg.sapling_prob:
                        inv[SAPLING_I] = min(MAX_COUNT, inv[SAPLING_I] + 1)
                        fired.append("collect sapling")
                elif block == PLANT:
                    food = min(MAX_COUNT, food + 4)
                    put(tx, ty, GRASS)
                    for i, m in enumerate(mobs):
                        if m.alive and m.kind == PLANT_GROWING and m.x == tx and m.y == ty:
                            mobs[i] = m._replace(alive=False)
                    fired.append("eat plant")
    elif action == Action.SLEEP:
        sleeping = True
    elif Action.PLACE_STONE <= action <= Action.PLACE_PLANT:
        dx, dy = DIRECTIONS[facing]
        tx, ty = x + dx, y + dy
        if 0 <= tx < w and 0 <= ty < h and (tx, ty) not in occupied:
            target = int(grid[ty, tx])
            if action == Action.PLACE_STONE:
                if inv[STONE_I] >= 1 and target in WALKABLE:
                    inv[STONE_I] -= 1
                    put(tx, ty, STONE)
                    fired.append("place stone")
            elif action == Action.PLACE_TABLE:
                if inv[WOOD_I] >= 1 and target in WALKABLE:
                    inv[WOOD_I] -= 1
                    put(tx, ty, TABLE)
                    fired.append("place table")
            elif action == Action.PLACE_FURNACE:
                if inv[STONE_I] >= 1 and target in WALKABLE and _near(grid, (x, y), TABLE):
                    inv[STONE_I] -= 1
                    put(tx, ty, FURNACE)
                    fired.append("place furnace")
            else:
                if inv[SAPLING_I] >= 1 and target == GRASS:
                    slots = cfg.slot_ranges()[PLANT_GROWING]
                    free = [i for i in slots if not mobs[i].alive]
                    if free:
                        inv[SAPLING_I] -= 1
                        put(tx, ty, SAPLING)
                        mobs[free[0]] = Mob(PLANT_GROWING, tx, ty, 1, cfg.plant_grow_time, True, 0)
                        fired.append("place plant")
    elif action in _RECIPES:
        out, cost, furnace, name = _RECIPES[Action(action)]
        ok = _near(grid, (x, y), TABLE) and (not furnace or _near(grid, (x, y), FURNACE))
        if ok and all(inv[k] >= v for k, v in cost.items()):
            for k, v in cost.items():
                inv[k] -= v
            inv[out] = min(MAX_COUNT, inv[out] + 1)
            fired.append(name)

    # mobs
    hurt = 0
    for i in range(len(mobs)):
        m = mobs[i]
        if not m.alive:
            continue
        if m.kind == PLANT_GROWING:
            if m.cooldown > 0:
                cd = m.cooldown - 1
                mobs[i] = m._replace(cooldown=cd)
                if cd == 0 and int(grid[m.y, m.x]) == SAPLING:
                    put(m.x, m.y, PLANT)
            continue
        if m.kind == ARROW:
            dx, dy = DIRECTIONS[m.facing]
            nx, ny = m.x + dx, m.y + dy
            del occupied[(m.x, m.y)]
            if (nx, ny) == (x, y):
                hurt += cfg.arrow_damage
                mobs[i] = m._replace(alive=False)
            elif 0 <= nx < w and 0 <= ny < h and int(grid[ny, nx]) in WALKABLE and (nx, ny) not in occupied:
                mobs[i] = m._replace(x=nx, y=ny)
                occupied[(nx, ny)] = i
            else:
                mobs[i] = m._replace(alive=False)
            continue
        cd = max(0, m.cooldown - 1)
        dist = abs(m.x - x) + abs(m.y - y)
        if m.kind == ZOMBIE and dist == 1:
            if cd == 0:
                hurt += cfg.zombie_damage
                cd = cfg.zombie_cooldown
            mobs[i] = m._replace(cooldown=cd)
            continue
        if m.kind == SKELETON and dist <= cfg.skeleton_range and cd == 0 and (m.x == x or m.y == y):
            f = (0 if x < m.x else 1) if m.y == y else (2 if y < m.y else 3)
            dx, dy = DIRECTIONS[f]
            ax, ay = m.x + dx, m.y + dy
            slots = [j for j in cfg.slot_ranges()[ARROW] if not mobs[j].alive]
            if slots and (ax, ay) != (x, y) and 0 <= ax < w and 0 <= ay < h \
                    and int(grid[ay, ax]) in WALKABLE and (ax, ay) not in occupied:
                mobs[slots[0]] = Mob(ARROW, ax, ay, 1, 0, True, f)
                occupied[(ax, ay)] = slots[0]
            elif (ax, ay) == (x, y):
                hurt += cfg.arrow_damage
            mobs[i] = m._replace(cooldown=cfg.skeleton_cooldown, facing=f)
            continue
        r = rng.below(8)
        if r < 4:
            dx, dy = DIRECTIONS[r]
            nx, ny = m.x + dx, m.y + dy
            allowed = (PATH,) if m.kind == SKELETON else (GRASS, SAND, PATH)
            if 0 <= nx < w and 0 <= ny < h and int(grid[ny, nx]) in allowed \
                    and (nx, ny) not in occupied and (nx, ny) != (x, y):
                del occupied[(m.x, m.y)]
                occupied[(nx, ny)] = i
                mobs[i] = m._replace(x=nx, y=ny, cooldown=cd, facing=r)
                continue
        mobs[i] = m._replace(cooldown=cd)

    # vitals
    t = state.time + 1
    if t % cfg.vital_interval == 0:
        food = max(0, food - 1)
        drink = max(0, drink - 1)
        if not sleeping:
            energy = max(0, energy - 1)
    if sleeping and t % cfg.sleep_regen_interval == 0:
        energy = min(MAX_COUNT, energy + 1)
    if t % cfg.health_interval == 0:
        if food == 0 or drink == 0 or energy == 0:
            health -= 1
        else:
            health = min(MAX_COUNT, health + 1)
    health = max(0, health - hurt)
    if was_sleeping and sleeping and (energy >= MAX_COUNT or hurt > 0):
        sleeping = False
        fired.append("wake up")

    flags = list(state.achievements)
    new = []
    for name in fired:
        k = ACHIEVEMENT_INDEX[name]
        if not flags[k]:
            flags[k] = True
            new.append(k)

    if copied:
        grid.flags.writeable = False
    phase = (t % cfg.day_length) / cfg.day_length
    nxt = EnvState(
        config=cfg,
        grid=grid,
        mobs=tuple(mobs),
        pos=(x, y),
        facing=facing,
        health=health,
        food=food,
        drink=drink,
        energy=energy,
        sleeping=sleeping,
        inventory=tuple(inv),
        achievements=tuple(flags),
        time=t,
        light=0.5 * (1.0 + math.cos(2.0 * math.pi * phase)),
        rng=rng.s,
    )
    return nxt, StepEvents(tuple(new), health <= 0)


# -- observation encoding -----------------------------------------------------

_EYE_BLOCKS = np.vstack([np.eye(N_BLOCKS, dtype=np.float32), np.zeros((1, N_BLOCKS), dtype=np.float32)])

WINDOW_SIZE = VIEW_SIZE * VIEW_SIZE * N_BLOCKS
MOB_COUNT_SIZE = N_MOB_KINDS * VIEW_RADIUS
FACED_SIZE = N_BLOCKS + N_MOB_KINDS
OBS_DIM = WINDOW_SIZE + MOB_COUNT_SIZE + FACED_SIZE + len(INVENTORY_ITEMS) + 4


def observation_layout() -> dict:
    """Slices of each section of the encoded observation vector."""
    bounds = {}
    start = 0
    for name, size in (
        ("window", WINDOW_SIZE),
        ("mob_counts", MOB_COUNT_SIZE),
        ("faced", FACED_SIZE),
        ("inventory", len(INVENTORY_ITEMS)),
        ("vitals", 4),
    ):
        bounds[name] = slice(start, start + size)
        start += size
    return bounds


LAYOUT = observation_layout()


def mob_count_index(kind: int, distance: int) -> int:
    return LAYOUT["mob_counts"].start + kind * VIEW_RADIUS + (distance - 1)


def encode_observation(state: EnvState, out: np.ndarray | None = None) -> np.ndarray:
    """Encode ``state`` as a flat float32 vector with entries in [0, 1].

    Layout (version ``OBSERVATION_LAYOUT_VERSION``):
    ``[7x7 window one-hot (row-major, 13 blocks) | mob counts per kind at
    Chebyshev distance 1..3 / budget | faced tile one-hot (13 blocks then 5
    mob kinds) | inventory / 9 | health, food, drink, energy / 9]``.
    Out-of-bounds window tiles and faced tiles encode as all zeros.
    """
    vec = np.zeros(OBS_DIM, dtype=np.float32) if out is None else out
    if out is not None:
        vec.fill(0.0)
    grid = state.grid
    h, w = grid.shape
    x, y = state.pos
    r = VIEW_RADIUS
    y0, y1 = max(0, y - r), min(h, y + r + 1)
    x0, x1 = max(0, x - r), min(w, x + r + 1)
    ids = np.full((VIEW_SIZE, VIEW_SIZE), N_BLOCKS, dtype=np.int8)
    ids[y0 - y + r:y1 - y + r, x0 - x + r:x1 - x + r] = grid[y0:y1, x0:x1]
    vec[:WINDOW_SIZE] = _EYE_BLOCKS[ids.ravel()].ravel()

    cfg = state.config
    base = WINDOW_SIZE
    fx, fy = state.faced
    faced_mob = -1
    for m in state.mobs:
        if not m.alive:
            continue
        d = max(abs(m.x - x), abs(m.y - y))
        if 1 <= d <= VIEW_RADIUS:
            vec[base + m.kind * VIEW_RADIUS + d - 1] += 1.0 / cfg.budget(m.kind)
        if m.x == fx and m.y == fy and m.kind != PLANT_GROWING:
            faced_mob = m.kind
    base += MOB_COUNT_SIZE
    if faced_mob >= 0:
        vec[base + N_BLOCKS + faced_mob] = 1.0
    elif 0 <= fx < w and 0 <= fy < h:
        vec[base + int(grid[fy, fx])] = 1.0
    base += FACED_SIZE
    vec[base:] = state.inventory + (state.health, state.food, state.drink, state.energy)
    vec[base:] /= MAX_COUNT
    return vec


def faced_name(state: EnvState) -> str:
    """Name of the mob or block directly ahead of the avatar."""
    fx, fy = state.faced
    h, w = state.grid.shape
    if not (0 <= fx < w and 0 <= fy < h):
        return "edge"
    mi = state.mob_at(fx, fy)
    if mi >= 0:
        return MOB_NAMES[state.mobs[mi].kind]
    return BLOCK_NAMES[int(state.grid[fy, fx])]


# -- (de)serialisation for checkpoints ----------------------------------------

def state_to_dict(state: EnvState) -> dict:
    return {
        "config": dataclasses.asdict(state.config),
        "grid": state.grid.tolist(),
        "mobs": [list(m) for m in state.mobs],
        "pos": list(state.pos),
        "facing": state.facing,
        "health": state.health,
        "food": state.food,
        "drink": state.drink,
        "energy": state.energy,
        "sleeping": state.sleeping,
        "inventory": list(state.inventory),
        "achievements": list(state.achievements),
        "time": state.time,
        "light": state.light,
        "rng": state.rng,
    }


def state_from_dict(d: dict) -> EnvState:
    grid = np.array(d["grid"], dtype=np.int8)
    grid.flags.writeable = False
    return EnvState(
        config=EnvConfig(**d["config"]),
        grid=grid,
        mobs=tuple(Mob(int(m[0]), int(m[1]), int(m[2]), int(m[3]), int(m[4]), bool(m[5]), int(m[6]))
                   for m in d["mobs"]),
        pos=(int(d["pos"][0]), int(d["pos"][1])),
        facing=int(d["facing"]),
        health=int(d["health"]),
        food=int(d["food"]),
        drink=int(d["drink"]),
        energy=int(d["energy"]),
        sleeping=bool(d["sleeping"]),
        inventory=tuple(int(v) for v in d["inventory"]),
        achievements=tuple(bool(v) for v in d["achievements"]),
        time=int(d["time"]),
        light=float(d["light"]),
        rng=int(d["rng"]),
    )
