"""Hand-built environment states for tests."""
import numpy as np

from oir import gridworld as gw


def blank_state(pos=(8, 8), facing=3, inventory=None, mobs=(), blocks=(), seed=7, config=None):
    """All-grass world with the given blocks ``[(x, y, block)]`` and live mobs ``[(kind, x, y)]``."""
    base = gw.reset(seed, config)
    cfg = base.config
    grid = np.full((cfg.height, cfg.width), gw.GRASS, dtype=np.int8)
    for x, y, b in blocks:
        grid[y, x] = b
    slots = [gw.Mob(kind, 0, 0) for kind, r in enumerate(cfg.slot_ranges()) for _ in r]
    used = {k: 0 for k in range(gw.N_MOB_KINDS)}
    health = {gw.ZOMBIE: cfg.zombie_health, gw.SKELETON: cfg.skeleton_health, gw.COW: cfg.cow_health}
    for kind, x, y in mobs:
        i = cfg.slot_ranges()[kind][used[kind]]
        used[kind] += 1
        slots[i] = gw.Mob(kind, x, y, health.get(kind, 1), 0, True, 0)
    inv = [0] * len(gw.INVENTORY_ITEMS)
    for name, n in (inventory or {}).items():
        inv[gw.INVENTORY_ITEMS.index(name)] = n
    return base.replace(grid=grid, mobs=tuple(slots), pos=pos, facing=facing, inventory=tuple(inv))
