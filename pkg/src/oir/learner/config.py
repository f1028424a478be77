from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .. import gridworld as gw

MODES = ("oir", "cosine-baseline", "ground-truth-baseline")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "oir"
    seed: int = 0
    total_timesteps: int = 300_000
    num_envs: int = 8
    num_steps: int = 64
    gamma: float = 0.99
    lam: float = 0.5
    eps_start: float = 1.0
    eps_finish: float = 0.1
    eps_decay_ratio: float = 0.1
    minibatches: int = 4
    epochs: int = 8
    lr: float = 1e-5
    lr_linear_decay: bool = True
    max_grad_norm: float = 0.5
    optimizer: str = "sgd"
    hidden: int = 128
    layer_norm: bool = True
    input_norm: bool = True
    delta: float = 0.9
    reward_mode: str = "binary"
    k: int = 8
    relabeler: str = "oracle"
    llm_fallback: bool = True
    llm_per_sample: bool = False
    buffer_capacity: int = 10
    tau_low: float = 0.1
    tau_high: float = 0.9
    pin_seeds: bool = False
    instructions: tuple | None = None   # seed instructions; None means the 22 originals
    eval_every: int = 0                 # steps between evaluations; 0 evaluates only at the end
    eval_episodes: int = 20
    eval_seed: int = 10_000
    eval_targets: tuple | None = None   # restrict evaluation to these achievements
    log_every: int = 1                  # iterations between metrics records
    checkpoint_every: int = 0           # iterations between checkpoints; 0 writes only the final one

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.eps_finish > self.eps_start:
            raise ValueError("eps_finish must not exceed eps_start")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.reward_mode not in ("binary", "continuous"):
            raise ValueError("reward_mode must be 'binary' or 'continuous'")
        if self.relabeler not in ("oracle", "llm"):
            raise ValueError("relabeler must be 'oracle' or 'llm'")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        for name in ("total_timesteps", "num_envs", "num_steps", "minibatches", "epochs", "k",
                     "buffer_capacity", "eval_episodes", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden < 0:
            raise ValueError("hidden must be >= 0")
        if self.instructions is not None:
            object.__setattr__(self, "instructions", tuple(self.instructions))
            if not self.instructions:
                raise ValueError("instructions must not be empty")
        if self.eval_targets is not None:
            object.__setattr__(self, "eval_targets", tuple(self.eval_targets))
            unknown = [t for t in self.eval_targets if t not in gw.ACHIEVEMENT_INDEX]
            if unknown:
                raise ValueError(f"unknown eval targets {unknown}")

    @property
    def batch_steps(self) -> int:
        return self.num_envs * self.num_steps

    @property
    def iterations(self) -> int:
        return max(1, self.total_timesteps // self.batch_steps)

    @property
    def seed_instructions(self) -> tuple:
        return self.instructions if self.instructions is not None else tuple(gw.ACHIEVEMENTS)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("instructions", "eval_targets"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train keys {sorted(unknown)}")
        return cls(**d)
