from .config import MODES, TrainConfig
from .network import QNetwork, q_values
from .qlearning import act, act_batch, epsilon_at, lambda_returns, lambda_targets, update

__all__ = [
    "MODES", "TrainConfig", "QNetwork", "q_values", "act", "act_batch", "epsilon_at",
    "lambda_returns", "lambda_targets", "update",
]
