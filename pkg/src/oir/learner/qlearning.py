"""Exploration, Q(lambda) targets and the minibatch update."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


def act(qs, epsilon: float, rng) -> int:
    """Epsilon-greedy; ``argmax`` breaks ties toward the lowest index."""
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(len(qs)))
    return int(np.argmax(qs))


def act_batch(qs: np.ndarray, epsilon: float, rng) -> np.ndarray:
    n, k = qs.shape
    greedy = np.argmax(qs, axis=1)
    explore = rng.random(n) < epsilon
    random = rng.integers(k, size=n)
    return np.where(explore, random, greedy)


def epsilon_at(step: int, eps_start: float = 1.0, eps_finish: float = 0.1, decay_ratio: float = 0.1,
               total_steps: int = 10_000_000) -> float:
    horizon = decay_ratio * total_steps
    if horizon <= 0 or step >= horizon:
        return eps_finish
    return eps_start + (eps_finish - eps_start) * step / horizon


def lambda_returns(rewards, dones, next_max_q, gamma: float, lam: float) -> np.ndarray:
    """Backward Q(lambda) recursion along axis 0.

    ``G_t = r_t + gamma * ((1 - lam) * maxQ(s_{t+1}) + lam * G_{t+1})``, with
    ``G_t = r_t`` wherever ``done_t`` and the last step bootstrapping from
    ``maxQ(s_{T+1})`` alone.
    """
    r = np.asarray(rewards, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    q = np.asarray(next_max_q, dtype=np.float64)
    g = np.empty_like(r)
    nxt = q[-1]
    for t in range(r.shape[0] - 1, -1, -1):
        boot = q[t] if t == r.shape[0] - 1 else (1.0 - lam) * q[t] + lam * nxt
        g[t] = np.where(d[t], r[t], r[t] + gamma * boot)
        nxt = g[t]
    return g


def lambda_targets(net, obs_next, emb, rewards, dones, gamma: float, lam: float) -> np.ndarray:
    """Targets for one sequence: bootstrap values come from ``net`` on ``obs_next``."""
    q = net.forward(net.inputs(obs_next, emb)).max(axis=1)
    return lambda_returns(rewards, dones, q, gamma, lam)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_grads(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}
    return grads, norm


class SGD:
    name = "sgd"

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for k, g in grads.items():
            params[k] -= np.asarray(lr, dtype=params[k].dtype) * g

    def state(self) -> dict:
        return {}

    def load(self, state: dict) -> None:
        pass


class Adam:
    name = "adam"

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        out = {"t": np.array(self.t)}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load(self, state: dict) -> None:
        self.t = int(state.get("t", 0))
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v/")}


def make_optimizer(name: str):
    if name == "sgd":
        return SGD()
    if name == "adam":
        return Adam()
    raise ValueError(f"unknown optimizer {name!r}; expected 'sgd' or 'adam'")


class NonFiniteLoss(FloatingPointError):
    pass


def update(net, optimizer, x: np.ndarray, actions: np.ndarray, targets: np.ndarray, lr: float, rng,
           epochs: int = 8, minibatches: int = 4, max_grad_norm: float = 0.5, dump_dir=None) -> dict:
    """Shuffled ``epochs x minibatches`` passes of clipped gradient steps on the TD loss.

    ``x`` holds already-normalised network inputs.  Returns mean loss and
    pre-clip gradient norm.
    """
    n = x.shape[0]
    if n == 0:
        return {"loss": 0.0, "grad_norm": 0.0}
    targets = np.asarray(targets, dtype=net.dtype)
    losses, norms = [], []
    for _ in range(epochs):
        order = rng.permutation(n)
        for idx in np.array_split(order, minibatches):
            if idx.size == 0:
                continue
            loss, grads = net.loss_and_grads(x[idx], actions[idx], targets[idx])
            if not np.isfinite(loss):
                path = _dump(dump_dir, net, x[idx], actions[idx], targets[idx])
                raise NonFiniteLoss(f"non-finite TD loss {loss}; diagnostic dump at {path}")
            grads, norm = clip_grads(grads, max_grad_norm)
            optimizer.step(net.params, grads, lr)
            losses.append(loss)
            norms.append(norm)
    return {"loss": float(np.mean(losses)), "grad_norm": float(np.mean(norms))}


def _dump(dump_dir, net, x, actions, targets):
    if dump_dir is None:
        return None
    path = Path(dump_dir) / "nonfinite_dump.npz"
    np.savez(path, x=x, actions=actions, targets=targets, **{k.replace("/", "__"): v for k, v in net.state().items()})
    log.error("wrote non-finite loss dump to %s", path)
    return path
