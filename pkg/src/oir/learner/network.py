"""Instruction-conditioned Q network in plain numpy.

Input ``x = [observation, instruction embedding]`` passes through a running
input normaliser, then ``Linear -> LayerNorm -> ReLU -> Linear`` to one value
per action.  With ``hidden=0`` the network is a single linear map.

Weights start fan-in uniform; the output layer is scaled by ``head_scale``
(0 by default).  A zero head starts every Q value at 0, which keeps the max
over many near-identical actions from inflating early bootstrap targets.

The normaliser statistics are the learner's second state block alongside
the trainable weights; they are updated from rollout data, never by
gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import gridworld as gw

LN_EPS = 1e-5
PARAM_ORDER = ("w1", "b1", "ln_g", "ln_b", "w2", "b2")


class InputNorm:
    """Welford running mean/variance over input features."""

    def __init__(self, dim: int, dtype=np.float64, clip: float = 10.0):
        self.mean = np.zeros(dim, dtype=np.float64)
        self.m2 = np.zeros(dim, dtype=np.float64)
        self.count = 0.0
        self.clip = clip
        self.dtype = dtype
        self._cache = None

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.mean.size)
        n = x.shape[0]
        if n == 0:
            return
        bm = x.mean(axis=0)
        bm2 = ((x - bm) ** 2).sum(axis=0)
        total = self.count + n
        delta = bm - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + bm2 + delta ** 2 * (self.count * n / total)
        self.count = total
        self._cache = None

    def _coeffs(self):
        if self._cache is None:
            var = self.m2 / self.count if self.count > 1 else np.ones_like(self.m2)
            scale = 1.0 / np.sqrt(var + 1e-8)
            self._cache = (self.mean.astype(self.dtype), scale.astype(self.dtype))
        return self._cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return np.asarray(x, dtype=self.dtype)
        mean, scale = self._coeffs()
        out = (np.asarray(x, dtype=self.dtype) - mean) * scale
        return np.clip(out, -self.clip, self.clip, out=out)

    def state(self) -> dict:
        return {"mean": self.mean.copy(), "m2": self.m2.copy(), "count": np.array(self.count)}

    def load(self, state: dict) -> None:
        self.mean = np.array(state["mean"], dtype=np.float64)
        self.m2 = np.array(state["m2"], dtype=np.float64)
        self.count = float(state["count"])
        self._cache = None


@dataclass
class Cache:
    x: np.ndarray
    h: np.ndarray | None = None
    nrm: np.ndarray | None = None
    inv_std: np.ndarray | None = None
    a: np.ndarray | None = None


class QNetwork:
    def __init__(self, obs_dim: int = gw.OBS_DIM, emb_dim: int = 256, hidden: int = 128,
                 n_actions: int = gw.N_ACTIONS, layer_norm: bool = True, input_norm: bool = True,
                 dtype=np.float32, seed: int = 0, head_scale: float = 0.0):
        self.obs_dim, self.emb_dim = obs_dim, emb_dim
        self.in_dim = obs_dim + emb_dim
        self.hidden, self.n_actions = hidden, n_actions
        self.layer_norm = layer_norm and hidden > 0
        self.dtype = np.dtype(dtype)
        self.head_scale = head_scale
        self.norm = InputNorm(self.in_dim, self.dtype) if input_norm else None
        self.params = self.init_params(np.random.default_rng(seed))

    def init_params(self, rng) -> dict:
        def layer(fan_in, fan_out, scale=1.0):
            bound = scale / np.sqrt(fan_in)
            return (rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype),
                    np.zeros(fan_out, dtype=self.dtype))

        p = {}
        if self.hidden > 0:
            p["w1"], p["b1"] = layer(self.in_dim, self.hidden)
            if self.layer_norm:
                p["ln_g"] = np.ones(self.hidden, dtype=self.dtype)
                p["ln_b"] = np.zeros(self.hidden, dtype=self.dtype)
            p["w2"], p["b2"] = layer(self.hidden, self.n_actions, self.head_scale)
        else:
            p["w2"], p["b2"] = layer(self.in_dim, self.n_actions, self.head_scale)
        return p

    def param_names(self) -> list[str]:
        return [k for k in PARAM_ORDER if k in self.params]

    # -- forward / backward ---------------------------------------------------

    def inputs(self, obs, emb) -> np.ndarray:
        obs = np.asarray(obs)
        emb = np.asarray(emb)
        if obs.ndim == 1:
            obs = obs[None]
        if emb.ndim == 1:
            emb = np.broadcast_to(emb, (obs.shape[0], emb.shape[0]))
        if obs.shape[1] != self.obs_dim or emb.shape[1] != self.emb_dim:
            raise ValueError(
                f"input dims ({obs.shape[1]}, {emb.shape[1]}) do not match network ({self.obs_dim}, {self.emb_dim})")
        x = np.concatenate([obs.astype(self.dtype, copy=False), emb.astype(self.dtype, copy=False)], axis=1)
        return self.norm(x) if self.norm is not None else x

    def forward(self, x: np.ndarray, keep: bool = False):
        p = self.params
        cache = Cache(x)
        if self.hidden == 0:
            q = x @ p["w2"] + p["b2"]
            return (q, cache) if keep else q
        z = x @ p["w1"] + p["b1"]
        if self.layer_norm:
            mu = z.mean(axis=1, keepdims=True)
            zc = z - mu
            inv_std = 1.0 / np.sqrt((zc * zc).mean(axis=1, keepdims=True) + LN_EPS)
            nrm = zc * inv_std
            h = nrm * p["ln_g"] + p["ln_b"]
            cache.nrm, cache.inv_std = nrm, inv_std
        else:
            h = z
        a = np.maximum(h, 0)
        cache.h, cache.a = h, a
        q = a @ p["w2"] + p["b2"]
        return (q, cache) if keep else q

    def backward(self, cache: Cache, dq: np.ndarray) -> dict:
        p = self.params
        g = {}
        if self.hidden == 0:
            g["w2"] = cache.x.T @ dq
            g["b2"] = dq.sum(axis=0)
            return g
        g["w2"] = cache.a.T @ dq
        g["b2"] = dq.sum(axis=0)
        dh = (dq @ p["w2"].T) * (cache.h > 0)
        if self.layer_norm:
            g["ln_g"] = (dh * cache.nrm).sum(axis=0)
            g["ln_b"] = dh.sum(axis=0)
            dn = dh * p["ln_g"]
            dz = cache.inv_std * (dn - dn.mean(axis=1, keepdims=True)
                                  - cache.nrm * (dn * cache.nrm).mean(axis=1, keepdims=True))
        else:
            dz = dh
        g["w1"] = cache.x.T @ dz
        g["b1"] = dz.sum(axis=0)
        return g

    def loss_and_grads(self, x, actions, targets):
        """``0.5 * mean((Q(x, a) - target)^2)`` and its gradients."""
        q, cache = self.forward(x, keep=True)
        n = q.shape[0]
        idx = np.arange(n)
        err = q[idx, actions] - targets
        loss = 0.5 * float(np.mean(err.astype(np.float64) ** 2))
        dq = np.zeros_like(q)
        dq[idx, actions] = err / n
        return loss, self.backward(cache, dq)

    # -- persistence ----------------------------------------------------------

    def config(self) -> dict:
        return {"obs_dim": self.obs_dim, "emb_dim": self.emb_dim, "hidden": self.hidden,
                "n_actions": self.n_actions, "layer_norm": self.layer_norm,
                "input_norm": self.norm is not None, "dtype": self.dtype.name}

    def state(self) -> dict:
        out = {f"param/{k}": v.copy() for k, v in self.params.items()}
        if self.norm is not None:
            out.update({f"norm/{k}": v for k, v in self.norm.state().items()})
        return out

    def load(self, arrays: dict) -> None:
        for k in self.param_names():
            v = np.asarray(arrays[f"param/{k}"])
            if v.shape != self.params[k].shape:
                raise ValueError(f"parameter {k} has shape {v.shape}, expected {self.params[k].shape}")
            self.params[k] = v.astype(self.dtype)
        if self.norm is not None:
            self.norm.load({k: arrays[f"norm/{k}"] for k in ("mean", "m2", "count")})

    @classmethod
    def from_config(cls, cfg: dict) -> "QNetwork":
        return cls(cfg["obs_dim"], cfg["emb_dim"], cfg["hidden"], cfg["n_actions"], cfg["layer_norm"],
                   cfg["input_norm"], np.dtype(cfg["dtype"]))


def q_values(net: QNetwork, obs, instr_emb) -> np.ndarray:
    q = net.forward(net.inputs(obs, instr_emb))
    return q[0] if np.asarray(obs).ndim == 1 else q
