"""Recurrent policy and value networks in plain numpy.

Architecture (both networks): tanh dense -> GRU -> tanh dense -> linear.
Hidden widths: ``h1 = 10 * obs_dim``, ``h3 = 10 * act_dim`` for the policy
and ``5`` for the value function, ``h2 = round(sqrt(h1 * h3))``.

Everything is batched over episodes: sequences are ``(B, T, dim)`` arrays
with a ``(B, T)`` validity mask, and gradients come from full backpropagation
through time.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
LOG_2PI = float(np.log(2.0 * np.pi))
CHECKPOINT_VERSION = 1

_GRU_KEYS = ("Wx", "Wh", "bx", "bh")


@dataclass(frozen=True)
class NetworkSpec:
    obs_dim: int
    out_dim: int
    h1: int
    h2: int
    h3: int
    stochastic: bool = False
    activation: str = "tanh"

    def __post_init__(self):
        if min(self.obs_dim, self.out_dim, self.h1, self.h2, self.h3) <= 0:
            raise ValueError("all layer widths must be positive")
        if self.activation not in ("tanh", "identity"):
            raise ValueError("activation must be 'tanh' or 'identity'")

    @classmethod
    def policy(cls, obs_dim: int, act_dim: int) -> "NetworkSpec":
        h1, h3 = 10 * obs_dim, 10 * act_dim
        return cls(obs_dim, act_dim, h1, int(round(np.sqrt(h1 * h3))), h3, stochastic=True)

    @classmethod
    def value(cls, obs_dim: int) -> "NetworkSpec":
        h1, h3 = 10 * obs_dim, 5
        return cls(obs_dim, 1, h1, int(round(np.sqrt(h1 * h3))), h3)

    @property
    def widths(self) -> tuple[int, int, int, int]:
        return (self.h1, self.h2, self.h3, self.out_dim)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_parameters(spec: NetworkSpec, rng: np.random.Generator, init_log_std: float = 0.0) -> dict[str, np.ndarray]:
    """Fan-in scaled uniform weights, zero biases."""
    def dense(n_out, n_in):
        lim = 1.0 / np.sqrt(n_in)
        return rng.uniform(-lim, lim, (n_out, n_in))

    h1, h2, h3 = spec.h1, spec.h2, spec.h3
    p = {
        "W1": dense(h1, spec.obs_dim), "b1": np.zeros(h1),
        "Wx": dense(3 * h2, h1), "Wh": dense(3 * h2, h2),
        "bx": np.zeros(3 * h2), "bh": np.zeros(3 * h2),
        "W3": dense(h3, h2), "b3": np.zeros(h3),
        "W4": dense(spec.out_dim, h3), "b4": np.zeros(spec.out_dim),
    }
    if spec.stochastic:
        p["log_std"] = np.full(spec.out_dim, float(init_log_std))
    return p


class RecurrentNet:
    """Dense-GRU-dense network with optional diagonal-Gaussian head."""

    def __init__(self, spec: NetworkSpec, params: dict[str, np.ndarray] | None = None,
                 rng: np.random.Generator | None = None, init_log_std: float = 0.0):
        self.spec = spec
        if params is None:
            params = init_parameters(spec, rng if rng is not None else np.random.default_rng(0), init_log_std)
        self.params = params

    def _act(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x) if self.spec.activation == "tanh" else x

    def _dact(self, a: np.ndarray) -> np.ndarray:
        return 1.0 - a * a if self.spec.activation == "tanh" else np.ones_like(a)

    def initial_state(self, batch: int = 1) -> np.ndarray:
        return np.zeros((batch, self.spec.h2))

    @property
    def log_std(self) -> np.ndarray:
        return np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)

    # ---------------------------------------------------------------- forward
    def step(self, obs: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One time step for a batch: ``obs (B, obs_dim)``, ``h (B, h2)``."""
        obs = np.atleast_2d(obs)
        if obs.shape[1] != self.spec.obs_dim:
            raise ValueError(f"expected obs_dim {self.spec.obs_dim}, got {obs.shape[1]}")
        p, n = self.params, self.spec.h2
        a1 = self._act(obs @ p["W1"].T + p["b1"])
        gx = a1 @ p["Wx"].T + p["bx"]
        gh = h @ p["Wh"].T + p["bh"]
        r = _sigmoid(gx[:, :n] + gh[:, :n])
        z = _sigmoid(gx[:, n:2 * n] + gh[:, n:2 * n])
        cand = np.tanh(gx[:, 2 * n:] + r * gh[:, 2 * n:])
        h_new = (1.0 - z) * cand + z * h
        a3 = self._act(h_new @ p["W3"].T + p["b3"])
        return a3 @ p["W4"].T + p["b4"], h_new

    def forward_sequence(self, obs: np.ndarray, h0: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
        """Run ``obs (B, T, obs_dim)``; returns outputs ``(B, T, out)`` and a BPTT cache."""
        B, T, d = obs.shape
        if d != self.spec.obs_dim:
            raise ValueError(f"expected obs_dim {self.spec.obs_dim}, got {d}")
        p, n = self.params, self.spec.h2
        h = self.initial_state(B) if h0 is None else h0
        a1 = self._act(obs @ p["W1"].T + p["b1"])
        gx_all = a1 @ p["Wx"].T + p["bx"]
        hs_prev = np.empty((B, T, n))
        rs, zs, cs, ghn = (np.empty((B, T, n)) for _ in range(4))
        hs = np.empty((B, T, n))
        Wh_T, bh = p["Wh"].T, p["bh"]
        for t in range(T):
            hs_prev[:, t] = h
            gx = gx_all[:, t]
            gh = h @ Wh_T + bh
            r = _sigmoid(gx[:, :n] + gh[:, :n])
            z = _sigmoid(gx[:, n:2 * n] + gh[:, n:2 * n])
            c = np.tanh(gx[:, 2 * n:] + r * gh[:, 2 * n:])
            h = (1.0 - z) * c + z * h
            rs[:, t], zs[:, t], cs[:, t], ghn[:, t], hs[:, t] = r, z, c, gh[:, 2 * n:], h
        a3 = self._act(hs @ p["W3"].T + p["b3"])
        y = a3 @ p["W4"].T + p["b4"]
        cache = {"obs": obs, "a1": a1, "h_prev": hs_prev, "r": rs, "z": zs, "c": cs,
                 "ghn": ghn, "h": hs, "a3": a3}
        return y, cache

    # --------------------------------------------------------------- backward
    def backward(self, dy: np.ndarray, cache: dict, d_log_std: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Parameter gradients of a loss whose gradient w.r.t. the outputs is ``dy``."""
        p, n = self.params, self.spec.h2
        a3, hs = cache["a3"], cache["h"]
        B, T, _ = dy.shape
        g = {}
        g["W4"] = np.einsum("bto,bth->oh", dy, a3)
        g["b4"] = dy.sum(axis=(0, 1))
        dz3 = (dy @ p["W4"]) * self._dact(a3)
        g["W3"] = np.einsum("bto,bth->oh", dz3, hs)
        g["b3"] = dz3.sum(axis=(0, 1))
        dh_out = dz3 @ p["W3"]

        rs, zs, cs, ghn, hp = cache["r"], cache["z"], cache["c"], cache["ghn"], cache["h_prev"]
        dgx = np.empty((B, T, 3 * n))
        dgh = np.empty((B, T, 3 * n))
        Wh = p["Wh"]
        dh_next = np.zeros((B, n))
        for t in range(T - 1, -1, -1):
            dh = dh_out[:, t] + dh_next
            r, z, c = rs[:, t], zs[:, t], cs[:, t]
            dc = dh * (1.0 - z) * (1.0 - c * c)
            dzp = dh * (hp[:, t] - c) * z * (1.0 - z)
            drp = dc * ghn[:, t] * r * (1.0 - r)
            dgx[:, t, :n], dgx[:, t, n:2 * n], dgx[:, t, 2 * n:] = drp, dzp, dc
            dgh[:, t, :n], dgh[:, t, n:2 * n], dgh[:, t, 2 * n:] = drp, dzp, dc * r
            dh_next = dh * z + dgh[:, t] @ Wh
        g["Wx"] = np.einsum("btg,bth->gh", dgx, cache["a1"])
        g["bx"] = dgx.sum(axis=(0, 1))
        g["Wh"] = np.einsum("btg,bth->gh", dgh, hp)
        g["bh"] = dgh.sum(axis=(0, 1))
        dz1 = (dgx @ p["Wx"]) * self._dact(cache["a1"])
        g["W1"] = np.einsum("bth,btd->hd", dz1, cache["obs"])
        g["b1"] = dz1.sum(axis=(0, 1))
        if "log_std" in p:
            ls = p["log_std"]
            inside = (ls >= LOG_STD_MIN) & (ls <= LOG_STD_MAX)
            g["log_std"] = (np.zeros_like(ls) if d_log_std is None else d_log_std) * inside
        return g

    # ------------------------------------------------------------ Gaussian head
    def log_prob(self, mean: np.ndarray, actions: np.ndarray) -> np.ndarray:
        ls = self.log_std
        zsc = (actions - mean) * np.exp(-ls)
        return np.sum(-0.5 * zsc * zsc - ls - 0.5 * LOG_2PI, axis=-1)

    def log_prob_grads(self, mean: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample ``d logp / d mean`` and ``d logp / d log_std``."""
        ls = self.log_std
        inv_var = np.exp(-2.0 * ls)
        diff = actions - mean
        return diff * inv_var, diff * diff * inv_var - 1.0

    def sample(self, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)

    def copy(self) -> "RecurrentNet":
        return RecurrentNet(self.spec, {k: v.copy() for k, v in self.params.items()})


def policy_forward(net: RecurrentNet, obs: np.ndarray, h: np.ndarray):
    """Mean, log-std and next hidden state for one step."""
    mean, h_new = net.step(obs, h)
    return mean, net.log_std, h_new


def value_forward(net: RecurrentNet, obs: np.ndarray, h: np.ndarray):
    v, h_new = net.step(obs, h)
    return v[:, 0], h_new


def gaussian_kl(mean_old: np.ndarray, log_std_old: np.ndarray, mean_new: np.ndarray,
                log_std_new: np.ndarray) -> np.ndarray:
    """KL(old || new) per sample for diagonal Gaussians."""
    var_old, var_new = np.exp(2.0 * log_std_old), np.exp(2.0 * log_std_new)
    return np.sum(log_std_new - log_std_old + (var_old + (mean_old - mean_new) ** 2) / (2.0 * var_new) - 0.5,
                  axis=-1)


class ObsNormalizer:
    """Running per-dimension mean/variance (Chan et al. parallel merge)."""

    def __init__(self, dim: int, var_floor: float = 1e-6, clip: float = 10.0):
        self.dim = dim
        self.var_floor = var_floor
        self.clip = clip
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    @property
    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.maximum(self.m2 / self.count, self.var_floor)

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        n = x.shape[0]
        if n == 0:
            return
        mb = x.mean(axis=0)
        m2b = ((x - mb) ** 2).sum(axis=0)
        tot = self.count + n
        delta = mb - self.mean
        self.mean = self.mean + delta * n / tot
        self.m2 = self.m2 + m2b + delta ** 2 * self.count * n / tot
        self.count = tot

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var), -self.clip, self.clip)

    def state(self) -> dict[str, np.ndarray]:
        return {"count": np.array(self.count), "mean": self.mean.copy(), "m2": self.m2.copy(),
                "var_floor": np.array(self.var_floor), "clip": np.array(self.clip)}

    @classmethod
    def from_state(cls, st: dict[str, np.ndarray]) -> "ObsNormalizer":
        out = cls(len(st["mean"]), float(st["var_floor"]), float(st["clip"]))
        out.count, out.mean, out.m2 = float(st["count"]), np.array(st["mean"]), np.array(st["m2"])
        return out


@dataclass
class Agent:
    """Policy and value networks with their observation normalizers."""

    policy: RecurrentNet
    value: RecurrentNet
    policy_norm: ObsNormalizer
    value_norm: ObsNormalizer
    return_scale: float = 1.0
    segment: str = "guidance"

    @classmethod
    def create(cls, policy_obs_dim: int, value_obs_dim: int, act_dim: int, rng: np.random.Generator,
               init_log_std: float = 0.0, segment: str = "guidance") -> "Agent":
        pol = RecurrentNet(NetworkSpec.policy(policy_obs_dim, act_dim), rng=rng, init_log_std=init_log_std)
        val = RecurrentNet(NetworkSpec.value(value_obs_dim), rng=rng)
        return cls(pol, val, ObsNormalizer(policy_obs_dim), ObsNormalizer(value_obs_dim), 1.0, segment)


def save_checkpoint(path: str | Path, agent: Agent, extra: dict | None = None) -> None:
    """Write an ``.npz`` container; layout is documented in the README."""
    arrays: dict[str, np.ndarray] = {}
    for prefix, net in (("policy", agent.policy), ("value", agent.value)):
        for k, v in net.params.items():
            arrays[f"{prefix}/{k}"] = v
    for prefix, norm in (("policy_norm", agent.policy_norm), ("value_norm", agent.value_norm)):
        for k, v in norm.state().items():
            arrays[f"{prefix}/{k}"] = v
    meta = {
        "format": "seeker_landing.checkpoint",
        "version": CHECKPOINT_VERSION,
        "segment": agent.segment,
        "return_scale": agent.return_scale,
        "policy_spec": asdict(agent.policy.spec),
        "value_spec": asdict(agent.value.spec),
        "extra": extra or {},
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[Agent, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != "seeker_landing.checkpoint":
            raise ValueError(f"{path} is not a seeker_landing checkpoint")
        if meta["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {meta['version']} is newer than supported")
        nets = {}
        for prefix in ("policy", "value"):
            spec = NetworkSpec(**meta[f"{prefix}_spec"])
            params = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith(prefix + "/")}
            nets[prefix] = RecurrentNet(spec, params)
        norms = {}
        for prefix in ("policy_norm", "value_norm"):
            norms[prefix] = ObsNormalizer.from_state(
                {k.split("/", 1)[1]: data[k] for k in data.files if k.startswith(prefix + "/")})
    agent = Agent(nets["policy"], nets["value"], norms["policy_norm"], norms["value_norm"],
                  float(meta["return_scale"]), meta["segment"])
    return agent, meta
