"""Recurrent PPO: rollout collection, returns/advantages, clipped surrogate, KL servo.

Episodes are collected in lockstep so the networks run batched across all
live environments.  Every episode draws its environment seed and action noise
from ``SeedSequence([seed, episode_index, stream])``, so a batch is a pure
function of the seed, the episode indices and the frozen parameters.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .config import RunConfig, TrainerConfig
from .environment import (ACT_DIM, GUIDANCE, GUIDANCE_OBS_DIM, LANDING, LANDING_POLICY_OBS_DIM,
                          LANDING_VALUE_OBS_DIM, LanderEnv, LandingIC)
from .networks import Agent, RecurrentNet, gaussian_kl

log = logging.getLogger(__name__)

ENV_STREAM, ACTION_STREAM, POOL_STREAM = 0, 1, 2

LOG_FIELDS = ["batch", "episodes", "mean_reward", "std_reward", "sd_reward", "min_reward",
              "mean_steps", "max_steps", "miss_mean", "miss_std", "speed_mean", "speed_std",
              "lr_policy", "clip_eps", "kl", "value_loss", "aborted", "wall_s"]


class TrainingDiverged(RuntimeError):
    pass


def episode_seed(seed: int, index: int, stream: int = ENV_STREAM) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index), int(stream)])


@dataclass
class Episode:
    index: int
    obs: np.ndarray        # normalized policy observations (T, d)
    value_obs: np.ndarray  # normalized value observations (T, dv)
    raw_obs: np.ndarray
    raw_value_obs: np.ndarray
    actions: np.ndarray    # (T, act_dim)
    logp: np.ndarray       # log-prob under the collecting policy (T,)
    rewards: np.ndarray    # (T,)
    terminal: dict[str, Any]

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


@dataclass
class RolloutBatch:
    episodes: list[Episode]
    aborted: int = 0
    values: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.episodes)

    def padded(self, attr: str) -> np.ndarray:
        eps = self.episodes
        T = max(e.length for e in eps)
        first = getattr(eps[0], attr)
        out = np.zeros((len(eps), T) + first.shape[1:])
        for i, e in enumerate(eps):
            out[i, :e.length] = getattr(e, attr)
        return out

    def mask(self) -> np.ndarray:
        T = max(e.length for e in self.episodes)
        m = np.zeros((len(self.episodes), T), dtype=bool)
        for i, e in enumerate(self.episodes):
            m[i, :e.length] = True
        return m


def _run_lockstep(agent: Agent, config: RunConfig, mode: str, indices: Sequence[int], seed: int,
                  deterministic: bool, ic_pool: np.ndarray | None) -> tuple[list[Episode], list[int]]:
    envs, act_rngs, bufs = [], [], []
    results: list[Episode | None] = [None] * len(indices)
    for idx in indices:
        env = LanderEnv(config, mode=mode)
        ic = None
        if mode == LANDING:
            if ic_pool is None or len(ic_pool) == 0:
                raise ValueError("landing rollouts need a non-empty IC pool")
            prng = np.random.default_rng(episode_seed(seed, idx, POOL_STREAM))
            ic = LandingIC.from_row(ic_pool[prng.integers(len(ic_pool))])
        first = env.reset(episode_seed(seed, idx), ic=ic)
        envs.append(env)
        act_rngs.append(np.random.default_rng(episode_seed(seed, idx, ACTION_STREAM)))
        bufs.append({"raw": [first.obs], "vraw": [first.value_obs], "act": [], "logp": [], "rew": []})

    pol = agent.policy
    h = pol.initial_state(len(envs))
    live = list(range(len(envs)))
    aborted = []
    while live:
        raw = np.stack([bufs[i]["raw"][-1] for i in live])
        mean, h_live = pol.step(agent.policy_norm(raw), h[live])
        h[live] = h_live
        still = []
        for j, i in enumerate(live):
            a = mean[j] if deterministic else pol.sample(mean[j], act_rngs[i])
            bufs[i]["act"].append(a)
            bufs[i]["logp"].append(float(pol.log_prob(mean[j], a)))
            res = envs[i].step(a)
            bufs[i]["rew"].append(res.reward)
            if res.done:
                term = res.info["terminal"]
                if term["reason"] == "nonfinite":
                    aborted.append(indices[i])
                    log.warning("episode %d aborted: %s", indices[i], term.get("diagnostic"))
                    continue
                b = bufs[i]
                raw_obs = np.array(b["raw"])
                raw_vobs = np.array(b["vraw"])
                results[i] = Episode(indices[i], agent.policy_norm(raw_obs), agent.value_norm(raw_vobs),
                                     raw_obs, raw_vobs, np.array(b["act"]), np.array(b["logp"]),
                                     np.array(b["rew"]), term)
            else:
                bufs[i]["raw"].append(res.obs)
                bufs[i]["vraw"].append(res.value_obs)
                still.append(i)
        live = still
    return [r for r in results if r is not None], aborted


def collect_rollouts(agent: Agent, config: RunConfig, mode: str, n_episodes: int, seed: int,
                     first_index: int = 0, deterministic: bool = False,
                     ic_pool: np.ndarray | None = None, max_resample: int = 100) -> tuple[RolloutBatch, int]:
    """Collect ``n_episodes`` complete episodes; returns the batch and the next free episode index.

    Aborted (non-finite) episodes are dropped and replaced with fresh indices.
    """
    episodes: list[Episode] = []
    aborted = 0
    nxt = first_index
    need = n_episodes
    for _ in range(max_resample):
        idx = list(range(nxt, nxt + need))
        nxt += need
        eps, bad = _run_lockstep(agent, config, mode, idx, seed, deterministic, ic_pool)
        episodes.extend(eps)
        aborted += len(bad)
        need = n_episodes - len(episodes)
        if need == 0:
            break
    else:
        raise TrainingDiverged(f"too many aborted episodes ({aborted})")
    episodes.sort(key=lambda e: e.index)
    return RolloutBatch(episodes, aborted), nxt


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for k in range(len(rewards) - 1, -1, -1):
        acc = rewards[k] + gamma * acc
        out[k] = acc
    return out


def returns_and_advantages(batch: RolloutBatch, values: np.ndarray, gamma: float,
                           normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Padded ``(B, T)`` advantages and empirical returns; ``values`` is padded the same way."""
    mask = batch.mask()
    G = np.zeros(mask.shape)
    for i, e in enumerate(batch.episodes):
        G[i, :e.length] = discounted_returns(e.rewards, gamma)
    A = np.where(mask, G - values, 0.0)
    if normalize:
        a = A[mask]
        sd = a.std()
        A = np.where(mask, (A - a.mean()) / (sd if sd > 1e-8 else 1.0), 0.0)
    return A, G


def ppo_surrogate(ratio: np.ndarray, adv: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Mean clipped objective and its derivative w.r.t. each ratio."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    obj = np.minimum(unclipped, clipped)
    # gradient flows only where the unclipped term is the active minimum
    active = unclipped <= clipped
    n = ratio.size
    return float(obj.mean()), np.where(active, adv, 0.0) / n


def value_loss(v: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """``1/(2M) Σ (v - target)²`` and its gradient."""
    M = v.size
    d = v - targets
    return float(0.5 * np.sum(d * d) / M), d / M


def kl_servo(kl: float, lr: float, eps: float, cfg: TrainerConfig) -> tuple[float, float]:
    """Nudge learning rate and clip range toward the KL target."""
    if kl > cfg.kl_high * cfg.kl_target:
        lr, eps = lr * cfg.lr_down, eps * cfg.lr_down
    elif kl < cfg.kl_low * cfg.kl_target:
        lr, eps = lr * cfg.lr_up, eps * cfg.lr_up
    lr = float(np.clip(lr, *cfg.lr_bounds))
    eps = float(np.clip(eps, *cfg.eps_bounds))
    return lr, eps


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], sign: float = -1.0) -> None:
        """``sign=-1`` descends, ``sign=+1`` ascends."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] += sign * self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}/t": np.array(self.t)}
        for k in self.m:
            out[f"{prefix}/m/{k}"] = self.m[k]
            out[f"{prefix}/v/{k}"] = self.v[k]
        return out

    def load(self, prefix: str, data) -> None:
        self.t = int(data[f"{prefix}/t"])
        for k in self.m:
            self.m[k] = np.array(data[f"{prefix}/m/{k}"])
            self.v[k] = np.array(data[f"{prefix}/v/{k}"])


class SGD:
    def __init__(self, params, lr: float):
        self.lr = lr

    def step(self, params, grads, sign: float = -1.0) -> None:
        for k, g in grads.items():
            params[k] += sign * self.lr * g

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        return {}

    def load(self, prefix: str, data) -> None:
        pass


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    if max_norm <= 0:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        return {k: g * (max_norm / norm) for k, g in grads.items()}
    return grads


def policy_objective_grads(net: RecurrentNet, obs: np.ndarray, actions: np.ndarray, logp_old: np.ndarray,
                           adv: np.ndarray, mask: np.ndarray, eps: float):
    """Clipped surrogate over valid steps and its parameter gradient."""
    mean, cache = net.forward_sequence(obs)
    logp = net.log_prob(mean, actions)
    ratio = np.exp(np.where(mask, logp - logp_old, 0.0))
    J, dJ_dratio = ppo_surrogate(ratio[mask], adv[mask], eps)
    coef = np.zeros(mask.shape)
    coef[mask] = dJ_dratio * ratio[mask]  # d ratio / d logp = ratio
    dmean, dls = net.log_prob_grads(mean, actions)
    grads = net.backward(coef[..., None] * dmean, cache, np.einsum("bt,bta->a", coef, dls))
    return J, grads, ratio


@dataclass
class PPOTrainer:
    """Holds the agent, optimizers and servoed step sizes for one segment."""

    agent: Agent
    config: RunConfig
    mode: str
    seed: int = 0
    lr_policy: float = field(init=False)
    clip_eps: float = field(init=False)
    episodes_done: int = 0
    batches_done: int = 0

    def __post_init__(self):
        tc = self.config.trainer
        self.lr_policy = tc.lr_policy
        self.clip_eps = tc.clip_eps
        opt = Adam if tc.optimizer == "adam" else SGD
        self.policy_opt = opt(self.agent.policy.params, tc.lr_policy)
        self.value_opt = opt(self.agent.value.params, tc.lr_value)
        self.scale_fixed = False

    @property
    def tc(self) -> TrainerConfig:
        return self.config.trainer

    def update(self, batch: RolloutBatch) -> dict[str, float]:
        tc, agent = self.tc, self.agent
        pol, val = agent.policy, agent.value
        mask = batch.mask()
        obs, vobs = batch.padded("obs"), batch.padded("value_obs")
        actions, logp_old = batch.padded("actions"), batch.padded("logp")

        v_pred, _ = val.forward_sequence(vobs)
        values = v_pred[..., 0] * agent.return_scale
        batch.values = values
        adv, G = returns_and_advantages(batch, values, tc.gamma, tc.normalize_advantages)
        if tc.scale_value_targets and not self.scale_fixed:
            # fixed once from the first batch so earlier value fits stay meaningful
            sd = float(G[mask].std())
            agent.return_scale = max(sd, 1.0)
            self.scale_fixed = True
        targets = G / agent.return_scale

        mean_old, _ = pol.forward_sequence(obs)
        log_std_old = pol.log_std.copy()

        self.policy_opt.lr = self.lr_policy
        n_ep = len(batch)
        mb = max(1, min(tc.minibatch_episodes, n_ep))
        vloss = 0.0
        # keyed on the batch counter so a resumed run shuffles exactly like an uninterrupted one
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 10**9, self.batches_done]))
        for _ in range(tc.epochs):
            order = rng.permutation(n_ep)
            for start in range(0, n_ep, mb):
                sel = order[start:start + mb]
                T = int(mask[sel].sum(axis=1).max())
                m_sel = mask[sel, :T]
                _, g, _ = policy_objective_grads(pol, obs[sel, :T], actions[sel, :T], logp_old[sel, :T],
                                                 adv[sel, :T], m_sel, self.clip_eps)
                self.policy_opt.step(pol.params, _clip_grads(g, tc.max_grad_norm), sign=+1.0)

                v, cache = val.forward_sequence(vobs[sel, :T])
                vloss, dv = value_loss(v[..., 0][m_sel], targets[sel, :T][m_sel])
                dy = np.zeros(m_sel.shape)
                dy[m_sel] = dv
                gv = val.backward(dy[..., None], cache)
                self.value_opt.step(val.params, _clip_grads(gv, tc.max_grad_norm), sign=-1.0)

        mean_new, _ = pol.forward_sequence(obs)
        kl = float(np.mean(gaussian_kl(mean_old[mask], log_std_old, mean_new[mask], pol.log_std)))
        self.lr_policy, self.clip_eps = kl_servo(kl, self.lr_policy, self.clip_eps, tc)

        agent.policy_norm.update(np.concatenate([e.raw_obs for e in batch.episodes]))
        agent.value_norm.update(np.concatenate([e.raw_value_obs for e in batch.episodes]))
        return {"kl": kl, "value_loss": vloss}

    def train(self, total_episodes: int, ic_pool: np.ndarray | None = None,
              log_path: str | Path | None = None, progress: bool = False,
              on_batch: Callable[[RolloutBatch, dict[str, float]], None] | None = None) -> list[dict[str, float]]:
        """Alternate collection and update until ``total_episodes`` have been used.

        ``on_batch`` sees every collected batch with its log row, e.g. to keep per-episode returns.
        """
        per_batch = (self.tc.episodes_per_batch_landing if self.mode == LANDING
                     else self.tc.episodes_per_batch_guidance)
        rows: list[dict[str, float]] = []
        writer = None
        fh = None
        if log_path is not None:
            log_path = Path(log_path)
            new = not log_path.exists() or self.batches_done == 0
            fh = open(log_path, "w" if new else "a", newline="", encoding="utf-8")
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            if new:
                writer.writeheader()
        try:
            while self.episodes_done < total_episodes:
                n = min(per_batch, total_episodes - self.episodes_done)
                t0 = time.perf_counter()
                batch, self.episodes_done = collect_rollouts(
                    self.agent, self.config, self.mode, n, self.seed, self.episodes_done, ic_pool=ic_pool)
                stats = self.update(batch)
                self.batches_done += 1
                row = batch_statistics(batch)
                row.update(batch=self.batches_done, episodes=self.episodes_done, lr_policy=self.lr_policy,
                           clip_eps=self.clip_eps, kl=stats["kl"], value_loss=stats["value_loss"],
                           aborted=batch.aborted, wall_s=time.perf_counter() - t0)
                if not np.isfinite(row["mean_reward"]) or not np.isfinite(stats["kl"]):
                    raise TrainingDiverged(f"non-finite statistics at batch {self.batches_done}: {row}")
                rows.append(row)
                if on_batch is not None:
                    on_batch(batch, row)
                if writer is not None:
                    writer.writerow({k: row[k] for k in LOG_FIELDS})
                    fh.flush()
                if progress:
                    log.info("batch %d  episodes %d  mean R %.2f  min R %.2f  steps %.1f  kl %.2e  lr %.2e",
                             row["batch"], row["episodes"], row["mean_reward"], row["min_reward"],
                             row["mean_steps"], row["kl"], row["lr_policy"])
        finally:
            if fh is not None:
                fh.close()
        return rows

    # ------------------------------------------------------------ resumability
    def save_state(self, path: str | Path) -> None:
        arrays = {"lr_policy": np.array(self.lr_policy), "clip_eps": np.array(self.clip_eps),
                  "episodes_done": np.array(self.episodes_done), "batches_done": np.array(self.batches_done),
                  "seed": np.array(self.seed), "scale_fixed": np.array(self.scale_fixed)}
        arrays.update(self.policy_opt.state("policy_opt"))
        arrays.update(self.value_opt.state("value_opt"))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    def load_state(self, path: str | Path) -> None:
        with np.load(path, allow_pickle=False) as data:
            self.lr_policy = float(data["lr_policy"])
            self.clip_eps = float(data["clip_eps"])
            self.episodes_done = int(data["episodes_done"])
            self.batches_done = int(data["batches_done"])
            self.scale_fixed = bool(data["scale_fixed"])
            if int(data["seed"]) != self.seed:
                raise ValueError("trainer state was written with a different seed")
            self.policy_opt.load("policy_opt", data)
            self.value_opt.load("value_opt", data)


def batch_statistics(batch: RolloutBatch) -> dict[str, float]:
    R = np.array([e.total_reward for e in batch.episodes])
    steps = np.array([e.length for e in batch.episodes])
    miss = np.array([e.terminal.get("range", np.nan) for e in batch.episodes])
    speed = np.array([e.terminal.get("speed", np.nan) for e in batch.episodes])
    return {"mean_reward": float(R.mean()), "std_reward": float(R.std()),
            "sd_reward": float(R.mean() - R.std()), "min_reward": float(R.min()),
            "mean_steps": float(steps.mean()), "max_steps": int(steps.max()),
            "miss_mean": float(np.nanmean(miss)), "miss_std": float(np.nanstd(miss)),
            "speed_mean": float(np.nanmean(speed)), "speed_std": float(np.nanstd(speed))}


def new_agent(mode: str, seed: int, init_log_std: float = 0.0) -> Agent:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    if mode == LANDING:
        return Agent.create(LANDING_POLICY_OBS_DIM, LANDING_VALUE_OBS_DIM, ACT_DIM, rng, init_log_std, LANDING)
    return Agent.create(GUIDANCE_OBS_DIM, GUIDANCE_OBS_DIM, ACT_DIM, rng, init_log_std, GUIDANCE)


def build_ic_pool(agent: Agent, config: RunConfig, n: int, seed: int, batch: int = 100) -> np.ndarray:
    """Run the guidance policy (mean action) and keep terminal states below the switch altitude.

    Episodes that end any other way (attitude, fuel, step cap) are skipped and
    replaced, so the pool holds exactly ``n`` rows unless the policy never
    reaches the switch altitude.
    """
    rows: list[np.ndarray] = []
    idx = 0
    attempts = 0
    limit = max(20 * n, 1000)
    while len(rows) < n:
        if attempts >= limit:
            raise RuntimeError(f"guidance policy reached the landing segment in only {len(rows)} "
                               f"of {attempts} episodes")
        k = min(batch, n - len(rows))
        for i in range(idx, idx + k):
            env = LanderEnv(config, mode=GUIDANCE)
            res = env.reset(episode_seed(seed, i))
            h = agent.policy.initial_state(1)
            while not res.done:
                mean, h = agent.policy.step(agent.policy_norm(res.obs[None]), h)
                res = env.step(mean[0])
            if env.terminal["reason"] == "switch":
                rows.append(env.landing_ic().as_row())
        idx += k
        attempts += k
    return np.array(rows[:n])


IC_POOL_COLUMNS = ["rx", "ry", "rz", "vx", "vy", "vz", "q0", "q1", "q2", "q3", "wx", "wy", "wz",
                   "m", "m0", "u1", "u2", "u3", "u4"]


def save_ic_pool(path: str | Path, pool: np.ndarray) -> None:
    np.savetxt(path, pool, delimiter=",", header=",".join(IC_POOL_COLUMNS), comments="", fmt="%.17g")


def load_ic_pool(path: str | Path) -> np.ndarray:
    pool = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if pool.shape[1] != len(IC_POOL_COLUMNS):
        raise ValueError(f"IC pool {path} has {pool.shape[1]} columns, expected {len(IC_POOL_COLUMNS)}")
    return pool
