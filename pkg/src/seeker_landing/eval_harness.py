"""Monte Carlo evaluation, summary statistics and figure-data export."""

from __future__ import annotations

import csv
import dataclasses
import platform
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from .config import RewardParams, RunConfig, Scenario
from .environment import (ACT_DIM, GUIDANCE, GUIDANCE_OBS_DIM, LANDING, LANDING_POLICY_OBS_DIM,
                          LANDING_VALUE_OBS_DIM, LanderEnv, is_success)
from .networks import Agent
from .ppo import ACTION_STREAM, episode_seed


class CheckpointMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    """One row of the evaluation matrix."""

    scenario: Scenario = field(default_factory=Scenario)
    episodes: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be positive")

    @classmethod
    def parse(cls, text: str, episodes: int = 5000, seed: int = 0) -> "ScenarioSpec":
        return cls(Scenario.parse(text), episodes, seed)

    @property
    def label(self) -> str:
        return str(self.scenario)


def check_agent(agent: Agent, segment: str) -> None:
    want = (GUIDANCE_OBS_DIM, GUIDANCE_OBS_DIM) if segment == GUIDANCE else (LANDING_POLICY_OBS_DIM,
                                                                             LANDING_VALUE_OBS_DIM)
    got = (agent.policy.spec.obs_dim, agent.value.spec.obs_dim)
    if got != want or agent.policy.spec.out_dim != ACT_DIM:
        raise CheckpointMismatch(f"{segment} checkpoint has obs dims {got} / act dim "
                                 f"{agent.policy.spec.out_dim}; expected {want} / {ACT_DIM}")


def run_episode(env: LanderEnv, guidance: Agent, landing: Agent | None, seed: int, index: int,
                deterministic: bool = True) -> dict[str, Any]:
    """One full descent; the landing agent takes over at the segment switch."""
    res = env.reset(episode_seed(seed, index))
    act_rng = np.random.default_rng(episode_seed(seed, index, ACTION_STREAM))
    agents = {GUIDANCE: guidance, LANDING: landing}
    seg = env.segment
    h = agents[seg].policy.initial_state(1)
    actions = []
    while not res.done:
        if env.segment != seg:
            seg = env.segment
            if agents[seg] is None:
                raise ValueError("episode reached the landing segment without a landing policy")
            h = agents[seg].policy.initial_state(1)
        ag = agents[seg]
        mean, h = ag.policy.step(ag.policy_norm(res.obs[None]), h)
        a = mean[0] if deterministic else ag.policy.sample(mean[0], act_rng)
        actions.append(a)
        res = env.step(a)
    out = dict(env.terminal)
    out["index"] = index
    out["actions"] = np.array(actions)
    return out


def replay_actions(config: RunConfig, seed: int, index: int, actions: np.ndarray,
                   mode: str = "full") -> LanderEnv:
    """Re-run an episode from its seed by feeding back logged actions."""
    env = LanderEnv(config, mode=mode, record=True)
    env.reset(episode_seed(seed, index))
    for a in actions:
        if env.done:
            raise ValueError("logged action sequence is longer than the replayed episode")
        env.step(a)
    return env


@dataclass
class AxisStat:
    label: str
    mean: float
    std: float


def summarize_worst_axis(values: np.ndarray, labels: Sequence[str]) -> AxisStat:
    """Column of ``|values|`` with the highest mean + std; ties go to the earliest column."""
    a = np.abs(np.atleast_2d(np.asarray(values, dtype=float)))
    mu, sd = a.mean(axis=0), a.std(axis=0)
    i = int(np.argmax(mu + sd))
    return AxisStat(labels[i], float(mu[i]), float(sd[i]))


@dataclass
class EvalReport:
    scenario: str
    episodes: int
    miss: tuple[float, float]
    speed: tuple[float, float]
    attitude: AxisStat
    rate: AxisStat
    glideslope: tuple[float, float]
    fuel: tuple[float, float]
    success_pct: float
    records: list[dict[str, Any]] = field(default_factory=list, repr=False)

    def row(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario, "episodes": self.episodes,
            "miss_mean": self.miss[0], "miss_std": self.miss[1],
            "speed_mean": self.speed[0], "speed_std": self.speed[1],
            "max_q_axis": self.attitude.label, "max_q_mean": self.attitude.mean, "max_q_std": self.attitude.std,
            "max_w_axis": self.rate.label, "max_w_mean": self.rate.mean, "max_w_std": self.rate.std,
            "glideslope_mean": self.glideslope[0], "glideslope_std": self.glideslope[1],
            "fuel_mean": self.fuel[0], "fuel_std": self.fuel[1], "success_pct": self.success_pct,
        }


def _ms(x: Iterable[float]) -> tuple[float, float]:
    a = np.asarray(list(x), dtype=float)
    return float(a.mean()), float(a.std())


def aggregate(records: list[dict[str, Any]], scenario: str, params: RewardParams = RewardParams()) -> EvalReport:
    """Pure reduction of terminal records into the summary table row."""
    recs = [r for r in records if r.get("reason") != "nonfinite"]
    if not recs:
        raise ValueError("no finite terminal records to aggregate")
    att = summarize_worst_axis(np.array([[r["pitch_deg"], r["roll_deg"]] for r in recs]), ["pitch", "roll"])
    rate = summarize_worst_axis(np.array([r["w_deg"] for r in recs]), ["wx", "wy", "wz"])
    succ = sum(is_success(r, params) for r in records)
    return EvalReport(scenario, len(records), _ms(r["miss"] for r in recs), _ms(r["speed"] for r in recs),
                      att, rate, _ms(r["glideslope_deg"] for r in recs), _ms(r["fuel"] for r in recs),
                      100.0 * succ / len(records), list(records))


def run_monte_carlo(spec: ScenarioSpec, guidance: Agent, landing: Agent, config: RunConfig | None = None,
                    deterministic: bool = True) -> EvalReport:
    """Evaluate a guidance/landing policy pair over ``spec.episodes`` seeded episodes."""
    check_agent(guidance, GUIDANCE)
    check_agent(landing, LANDING)
    cfg = dataclasses.replace(config or RunConfig(), scenario=spec.scenario)
    records = []
    for i in range(spec.episodes):
        env = LanderEnv(cfg, mode="full")
        rec = run_episode(env, guidance, landing, spec.seed, i, deterministic)
        rec.pop("actions")
        rec["success"] = is_success(rec, cfg.rewards)
        records.append(rec)
    return aggregate(records, spec.label, cfg.rewards)


def code_version() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return __version__


def write_manifest(path: str | Path, command: str, config: RunConfig, seed: int, **extra: Any) -> None:
    """Structured record of what produced a run directory."""
    doc = {"command": command, "seed": seed, "code_version": code_version(),
           "python": platform.python_version(), "numpy": np.__version__,
           "config": config.to_dict(), **extra}
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


# ------------------------------------------------------------------ exports
TRAJECTORY_COLUMNS = (
    ["t", "segment", "rx", "ry", "rz", "vx", "vy", "vz", "q0", "q1", "q2", "q3", "wx", "wy", "wz", "m",
     "rTx", "rTy", "rTz", "theta_u", "theta_v", "range", "v_c", "qs0", "qs1", "qs2", "qs3",
     "v_err_u", "v_err_v", "v_err_w", "t_go", "FNx", "FNy", "FNz", "thrust_cmd",
     "a1", "a2", "a3", "a4", "reward", "pitch", "roll", "divert", "reset",
     "theta_cv", "theta_rv", "theta_cr"])


def trajectory_rows(rows: list[dict[str, Any]]) -> list[list[Any]]:
    out = []
    for r in rows:
        out.append([r["t"], r["segment"], *r["r_L"], *r["v_L"], *r["q"], *r["w"], r["m"], *r["r_T"],
                    r["theta_u"], r["theta_v"], r["range"], r["v_c"], *r["q_platform"], *r["v_err"], r["t_go"],
                    *r["F_N"], r["thrust_cmd"], *r["action"], r["reward"], r["pitch"], r["roll"],
                    int(r["divert"]), int(r["reset"]), r["theta_cv"], r["theta_rv"], r["theta_cr"]])
    return out


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def export_trajectory(rows: list[dict[str, Any]], path: str | Path) -> int:
    """Write a trajectory log; returns the number of data rows."""
    data = trajectory_rows(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for row in data:
            w.writerow([_fmt(v) for v in row])
    return len(data)


def read_trajectory(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def actions_from_trajectory(path: str | Path) -> np.ndarray:
    rows = read_trajectory(path)[1:]  # first row is the initial state
    return np.array([[float(r[f"a{i}"]) for i in range(1, 5)] for r in rows])


TERMINAL_COLUMNS = ["index", "reason", "segment", "steps", "t", "miss", "range", "downrange", "crossrange",
                    "altitude", "speed", "pitch_deg", "roll_deg", "wx_deg", "wy_deg", "wz_deg",
                    "glideslope_deg", "fuel", "diverts", "success"]


def export_terminal_records(records: list[dict[str, Any]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TERMINAL_COLUMNS)
        for r in records:
            wx, wy, wz = r.get("w_deg", [np.nan] * 3)
            vals = {**r, "wx_deg": wx, "wy_deg": wy, "wz_deg": wz, "success": int(bool(r.get("success")))}
            w.writerow([_fmt(vals.get(c, "")) for c in TERMINAL_COLUMNS])


def read_terminal_records(path: str | Path) -> list[dict[str, Any]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rec: dict[str, Any] = {"reason": r["reason"], "segment": r["segment"]}
            for k in ("index", "steps", "diverts"):
                rec[k] = int(r[k])
            for k in ("t", "miss", "range", "downrange", "crossrange", "altitude", "speed",
                      "pitch_deg", "roll_deg", "glideslope_deg", "fuel"):
                rec[k] = float(r[k])
            rec["w_deg"] = [float(r["wx_deg"]), float(r["wy_deg"]), float(r["wz_deg"])]
            rec["success"] = bool(int(r["success"]))
            out.append(rec)
    return out


def export_miss_scatter(report: EvalReport, path: str | Path) -> np.ndarray:
    """Per-episode (downrange, crossrange) miss components relative to the final landing site."""
    pts = np.array([[r["downrange"], r["crossrange"]] for r in report.records
                    if r.get("reason") != "nonfinite"]).reshape(-1, 2)
    np.savetxt(path, pts, delimiter=",", header="downrange,crossrange", comments="", fmt="%.17g")
    return pts


def export_report(reports: list[EvalReport], path: str | Path) -> None:
    rows = [r.row() for r in reports]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
