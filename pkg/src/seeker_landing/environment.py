"""Episodic lunar-descent environment with a stabilized seeker.

Three modes share one simulator:

``guidance``
    Starts from the dispersed powered-descent initial conditions and ends when
    the lander drops below ``switch_altitude`` above the landing site.
``landing``
    Starts from a stored guidance-segment terminal state and ends when the
    lander's altitude falls below that of the landing site.
``full``
    Guidance followed by landing in one episode; ``info["segment"]`` tells the
    caller which policy should act next.

Each nav step (0.2 s): clip/fail action -> integrate physics and lags
(4 x RK4 at 0.05 s) -> divert thresholds -> scheduled platform reset ->
measurements -> segment/termination checks -> reward -> observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import dynamics, guidance_field, propulsion, seeker
from .config import EpisodeConfig, RewardParams, RunConfig, Scenario
from .dynamics import ComModel, InertiaModel, LanderState
from .math_core import (IDENTITY_QUAT, NonFiniteError, angle_between, quat_from_axis_angle,
                        quat_mul, quat_to_dcm, pitch_roll, qsub, rotate, shortest_arc)

GUIDANCE = "guidance"
LANDING = "landing"

GUIDANCE_OBS_DIM = 18
LANDING_POLICY_OBS_DIM = 9
LANDING_VALUE_OBS_DIM = 11
ACT_DIM = 4

# platform attitude relative to the body before the first reset: w-axis along body -z
_SEEKER_MOUNT = np.array([0.0, 1.0, 0.0, 0.0])


@dataclass
class StepResult:
    obs: np.ndarray
    value_obs: np.ndarray
    reward: float
    done: bool
    info: dict[str, Any] = field(default_factory=dict)


@dataclass
class DivertSchedule:
    thresholds: tuple[float, ...] = (1500.0, 1000.0, 500.0, 100.0)
    draws: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    fired: list[bool] = field(default_factory=lambda: [False] * 4)

    @property
    def count(self) -> int:
        return sum(self.fired)


@dataclass
class LandingIC:
    """Guidance-segment terminal state used to start a landing episode.

    Position is stored relative to the landing site, which is placed at the
    origin when the landing episode starts.
    """

    r_LT: np.ndarray
    v_L: np.ndarray
    q: np.ndarray
    w: np.ndarray
    m: float
    m0: float
    u: np.ndarray

    def as_row(self) -> np.ndarray:
        return np.concatenate([self.r_LT, self.v_L, self.q, self.w, [self.m, self.m0], self.u])

    @classmethod
    def from_row(cls, row: np.ndarray) -> "LandingIC":
        row = np.asarray(row, dtype=float)
        return cls(row[0:3].copy(), row[3:6].copy(), row[6:10].copy(), row[10:13].copy(),
                   float(row[13]), float(row[14]), row[15:19].copy())


@dataclass
class EpisodeSample:
    """Every random quantity of one episode, drawn up front in a fixed order."""

    r_L: np.ndarray
    v_L: np.ndarray
    q: np.ndarray
    m: float
    heading_error: float
    attitude_error: float
    inertia: InertiaModel
    com: ComModel
    engine: propulsion.EngineState
    divert_draws: np.ndarray


def _perp_axis(d: np.ndarray, phi: float) -> np.ndarray:
    """Unit vector perpendicular to ``d`` at azimuth ``phi`` around it."""
    d = d / np.linalg.norm(d)
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(d, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return np.cos(phi) * e1 + np.sin(phi) * e2


def sample_episode(cfg: EpisodeConfig, scenario: Scenario, seed: int | np.random.SeedSequence) -> EpisodeSample:
    """Draw initial conditions and per-episode model dispersions.

    Independent child streams keep scenario modifiers from shifting the draws
    of unrelated quantities.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    ic_ss, inertia_ss, engine_ss, com_ss, divert_ss = ss.spawn(5)
    rng = np.random.default_rng(ic_ss)

    r_L = np.array([rng.uniform(*cfg.downrange), rng.uniform(*cfg.crossrange), rng.uniform(*cfg.altitude)])
    speed = rng.uniform(*cfg.speed)
    heading = np.deg2rad(rng.uniform(*cfg.heading_error_deg))
    heading_phi = rng.uniform(0.0, 2.0 * np.pi)
    att_err = np.deg2rad(rng.uniform(*cfg.attitude_error_deg))
    att_phi = rng.uniform(0.0, 2.0 * np.pi)
    mass_u = rng.uniform()

    los = -r_L / np.linalg.norm(r_L)  # unit r_TL with the target at the origin
    v_dir = rotate(quat_from_axis_angle(_perp_axis(los, heading_phi), heading), los)
    v_L = speed * v_dir

    # nominal: body -z on the line of sight, then tilt the -z axis by att_err
    q_nom = shortest_arc(np.array([0.0, 0.0, 1.0]), -los)
    q = quat_mul(quat_from_axis_angle(_perp_axis(-los, att_phi), att_err), q_nom)
    q /= np.linalg.norm(q)

    if scenario.label == "MV":
        m = cfg.mass_nominal * (1.0 + scenario.delta * (2.0 * mass_u - 1.0))
    else:
        m = cfg.mass[0] + (cfg.mass[1] - cfg.mass[0]) * mass_u

    if scenario.label == "dJdiag":
        diag_b, off_b = scenario.delta, scenario.delta / 10.0
    else:
        diag_b, off_b = cfg.dj_diag, cfg.dj_off
    inertia = dynamics.sample_inertia_perturbation(np.random.default_rng(inertia_ss), diag_b, off_b,
                                                   m_min=max(m - cfg.f_max, 1.0))

    erng = np.random.default_rng(engine_ss)
    fail_draw = erng.uniform()
    i_af = int(erng.integers(4))
    s_lo = scenario.delta if scenario.label == "AF" else 1.0
    s_af = erng.uniform(s_lo, 1.0) if s_lo < 1.0 else 1.0
    fail = scenario.label == "AF" and fail_draw < cfg.failure_probability
    engine = propulsion.EngineState(tau_ctrl=cfg.tau_ctrl, fail=fail, i_af=i_af, s_af=float(s_af))

    zeta = np.random.default_rng(com_ss).normal(size=3)
    zeta /= np.linalg.norm(zeta)
    com = ComModel(zeta=zeta, alpha=cfg.com_alpha, f_max=cfg.f_max)

    draws = np.random.default_rng(divert_ss).uniform(-1.0, 1.0, (len(cfg.divert_thresholds), 3))
    return EpisodeSample(r_L, v_L, q, float(m), float(heading), float(att_err), inertia, com, engine, draws)


def maybe_divert(range_LT: float, r_T: np.ndarray, schedule: DivertSchedule,
                 fractions=(0.1, 0.1, 0.05)) -> tuple[np.ndarray, np.ndarray | None]:
    """Fire the first unfired threshold the range has dropped below (at most one per call)."""
    for i, thr in enumerate(schedule.thresholds):
        if not schedule.fired[i] and range_LT < thr:
            schedule.fired[i] = True
            delta = range_LT * np.asarray(fractions) * schedule.draws[i]
            return r_T + delta, delta
    return r_T, None


def glideslope_deg(v_LT: np.ndarray) -> float:
    """Descent-path angle above the horizontal in degrees, clamped to [0, 90]."""
    lateral = float(np.hypot(v_LT[0], v_LT[1]))
    if lateral == 0.0:
        return 90.0
    return float(np.clip(np.degrees(np.arctan2(-v_LT[2], lateral)), 0.0, 90.0))


def attitude_violation(pitch: float, roll: float, params: RewardParams) -> bool:
    lim = np.deg2rad(params.attitude_limit_deg)
    return abs(pitch) > lim or abs(roll) > lim


def guidance_reward(v_err: np.ndarray, thrust_norm: float, r_LT: np.ndarray, v_LT: np.ndarray,
                    pitch: float, roll: float, params: RewardParams = RewardParams(),
                    k: int = 4, u_max: float = 2500.0) -> float:
    """Shaping + control effort + attitude penalty + terminal bonus."""
    r = params.eta + params.alpha * float(np.linalg.norm(v_err))
    r += params.beta * thrust_norm / (k * u_max)
    if attitude_violation(pitch, roll, params):
        r += params.attitude_penalty
    if (r_LT[2] < 5.0 and np.linalg.norm(r_LT) < params.terminal_radius
            and np.linalg.norm(v_LT) < params.terminal_speed):
        r += params.kappa
    return r


def landing_reward(thrust_norm: float, r_LT: np.ndarray, v_LT: np.ndarray, v_L: np.ndarray,
                   pitch: float, roll: float, w: np.ndarray, touchdown: bool,
                   params: RewardParams = RewardParams(), k: int = 4, u_max: float = 2500.0) -> float:
    """Control effort plus the two touchdown rewards; angles enter in degrees."""
    r = params.beta * thrust_norm / (k * u_max)
    if attitude_violation(pitch, roll, params):
        r += params.attitude_penalty
    if touchdown and r_LT[2] < 5.0:
        r += landing_quality_reward(v_LT, v_L, pitch, roll, w, params)
        if landing_criteria_met(v_LT, pitch, roll, w, params):
            r += params.kappa
    return r


def landing_quality_reward(v_LT, v_L, pitch, roll, w, params: RewardParams = RewardParams()) -> float:
    lateral = float(np.hypot(v_LT[0], v_LT[1]))
    vz = abs(float(v_LT[2]))
    if lateral == 0.0:
        ratio = 0.0
    elif vz == 0.0:
        return 0.0
    else:
        ratio = 5.0 * lateral / vz
    vec = np.concatenate([[ratio], v_L, np.degrees([pitch, roll]), np.degrees(w)])
    return params.kappa * float(np.exp(-float(vec @ vec) / params.sigma_l ** 2))


def landing_criteria_met(v_LT, pitch, roll, w, params: RewardParams = RewardParams()) -> bool:
    return bool(np.linalg.norm(v_LT) < params.terminal_speed
                and abs(np.degrees(pitch)) < params.landing_attitude_deg
                and abs(np.degrees(roll)) < params.landing_attitude_deg
                and np.all(np.abs(np.degrees(w)) < params.landing_rate_deg)
                and glideslope_deg(v_LT) > params.landing_glideslope_deg)


def is_success(record: dict[str, Any], params: RewardParams = RewardParams()) -> bool:
    """Safe-landing predicate on a terminal record."""
    return bool(record.get("reason") == "touchdown"
                and record["speed"] < params.terminal_speed
                and record["miss"] < params.terminal_radius
                and record["glideslope_deg"] >= params.landing_glideslope_deg
                and abs(record["pitch_deg"]) < params.landing_attitude_deg
                and abs(record["roll_deg"]) < params.landing_attitude_deg
                and max(abs(x) for x in record["w_deg"]) < params.landing_rate_deg)


class LanderEnv:
    """Lunar powered-descent POMDP; see the module docstring for the modes."""

    def __init__(self, config: RunConfig | None = None, mode: str = GUIDANCE, record: bool = False):
        if mode not in (GUIDANCE, LANDING, "full"):
            raise ValueError(f"unknown mode {mode!r}")
        self.config = config or RunConfig()
        self.mode = mode
        self.record = record
        self.thrusters = propulsion.ThrusterConfig()
        self.rows: list[dict[str, Any]] = []
        self.done = True

    @property
    def ep(self) -> EpisodeConfig:
        return self.config.episode

    @property
    def rewards(self) -> RewardParams:
        return self.config.rewards

    # ------------------------------------------------------------------ reset
    def reset(self, seed: int | np.random.SeedSequence = 0, ic: LandingIC | None = None) -> StepResult:
        ep = self.ep
        sample = sample_episode(ep, self.config.scenario, seed)
        self.sample = sample
        self.inertia, self.com, self.engine = sample.inertia, sample.com, sample.engine
        self.schedule = DivertSchedule(tuple(ep.divert_thresholds), sample.divert_draws,
                                       [False] * len(ep.divert_thresholds))
        self.r_T = np.zeros(3)
        self.steps = 0
        self.t = 0.0
        self.rows = []
        self.done = False
        self.terminal: dict[str, Any] | None = None
        self.last_thrust_cmd = np.zeros(4)

        if self.mode == LANDING:
            if ic is None:
                raise ValueError("landing mode needs an initial condition from the IC pool")
            self.state = LanderState(ic.r_LT.copy(), ic.v_L.copy(), ic.q.copy(), ic.w.copy(), ic.m, ic.m0, 0.0)
            self.engine.u = ic.u.copy()
            self.segment = LANDING
        else:
            self.state = LanderState(sample.r_L.copy(), sample.v_L.copy(), sample.q.copy(),
                                     np.zeros(3), sample.m, sample.m, 0.0)
            self.segment = GUIDANCE
        self.dq = IDENTITY_QUAT.copy()

        prior = seeker.SeekerState(quat_mul(self.state.q, _SEEKER_MOUNT), np.zeros(4), ep.tau_seeker)
        self.seeker = seeker.platform_reset(self.r_T - self.state.r, prior, t=0.0)
        self.seeker.lag = seeker.measure(self.r_T - self.state.r, -self.state.v, self.seeker.q_platform)
        if self.segment == LANDING:
            self.seeker.mode = seeker.Mode.ALTITUDE
        self.field = guidance_field.VelocityFieldParams(v_c0=self.seeker.v_c)

        obs, vobs, extra = self._observe()
        info = {"segment": self.segment, "t": 0.0, "v_err": extra["v_err"], "t_go": extra["t_go"]}
        if self.record:
            self._record(np.full(4, np.nan), 0.0, extra, divert=False, reset=True)
        return StepResult(obs, vobs, 0.0, False, info)

    # ------------------------------------------------------------------- step
    def step(self, action: np.ndarray) -> StepResult:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        ep, params = self.ep, self.rewards
        action = np.asarray(action, dtype=float)
        try:
            u_cmd = propulsion.clip_command(action, self.thrusters)
        except NonFiniteError as exc:
            return self._abort(action, f"non-finite action: {exc}")
        u_af = propulsion.apply_failure(u_cmd, self.engine)
        self.engine.u_af = u_af
        if self.engine.u is None:
            self.engine.u = u_af.copy()
        self.last_thrust_cmd = u_af

        tracking = self.segment == GUIDANCE
        ctx = dynamics.PhysicsContext(
            u_af=u_af, tau_ctrl=self.engine.tau_ctrl, m0=self.state.m0, inertia=self.inertia,
            com=self.com, thrusters=self.thrusters, r_T=self.r_T,
            C_SN=self.seeker.C_SN if tracking else None, tau_seeker=self.seeker.tau)
        x0 = dynamics.pack(self.state, self.engine.u, self.dq, self.seeker.lag)
        try:
            x = dynamics.integrate(x0, ctx)
        except (NonFiniteError, np.linalg.LinAlgError) as exc:
            return self._abort(action, f"integration failed: {exc}")

        self.steps += 1
        self.t = self.steps * dynamics.DT_NAV
        self.state = dynamics.unpack(x, self.state.m0, self.t)
        self.engine.u = x[dynamics.U].copy()
        self.dq = x[dynamics.DQ].copy()
        self.seeker.lag = x[dynamics.SK].copy()

        diverted = False
        did_reset = False
        if tracking:
            rng_LT = float(np.linalg.norm(self.state.r - self.r_T))
            self.r_T, delta = maybe_divert(rng_LT, self.r_T, self.schedule, ep.divert_fractions)
            diverted = delta is not None
            if seeker.reset_due(self.t, self.seeker.t_last_reset, ep.reset_period):
                self.seeker = seeker.platform_reset(self.r_T - self.state.r, self.seeker, t=self.t)
                did_reset = True

        r_LT = self.state.r - self.r_T
        v_LT = self.state.v
        pitch, roll = pitch_roll(self.state.q)
        thrust_norm = float(np.sum(u_af))
        k, u_max = self.thrusters.k, self.thrusters.u_max
        reason = None

        if self.segment == GUIDANCE:
            obs, vobs, extra = self._observe()
            reward = guidance_reward(extra["v_err"], thrust_norm, r_LT, v_LT, pitch, roll, params, k, u_max)
            if attitude_violation(pitch, roll, params):
                reason = "attitude"
            elif r_LT[2] < ep.switch_altitude:
                if self.mode == GUIDANCE:
                    reason = "switch"
                else:
                    self.segment = LANDING
                    self.seeker.mode = seeker.Mode.ALTITUDE
                    obs, vobs, _ = self._observe()
        else:
            touchdown = bool(r_LT[2] < 0.0)
            reward = landing_reward(thrust_norm, r_LT, v_LT, self.state.v, pitch, roll, self.state.w,
                                    touchdown, params, k, u_max)
            obs, vobs, extra = self._observe()
            if attitude_violation(pitch, roll, params):
                reason = "attitude"
            elif touchdown:
                reason = "touchdown"

        if reason is None:
            if self.state.f_used >= ep.f_max:
                reason = "fuel"
            elif self.steps >= ep.max_steps:
                reason = "step_cap"

        done = reason is not None
        info: dict[str, Any] = {"segment": self.segment, "t": self.t, "diverted": diverted,
                                "platform_reset": did_reset, "v_err": extra.get("v_err"),
                                "t_go": extra.get("t_go")}
        if self.record:
            self._record(action, reward, extra, diverted, did_reset)
        if done:
            self.done = True
            self.terminal = self._terminal_record(reason)
            info["terminal"] = self.terminal
        return StepResult(obs, vobs, float(reward), done, info)

    # ---------------------------------------------------------------- helpers
    def _observe(self) -> tuple[np.ndarray, np.ndarray, dict[str, Any]]:
        s = self.state
        pitch, roll = pitch_roll(s.q)
        if self.segment == GUIDANCE:
            sk = self.seeker
            v_err, t_go = guidance_field.tracking_error(sk.range, sk.v_c, sk.theta_u, sk.theta_v, self.field)
            obs = np.concatenate([v_err, [t_go, sk.range], self.dq, qsub(s.q, sk.q_platform),
                                  [pitch, roll], s.w])
            return obs, obs, {"v_err": v_err, "t_go": t_go}
        h, h_dot = seeker.altitude_mode_measure(s.r, s.v, self.r_T[2])
        pobs = np.concatenate([[h, h_dot], s.q, s.w])
        vobs = np.concatenate([[s.r[2] - self.r_T[2]], s.v, s.q, s.w])
        return pobs, vobs, {"v_err": np.full(3, np.nan), "t_go": np.nan}

    def _terminal_record(self, reason: str) -> dict[str, Any]:
        s = self.state
        r_LT = s.r - self.r_T
        pitch, roll = pitch_roll(s.q)
        return {
            "reason": reason,
            "segment": self.segment,
            "steps": self.steps,
            "t": self.t,
            "miss": float(np.hypot(r_LT[0], r_LT[1])),
            "range": float(np.linalg.norm(r_LT)),
            "downrange": float(r_LT[0]),
            "crossrange": float(r_LT[1]),
            "altitude": float(r_LT[2]),
            "speed": float(np.linalg.norm(s.v)),
            "pitch_deg": float(np.degrees(pitch)),
            "roll_deg": float(np.degrees(roll)),
            "w_deg": [float(x) for x in np.degrees(s.w)],
            "glideslope_deg": glideslope_deg(s.v),
            "fuel": float(s.f_used),
            "diverts": self.schedule.count,
        }

    def landing_ic(self) -> LandingIC:
        """Current state as a landing-segment initial condition."""
        s = self.state
        return LandingIC(s.r - self.r_T, s.v.copy(), s.q.copy(), s.w.copy(), s.m, s.m0,
                         self.engine.u.copy())

    def _abort(self, action: np.ndarray, why: str) -> StepResult:
        self.done = True
        self.terminal = {"reason": "nonfinite", "diagnostic": why, "segment": self.segment,
                         "steps": self.steps, "t": self.t}
        n = GUIDANCE_OBS_DIM if self.segment == GUIDANCE else LANDING_POLICY_OBS_DIM
        nv = GUIDANCE_OBS_DIM if self.segment == GUIDANCE else LANDING_VALUE_OBS_DIM
        return StepResult(np.zeros(n), np.zeros(nv), 0.0, True,
                          {"segment": self.segment, "terminal": self.terminal})

    def _record(self, action, reward, extra, divert: bool, reset: bool) -> None:
        s, sk = self.state, self.seeker
        F_B, _ = propulsion.body_wrench(self.engine.u if self.engine.u is not None else np.zeros(4),
                                        np.zeros(3), self.thrusters)
        F_N = quat_to_dcm(s.q).T @ F_B
        r_TL = self.r_T - s.r
        bore = sk.boresight_inertial()
        pitch, roll = pitch_roll(s.q)
        self.rows.append({
            "t": self.t, "segment": self.segment,
            "r_L": s.r.copy(), "v_L": s.v.copy(), "q": s.q.copy(), "w": s.w.copy(), "m": s.m,
            "r_T": self.r_T.copy(),
            "theta_u": sk.theta_u, "theta_v": sk.theta_v, "range": sk.range, "v_c": sk.v_c,
            "q_platform": sk.q_platform.copy(),
            "v_err": np.asarray(extra["v_err"], dtype=float).copy(), "t_go": float(extra["t_go"]),
            "F_N": F_N, "thrust_cmd": float(np.sum(self.last_thrust_cmd)),
            "action": np.asarray(action, dtype=float).copy(), "reward": float(reward),
            "pitch": pitch, "roll": roll,
            "divert": divert, "reset": reset,
            "theta_cv": angle_between(bore, s.v), "theta_rv": angle_between(r_TL, s.v),
            "theta_cr": angle_between(bore, r_TL),
        })
