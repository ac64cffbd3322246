"""Rigid-body lander dynamics with fuel-dependent mass, inertia and center of mass.

The integrator works on a flat joint vector so that the engine lag, the
attitude-change quaternion ``dq`` and the seeker lag states advance inside the
same RK4 step as the rigid body.  See :data:`LAYOUT`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, propulsion, seeker
from .math_core import NonFiniteError, normalize, quat_deriv, quat_to_dcm, rk4_step

GRAVITY = np.array([0.0, 0.0, -1.63])
G_REF = 9.8
ISP = 225.0
DT_NAV = 0.2
DT_SUB = 0.05

# slices into the joint integration vector
R, V, Q, W, M, U, DQ, SK = (slice(0, 3), slice(3, 6), slice(6, 10), slice(10, 13),
                            13, slice(14, 18), slice(18, 22), slice(22, 26))
LAYOUT = {"r": R, "v": V, "q": Q, "w": W, "m": M, "u": U, "dq": DQ, "seeker": SK}
JOINT_SIZE = 26
_NO_DCM = np.eye(3)


@dataclass
class LanderState:
    r: np.ndarray
    v: np.ndarray
    q: np.ndarray
    w: np.ndarray
    m: float
    m0: float
    t: float = 0.0

    @property
    def f_used(self) -> float:
        return self.m0 - self.m

    def copy(self) -> "LanderState":
        return replace(self, r=self.r.copy(), v=self.v.copy(), q=self.q.copy(), w=self.w.copy())


@dataclass(frozen=True)
class InertiaModel:
    a: float = 2.0
    b: float = 2.0
    c: float = 1.0
    dj_diag: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dj_off: np.ndarray = field(default_factory=lambda: np.zeros(3))  # (xy, xz, yz)

    @property
    def shape_diag(self) -> np.ndarray:
        a2, b2, c2 = self.a ** 2, self.b ** 2, self.c ** 2
        return np.array([b2 + c2, a2 + c2, a2 + b2]) / 5.0

    @property
    def perturbation(self) -> np.ndarray:
        xy, xz, yz = self.dj_off
        return np.diag(self.dj_diag) + np.array([[0.0, xy, xz], [xy, 0.0, yz], [xz, yz, 0.0]])


@dataclass(frozen=True)
class ComModel:
    zeta: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    alpha: float = 0.1
    f_max: float = 200.0

    def __post_init__(self):
        if abs(np.linalg.norm(self.zeta) - 1.0) > 1e-9:
            raise ValueError("zeta must be a unit vector")


def sample_inertia_perturbation(rng: np.random.Generator, diag_bound: float, off_bound: float,
                                m_min: float = 1.0, model: InertiaModel = InertiaModel(),
                                max_tries: int = 1000) -> InertiaModel:
    """Draw uniform diagonal/off-diagonal perturbations, resampling until J is PSD.

    PSD is checked at the smallest mass the episode can reach (``m_min``),
    where the perturbation is relatively largest.
    """
    for _ in range(max_tries):
        dj_diag = rng.uniform(-diag_bound, diag_bound, 3)
        dj_off = rng.uniform(-off_bound, off_bound, 3)
        cand = replace(model, dj_diag=dj_diag, dj_off=dj_off)
        if np.linalg.eigvalsh(inertia_tensor(m_min, cand)).min() >= 0.0:
            return cand
    raise RuntimeError("could not draw a positive semi-definite inertia perturbation")


def inertia_tensor(m: float, model: InertiaModel = InertiaModel()) -> np.ndarray:
    """Uniform-density ellipsoid inertia plus the episode's perturbation (kg·m²)."""
    if m < 0.0:
        raise ValueError("mass must be non-negative")
    if m == 0.0:
        return np.zeros((3, 3))
    return np.diag(m * model.shape_diag) + model.perturbation


def com_offset(f_used: float, model: ComModel = ComModel()) -> np.ndarray:
    if f_used < 0.0:
        raise ValueError("f_used must be non-negative")
    if f_used > model.f_max:
        warnings.warn(f"fuel used {f_used:.3f} kg exceeds f_max; clamping", RuntimeWarning, stacklevel=2)
        f_used = model.f_max
    return model.alpha * model.zeta * (f_used / model.f_max)


def rotational_deriv(w: np.ndarray, J: np.ndarray, J_dot: np.ndarray, L_B: np.ndarray) -> np.ndarray:
    """Euler's equations with a time-varying inertia: J ω̇ = -ω × Jω - J̇ω + L."""
    rhs = -np.cross(w, J @ w) - J_dot @ w + L_B
    try:
        return np.linalg.solve(J, rhs)
    except np.linalg.LinAlgError as exc:
        raise NonFiniteError(f"singular inertia tensor {J!r}") from exc


def translational_deriv(state: LanderState, F_N: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if not state.m > 0.0:
        raise ValueError("mass must be positive")
    return state.v.copy(), F_N / state.m + GRAVITY


def mass_flow(u: np.ndarray) -> float:
    """Propellant mass rate (kg/s, negative) for per-thruster thrust magnitudes."""
    return -float(np.sum(np.abs(u))) / (ISP * G_REF)


@dataclass
class PhysicsContext:
    """Quantities held fixed across one navigation step."""

    u_af: np.ndarray
    tau_ctrl: float
    m0: float
    inertia: InertiaModel = InertiaModel()
    com: ComModel = ComModel()
    thrusters: propulsion.ThrusterConfig = propulsion.ThrusterConfig()
    r_T: np.ndarray = field(default_factory=lambda: np.zeros(3))
    C_SN: np.ndarray | None = None  # seeker platform DCM; None freezes the seeker lag
    tau_seeker: float = 0.2


def joint_deriv(x: np.ndarray, ctx: PhysicsContext) -> np.ndarray:
    """Time derivative of the joint vector (rigid body, engine lag, dq, seeker lag)."""
    dx = np.zeros(JOINT_SIZE)
    v = x[V]
    q = x[Q]
    w = x[W]
    m = x[M]
    u = x[U]
    if not m > 0.0:
        raise NonFiniteError(f"non-positive mass {m}")

    f_used = min(max(ctx.m0 - m, 0.0), ctx.com.f_max)
    r_com = ctx.com.alpha * ctx.com.zeta * (f_used / ctx.com.f_max)
    F_B, L_B = propulsion.body_wrench(u, r_com, ctx.thrusters)

    m_dot = mass_flow(u)
    J = np.diag(m * ctx.inertia.shape_diag) + ctx.inertia.perturbation
    J_dot = np.diag(m_dot * ctx.inertia.shape_diag)

    C_BN = quat_to_dcm(q)
    dx[R] = v
    dx[V] = C_BN.T @ F_B / m + GRAVITY
    dx[Q] = quat_deriv(q, w)
    dx[W] = rotational_deriv(w, J, J_dot, L_B)
    dx[M] = m_dot
    dx[U] = (ctx.u_af - u) / ctx.tau_ctrl
    dx[DQ] = quat_deriv(x[DQ], w)
    if ctx.C_SN is not None:
        meas = seeker.measure_unlagged(ctx.r_T - x[R], -v, ctx.C_SN, hold=x[SK])
        dx[SK] = (meas - x[SK]) / ctx.tau_seeker
    if not np.all(np.isfinite(dx)):
        raise NonFiniteError("non-finite state derivative")
    return dx


def integrate(x: np.ndarray, ctx: PhysicsContext, dt: float = DT_NAV, dt_sub: float = DT_SUB,
              compiled: bool = True) -> np.ndarray:
    """Advance the joint vector by ``dt`` using RK4 substeps of ``dt_sub``.

    ``compiled=False`` runs the pure-numpy :func:`joint_deriv` path.
    """
    n = int(round(dt / dt_sub))
    if n < 1 or abs(n * dt_sub - dt) > 1e-12:
        raise ValueError("dt must be an integer multiple of dt_sub")
    if compiled:
        seeker_on = ctx.C_SN is not None
        out = _kernels.integrate(
            np.asarray(x, dtype=float), n, dt_sub, np.asarray(ctx.u_af, dtype=float), ctx.tau_ctrl,
            ctx.m0, ctx.inertia.shape_diag, ctx.inertia.perturbation, np.asarray(ctx.com.zeta, dtype=float),
            ctx.com.alpha, ctx.com.f_max, ctx.thrusters.positions, ctx.thrusters.directions,
            np.asarray(ctx.r_T, dtype=float), ctx.C_SN if seeker_on else _NO_DCM, seeker_on, ctx.tau_seeker)
        if not np.all(np.isfinite(out)) or not out[M] > 0.0:
            raise NonFiniteError("non-finite state after integration")
        return out
    x = x.copy()
    for _ in range(n):
        x = rk4_step(lambda s: joint_deriv(s, ctx), x, dt_sub)
        x[Q] = normalize(x[Q])
        x[DQ] = normalize(x[DQ])
    return x


def pack(state: LanderState, u: np.ndarray, dq: np.ndarray, seeker_lag: np.ndarray) -> np.ndarray:
    x = np.empty(JOINT_SIZE)
    x[R], x[V], x[Q], x[W], x[M] = state.r, state.v, state.q, state.w, state.m
    x[U], x[DQ], x[SK] = u, dq, seeker_lag
    return x


def unpack(x: np.ndarray, m0: float, t: float) -> LanderState:
    return LanderState(r=x[R].copy(), v=x[V].copy(), q=x[Q].copy(), w=x[W].copy(),
                       m=float(x[M]), m0=m0, t=t)


def step_physics(state: LanderState, engine: propulsion.EngineState, dt_nav: float = DT_NAV,
                 dt_sub: float = DT_SUB, inertia: InertiaModel = InertiaModel(),
                 com: ComModel = ComModel(),
                 thrusters: propulsion.ThrusterConfig = propulsion.ThrusterConfig()) -> LanderState:
    """Rigid body plus engine lag only (no seeker); updates ``engine.u`` in place."""
    u = engine.u if engine.u is not None else engine.u_af.copy()
    ctx = PhysicsContext(u_af=engine.u_af, tau_ctrl=engine.tau_ctrl, m0=state.m0,
                         inertia=inertia, com=com, thrusters=thrusters)
    x = integrate(pack(state, u, np.array([1.0, 0, 0, 0]), np.zeros(4)), ctx, dt_nav, dt_sub)
    engine.u = x[U].copy()
    return unpack(x, state.m0, state.t + dt_nav)
