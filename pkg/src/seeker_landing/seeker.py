"""Stabilized gimbaled seeker.

The platform holds an inertially fixed attitude ``q_platform`` between resets.
Its third axis (w) is the nominal boresight; the gimbal angles are the
projections of the line of sight onto the platform u and v axes.  The lagged
measurements ``(θ_u, θ_v, r, v_c)`` follow their geometric values through a
first-order lag with time constant ``tau``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .math_core import quat_mul, quat_to_dcm, rk4_step, shortest_arc

W_AXIS = np.array([0.0, 0.0, 1.0])
MIN_RANGE = 1e-6
FIELD_OF_REGARD_HALF = np.deg2rad(45.0)
RESET_PERIOD = 2.0


class Mode(enum.Enum):
    TRACK = "track"
    ALTITUDE = "altitude"


@dataclass
class SeekerState:
    q_platform: np.ndarray
    lag: np.ndarray = field(default_factory=lambda: np.zeros(4))  # θ_u, θ_v, r, v_c
    tau: float = 0.2
    mode: Mode = Mode.TRACK
    t_last_reset: float = 0.0

    @property
    def theta_u(self) -> float:
        return float(self.lag[0])

    @property
    def theta_v(self) -> float:
        return float(self.lag[1])

    @property
    def range(self) -> float:
        return float(self.lag[2])

    @property
    def v_c(self) -> float:
        return float(self.lag[3])

    @property
    def C_SN(self) -> np.ndarray:
        return quat_to_dcm(self.q_platform)

    def boresight_inertial(self) -> np.ndarray:
        """Lagged boresight direction expressed in the inertial frame."""
        su, sv = np.sin(self.lag[0]), np.sin(self.lag[1])
        b = np.array([su, sv, np.sqrt(max(0.0, 1.0 - su * su - sv * sv))])
        return self.C_SN.T @ b


def measure_unlagged(r_TL: np.ndarray, v_TL: np.ndarray, C_SN: np.ndarray,
                     hold: np.ndarray | None = None) -> np.ndarray:
    """Geometric ``(θ̃_u, θ̃_v, r̃, ṽ_c)`` for a platform with DCM ``C_SN``.

    Below ``MIN_RANGE`` the line of sight is undefined and ``hold`` (the
    previous measurement) is returned instead.
    """
    rx, ry, rz = r_TL
    rng = np.sqrt(rx * rx + ry * ry + rz * rz)
    if rng < MIN_RANGE:
        if hold is None:
            raise ValueError("range below minimum and no held measurement")
        return np.array(hold, dtype=float)
    lam = C_SN @ r_TL / rng
    su = min(1.0, max(-1.0, lam[0]))
    sv = min(1.0, max(-1.0, lam[1]))
    v_c = -(rx * v_TL[0] + ry * v_TL[1] + rz * v_TL[2]) / rng
    return np.array([np.arcsin(su), np.arcsin(sv), rng, v_c])


def measure(r_TL: np.ndarray, v_TL: np.ndarray, q_platform: np.ndarray) -> np.ndarray:
    return measure_unlagged(np.asarray(r_TL, float), np.asarray(v_TL, float), quat_to_dcm(q_platform))


def platform_reset(r_TL: np.ndarray, prior: SeekerState, t: float | None = None) -> SeekerState:
    """Rotate the platform by the shortest arc that puts its w-axis on the LOS.

    Lagged gimbal angles, range and closing speed carry over untouched.
    """
    t_reset = prior.t_last_reset if t is None else t
    n = np.linalg.norm(r_TL)
    if n < MIN_RANGE:
        return SeekerState(prior.q_platform.copy(), prior.lag.copy(), prior.tau, prior.mode, t_reset)
    w_now = prior.C_SN.T @ W_AXIS
    q_new = quat_mul(shortest_arc(w_now, r_TL / n), prior.q_platform)
    q_new /= np.linalg.norm(q_new)
    return SeekerState(q_new, prior.lag.copy(), prior.tau, prior.mode, t_reset)


def reset_due(t: float, t_last_reset: float, period: float = RESET_PERIOD, tol: float = 1e-9) -> bool:
    return t - t_last_reset >= period - tol


def lag_deriv(lag: np.ndarray, unlagged: np.ndarray, tau: float) -> np.ndarray:
    return (np.asarray(unlagged) - np.asarray(lag)) / tau


def lag_step(state: SeekerState, unlagged: np.ndarray, dt: float, dt_sub: float = 0.05) -> SeekerState:
    """Advance the lag toward a fixed ``unlagged`` target (RK4 substeps).

    Inside the environment the lag is integrated jointly with the body
    dynamics instead; this standalone form is for a frozen scene.
    """
    x = state.lag.copy()
    n = max(1, int(round(dt / dt_sub)))
    h = dt / n
    for _ in range(n):
        x = rk4_step(lambda s: lag_deriv(s, unlagged, state.tau), x, h)
    return SeekerState(state.q_platform.copy(), x, state.tau, state.mode, state.t_last_reset)


def altitude_mode_measure(r_L: np.ndarray, v_L: np.ndarray, dls_altitude: float) -> tuple[float, float]:
    """Altitude above the landing site and its rate, with the boresight on the local vertical."""
    return float(r_L[2] - dls_altitude), float(v_L[2])


def out_of_field(state: SeekerState) -> bool:
    return bool(abs(state.lag[0]) > FIELD_OF_REGARD_HALF or abs(state.lag[1]) > FIELD_OF_REGARD_HALF)
