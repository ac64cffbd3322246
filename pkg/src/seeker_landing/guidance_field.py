"""Seeker-derived reference velocity field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAU_VREF = 25.0
VC_EPS = 0.1
TGO_MAX = 1000.0


@dataclass(frozen=True)
class VelocityFieldParams:
    v_c0: float
    tau_vref: float = TAU_VREF

    def __post_init__(self):
        if not self.tau_vref > 0.0:
            raise ValueError("tau_vref must be positive")


def time_to_go(r: float, v_c: float, eps: float = VC_EPS, t_max: float = TGO_MAX) -> float:
    """``r / v_c``, saturated at ``t_max`` for non-closing geometry."""
    if r < 0.0:
        raise ValueError("range must be non-negative")
    if v_c <= eps:
        return t_max
    return min(r / v_c, t_max)


def v_lambda(v_c: float, theta_u: float, theta_v: float) -> np.ndarray:
    su, sv = np.sin(theta_u), np.sin(theta_v)
    return v_c * np.array([su, sv, np.sqrt(max(0.0, 1.0 - su * su - sv * sv))])


def v_ref(t_go: float, params: VelocityFieldParams) -> np.ndarray:
    if t_go < 0.0:
        raise ValueError("t_go must be non-negative")
    return np.array([0.0, 0.0, params.v_c0 * -np.expm1(-t_go / params.tau_vref)])


def v_err(v_lam: np.ndarray, v_reference: np.ndarray) -> np.ndarray:
    return np.asarray(v_lam) - np.asarray(v_reference)


def tracking_error(r: float, v_c: float, theta_u: float, theta_v: float,
                   params: VelocityFieldParams) -> tuple[np.ndarray, float]:
    """Tracking error and time-to-go from lagged seeker outputs."""
    t_go = time_to_go(max(r, 0.0), v_c)
    return v_err(v_lambda(v_c, theta_u, theta_v), v_ref(t_go, params)), t_go
