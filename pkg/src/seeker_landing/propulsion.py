"""Four-thruster engine model: command clipping, partial failure, lag, and body wrench."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .math_core import NonFiniteError

# body-frame thruster locations (m), thrusters 1..4
THRUSTER_POSITIONS = np.array([
    [0.0, -2.0, -1.0],
    [0.0, 2.0, -1.0],
    [-2.0, 0.0, -1.0],
    [2.0, 0.0, -1.0],
])
# every thruster pushes along body +z: no direct yaw authority
THRUSTER_DIRECTIONS = np.tile([0.0, 0.0, 1.0], (4, 1))


@dataclass(frozen=True)
class ThrusterConfig:
    positions: np.ndarray = field(default_factory=lambda: THRUSTER_POSITIONS.copy())
    directions: np.ndarray = field(default_factory=lambda: THRUSTER_DIRECTIONS.copy())
    u_min: float = 500.0
    u_max: float = 2500.0

    @property
    def k(self) -> int:
        return len(self.positions)

    def __post_init__(self):
        if self.positions.shape != self.directions.shape:
            raise ValueError("positions and directions must have the same shape")
        norms = np.linalg.norm(self.directions, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-12):
            raise ValueError("thruster directions must be unit vectors")
        if not 0.0 <= self.u_min <= self.u_max:
            raise ValueError("need 0 <= u_min <= u_max")


@dataclass
class EngineState:
    """Per-episode engine state.

    ``u`` is the lagged (actual) thrust, ``u_af`` the post-failure command the
    lag is chasing.  ``u`` is ``None`` until the first command arrives.
    """

    tau_ctrl: float = 0.2
    fail: bool = False
    i_af: int = 0
    s_af: float = 1.0
    u: np.ndarray | None = None
    u_af: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        if not self.tau_ctrl > 0.0:
            raise ValueError("tau_ctrl must be positive")
        if not 0.0 < self.s_af <= 1.0:
            raise ValueError("s_af must lie in (0, 1]")


def clip_command(u_pi: np.ndarray, cfg: ThrusterConfig = ThrusterConfig()) -> np.ndarray:
    """Scale a raw policy action by ``u_max`` and clip into ``[u_min, u_max]``."""
    u_pi = np.asarray(u_pi, dtype=float)
    if not np.all(np.isfinite(u_pi)):
        raise NonFiniteError(f"non-finite action {u_pi!r}")
    return np.clip(cfg.u_max * u_pi, cfg.u_min, cfg.u_max)


def apply_failure(u_cmd: np.ndarray, engine: EngineState) -> np.ndarray:
    out = np.array(u_cmd, dtype=float)
    if engine.fail:
        out[engine.i_af] *= engine.s_af
    return out


def lag_deriv(u: np.ndarray, u_af: np.ndarray, tau_ctrl: float) -> np.ndarray:
    return (u_af - u) / tau_ctrl


def body_wrench(u: np.ndarray, r_com: np.ndarray,
                cfg: ThrusterConfig = ThrusterConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Body force (N) and torque about the center of mass (N·m)."""
    forces = cfg.directions * np.asarray(u)[:, None]
    F_B = forces.sum(axis=0)
    L_B = np.cross(cfg.positions - r_com, forces).sum(axis=0)
    return F_B, L_B
