"""Quaternion, direction-cosine and Euler-angle algebra plus a fixed-step RK4.

Conventions
-----------
* Quaternions are scalar-first Hamilton quaternions ``q = [q0, q1, q2, q3]``.
* An attitude quaternion ``q`` rotates body-frame vectors into the inertial
  frame (``v_N = q ⊗ v_B ⊗ q*``).  ``quat_to_dcm(q)`` returns the transpose of
  that rotation, i.e. ``C_BN`` with ``x_B = C_BN @ x_N``.
* Kinematics: ``q_dot = 0.5 * q ⊗ [0, ω_B]``.
* Euler 3-2-1 angles are (yaw, pitch, roll) with ``C_BN = R1(roll) R2(pitch) R3(yaw)``.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
GIMBAL_LOCK_TOL = 1e-6


class NonFiniteError(FloatingPointError):
    """Raised when a state or derivative contains NaN/inf."""


class Euler321(NamedTuple):
    yaw: float
    pitch: float
    roll: float


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}: {x!r}")


def normalize(q: np.ndarray) -> np.ndarray:
    n = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a ⊗ b``."""
    a0, a1, a2, a3 = a
    b0, b1, b2, b3 = b
    return np.array([
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def canonical(q: np.ndarray) -> np.ndarray:
    """Pick the sign with non-negative scalar part."""
    return -q if q[0] < 0.0 else q


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return IDENTITY_QUAT.copy()
    s = np.sin(0.5 * angle) / n
    return np.array([np.cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_to_dcm(q: np.ndarray) -> np.ndarray:
    """Direction cosine matrix ``C_BN`` (inertial -> body) for attitude ``q``."""
    q = np.asarray(q, dtype=float)
    _check_finite(q, "quaternion")
    q0, q1, q2, q3 = q
    return np.array([
        [q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3, 2.0 * (q1 * q2 + q0 * q3), 2.0 * (q1 * q3 - q0 * q2)],
        [2.0 * (q1 * q2 - q0 * q3), q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3, 2.0 * (q2 * q3 + q0 * q1)],
        [2.0 * (q1 * q3 + q0 * q2), 2.0 * (q2 * q3 - q0 * q1), q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3],
    ])


def quat_deriv(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Quaternion rate ``0.5 * q ⊗ [0, ω]`` for body rates ``omega`` (rad/s)."""
    q0, q1, q2, q3 = q
    w0, w1, w2 = omega
    return 0.5 * np.array([
        -q1 * w0 - q2 * w1 - q3 * w2,
        q0 * w0 - q3 * w1 + q2 * w2,
        q3 * w0 + q0 * w1 - q1 * w2,
        -q2 * w0 + q1 * w1 + q0 * w2,
    ])


def qsub(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Relative rotation ``qa ⊗ qb⁻¹`` with non-negative scalar part."""
    return canonical(quat_mul(qa, quat_conj(qb)))


def from_euler321(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = np.cos(0.5 * yaw), np.sin(0.5 * yaw)
    cp, sp = np.cos(0.5 * pitch), np.sin(0.5 * pitch)
    cr, sr = np.cos(0.5 * roll), np.sin(0.5 * roll)
    return np.array([
        cy * cp * cr + sy * sp * sr,
        cy * cp * sr - sy * sp * cr,
        cy * sp * cr + sy * cp * sr,
        sy * cp * cr - cy * sp * sr,
    ])


def to_euler321(q: np.ndarray) -> Euler321:
    """Extract (yaw, pitch, roll) consistent with :func:`quat_to_dcm`.

    At gimbal lock (``|pitch|`` within 1e-6 rad of 90 deg) roll is set to zero
    and the whole rotation about the vertical is folded into yaw.
    """
    C = quat_to_dcm(q)
    s = -C[0, 2]
    s = min(1.0, max(-1.0, s))
    pitch = float(np.arcsin(s))
    if abs(abs(pitch) - 0.5 * np.pi) < GIMBAL_LOCK_TOL:
        # C[1,0] = -sin(yaw ∓ roll) with roll = 0
        yaw = float(np.arctan2(-C[1, 0], C[1, 1]))
        return Euler321(yaw, pitch, 0.0)
    yaw = float(np.arctan2(C[0, 1], C[0, 0]))
    roll = float(np.arctan2(C[1, 2], C[2, 2]))
    return Euler321(yaw, pitch, roll)


def pitch_roll(q: np.ndarray) -> tuple[float, float]:
    """Cheap pitch and roll (rad) without building the full DCM."""
    q0, q1, q2, q3 = q
    s = -2.0 * (q1 * q3 - q0 * q2)
    s = min(1.0, max(-1.0, s))
    pitch = float(np.arcsin(s))
    roll = float(np.arctan2(2.0 * (q2 * q3 + q0 * q1), q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3))
    if abs(abs(pitch) - 0.5 * np.pi) < GIMBAL_LOCK_TOL:
        roll = 0.0
    return pitch, roll


def shortest_arc(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation quaternion taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    d = float(np.dot(a, b))
    c = np.cross(a, b)
    s = float(np.linalg.norm(c))
    if s < 1e-15:
        if d > 0.0:
            return IDENTITY_QUAT.copy()
        # antiparallel: rotate pi about any axis perpendicular to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        return quat_from_axis_angle(axis, np.pi)
    # atan2 form keeps full precision near 0 and pi, unlike (1 + a.b, a x b)
    half = 0.5 * np.arctan2(s, d)
    return np.concatenate(([np.cos(half)], np.sin(half) * c / s))


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate ``v`` by ``q`` (``q ⊗ v ⊗ q*``); maps body to inertial for an attitude."""
    return quat_to_dcm(q).T @ v


def angle_between(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of the autonomous system ``x' = f(x)``."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("RK4 produced a non-finite state")
    return out
