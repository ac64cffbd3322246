"""Compiled hot path of :func:`seeker_landing.dynamics.integrate`.

Mirrors ``dynamics.joint_deriv`` term by term; the test suite checks the two
against each other.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

G_Z = -1.63
ISP_G = 225.0 * 9.8


@njit(cache=True)
def _qrate(q0, q1, q2, q3, w0, w1, w2, out, k):
    out[k] = 0.5 * (-q1 * w0 - q2 * w1 - q3 * w2)
    out[k + 1] = 0.5 * (q0 * w0 - q3 * w1 + q2 * w2)
    out[k + 2] = 0.5 * (q3 * w0 + q0 * w1 - q1 * w2)
    out[k + 3] = 0.5 * (-q2 * w0 + q1 * w1 + q0 * w2)


@njit(cache=True)
def deriv(x, u_af, tau_ctrl, m0, shape_diag, pert, zeta, alpha, f_max,
          positions, directions, r_T, C_SN, seeker_on, tau_seeker):
    dx = np.zeros(26)
    m = x[13]
    # rigid body
    q0, q1, q2, q3 = x[6], x[7], x[8], x[9]
    w0, w1, w2 = x[10], x[11], x[12]
    f_used = min(max(m0 - m, 0.0), f_max)
    s = alpha * f_used / f_max
    rc0, rc1, rc2 = s * zeta[0], s * zeta[1], s * zeta[2]
    F0 = F1 = F2 = 0.0
    L0 = L1 = L2 = 0.0
    usum = 0.0
    for i in range(positions.shape[0]):
        ui = x[14 + i]
        usum += abs(ui)
        f0, f1, f2 = directions[i, 0] * ui, directions[i, 1] * ui, directions[i, 2] * ui
        p0, p1, p2 = positions[i, 0] - rc0, positions[i, 1] - rc1, positions[i, 2] - rc2
        F0 += f0
        F1 += f1
        F2 += f2
        L0 += p1 * f2 - p2 * f1
        L1 += p2 * f0 - p0 * f2
        L2 += p0 * f1 - p1 * f0
    m_dot = -usum / ISP_G

    # C_BN^T F_B
    c00 = q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3
    c01 = 2.0 * (q1 * q2 + q0 * q3)
    c02 = 2.0 * (q1 * q3 - q0 * q2)
    c10 = 2.0 * (q1 * q2 - q0 * q3)
    c11 = q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3
    c12 = 2.0 * (q2 * q3 + q0 * q1)
    c20 = 2.0 * (q1 * q3 + q0 * q2)
    c21 = 2.0 * (q2 * q3 - q0 * q1)
    c22 = q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3
    dx[0], dx[1], dx[2] = x[3], x[4], x[5]
    dx[3] = (c00 * F0 + c10 * F1 + c20 * F2) / m
    dx[4] = (c01 * F0 + c11 * F1 + c21 * F2) / m
    dx[5] = (c02 * F0 + c12 * F1 + c22 * F2) / m + G_Z
    _qrate(q0, q1, q2, q3, w0, w1, w2, dx, 6)

    J = pert.copy()
    for i in range(3):
        J[i, i] += m * shape_diag[i]
    Jw0 = J[0, 0] * w0 + J[0, 1] * w1 + J[0, 2] * w2
    Jw1 = J[1, 0] * w0 + J[1, 1] * w1 + J[1, 2] * w2
    Jw2 = J[2, 0] * w0 + J[2, 1] * w1 + J[2, 2] * w2
    rhs = np.empty(3)
    rhs[0] = -(w1 * Jw2 - w2 * Jw1) - m_dot * shape_diag[0] * w0 + L0
    rhs[1] = -(w2 * Jw0 - w0 * Jw2) - m_dot * shape_diag[1] * w1 + L1
    rhs[2] = -(w0 * Jw1 - w1 * Jw0) - m_dot * shape_diag[2] * w2 + L2
    wd = np.linalg.solve(J, rhs)
    dx[10], dx[11], dx[12] = wd[0], wd[1], wd[2]
    dx[13] = m_dot
    for i in range(4):
        dx[14 + i] = (u_af[i] - x[14 + i]) / tau_ctrl
    _qrate(x[18], x[19], x[20], x[21], w0, w1, w2, dx, 18)

    if seeker_on:
        r0, r1, r2 = r_T[0] - x[0], r_T[1] - x[1], r_T[2] - x[2]
        rng = math.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
        if rng >= 1e-6:
            su = (C_SN[0, 0] * r0 + C_SN[0, 1] * r1 + C_SN[0, 2] * r2) / rng
            sv = (C_SN[1, 0] * r0 + C_SN[1, 1] * r1 + C_SN[1, 2] * r2) / rng
            su = min(1.0, max(-1.0, su))
            sv = min(1.0, max(-1.0, sv))
            v_c = (r0 * x[3] + r1 * x[4] + r2 * x[5]) / rng  # -(r_TL . v_TL)/r with v_TL = -v_L
            dx[22] = (math.asin(su) - x[22]) / tau_seeker
            dx[23] = (math.asin(sv) - x[23]) / tau_seeker
            dx[24] = (rng - x[24]) / tau_seeker
            dx[25] = (v_c - x[25]) / tau_seeker
    return dx


@njit(cache=True)
def integrate(x, n_sub, h, u_af, tau_ctrl, m0, shape_diag, pert, zeta, alpha, f_max,
              positions, directions, r_T, C_SN, seeker_on, tau_seeker):
    x = x.copy()
    for _ in range(n_sub):
        k1 = deriv(x, u_af, tau_ctrl, m0, shape_diag, pert, zeta, alpha, f_max,
                   positions, directions, r_T, C_SN, seeker_on, tau_seeker)
        k2 = deriv(x + 0.5 * h * k1, u_af, tau_ctrl, m0, shape_diag, pert, zeta, alpha, f_max,
                   positions, directions, r_T, C_SN, seeker_on, tau_seeker)
        k3 = deriv(x + 0.5 * h * k2, u_af, tau_ctrl, m0, shape_diag, pert, zeta, alpha, f_max,
                   positions, directions, r_T, C_SN, seeker_on, tau_seeker)
        k4 = deriv(x + h * k3, u_af, tau_ctrl, m0, shape_diag, pert, zeta, alpha, f_max,
                   positions, directions, r_T, C_SN, seeker_on, tau_seeker)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        n = math.sqrt(x[6] ** 2 + x[7] ** 2 + x[8] ** 2 + x[9] ** 2)
        for i in range(6, 10):
            x[i] /= n
        n = math.sqrt(x[18] ** 2 + x[19] ** 2 + x[20] ** 2 + x[21] ** 2)
        for i in range(18, 22):
            x[i] /= n
    return x
