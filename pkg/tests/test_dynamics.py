import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seeker_landing import dynamics as dyn
from seeker_landing.dynamics import (ComModel, InertiaModel, LanderState, PhysicsContext, com_offset,
                                     inertia_tensor, integrate, joint_deriv, mass_flow, pack,
                                     rotational_deriv, sample_inertia_perturbation, step_physics,
                                     translational_deriv, unpack)
from seeker_landing.math_core import IDENTITY_QUAT, NonFiniteError, quat_from_axis_angle, quat_to_dcm
from seeker_landing.propulsion import EngineState


def _state(**kw):
    base = dict(r=np.array([10.0, -5.0, 2000.0]), v=np.array([-30.0, 2.0, -35.0]),
                q=quat_from_axis_angle([0.3, 1.0, 0.1], 0.4), w=np.zeros(3), m=1950.0, m0=1950.0)
    base.update(kw)
    return LanderState(**base)


def test_inertia_fixtures():
    assert np.allclose(inertia_tensor(1950.0), np.diag([1950, 1950, 3120]))
    assert np.array_equal(inertia_tensor(0.0), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        inertia_tensor(-1.0)


def test_inertia_sampling_psd_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(200):
        model = sample_inertia_perturbation(rng, 10.0, 1.0, m_min=1700.0)
        assert np.all(np.abs(model.dj_diag) <= 10.0) and np.all(np.abs(model.dj_off) <= 1.0)
        assert np.linalg.eigvalsh(inertia_tensor(1700.0, model)).min() >= 0.0
        assert np.allclose(inertia_tensor(1700.0, model), inertia_tensor(1700.0, model).T)


def test_com_fixtures():
    assert np.array_equal(com_offset(0.0), np.zeros(3))
    assert np.linalg.norm(com_offset(200.0)) == pytest.approx(0.1)
    assert np.linalg.norm(com_offset(100.0)) == pytest.approx(0.05)
    with pytest.warns(RuntimeWarning):
        assert np.linalg.norm(com_offset(300.0)) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        com_offset(-1.0)
    with pytest.raises(ValueError):
        ComModel(zeta=np.array([1.0, 1.0, 0.0]))


def test_rotational_fixtures():
    J = np.diag([1950.0, 1950.0, 3120.0])
    assert np.array_equal(rotational_deriv(np.zeros(3), J, np.zeros((3, 3)), np.zeros(3)), np.zeros(3))
    assert np.allclose(rotational_deriv(np.zeros(3), J, np.zeros((3, 3)), np.array([390.0, 0, 0])), [0.2, 0, 0])
    with pytest.raises(NonFiniteError):
        rotational_deriv(np.ones(3), np.zeros((3, 3)), np.zeros((3, 3)), np.zeros(3))


def test_translational_fixtures():
    s = _state()
    _, a = translational_deriv(s, np.zeros(3))
    assert np.allclose(a, [0, 0, -1.63])
    _, a = translational_deriv(s, np.array([0, 0, 1.63 * s.m]))
    assert np.allclose(a, 0, atol=1e-15)


def test_mass_flow_fixtures():
    assert mass_flow(np.zeros(4)) == 0.0
    assert mass_flow(np.full(4, 2500.0)) == pytest.approx(-4.535, abs=5e-4)
    assert mass_flow(np.full(4, 500.0)) == pytest.approx(-2000 / 2205)


def _unpowered_ctx(m0=1950.0, inertia=InertiaModel()):
    return PhysicsContext(u_af=np.zeros(4), tau_ctrl=0.2, m0=m0, inertia=inertia)


def test_free_fall_exact():
    s = _state(v=np.zeros(3), q=IDENTITY_QUAT.copy())
    x = pack(s, np.zeros(4), IDENTITY_QUAT, np.zeros(4))
    for compiled in (True, False):
        y = x
        for _ in range(10):
            y = integrate(y, _unpowered_ctx(), compiled=compiled)
        assert y[dyn.R][2] - x[dyn.R][2] == pytest.approx(-3.26, abs=1e-9)


def _run(x, ctx, seconds, compiled=True):
    for _ in range(int(round(seconds / dyn.DT_NAV))):
        x = integrate(x, ctx, compiled=compiled)
    return x


def test_torque_free_angular_momentum_conserved():
    inertia = InertiaModel(dj_diag=np.array([8.0, -5.0, 3.0]), dj_off=np.array([0.7, -0.4, 0.9]))
    s = _state(w=np.array([0.3, -0.2, 0.5]))
    x0 = pack(s, np.zeros(4), IDENTITY_QUAT, np.zeros(4))
    J = inertia_tensor(s.m, inertia)

    def H(x):
        return quat_to_dcm(x[dyn.Q]).T @ (J @ x[dyn.W])

    x1 = _run(x0, _unpowered_ctx(inertia=inertia), 10.0)
    assert np.linalg.norm(H(x1) - H(x0)) / np.linalg.norm(H(x0)) < 1e-6


def test_unpowered_energy_conserved():
    inertia = InertiaModel(dj_diag=np.array([4.0, -2.0, 1.0]), dj_off=np.array([0.2, 0.1, -0.3]))
    s = _state(w=np.array([0.1, 0.05, -0.2]))
    J = inertia_tensor(s.m, inertia)

    def E(x):
        m = x[dyn.M]
        return (0.5 * m * x[dyn.V] @ x[dyn.V] - m * dyn.GRAVITY @ x[dyn.R]
                + 0.5 * x[dyn.W] @ J @ x[dyn.W])

    x0 = pack(s, np.zeros(4), IDENTITY_QUAT, np.zeros(4))
    x1 = _run(x0, _unpowered_ctx(inertia=inertia), 10.0)
    assert abs(E(x1) - E(x0)) / abs(E(x0)) < 1e-7


def test_quaternion_norm_drift():
    s = _state(w=np.array([0.5, -0.4, 0.3]))
    ctx = PhysicsContext(u_af=np.array([2500.0, 500, 1800, 900]), tau_ctrl=0.2, m0=s.m)
    x = pack(s, np.array([1000.0, 1000, 1000, 1000]), IDENTITY_QUAT, np.zeros(4))
    for _ in range(50):
        x = integrate(x, ctx)
        assert abs(np.linalg.norm(x[dyn.Q]) - 1) < 1e-9
        assert abs(np.linalg.norm(x[dyn.DQ]) - 1) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_compiled_kernel_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    inertia = sample_inertia_perturbation(rng, 10.0, 1.0, m_min=1700.0)
    zeta = rng.normal(size=3)
    com = ComModel(zeta=zeta / np.linalg.norm(zeta))
    s = _state(w=rng.uniform(-0.3, 0.3, 3), m=1900.0, m0=1990.0,
               q=quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.5)))
    C_SN = quat_to_dcm(quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 3)))
    ctx = PhysicsContext(u_af=rng.uniform(500, 2500, 4), tau_ctrl=0.2, m0=s.m0, inertia=inertia, com=com,
                         r_T=rng.uniform(-50, 50, 3), C_SN=C_SN)
    x = pack(s, rng.uniform(500, 2500, 4), IDENTITY_QUAT, np.array([0.01, -0.02, 2500.0, 40.0]))
    a = integrate(x, ctx, compiled=True)
    b = integrate(x, ctx, compiled=False)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-9)


def test_joint_deriv_matches_components():
    s = _state(w=np.array([0.01, 0.02, -0.01]))
    u = np.array([900.0, 1100, 1000, 1000])
    ctx = PhysicsContext(u_af=u, tau_ctrl=0.2, m0=s.m)
    dx = joint_deriv(pack(s, u, IDENTITY_QUAT, np.zeros(4)), ctx)
    assert np.allclose(dx[dyn.R], s.v)
    assert dx[dyn.M] == pytest.approx(mass_flow(u))
    assert np.array_equal(dx[dyn.U], np.zeros(4))
    assert np.array_equal(dx[dyn.SK], np.zeros(4))  # no platform -> seeker lag frozen


def test_joint_deriv_rejects_zero_mass():
    x = pack(_state(), np.zeros(4), IDENTITY_QUAT, np.zeros(4))
    x[dyn.M] = 0.0
    with pytest.raises(NonFiniteError):
        joint_deriv(x, _unpowered_ctx())


def test_step_physics_advances_time_and_engine():
    s = _state()
    eng = EngineState(u_af=np.full(4, 2000.0))
    eng.u = np.full(4, 1000.0)
    s1 = step_physics(s, eng)
    assert s1.t == pytest.approx(0.2)
    assert s1.m < s.m
    assert np.all(eng.u > 1000.0) and np.all(eng.u < 2000.0)
    assert s1.f_used == pytest.approx(s.m0 - s1.m)


def test_integrate_validates_substeps():
    x = pack(_state(), np.zeros(4), IDENTITY_QUAT, np.zeros(4))
    with pytest.raises(ValueError):
        integrate(x, _unpowered_ctx(), dt=0.2, dt_sub=0.03)


def test_pack_unpack_round_trip():
    s = _state(w=np.array([0.1, 0.2, 0.3]))
    s2 = unpack(pack(s, np.zeros(4), IDENTITY_QUAT, np.zeros(4)), s.m0, s.t)
    assert np.array_equal(s2.r, s.r) and np.array_equal(s2.q, s.q) and s2.m == s.m
