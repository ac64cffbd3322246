"""Acceptance suite: one test per criterion, each printing a PASS/FAIL verdict.

The verdicts are also collected by ``conftest.py`` and printed in the terminal summary.
Criterion 7 (full-scale reproduction) needs checkpoints from the full training budget;
point ``SEEKER_FULL_GUIDANCE`` and ``SEEKER_FULL_LANDING`` at them to run it.
"""

import os
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from seeker_landing import dynamics as dyn
from seeker_landing.config import EpisodeConfig, RunConfig, Scenario
from seeker_landing.dynamics import InertiaModel, LanderState, PhysicsContext, inertia_tensor, integrate, mass_flow, pack
from seeker_landing.environment import (GUIDANCE, LANDING, DivertSchedule, LanderEnv, glideslope_deg,
                                        guidance_reward, landing_criteria_met, landing_reward, maybe_divert,
                                        sample_episode)
from seeker_landing.eval_harness import (ScenarioSpec, export_trajectory, replay_actions, run_episode,
                                         run_monte_carlo)
from seeker_landing.guidance_field import VelocityFieldParams, v_ref
from seeker_landing.math_core import IDENTITY_QUAT, quat_from_axis_angle, quat_to_dcm, rk4_step
from seeker_landing.networks import NetworkSpec, RecurrentNet, load_checkpoint
from seeker_landing.ppo import (PPOTrainer, collect_rollouts, discounted_returns, new_agent,
                                policy_objective_grads, ppo_surrogate)
from seeker_landing.propulsion import body_wrench, lag_deriv

DEG = np.pi / 180


@contextmanager
def criterion(k, detail=lambda: ""):
    """Record PASS when the body finishes, FAIL with the assertion message otherwise."""
    try:
        yield
    except BaseException as exc:
        if isinstance(exc, pytest.skip.Exception):
            raise
        ACCEPTANCE_RESULTS[k] = ("FAIL", f"{type(exc).__name__}: {exc}".splitlines()[0][:200])
        print(f"CRITERION {k}: FAIL  {exc}")
        raise
    ACCEPTANCE_RESULTS[k] = ("PASS", detail())
    print(f"CRITERION {k}: PASS  {detail()}")


# ------------------------------------------------------------------ 1. numerics
def _state(w):
    return LanderState(r=np.array([10.0, -5.0, 2000.0]), v=np.array([-30.0, 2.0, -35.0]),
                       q=quat_from_axis_angle([0.3, 1.0, 0.1], 0.4), w=np.asarray(w, float), m=1950.0, m0=1950.0)


def _coast(x, inertia, seconds=10.0):
    ctx = PhysicsContext(u_af=np.zeros(4), tau_ctrl=0.2, m0=1950.0, inertia=inertia)
    for _ in range(int(round(seconds / dyn.DT_NAV))):
        x = integrate(x, ctx)
    return x


def test_criterion_1_numerics():
    info = {}
    with criterion(1, lambda: ", ".join(f"{k}={v:.3g}" for k, v in info.items())):
        def global_err(h):
            x = np.array([1.0])
            for _ in range(int(round(1.0 / h))):
                x = rk4_step(lambda y: -y, x, h)
            return abs(x[0] - np.exp(-1.0))

        info["rk4_ratio"] = global_err(0.1) / global_err(0.05)
        assert 14 <= info["rk4_ratio"] <= 18

        s = _state([0.5, -0.4, 0.3])
        ctx = PhysicsContext(u_af=np.array([2500.0, 500, 1800, 900]), tau_ctrl=0.2, m0=s.m)
        x = pack(s, np.full(4, 1000.0), IDENTITY_QUAT, np.zeros(4))
        drift = 0.0
        for _ in range(50):
            x = integrate(x, ctx)
            drift = max(drift, abs(np.linalg.norm(x[dyn.Q]) - 1))
        info["quat_drift"] = drift
        assert drift < 1e-9

        inertia = InertiaModel(dj_diag=np.array([8.0, -5.0, 3.0]), dj_off=np.array([0.7, -0.4, 0.9]))
        J = inertia_tensor(1950.0, inertia)
        x0 = pack(_state([0.3, -0.2, 0.5]), np.zeros(4), IDENTITY_QUAT, np.zeros(4))
        x1 = _coast(x0, inertia)
        H = lambda x: quat_to_dcm(x[dyn.Q]).T @ (J @ x[dyn.W])
        info["dH_rel"] = np.linalg.norm(H(x1) - H(x0)) / np.linalg.norm(H(x0))
        assert info["dH_rel"] < 1e-6

        E = lambda x: (0.5 * x[dyn.M] * x[dyn.V] @ x[dyn.V] - x[dyn.M] * dyn.GRAVITY @ x[dyn.R]
                       + 0.5 * x[dyn.W] @ J @ x[dyn.W])
        info["dE_rel"] = abs(E(x1) - E(x0)) / abs(E(x0))
        assert info["dE_rel"] < 1e-7


# ------------------------------------------------------------ 2. model fidelity
def test_criterion_2_model_fidelity():
    with criterion(2):
        _, L = body_wrench(np.array([1000.0, 0, 0, 0]), np.zeros(3))
        assert np.allclose(L, [-2000.0, 0, 0], rtol=0, atol=1e-9)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            _, L = body_wrench(rng.uniform(0, 2500, 4), rng.uniform(-0.1, 0.1, 3))
            assert abs(L[2]) < 1e-9

        assert mass_flow(np.full(4, 2500.0)) == pytest.approx(-4.535, abs=5e-4)

        x, target = np.zeros(4), np.full(4, 1000.0)
        for _ in range(4):  # one 0.2 s time constant in 0.05 s substeps
            x = rk4_step(lambda y: lag_deriv(y, target, 0.2), x, 0.05)
        assert np.allclose(x / 1000.0, 0.632, rtol=0.01)

        v_c0 = 43.0
        assert abs(v_ref(25.0, VelocityFieldParams(v_c0))[2] - (1 - np.exp(-1)) * v_c0) < 1e-6

        far, v = np.array([500.0, 0, 800.0]), np.full(3, 10.0)
        assert guidance_reward(np.zeros(3), 0.0, far, v, 0, 0) == pytest.approx(0.01)
        assert guidance_reward(np.array([0.6, 0, 0.8]), 10000.0, far, v, 0, 0) == pytest.approx(-0.5)
        assert guidance_reward(np.zeros(3), 0.0, np.array([3.0, 0, 4.0]), np.array([0, 0, -1.5]), 0, 0) == \
            pytest.approx(20.01)
        assert guidance_reward(np.zeros(3), 0.0, far, v, 86 * DEG, 0) == pytest.approx(-99.99)
        assert guidance_reward(np.zeros(3), 0.0, far, v, 84 * DEG, -84 * DEG) == pytest.approx(0.01)

        vd = np.array([0, 0, -1.0])
        assert landing_reward(4000.0, np.array([0, 0, 2.0]), vd, vd, 0, 0, np.zeros(3), False) == \
            pytest.approx(-0.004)
        assert landing_reward(4000.0, np.array([0, 0, -0.1]), vd, vd, 0, 0, np.zeros(3), True) == \
            pytest.approx(-0.004 + 20 * np.exp(-1 / 25) + 20)

        def touch(glide, speed=1.0):
            g = glide * DEG
            return np.array([speed * np.cos(g), 0.0, -speed * np.sin(g)])

        assert glideslope_deg(touch(80.0)) == pytest.approx(80.0)
        assert not landing_criteria_met(touch(80.0 - 1e-9), 0, 0, np.zeros(3))
        assert landing_criteria_met(touch(80.5), 0, 0, np.zeros(3))
        assert not landing_criteria_met(touch(89.0, speed=2.0), 0, 0, np.zeros(3))
        assert not landing_criteria_met(touch(89.0), 10.5 * DEG, 0, np.zeros(3))
        assert not landing_criteria_met(touch(89.0), 0, 0, np.array([0, 0, 10.5 * DEG]))


# --------------------------------------------------------------- 3. gradients
def _check_net(spec, seed):
    rng = np.random.default_rng(seed)
    net = RecurrentNet(spec, rng=rng, init_log_std=-0.3)
    for k in ("b1", "bx", "bh", "b3", "b4"):
        net.params[k] = rng.uniform(-0.5, 0.5, net.params[k].shape)
    if spec.stochastic:
        net.params["log_std"] = rng.uniform(-0.5, 0.3, spec.out_dim)
    B, T = 2, 5
    obs = rng.normal(size=(B, T, spec.obs_dim))
    act = rng.normal(size=(B, T, spec.out_dim))
    coef = rng.normal(size=(B, T, spec.out_dim))

    def loss():
        y, cache = net.forward_sequence(obs)
        L = float(np.sum(coef * y))
        if spec.stochastic:
            L += float(np.sum(net.log_prob(y, act)))
        return L, y, cache

    _, y, cache = loss()
    if spec.stochastic:
        dmean, dls = net.log_prob_grads(y, act)
        g = net.backward(coef + dmean, cache, dls.sum(axis=(0, 1)))
    else:
        g = net.backward(coef, cache)
    worst, e = 0.0, 1e-3
    for key, p in net.params.items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            vals = []
            for k in (-2, -1, 1, 2):
                p[idx] = orig + k * e
                vals.append(loss()[0])
            p[idx] = orig
            fd = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * e)
            worst = max(worst, abs(fd - g[key][idx]) / max(abs(fd), abs(g[key][idx]), 1e-6))
    return worst, set(net.params)


def test_criterion_3_gradients():
    worst = [0.0]
    with criterion(3, lambda: f"worst relative error {worst[0]:.2e}"):
        seen = set()
        for act in ("tanh", "identity"):
            for stochastic, out in ((True, 3), (False, 1)):
                spec = NetworkSpec(obs_dim=4, out_dim=out, h1=6, h2=5, h3=3, stochastic=stochastic, activation=act)
                w, keys = _check_net(spec, 11 + out)
                worst[0] = max(worst[0], w)
                seen |= keys
        assert {"W1", "b1", "Wx", "Wh", "bx", "bh", "W3", "b3", "W4", "b4", "log_std"} <= seen
        assert worst[0] < 1e-5


# -------------------------------------------------------------------- 4. PPO
def test_criterion_4_ppo_units():
    with criterion(4):
        J, _ = ppo_surrogate(np.array([1.5]), np.array([1.0]), 0.2)
        assert J == pytest.approx(1.2, abs=1e-12)
        J, _ = ppo_surrogate(np.array([0.5]), np.array([-1.0]), 0.2)
        assert J == pytest.approx(-0.8, abs=1e-12)
        assert discounted_returns(np.ones(3), 0.99)[0] == pytest.approx(2.9701, abs=1e-12)

        agent = new_agent(GUIDANCE, 0)
        batch, _ = collect_rollouts(agent, RunConfig(), GUIDANCE, 4, seed=1)
        m = batch.mask()
        adv = np.where(m, 1.0, 0.0)
        _, _, ratio = policy_objective_grads(agent.policy, batch.padded("obs"), batch.padded("actions"),
                                             batch.padded("logp"), adv, m, 0.2)
        assert np.max(np.abs(ratio[m] - 1.0)) < 1e-12


# ------------------------------------------------------ 5. determinism/replay
def _ks_uniform(x, lo, hi):
    x = np.sort((np.asarray(x) - lo) / (hi - lo))
    i = np.arange(1, len(x) + 1)
    return max(np.max(i / len(x) - x), np.max(x - (i - 1) / len(x)))


def test_criterion_5_determinism_replay_and_sampling(tmp_path):
    with criterion(5, lambda: "fixed-seed rerun and action replay bit-identical; 1e4 divert episodes; KS n=5000"):
        cfg = RunConfig()
        g, l = new_agent(GUIDANCE, 2), new_agent(LANDING, 2)
        for index in range(3):
            runs = []
            for k in range(2):
                env = LanderEnv(cfg, mode="full", record=True)
                rec = run_episode(env, g, l, seed=21, index=index, deterministic=False)
                export_trajectory(env.rows, tmp_path / f"run{k}.csv")
                runs.append(rec)
            assert (tmp_path / "run0.csv").read_bytes() == (tmp_path / "run1.csv").read_bytes()
            again = replay_actions(cfg, 21, index, runs[0]["actions"])
            export_trajectory(again.rows, tmp_path / "replay.csv")
            assert (tmp_path / "run0.csv").read_bytes() == (tmp_path / "replay.csv").read_bytes()

        ep = EpisodeConfig()
        fr = np.array(ep.divert_fractions)
        for i in range(10_000):
            s = sample_episode(ep, Scenario(), np.random.SeedSequence([5, i]))
            sched = DivertSchedule(ep.divert_thresholds, s.divert_draws, [False] * 4)
            r_T = np.zeros(3)
            for thr in ep.divert_thresholds:
                rng_LT = np.nextafter(thr, 0.0)  # the largest range at which this divert fires
                r_T_new, d = maybe_divert(rng_LT, r_T, sched, ep.divert_fractions)
                assert d is not None and np.all(np.abs(d) <= fr * rng_LT)
                assert np.array_equal(r_T_new, r_T + d)
                r_T = r_T_new

        n = 5000
        samples = [sample_episode(ep, Scenario(), np.random.SeedSequence([11, i])) for i in range(n)]
        crit = 1.63 / np.sqrt(n)
        checks = [(np.array([s.r_L[0] for s in samples]), ep.downrange),
                  (np.array([s.r_L[1] for s in samples]), ep.crossrange),
                  (np.array([s.r_L[2] for s in samples]), ep.altitude),
                  (np.array([np.linalg.norm(s.v_L) for s in samples]), ep.speed),
                  (np.array([s.heading_error for s in samples]) / DEG, ep.heading_error_deg),
                  (np.array([s.attitude_error for s in samples]) / DEG, ep.attitude_error_deg),
                  (np.array([s.m for s in samples]), ep.mass)]
        for x, (lo, hi) in checks:
            assert np.all((x >= lo - 1e-9) & (x <= hi + 1e-9))
            assert _ks_uniform(x, lo, hi) < crit


# ----------------------------------------------------- 6. learning progress
@pytest.mark.slow
def test_criterion_6_learning_progress():
    results = []

    def detail():
        return "; ".join(f"seed {s}: first100 {a:.1f} -> last100 {b:.1f} (steps {sa:.1f} -> {sb:.1f})"
                         for s, a, b, sa, sb in results)

    with criterion(6, detail):
        for seed in range(3):
            R, steps = [], []

            def keep(batch, row):
                R.extend(e.total_reward for e in batch.episodes)
                steps.extend(e.length for e in batch.episodes)

            trainer = PPOTrainer(new_agent(GUIDANCE, seed), RunConfig(), GUIDANCE, seed)
            trainer.train(2000, on_batch=keep)
            assert len(R) == 2000
            results.append((seed, np.mean(R[:100]), np.mean(R[-100:]), np.mean(steps[:100]), np.mean(steps[-100:])))
        improved = sum(b > a for _, a, b, _, _ in results)
        assert improved >= 2, f"only {improved} of 3 seeds improved: {detail()}"


# ------------------------------------------------ 7. full-scale reproduction
FULL_GUIDANCE_EPISODES = 60_000
FULL_LANDING_EPISODES = 300_000


@pytest.mark.slow
def test_criterion_7_full_scale_reproduction():
    g_path, l_path = os.environ.get("SEEKER_FULL_GUIDANCE"), os.environ.get("SEEKER_FULL_LANDING")
    if not (g_path and l_path):
        ACCEPTANCE_RESULTS[7] = ("FAIL", "not run: full-budget checkpoints not provided "
                                         "(set SEEKER_FULL_GUIDANCE and SEEKER_FULL_LANDING)")
        print(f"CRITERION 7: FAIL  {ACCEPTANCE_RESULTS[7][1]}")
        pytest.skip("full-scale reproduction needs full-budget checkpoints")
    rep = []

    def detail():
        if not rep:
            return ""
        r = rep[0]
        return (f"success {r.success_pct:.1f}%  miss {r.miss[0]:.2f} m  speed {r.speed[0]:.2f} m/s  "
                f"fuel {r.fuel[0]:.1f} kg")

    with criterion(7, detail):
        guidance, gmeta = load_checkpoint(g_path)
        landing, lmeta = load_checkpoint(l_path)
        assert gmeta["extra"].get("episodes", 0) >= FULL_GUIDANCE_EPISODES, "guidance budget not met"
        assert lmeta["extra"].get("episodes", 0) >= FULL_LANDING_EPISODES, "landing budget not met"
        rep.append(run_monte_carlo(ScenarioSpec(Scenario(), 5000, 0), guidance, landing))
        r = rep[0]
        assert r.success_pct >= 90.0, detail()
        assert r.miss[0] <= 3.0, detail()
        assert r.speed[0] <= 2.0, detail()
        assert abs(r.fuel[0] - 186.0) <= 15.0, detail()
