import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seeker_landing.networks import (Agent, NetworkSpec, ObsNormalizer, RecurrentNet, gaussian_kl,
                                     init_parameters, load_checkpoint, policy_forward, save_checkpoint,
                                     value_forward)


def _loss_and_grads(net, obs, actions, coef):
    """Scalar test loss touching every output and the log-std, with its analytic gradients."""
    y, cache = net.forward_sequence(obs)
    L = float(np.sum(coef * y)) + float(np.sum(net.log_prob(y, actions)))
    dmean, dls = net.log_prob_grads(y, actions)
    g = net.backward(coef + dmean, cache, dls.sum(axis=(0, 1)))
    return L, g


def _fd(net, obs, actions, coef, key, idx, e=1e-3):
    """Five-point central difference, O(e^4)."""
    p = net.params[key]
    orig = p[idx]
    vals = []
    for k in (-2, -1, 1, 2):
        p[idx] = orig + k * e
        y, _ = net.forward_sequence(obs)
        vals.append(float(np.sum(coef * y)) + float(np.sum(net.log_prob(y, actions))))
    p[idx] = orig
    fm2, fm1, fp1, fp2 = vals
    return (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * e)


@pytest.mark.parametrize("activation", ["tanh", "identity"])
def test_gradients_match_finite_differences(activation):
    rng = np.random.default_rng(3)
    spec = NetworkSpec(obs_dim=3, out_dim=2, h1=5, h2=4, h3=3, stochastic=True, activation=activation)
    net = RecurrentNet(spec, rng=rng, init_log_std=-0.3)
    for k in ("b1", "bx", "bh", "b3", "b4"):
        net.params[k] = rng.uniform(-0.5, 0.5, net.params[k].shape)
    net.params["log_std"] = rng.uniform(-0.5, 0.3, 2)
    B, T = 2, 5
    obs = rng.normal(size=(B, T, 3))
    actions = rng.normal(size=(B, T, 2))
    coef = rng.normal(size=(B, T, 2))
    _, g = _loss_and_grads(net, obs, actions, coef)
    worst = 0.0
    for key, p in net.params.items():
        assert g[key].shape == p.shape
        for idx in np.ndindex(p.shape):
            fd = _fd(net, obs, actions, coef, key, idx)
            an = g[key][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    assert worst < 1e-5


def test_zero_upstream_gives_zero_gradients():
    net = RecurrentNet(NetworkSpec.policy(4, 2), rng=np.random.default_rng(0))
    obs = np.random.default_rng(1).normal(size=(3, 5, 4))
    y, cache = net.forward_sequence(obs)
    g = net.backward(np.zeros_like(y), cache)
    assert all(np.count_nonzero(v) == 0 for v in g.values())


def test_layer_widths():
    assert NetworkSpec.policy(18, 4).widths == (180, 85, 40, 4)
    assert NetworkSpec.value(11).h1 == 110
    assert NetworkSpec.value(18).widths == (180, 30, 5, 1)
    with pytest.raises(ValueError):
        NetworkSpec(0, 1, 1, 1, 1)


def test_zero_weights_give_zero_outputs():
    spec = NetworkSpec.policy(6, 4)
    net = RecurrentNet(spec, {k: np.zeros_like(v) for k, v in init_parameters(spec, np.random.default_rng(0)).items()})
    mean, ls, h = policy_forward(net, np.random.default_rng(0).normal(size=(2, 6)), net.initial_state(2))
    assert np.array_equal(mean, np.zeros((2, 4))) and np.array_equal(ls, np.zeros(4))
    vnet = RecurrentNet(NetworkSpec.value(6), {k: np.zeros_like(v) for k, v in
                                               init_parameters(NetworkSpec.value(6), np.random.default_rng(0)).items()})
    v, _ = value_forward(vnet, np.ones((1, 6)), vnet.initial_state(1))
    assert v[0] == 0.0


def test_step_matches_sequence():
    net = RecurrentNet(NetworkSpec.policy(5, 4), rng=np.random.default_rng(2))
    obs = np.random.default_rng(3).normal(size=(3, 7, 5))
    y, _ = net.forward_sequence(obs)
    h = net.initial_state(3)
    for t in range(7):
        out, h = net.step(obs[:, t], h)
        assert np.allclose(out, y[:, t], atol=1e-13)
    with pytest.raises(ValueError):
        net.step(np.zeros((1, 4)), net.initial_state(1))


def test_padding_does_not_leak_backwards():
    # outputs at t < T0 depend only on inputs up to t, so padding after an episode is harmless
    net = RecurrentNet(NetworkSpec.policy(3, 2), rng=np.random.default_rng(4))
    obs = np.random.default_rng(5).normal(size=(1, 6, 3))
    y1, _ = net.forward_sequence(obs)
    obs2 = obs.copy()
    obs2[:, 4:] = 0.0
    y2, _ = net.forward_sequence(obs2)
    assert np.array_equal(y1[:, :4], y2[:, :4])


def test_gaussian_helpers():
    net = RecurrentNet(NetworkSpec.policy(3, 2), rng=np.random.default_rng(0), init_log_std=np.log(2.0))
    lp = net.log_prob(np.zeros(2), np.array([2.0, 0.0]))
    expect = -0.5 * 1.0 - 2 * np.log(2.0) - np.log(2 * np.pi)
    assert lp == pytest.approx(expect)
    m = np.random.default_rng(1).normal(size=(4, 2))
    ls = np.array([0.1, -0.2])
    assert np.allclose(gaussian_kl(m, ls, m, ls), 0.0)
    assert np.all(gaussian_kl(m, ls, m + 0.1, ls) > 0)
    net.params["log_std"][:] = 50.0
    assert np.all(net.log_std == 2.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 1000))
def test_normalizer_merge_matches_batch_statistics(n1, n2, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(3, 2, (n1, 4)), rng.normal(-1, 5, (n2, 4))
    norm = ObsNormalizer(4)
    norm.update(a)
    norm.update(b)
    both = np.concatenate([a, b])
    assert np.allclose(norm.mean, both.mean(axis=0))
    if len(both) >= 2:
        assert np.allclose(norm.var, np.maximum(both.var(axis=0), 1e-6))


def test_normalizer_clip_and_round_trip():
    norm = ObsNormalizer(2, clip=3.0)
    norm.update(np.array([[0.0, 0.0], [2.0, 2.0]]))
    assert np.all(np.abs(norm(np.array([100.0, -100.0]))) == 3.0)
    back = ObsNormalizer.from_state(norm.state())
    assert np.array_equal(back.mean, norm.mean) and back.count == norm.count


def test_checkpoint_round_trip(tmp_path):
    agent = Agent.create(18, 18, 4, np.random.default_rng(0), -0.5)
    agent.policy_norm.update(np.random.default_rng(1).normal(size=(20, 18)))
    agent.return_scale = 3.5
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, agent, {"episodes": 60})
    back, meta = load_checkpoint(path)
    assert meta["extra"]["episodes"] == 60 and back.return_scale == 3.5
    for a, b in ((agent.policy, back.policy), (agent.value, back.value)):
        assert a.spec == b.spec
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    x = np.random.default_rng(2).normal(size=(1, 18))
    assert np.array_equal(agent.policy.step(agent.policy_norm(x), agent.policy.initial_state(1))[0],
                          back.policy.step(back.policy_norm(x), back.policy.initial_state(1))[0])


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, meta=np.array('{"format": "something-else"}'))
    with pytest.raises(ValueError):
        load_checkpoint(path)
