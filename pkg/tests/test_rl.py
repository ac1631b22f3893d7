import numpy as np
import pytest

from conftest import bundled
from smp.errors import BufferTooSmall, DimensionMismatch
from smp.morphology import enumerate_variants, max_children
from smp.rl import (TD3, ReplayBuffer, TD3Config, actuation_mask, bellman_target, make_modular,
                    random_action, select_action)
from smp.sim import STATE_DIM
from smp.trainer import TrainConfig, buffer_capacity, build_learner


def filled_buffer(g, n, seed=0, capacity=1000):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(capacity, g.num_limbs, seed=seed)
    for _ in range(n):
        buf.add(rng.normal(size=(g.num_limbs, STATE_DIM)), random_action(g, rng),
                float(rng.normal()), rng.normal(size=(g.num_limbs, STATE_DIM)), False)
    return buf


def test_select_action_noise_and_bounds():
    g = bundled("hopper")
    actor, _, _ = make_modular("both_way", 1, 16, seed=0)
    obs = np.random.default_rng(0).normal(size=(4, STATE_DIM))
    exact = actor.act(g, obs)
    np.testing.assert_array_equal(select_action(obs, g, actor, 0.0), exact)
    rng = np.random.default_rng(1)
    draws = np.array([select_action(obs, g, actor, 0.13, rng) for _ in range(10_000)])
    assert np.all(np.abs(draws) <= 1.0)
    # the deterministic output is near zero, so clipping at +-1 never binds here
    std = (draws - exact).std(axis=0)
    assert np.all(np.abs(std - 0.13) / 0.13 < 0.05)
    with pytest.raises(ValueError):
        select_action(obs, g, actor, -0.1)


def test_random_action_statistics():
    g = bundled("walker")
    rng = np.random.default_rng(0)
    a = np.array([random_action(g, rng) for _ in range(100_000)])
    mask = actuation_mask(g).astype(bool)
    assert np.all(a[:, ~mask] == 0)
    assert np.all(np.abs(a) <= 1)
    assert np.all(np.abs(a[:, mask].mean(axis=0)) < 0.01)
    r1 = [random_action(g, np.random.default_rng(5)) for _ in range(2)]
    np.testing.assert_array_equal(r1[0], r1[1])


def test_replay_buffer_ring_and_uniform_sampling():
    g = bundled("hopper2")
    buf = ReplayBuffer(100, 2, seed=0)
    for i in range(250):
        buf.add(np.full((2, STATE_DIM), i), np.zeros(2), float(i), np.zeros((2, STATE_DIM)), False)
    assert buf.size == 100 and len(buf) == 100
    assert set(buf.rewards) == set(range(150, 250))
    idx = buf.sample_indices(100_000)
    counts = np.bincount(idx, minlength=100)
    assert np.all(np.abs(counts - 1000) <= 100)
    with pytest.raises(DimensionMismatch):
        buf.add(np.zeros((3, STATE_DIM)), np.zeros(3), 0.0, np.zeros((3, STATE_DIM)), False)
    with pytest.raises(BufferTooSmall):
        ReplayBuffer(10, 2).sample(5)


def test_buffer_grows_lazily():
    buf = ReplayBuffer(1_000_000, 7)
    assert len(buf.rewards) < 10_000


@pytest.mark.parametrize("n,expected", [(1, 1_000_000), (5, 1_000_000), (10, 1_000_000),
                                        (11, 909_090), (20, 500_000), (100, 100_000)])
def test_buffer_capacity_rule(n, expected):
    assert buffer_capacity(n) == expected


def test_bellman_target():
    assert bellman_target(1.5, 1.0, 100.0, 0.99) == 1.5
    assert bellman_target(1.0, 0.0, 2.0, 0.99) == pytest.approx(2.98)


def test_soft_update_is_exact():
    g = bundled("hopper2")
    actor, c1, c2 = make_modular("both_way", 1, 8, seed=0)
    td3 = TD3(actor, c1, c2, TD3Config(tau=0.046, policy_delay=1), seed=0)
    buf = filled_buffer(g, 200)
    before = [p.value.copy() for p in td3.actor_target.parameters()]
    td3.update(buf, g)
    online = td3.actor.parameters()
    for b, t, o in zip(before, td3.actor_target.parameters(), online):
        np.testing.assert_allclose(t.value, 0.954 * b + 0.046 * o.value, rtol=0, atol=1e-15)


def test_policy_delay_and_frozen_critic():
    g = bundled("hopper")
    actor, c1, c2 = make_modular("both_way", 1, 8, seed=0)
    td3 = TD3(actor, c1, c2, TD3Config(policy_delay=2), seed=0)
    buf = filled_buffer(g, 300)
    actor_before = [p.value.copy() for p in actor.parameters()]
    info = td3.update(buf, g)
    assert np.isnan(info["actor_loss"])
    assert all(np.array_equal(a, p.value) for a, p in zip(actor_before, actor.parameters()))
    for _ in range(9):
        td3.update(buf, g)
    assert td3.critic_updates == 10 and td3.actor_updates == 5
    # an actor step leaves the critics alone and restores their grad flags
    td3.critic_opt.step = lambda: None
    c_vals = [p.value.copy() for p in c1.parameters() + c2.parameters()]
    a_vals = [p.value.copy() for p in actor.parameters()]
    td3.update(buf, g)
    td3.update(buf, g)
    assert td3.critic_updates == 12 and td3.actor_updates == 6
    assert all(np.array_equal(v, p.value) for v, p in zip(c_vals, c1.parameters() + c2.parameters()))
    assert not all(np.array_equal(v, p.value) for v, p in zip(a_vals, actor.parameters()))
    assert all(p.requires_grad for p in c1.parameters())


def test_critic_regression_on_single_transition():
    g = bundled("hopper2")
    actor, c1, c2 = make_modular("both_way", 1, 16, seed=0)
    td3 = TD3(actor, c1, c2, TD3Config(gamma=0.99, lr=1e-3), seed=0)
    buf = ReplayBuffer(10, 2, seed=0)
    rng = np.random.default_rng(0)
    s = rng.normal(size=(2, STATE_DIM))
    buf.add(s, np.array([0.0, 0.3]), 2.0, s, True)
    for _ in range(500):
        td3.update(buf, g, batch_size=1)
    q = c1(g, s[None], np.array([[0.0, 0.3]])).value[0]
    assert abs(q - 2.0) < 1e-2


def test_twin_minimum_target():
    g = bundled("walker")
    actor, c1, c2 = make_modular("both_way", 2, 8, seed=3)
    td3 = TD3(actor, c1, c2, TD3Config(policy_noise=0.0), seed=0)
    buf = filled_buffer(g, 200)
    _, _, r, s2, d = buf.sample(50)
    y = td3.target_q(g, r, s2, d)
    a2 = np.clip(td3.actor_target(g, s2).value, -1, 1) * actuation_mask(g)
    q1 = td3.critic1_target(g, s2, a2).value
    q2 = td3.critic2_target(g, s2, a2).value
    np.testing.assert_allclose(y, r + 0.99 * (1 - d) * np.minimum(q1, q2))
    assert np.all(y <= r + 0.99 * q1 + 1e-12) and np.all(y <= r + 0.99 * q2 + 1e-12)


def test_actor_parameter_count_independent_of_variant_count():
    base = bundled("walker")
    variants = enumerate_variants(base).variants
    counts = set()
    for n in (1, 5, 15):
        cfg = TrainConfig(hidden=32, c_max=max_children([base]))
        td3 = build_learner(variants[:n], cfg)
        counts.add(sum(p.value.size for p in td3.actor.parameters()))
    assert len(counts) == 1
    one_legged = [v for v in variants if v.max_branching() == 1][:1]
    td3 = build_learner(one_legged, TrainConfig(hidden=32, c_max=2))
    assert sum(p.value.size for p in td3.actor.parameters()) in counts


def test_shared_parameters_across_morphologies():
    g1, g2 = bundled("hopper"), bundled("walker")
    actor, c1, c2 = make_modular("both_way", 2, 8, seed=0)
    td3 = TD3(actor, c1, c2, seed=0)
    ids = [id(p) for p in actor.parameters()]
    b1, b2 = filled_buffer(g1, 150), filled_buffer(g2, 150, seed=1)
    for _ in range(4):
        td3.update(b1, g1)
        td3.update(b2, g2)
    assert [id(p) for p in td3.actor.parameters()] == ids
