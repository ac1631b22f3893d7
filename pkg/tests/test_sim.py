import numpy as np
import pytest

from conftest import bundled, chain
from smp.errors import NonFiniteState
from smp.morphology import graph_from_dict, reroot
from smp.sim import (STATE_DIM, EnvConfig, LimbState, PlanarEnv, SimState, actuated_limbs, body_of,
                     integrate, mechanical_energy, observe, reset, step, termination_height,
                     write_trajectory_csv)


def rod(length=1.0, mass=1.0):
    return graph_from_dict({"name": "rod", "root": "r", "limbs": [
        {"name": "r", "parent": None, "length": length, "mass": mass, "is_actuated": False,
         "joint_low": -1.0, "joint_high": 1.0, "gear": 1.0, "child_order_index": 0}]})


def wide_chain(n):
    g = chain(n)
    doc = g.to_dict()
    for l in doc["limbs"][1:]:
        l["joint_low"], l["joint_high"] = -3.0, 3.0
    return graph_from_dict(doc)


def test_free_fall_matches_semi_implicit_update():
    g = rod()
    cfg = EnvConfig(contact=False, init_noise=0.0, dt=0.004, frame_skip=4)
    b = body_of(g)
    state = SimState(np.array([0.0, 5.0, 0.0]), np.zeros(3), 0)
    z, vz = 5.0, 0.0
    for _ in range(50):
        state = integrate(b, state, np.zeros(1), cfg)
        for _ in range(4):
            vz -= cfg.gravity * cfg.substep
            z += cfg.substep * vz
    assert state.q[1] == pytest.approx(z, abs=1e-12)
    assert state.qdot[1] == pytest.approx(vz, abs=1e-12)
    assert state.q[0] == 0.0 and state.q[2] == 0.0


def period(angles, h):
    up = np.nonzero((angles[:-1] < 0) & (angles[1:] >= 0))[0]
    # linear interpolation of the crossing times
    t = (up + angles[up] / (angles[up] - angles[up + 1])) * h
    return float(np.mean(np.diff(t)))


def swing(g, h, steps, theta0=0.05):
    cfg = EnvConfig(contact=False, fixed_base=True, dt=h, frame_skip=1, joint_damping=0.0)
    b = body_of(g)
    state = SimState(np.array([0.0, 0.0, theta0]), np.zeros(3), 0)
    out = np.empty(steps)
    for i in range(steps):
        state = integrate(b, state, np.zeros(1), cfg)
        out[i] = state.q[2]
    return out


def test_pendulum_period_against_finer_reference():
    g = rod(length=1.0)
    h = 0.002
    coarse = period(swing(g, h, 2000), h)
    fine = period(swing(g, h / 100, 200_000), h / 100)
    assert abs(coarse - fine) / fine < 0.02
    # and the small-angle physical pendulum value for a rod pivoted at its end
    analytic = 2 * np.pi * np.sqrt(2.0 / (3 * 9.81))
    assert abs(fine - analytic) / analytic < 0.005


def test_passive_chain_energy_drift():
    g = wide_chain(3)
    cfg = EnvConfig(contact=False, dt=0.001, frame_skip=1, joint_damping=0.0, init_noise=0.0)
    b = body_of(g)
    q = b.rest_q()
    q[1] = 10.0
    q[3:] = [0.6, -0.4]
    qdot = np.array([0.3, 0.5, 0.2, -1.0, 1.5])
    state = SimState(q, qdot, 0)
    e0 = mechanical_energy(g, state, cfg)
    energies = []
    for _ in range(1000):
        state = integrate(b, state, np.zeros(b.n), cfg)
        energies.append(mechanical_energy(g, state, cfg))
    drift = np.max(np.abs(np.array(energies) - e0)) / abs(e0)
    assert drift <= 0.01


def test_mass_matrix_is_symmetric_positive_definite():
    from smp.sim import _Kin, _dynamics_terms
    rng = np.random.default_rng(0)
    g = bundled("humanoid")
    b = body_of(g)
    for _ in range(10):
        q = rng.normal(size=b.ndof)
        M, _, _ = _dynamics_terms(b, _Kin(b, q, rng.normal(size=b.ndof)), 9.81)
        np.testing.assert_allclose(M, M.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(M) > 0)


def test_kinetic_energy_matches_point_masses():
    """qdot' M qdot against a sampled-points integral of 0.5 rho v^2 along each rod."""
    from smp.sim import _Kin, _dynamics_terms
    rng = np.random.default_rng(1)
    g = wide_chain(3)
    b = body_of(g)
    q, qd = rng.normal(size=b.ndof), rng.normal(size=b.ndof)
    kin = _Kin(b, q, qd)
    M, _, _ = _dynamics_terms(b, kin, 9.81)
    n = 4000
    s = (np.arange(n) + 0.5) / n
    ke = 0.0
    for k in range(b.n):
        pts = kin.prox[k] + s[:, None] * b.length[k] * kin.u[k]
        v = kin.point_jacobian(b, pts, np.full(n, k)) @ qd
        ke += 0.5 * b.mass[k] / n * np.sum(v * v)
    assert 0.5 * qd @ M @ qd == pytest.approx(ke, rel=1e-6)


def test_observation_layout():
    g = bundled("walker")
    cfg = EnvConfig()
    state, obs = reset(g, cfg, 0)
    assert obs.shape == (7, STATE_DIM)
    root = g.names.index("torso")
    assert obs[root, 0] == 0.0 and obs[root, 15] == 1.0
    assert np.all(obs[:, [2, 5, 6, 7, 9, 10]] == 0.0)
    np.testing.assert_array_equal(obs[root, 12:15], (0.5, 0.0, 1.0))
    assert np.all((obs[:, 12:15] >= 0) & (obs[:, 12:15] <= 1))
    leaves = {n for n in g.names if g.is_leaf(n)}
    assert {n for n, f in zip(g.names, obs[:, 16]) if f} == leaves
    ls = LimbState.from_vector(obs[1])
    np.testing.assert_array_equal(ls.vector(), obs[1])


def test_reroot_changes_flags_not_physics():
    g = bundled("walker")
    r = reroot(g, "foot_l")
    cfg = EnvConfig()
    s1, o1 = reset(g, cfg, 5)
    s2, o2 = reset(r, cfg, 5)
    np.testing.assert_array_equal(s1.q, s2.q)
    a = np.linspace(-1, 1, len(actuated_limbs(g)))
    n1 = step(s1, a, g, cfg)[0]
    n2 = step(s2, [a[actuated_limbs(g).index(x)] for x in actuated_limbs(r)], r, cfg)[0]
    np.testing.assert_allclose(n1.q, n2.q)
    i, j = g.names.index("foot_l"), r.names.index("foot_l")
    np.testing.assert_array_equal(o1[i, :15], o2[j, :15])
    assert o2[j, 15] == 1.0 and o1[i, 15] == 0.0


def test_resting_agent_stays_up_and_reward_terms():
    g = bundled("hopper")
    cfg = EnvConfig(init_noise=0.0)
    state, _ = reset(g, cfg, 0)
    torques = np.zeros(len(actuated_limbs(g)))
    for _ in range(20):
        state, obs, reward, done = step(state, torques, g, cfg)
    assert np.all(np.isfinite(obs))
    assert state.t == 20


def test_reward_is_velocity_plus_alive_minus_ctrl():
    g = bundled("hopper2")
    cfg = EnvConfig()
    state, _ = reset(g, cfg, 3)
    a = np.array([0.7])
    nxt, _, reward, _ = step(state, a, g, cfg)
    expected = (nxt.q[0] - state.q[0]) / cfg.dt + cfg.alive_bonus - cfg.ctrl_cost_weight * 0.49
    assert reward == pytest.approx(expected)


def test_termination_rules():
    g = bundled("hopper2")
    cfg = EnvConfig(episode_length=3)
    state, _ = reset(g, cfg, 0)
    done = False
    n = 0
    while not done:
        state, _, _, done = step(state, np.zeros(1), g, cfg)
        n += 1
    assert n <= 3
    low = SimState(np.array([0.0, termination_height(g, cfg) - 0.2, 0.0, 0.0]), np.zeros(4), 0)
    assert step(low, np.zeros(1), g, EnvConfig(contact=False))[3]


def test_divergence_raises():
    g = bundled("hopper2")
    cfg = EnvConfig()
    state = SimState(np.array([0.0, 1.0, 0.0, np.nan]), np.zeros(4), 0)
    with pytest.raises(NonFiniteState):
        step(state, np.zeros(1), g, cfg)


def test_env_determinism_and_csv(tmp_path):
    g = bundled("walker")
    rows = []
    for _ in range(2):
        env = PlanarEnv(g, seed=11)
        env.reset()
        traj = []
        rng = np.random.default_rng(0)
        for _ in range(30):
            obs, r, d = env.step(rng.uniform(-1, 1, g.num_limbs))
            traj.append((env.state.copy(), r, d))
            if d:
                break
        rows.append(traj)
    write_trajectory_csv(tmp_path / "a.csv", rows[0])
    write_trajectory_csv(tmp_path / "b.csv", rows[1])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_config_json_round_trip():
    cfg = EnvConfig(dt=0.01, termination_height=0.3)
    assert EnvConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        EnvConfig(dt=0.0)
