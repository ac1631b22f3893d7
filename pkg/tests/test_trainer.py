import json

import numpy as np
import pytest

from conftest import bundled, chain
from smp.errors import BranchingExceedsCmax
from smp.morphology import enumerate_variants
from smp.rl import make_modular
from smp.sim import EnvConfig, PlanarEnv
from smp.trainer import (RunRecord, TrainConfig, evaluate, load_actor, random_baseline,
                         reroot_experiment, rollout, train_joint)

SHORT = EnvConfig(episode_length=60)


def small(**kw):
    base = dict(total_steps=400, warmup_steps=150, hidden=8, batch_size=16, eval_interval=200,
                eval_episodes=1, env=SHORT, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_config_round_trip():
    cfg = small(scheme="top_down", concurrent=True)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        TrainConfig(arch="transformer")


def test_zero_steps_writes_initial_checkpoint_only(tmp_path):
    rec = train_joint([bundled("hopper2")], small(total_steps=0), tmp_path)
    assert rec.evals == [] and rec.episodes == [] and rec.total_steps == 0
    assert [p.split("/")[-1] for p in rec.checkpoints] == ["actor_00000000.smp"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["checkpoints"] == ["checkpoints/actor_00000000.smp"]


def test_warmup_only_run_never_updates():
    rec = train_joint([bundled("hopper2")], small(total_steps=100, warmup_steps=1000))
    assert rec.diagnostics == []
    assert rec.learner.critic_updates == 0


def test_budget_and_outputs(tmp_path):
    graphs = [bundled("hopper2"), bundled("hopper")]
    rec = train_joint(graphs, small(), tmp_path)
    steps = sum(e[3] for e in rec.episodes)
    assert steps == rec.total_steps >= 400
    # whole rounds only: the overshoot is less than one episode per env
    assert rec.total_steps < 400 + 2 * SHORT.episode_length
    assert {e[1] for e in rec.episodes} == {"hopper2", "hopper"}
    assert rec.learner.critic_updates > 0
    assert [e[0] for e in rec.evals[::2]] == sorted({e[0] for e in rec.evals})
    header = (tmp_path / "diagnostics.csv").read_text().splitlines()[0]
    assert header == "step,env_id,critic_loss,actor_loss,mean_Q"
    for name in ("returns.csv", "eval.csv", "manifest.json"):
        assert (tmp_path / name).exists()
    for row in rec.diagnostics:
        assert all(np.isfinite(v) for v in (row[2], row[4]))


def test_runs_are_bit_reproducible(tmp_path):
    g = [bundled("hopper2"), chain(3, name="c3")]
    train_joint(g, small(), tmp_path / "a")
    train_joint(g, small(), tmp_path / "b")
    train_joint(g, small(concurrent=True), tmp_path / "c")
    for name in ("returns.csv", "eval.csv", "diagnostics.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes()
        assert a == (tmp_path / "c" / name).read_bytes()
    a = load_actor(tmp_path / "a" / "checkpoints" / "actor_00000400.smp")
    b = load_actor(tmp_path / "c" / "checkpoints" / "actor_00000400.smp")
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.value, q.value)


def test_seed_changes_run():
    g = [bundled("hopper2")]
    r1 = train_joint(g, small(seed=0))
    r2 = train_joint(g, small(seed=1))
    assert [e[2] for e in r1.episodes] != [e[2] for e in r2.episodes]


def test_monolithic_smoke(tmp_path):
    graphs = [bundled("hopper2"), bundled("hopper")]
    rec = train_joint(graphs, small(arch="monolithic"), tmp_path)
    assert rec.learner.critic_updates > 0
    actor = load_actor(rec.checkpoints[-1])
    assert set(evaluate(actor, graphs, 1, 0, SHORT)) == {"hopper2", "hopper"}


def test_evaluate_contract():
    g = bundled("hopper2")
    actor, _, _ = make_modular("both_way", 1, 8, seed=0)
    assert evaluate(actor, [g], 0, 0) == {}
    with pytest.raises(BranchingExceedsCmax):
        evaluate(actor, [bundled("walker")], 1, 0)
    a = evaluate(actor, [g], 3, 5, SHORT)
    assert a == evaluate(actor, [g], 3, 5, SHORT)
    mean, std = a["hopper2"]
    assert np.isfinite(mean) and std >= 0
    # an untrained policy still earns at least the per-step floor of its short episode
    assert mean > -SHORT.episode_length


def test_random_baseline_is_finite_and_seeded():
    g = bundled("walker")
    m1 = random_baseline(g, 5, 0, SHORT)
    assert m1 == random_baseline(g, 5, 0, SHORT)
    assert all(np.isfinite(m1))


def test_rollout_stores_masked_actions_and_terminal_flags():
    from smp.rl import ReplayBuffer
    g = bundled("hopper")
    env = PlanarEnv(g, EnvConfig(episode_length=30), seed=0)
    buf = ReplayBuffer(100, g.num_limbs)
    ret, n = rollout(env, lambda o: np.ones(g.num_limbs), buffer=buf)
    assert buf.size == n
    torso = g.names.index(g.root)
    assert np.all(buf.actions[:n, torso] == 0)
    # a timeout is not a terminal state
    if n == 30:
        assert not buf.dones[:n].any()
    else:
        assert buf.dones[n - 1] and not buf.dones[:n - 1].any()


def test_reroot_experiment_summary(tmp_path):
    base = bundled("walker")
    default, moved, summary = reroot_experiment(base, "foot_l", small(total_steps=200), tmp_path)
    assert moved.env_names == default.env_names
    assert set(summary) == {"torso_root", "foot_l_root"}
    assert (tmp_path / "reroot_summary.json").exists()
    for v in summary.values():
        assert np.isfinite(v["mean"]) and np.isfinite(v["std"])


def test_many_variants_share_buffers_under_cap():
    base = bundled("walker")
    vs = enumerate_variants(base).variants[:12]
    cfg = small(total_steps=50, per_env_buffer=500, global_buffer_cap=1200)
    rec = train_joint(vs, cfg)
    assert isinstance(rec, RunRecord)
    assert rec.total_steps >= 50
