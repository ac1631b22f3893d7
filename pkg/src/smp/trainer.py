"""Joint multi-morphology training, evaluation and run records.

The loop follows the collect-then-train schedule: every round each
environment rolls one full episode (uniform random actions until that
environment has seen ``warmup_steps`` steps, noisy policy afterwards), then
each environment in turn gets one TD3 update per post-warmup step it just
collected, drawn from its own replay buffer.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BranchingExceedsCmax, NonFiniteState
from .morphology import MorphologyGraph, max_children, reroot
from .rl import (TD3, ModularActor, ReplayBuffer, TD3Config, actuation_mask, make_modular,
                 random_action, select_action)
from .sim import STATE_DIM, EnvConfig, PlanarEnv

PER_ENV_BUFFER = 1_000_000
GLOBAL_BUFFER_CAP = 10_000_000


@dataclass
class TrainConfig:
    scheme: str = "both_way"
    arch: str = "modular"              # or "monolithic"
    total_steps: int = 100_000
    warmup_steps: int = 10_000
    lr: float = 4e-4
    tau: float = 0.046
    exploration_noise: float = 0.13
    per_env_buffer: int = PER_ENV_BUFFER
    global_buffer_cap: int = GLOBAL_BUFFER_CAP
    batch_size: int = 100
    gamma: float = 0.99
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    updates_per_step: float = 1.0
    hidden: int = 256
    c_max: int | None = None           # None: largest branching among the training graphs
    eval_interval: int = 10_000
    eval_episodes: int = 1
    seed: int = 0
    concurrent: bool = False
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        if self.arch not in ("modular", "monolithic"):
            raise ValueError(f"unknown arch {self.arch!r}")

    def td3(self) -> TD3Config:
        return TD3Config(gamma=self.gamma, tau=self.tau, lr=self.lr, batch_size=self.batch_size,
                         policy_noise=self.policy_noise, noise_clip=self.noise_clip,
                         policy_delay=self.policy_delay)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["env"] = asdict(self.env)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        env = EnvConfig(**d.pop("env", {}))
        return cls(env=env, **d)


def buffer_capacity(n_envs: int, cfg: TrainConfig | None = None) -> int:
    """Per-environment replay capacity: the per-env size up to 10 environments,
    an equal share of the global cap beyond that."""
    if n_envs < 1:
        raise ValueError("n_envs must be >= 1")
    per_env = PER_ENV_BUFFER if cfg is None else cfg.per_env_buffer
    cap = GLOBAL_BUFFER_CAP if cfg is None else cfg.global_buffer_cap
    if n_envs <= 10:
        return per_env
    return cap // n_envs


@dataclass
class RunRecord:
    config: dict
    env_names: list[str]
    episodes: list[tuple] = field(default_factory=list)     # (step, env, return, length)
    evals: list[tuple] = field(default_factory=list)        # (step, env, mean, std)
    diagnostics: list[tuple] = field(default_factory=list)  # (step, env, critic, actor, mean_Q)
    checkpoints: list[str] = field(default_factory=list)
    total_steps: int = 0

    def final_eval(self) -> dict[str, float]:
        if not self.evals:
            return {}
        last = max(r[0] for r in self.evals)
        return {r[1]: r[2] for r in self.evals if r[0] == last}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "returns.csv", ["step", "env", "return", "length"], self.episodes)
        _write_csv(out / "eval.csv", ["step", "env", "mean_return", "std_return"], self.evals)
        _write_csv(out / "diagnostics.csv",
                   ["step", "env_id", "critic_loss", "actor_loss", "mean_Q"], self.diagnostics)
        manifest = {"config": self.config, "envs": self.env_names,
                    "total_steps": self.total_steps,
                    "files": ["returns.csv", "eval.csv", "diagnostics.csv"],
                    "checkpoints": [os.path.relpath(p, out) for p in self.checkpoints]}
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(float(v))
    return v


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# ---------------------------------------------------------------------------
# rollouts

def rollout(env: PlanarEnv, policy, rng: np.random.Generator | None = None,
            max_steps: int | None = None, buffer: ReplayBuffer | None = None):
    """Run one episode.  ``policy(obs) -> per-limb actions``.

    Returns ``(episode_return, steps)``.  A diverging simulation truncates the
    episode; the transition that diverged is dropped.
    """
    obs = env.reset()
    total, steps = 0.0, 0
    limit = env.cfg.episode_length if max_steps is None else max_steps
    while steps < limit:
        action = policy(obs)
        try:
            nxt, reward, done = env.step(action)
        except NonFiniteState:
            break
        steps += 1
        total += reward
        if buffer is not None:
            terminal = done and env.state.t < env.cfg.episode_length
            buffer.add(obs, action * actuation_mask(env.graph), reward, nxt, terminal)
        obs = nxt
        if done:
            break
    return total, steps


def evaluate(actor, variants: Sequence[MorphologyGraph], episodes: int, seed: int,
             env_cfg: EnvConfig | None = None) -> dict[str, tuple[float, float]]:
    """Mean and std of deterministic-policy returns per variant, fixed seeds."""
    env_cfg = env_cfg or EnvConfig()
    for g in variants:
        actor.check_graph(g)
    results: dict[str, tuple[float, float]] = {}
    if episodes <= 0:
        return results
    for i, g in enumerate(variants):
        returns = []
        for ep in range(episodes):
            env = PlanarEnv(g, env_cfg, seed=_eval_seed(seed, i, ep))
            ret, _ = rollout(env, lambda o, g=g: actor.act(g, o))
            returns.append(ret)
        results[g.name] = (float(np.mean(returns)), float(np.std(returns)))
    return results


def _eval_seed(seed, variant_index, episode):
    return int(np.random.SeedSequence([seed, 7919, variant_index, episode]).generate_state(1)[0])


def random_baseline(g: MorphologyGraph, episodes: int, seed: int,
                    env_cfg: EnvConfig | None = None) -> tuple[float, float]:
    env = PlanarEnv(g, env_cfg or EnvConfig(), seed=seed)
    rng = np.random.default_rng([seed, 17])
    returns = [rollout(env, lambda o: random_action(g, rng))[0] for _ in range(episodes)]
    return float(np.mean(returns)), float(np.std(returns))


# ---------------------------------------------------------------------------
# training

def build_learner(graphs: Sequence[MorphologyGraph], cfg: TrainConfig):
    """Actor, twin critics and TD3 wrapper for the requested architecture."""
    seed = int(np.random.SeedSequence([cfg.seed, 1]).generate_state(1)[0])
    if cfg.arch == "modular":
        c_max = cfg.c_max if cfg.c_max is not None else max_children(graphs)
        actor, c1, c2 = make_modular(cfg.scheme, c_max, cfg.hidden, seed)
    else:
        from .baseline import make_monolithic, registry_for
        actor, c1, c2 = make_monolithic(registry_for(graphs), cfg.hidden, seed)
    td3 = TD3(actor, c1, c2, cfg.td3(), seed=seed + 1)
    return td3


class _EnvSlot:
    def __init__(self, g: MorphologyGraph, index: int, cfg: TrainConfig, capacity: int):
        seq = np.random.SeedSequence([cfg.seed, 101, index])
        s_env, s_noise, s_buf = (int(x) for x in seq.generate_state(3))
        self.graph = g
        self.env = PlanarEnv(g, cfg.env, seed=s_env)
        self.rng = np.random.default_rng(s_noise)
        self.buffer = ReplayBuffer(capacity, g.num_limbs, STATE_DIM, seed=s_buf, env_id=g.name)
        self.steps = 0

    def collect(self, actor, cfg: TrainConfig):
        g = self.graph
        if self.steps < cfg.warmup_steps:
            # the whole episode counts as warmup only while below the threshold
            def policy(o):
                if self.steps + self._t < cfg.warmup_steps:
                    return random_action(g, self.rng)
                return select_action(o, g, actor, cfg.exploration_noise, self.rng)
        else:
            def policy(o):
                return select_action(o, g, actor, cfg.exploration_noise, self.rng)
        self._t = 0

        def counted(o):
            a = policy(o)
            self._t += 1
            return a

        ret, n = rollout(self.env, counted, buffer=self.buffer)
        before = self.steps
        self.steps += n
        return ret, n, before


def train_joint(variants: Sequence[MorphologyGraph], cfg: TrainConfig, out_dir=None,
                log=None) -> RunRecord:
    """Train one shared learner on every morphology in ``variants``."""
    graphs = list(variants)
    if not graphs:
        raise ValueError("no training variants")
    td3 = build_learner(graphs, cfg)
    actor = td3.actor
    shared = [id(p) for p in actor.parameters()]
    capacity = buffer_capacity(len(graphs), cfg)
    slots = [_EnvSlot(g, i, cfg, capacity) for i, g in enumerate(graphs)]
    record = RunRecord(cfg.to_dict(), [g.name for g in graphs])
    ckpt_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def checkpoint(step):
        if ckpt_dir is None:
            return
        path = ckpt_dir / f"actor_{step:08d}.smp"
        actor.save(str(path))
        record.checkpoints.append(str(path))

    checkpoint(0)
    total = 0
    next_eval = cfg.eval_interval
    pool = ThreadPoolExecutor(max_workers=len(slots)) if cfg.concurrent else None
    try:
        while total < cfg.total_steps:
            if pool is not None:
                results = list(pool.map(lambda s: s.collect(actor, cfg), slots))
            else:
                results = [s.collect(actor, cfg) for s in slots]
            for slot, (ret, n, before) in zip(slots, results):
                total += n
                record.episodes.append((total, slot.graph.name, ret, n))
            for slot, (ret, n, before) in zip(slots, results):
                start = max(before, cfg.warmup_steps)
                n_updates = int(max(0, slot.steps - start) * cfg.updates_per_step)
                if n_updates == 0 or slot.buffer.size < cfg.batch_size:
                    continue
                acc = np.zeros(3)
                n_actor = 0
                for _ in range(n_updates):
                    info = td3.update(slot.buffer, slot.graph)
                    acc[0] += info["critic_loss"]
                    acc[2] += info["mean_Q"]
                    if not math.isnan(info["actor_loss"]):
                        acc[1] += info["actor_loss"]
                        n_actor += 1
                assert [id(p) for p in td3.actor.parameters()] == shared
                record.diagnostics.append((
                    total, slot.graph.name, acc[0] / n_updates,
                    acc[1] / n_actor if n_actor else float("nan"), acc[2] / n_updates))
            assert sum(s.buffer.size for s in slots) <= cfg.global_buffer_cap
            if log is not None:
                log(f"step {total}: " + ", ".join(
                    f"{s.graph.name}={r[0]:.1f}" for s, r in zip(slots, results)))
            while cfg.eval_interval > 0 and total >= next_eval:
                _eval_into(record, actor, graphs, cfg, next_eval)
                checkpoint(next_eval)
                next_eval += cfg.eval_interval
    finally:
        if pool is not None:
            pool.shutdown()
    record.total_steps = total
    if total > 0 and (not record.evals or record.evals[-1][0] != total):
        _eval_into(record, actor, graphs, cfg, total)
        checkpoint(total)
    record.learner = td3
    if out_dir is not None:
        record.write(out_dir)
    return record


def _eval_into(record: RunRecord, actor, graphs, cfg: TrainConfig, step: int):
    res = evaluate(actor, graphs, cfg.eval_episodes, cfg.seed, cfg.env)
    for g in graphs:
        mean, std = res[g.name]
        record.evals.append((step, g.name, mean, std))


def reroot_experiment(base: MorphologyGraph, new_root: str, cfg: TrainConfig, out_dir=None):
    """Two runs on the same body: message root at the torso vs at ``new_root``."""
    moved = reroot(base, new_root)
    sub = (lambda name: None) if out_dir is None else (lambda name: Path(out_dir) / name)
    default = train_joint([base], cfg, sub("torso_root"))
    foot = train_joint([moved], cfg, sub(f"{new_root}_root"))
    summary = {}
    for label, rec in (("torso_root", default), (f"{new_root}_root", foot)):
        returns = [r[2] for r in rec.episodes]
        tail = returns[-max(1, len(returns) // 10):]
        summary[label] = {"mean": float(np.mean(tail)), "std": float(np.std(tail)),
                          "final_eval": rec.final_eval()}
    if out_dir is not None:
        with open(Path(out_dir) / "reroot_summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return default, foot, summary


def load_actor(path):
    """Load a saved actor (modular or monolithic) from its checkpoint path."""
    with open(f"{path}.json") as fh:
        hdr = json.load(fh)
    if hdr.get("arch") == "monolithic":
        from .baseline import MonolithicActor
        return MonolithicActor.load(path)
    from .policy import SmpParams
    return ModularActor(SmpParams.load(path))
