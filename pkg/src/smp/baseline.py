"""Single-network multi-task baseline over zero-padded whole-agent vectors.

Every agent's limb states are laid out in topological order and padded with
zeros up to the largest agent in the registry, then a task descriptor (limb
count and a one-hot over registered environments) is appended.  One actor
and one pair of critics serve all environments.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, Tensor, checkpoint
from .errors import DimensionMismatch, UnregisteredEnv
from .morphology import MorphologyGraph, topological_ordering
from .sim import STATE_DIM


@dataclass(frozen=True)
class Registry:
    envs: tuple[str, ...]
    max_limbs: int
    state_dim: int = STATE_DIM

    @property
    def obs_dim(self) -> int:
        return self.max_limbs * self.state_dim + 1 + len(self.envs)

    def index(self, g: MorphologyGraph) -> int:
        try:
            return self.envs.index(g.name)
        except ValueError:
            raise UnregisteredEnv(f"{g.name!r} is not a registered environment") from None

    def to_dict(self):
        return {"envs": list(self.envs), "max_limbs": self.max_limbs, "state_dim": self.state_dim}


def registry_for(graphs, state_dim: int = STATE_DIM) -> Registry:
    graphs = list(graphs)
    return Registry(tuple(g.name for g in graphs), max(g.num_limbs for g in graphs), state_dim)


@dataclass
class PaddedObservation:
    states: np.ndarray      # (max_limbs * D,) or (B, max_limbs * D)
    limb_count: int
    env_onehot: np.ndarray

    def vector(self) -> np.ndarray:
        s = np.atleast_2d(self.states)
        B = s.shape[0]
        desc = np.concatenate([[float(self.limb_count)], self.env_onehot])
        out = np.concatenate([s, np.broadcast_to(desc, (B, desc.size))], axis=1)
        return out[0] if np.ndim(self.states) == 1 else out


def _selector(g: MorphologyGraph, reg: Registry) -> np.ndarray:
    """(K, max_limbs) 0/1 matrix sending limb ``g.names[i]`` to its padded slot."""
    cache = g.__dict__.setdefault("_pad_cache", {})
    key = reg.max_limbs
    if key not in cache:
        order = topological_ordering(g)
        P = np.zeros((g.num_limbs, reg.max_limbs))
        for i, name in enumerate(g.names):
            P[i, order.index(name)] = 1.0
        cache[key] = P
    return cache[key]


def pad_observation(states, g: MorphologyGraph, reg: Registry) -> PaddedObservation:
    """``states`` is (K, D) or (B, K, D) in ``g.names`` order."""
    idx = reg.index(g)
    s = np.asarray(states, dtype=float)
    if s.shape[-2:] != (g.num_limbs, reg.state_dim):
        raise DimensionMismatch(f"states {s.shape} for {g.num_limbs} limbs of dim {reg.state_dim}")
    if g.num_limbs > reg.max_limbs:
        raise DimensionMismatch(f"{g.name} has more limbs than the registry allows")
    P = _selector(g, reg)
    padded = np.einsum("km,...kd->...md", P, s)
    flat = padded.reshape(s.shape[:-2] + (reg.max_limbs * reg.state_dim,))
    onehot = np.zeros(len(reg.envs))
    onehot[idx] = 1.0
    return PaddedObservation(flat, g.num_limbs, onehot)


def _obs_tensor(states, g, reg) -> np.ndarray:
    s = states.value if isinstance(states, Tensor) else np.asarray(states, dtype=float)
    return np.atleast_2d(pad_observation(s, g, reg).vector())


class MonolithicActor:
    def __init__(self, reg: Registry, hidden: int = 256, rng=None, seed: int = 0):
        rng = np.random.default_rng(seed) if rng is None else rng
        self.registry = reg
        self.hidden = hidden
        self.net = MLP([reg.obs_dim, hidden, hidden, hidden, reg.max_limbs], rng,
                       out_scale=0.01, name="actor")

    def parameters(self):
        return self.net.parameters()

    def clone(self) -> "MonolithicActor":
        twin = MonolithicActor(self.registry, self.hidden)
        ad.copy_values(twin.parameters(), self.parameters())
        return twin

    def padded(self, obs) -> Tensor:
        """Full padded action vector for a padded observation vector (or batch)."""
        x = obs.vector() if isinstance(obs, PaddedObservation) else np.asarray(obs, dtype=float)
        x = np.atleast_2d(x)
        if x.shape[1] != self.registry.obs_dim:
            raise DimensionMismatch(f"observation dim {x.shape[1]} != {self.registry.obs_dim}")
        return ad.tanh(self.net(Tensor(x)))

    def __call__(self, g: MorphologyGraph, states) -> Tensor:
        out = self.padded(_obs_tensor(states, g, self.registry))
        # keep the agent's own entries, back in g.names order
        return ad.matmul(out, Tensor(_selector(g, self.registry).T))

    def act(self, g: MorphologyGraph, obs) -> np.ndarray:
        return self(g, np.asarray(obs)[None]).value[0].copy()

    def check_graph(self, g: MorphologyGraph) -> None:
        self.registry.index(g)

    def save(self, path) -> None:
        checkpoint.save(path, {p.name: p.value for p in self.parameters()})
        with open(f"{path}.json", "w") as fh:
            json.dump({"arch": "monolithic", "hidden_width": self.hidden,
                       "registry": self.registry.to_dict()}, fh, indent=2)

    @classmethod
    def load(cls, path) -> "MonolithicActor":
        with open(f"{path}.json") as fh:
            hdr = json.load(fh)
        r = hdr["registry"]
        actor = cls(Registry(tuple(r["envs"]), r["max_limbs"], r["state_dim"]), hdr["hidden_width"])
        values = checkpoint.load(path)
        for p in actor.parameters():
            p.value = values[p.name].copy()
        return actor


class MonolithicCritic:
    """Q over (padded observation, padded action)."""

    def __init__(self, reg: Registry, hidden: int = 256, rng=None, seed: int = 0):
        rng = np.random.default_rng(seed) if rng is None else rng
        self.registry = reg
        self.hidden = hidden
        self.net = MLP([reg.obs_dim + reg.max_limbs, hidden, hidden, hidden, 1], rng, name="critic")

    def parameters(self):
        return self.net.parameters()

    def clone(self) -> "MonolithicCritic":
        twin = MonolithicCritic(self.registry, self.hidden)
        ad.copy_values(twin.parameters(), self.parameters())
        return twin

    def __call__(self, g: MorphologyGraph, states, actions) -> Tensor:
        obs = Tensor(_obs_tensor(states, g, self.registry))
        actions = actions if isinstance(actions, Tensor) else Tensor(np.asarray(actions, dtype=float))
        a_pad = ad.matmul(actions, Tensor(_selector(g, self.registry)))
        q = self.net(ad.concat([obs, a_pad], axis=1))
        return ad.reshape(q, (q.shape[0],))


def make_monolithic(reg: Registry, hidden: int, seed: int):
    rng = np.random.default_rng(seed)
    return (MonolithicActor(reg, hidden, rng), MonolithicCritic(reg, hidden, rng),
            MonolithicCritic(reg, hidden, rng))
