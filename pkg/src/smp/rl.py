"""TD3 over whole-agent transitions with modular (shared per-limb) networks."""
from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tape, Tensor, backward, copy_values, soft_update
from .errors import BufferTooSmall, DimensionMismatch
from .morphology import MorphologyGraph
from .policy import SmpParams, batch_actions
from .sim import STATE_DIM, body_of


def actuation_mask(g: MorphologyGraph) -> np.ndarray:
    """1.0 for limbs that take a torque, 0.0 otherwise (``g.names`` order)."""
    b = body_of(g)
    return b.actuated[b.perm].astype(float)


@dataclass
class Transition:
    states: np.ndarray
    actions: np.ndarray
    reward: float
    next_states: np.ndarray
    done: bool
    env_id: str = ""


class ReplayBuffer:
    """Ring buffer of whole-agent transitions for one morphology.

    Storage grows geometrically up to ``capacity`` so large nominal
    capacities cost nothing until used.
    """

    def __init__(self, capacity: int, num_limbs: int, state_dim: int = STATE_DIM,
                 seed: int = 0, env_id: str = ""):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.num_limbs = num_limbs
        self.state_dim = state_dim
        self.env_id = env_id
        self.rng = np.random.default_rng(seed)
        self.size = 0
        self.ptr = 0
        self._alloc(min(self.capacity, 1024))

    def _alloc(self, n):
        K, D = self.num_limbs, self.state_dim
        old = getattr(self, "states", None)
        new = {
            "states": np.zeros((n, K, D)), "next_states": np.zeros((n, K, D)),
            "actions": np.zeros((n, K)), "rewards": np.zeros(n), "dones": np.zeros(n),
        }
        if old is not None:
            for k, arr in new.items():
                arr[:self.size] = getattr(self, k)[:self.size]
        for k, arr in new.items():
            setattr(self, k, arr)

    def __len__(self):
        return self.size

    def add(self, states, actions, reward, next_states, done) -> None:
        states = np.asarray(states, dtype=float)
        if states.shape != (self.num_limbs, self.state_dim):
            raise DimensionMismatch(f"states {states.shape} do not fit this buffer")
        if self.ptr >= len(self.rewards) and len(self.rewards) < self.capacity:
            self._alloc(min(self.capacity, 2 * len(self.rewards)))
        i = self.ptr
        self.states[i] = states
        self.next_states[i] = next_states
        self.actions[i] = actions
        self.rewards[i] = reward
        self.dones[i] = float(done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_transition(self, tr: Transition) -> None:
        self.add(tr.states, tr.actions, tr.reward, tr.next_states, tr.done)

    def sample_indices(self, batch_size: int) -> np.ndarray:
        return self.rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int):
        if self.size < 1:
            raise BufferTooSmall("empty buffer")
        idx = self.sample_indices(batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])


# ---------------------------------------------------------------------------
# actors and critics

class ModularActor:
    def __init__(self, params: SmpParams):
        self.params = params

    def parameters(self) -> list[Tensor]:
        return self.params.parameters()

    def clone(self) -> "ModularActor":
        return ModularActor(self.params.clone())

    def __call__(self, g: MorphologyGraph, states) -> Tensor:
        return batch_actions(self.params, g, states)

    def act(self, g: MorphologyGraph, obs: np.ndarray) -> np.ndarray:
        return self(g, np.asarray(obs)[None]).value[0].copy()

    def check_graph(self, g: MorphologyGraph) -> None:
        self.params.check_graph(g)

    def save(self, path) -> None:
        self.params.save(path)


class ModularCritic:
    """Per-limb Q heads on (limb state, limb action); agent Q is their mean."""

    def __init__(self, params: SmpParams):
        if params.head != "linear":
            raise ValueError("critic networks need a linear head")
        self.params = params

    def parameters(self) -> list[Tensor]:
        return self.params.parameters()

    def clone(self) -> "ModularCritic":
        return ModularCritic(self.params.clone())

    def __call__(self, g: MorphologyGraph, states, actions) -> Tensor:
        states = states if isinstance(states, Tensor) else Tensor(states)
        actions = actions if isinstance(actions, Tensor) else Tensor(actions)
        B, K = actions.shape
        x = ad.concat([states, ad.reshape(actions, (B, K, 1))], axis=2)
        per_limb = batch_actions(self.params, g, x)
        return ad.mean(per_limb, axis=1)


def make_modular(scheme: str, c_max: int, hidden: int, seed: int,
                 state_dim: int = STATE_DIM):
    """Actor plus twin critics sharing one seed stream."""
    rng = np.random.default_rng(seed)
    actor = ModularActor(SmpParams(scheme, state_dim, c_max, hidden=hidden, head="tanh", rng=rng))
    c1 = ModularCritic(SmpParams(scheme, state_dim + 1, c_max, hidden=hidden, head="linear", rng=rng))
    c2 = ModularCritic(SmpParams(scheme, state_dim + 1, c_max, hidden=hidden, head="linear", rng=rng))
    return actor, c1, c2


# ---------------------------------------------------------------------------
# action selection

def select_action(states, g: MorphologyGraph, actor, noise_std: float,
                  rng: np.random.Generator | None = None, clip: tuple[float, float] = (-1.0, 1.0)):
    """Deterministic actor output plus Gaussian exploration noise, clipped."""
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    a = actor.act(g, states)
    if noise_std > 0:
        a = a + rng.normal(0.0, noise_std, size=a.shape)
    return np.clip(a, *clip)


def random_action(g: MorphologyGraph, rng: np.random.Generator) -> np.ndarray:
    """Uniform in [-1, 1] for every actuated limb, 0 for the others."""
    mask = actuation_mask(g)
    return rng.uniform(-1.0, 1.0, size=mask.shape) * mask


# ---------------------------------------------------------------------------
# TD3

@dataclass
class TD3Config:
    gamma: float = 0.99
    tau: float = 0.046
    lr: float = 4e-4
    batch_size: int = 100
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2

    def to_dict(self):
        return asdict(self)


@contextlib.contextmanager
def _frozen(params):
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


def bellman_target(reward, done, next_q, gamma: float) -> np.ndarray:
    return np.asarray(reward) + gamma * (1.0 - np.asarray(done)) * np.asarray(next_q)


class TD3:
    """Twin critics, target smoothing, delayed actor and soft target updates.

    ``actor`` and the critics may be modular or monolithic: anything with
    ``__call__``, ``parameters`` and ``clone`` in the shape used here.
    """

    def __init__(self, actor, critic1, critic2, hp: TD3Config | None = None, seed: int = 0):
        self.hp = hp or TD3Config()
        self.actor, self.critic1, self.critic2 = actor, critic1, critic2
        self.actor_target = actor.clone()
        self.critic1_target = critic1.clone()
        self.critic2_target = critic2.clone()
        self.actor_opt = Adam(actor.parameters(), lr=self.hp.lr)
        self.critic_opt = Adam(critic1.parameters() + critic2.parameters(), lr=self.hp.lr)
        self.rng = np.random.default_rng(seed)
        self.critic_updates = 0
        self.actor_updates = 0

    def critic_parameters(self):
        return self.critic1.parameters() + self.critic2.parameters()

    def target_q(self, g, rewards, next_states, dones):
        hp = self.hp
        mask = actuation_mask(g)
        a_next = self.actor_target(g, next_states).value
        noise = np.clip(self.rng.normal(0.0, hp.policy_noise, a_next.shape),
                        -hp.noise_clip, hp.noise_clip)
        a_next = np.clip(a_next + noise, -1.0, 1.0) * mask
        q1 = self.critic1_target(g, next_states, a_next).value
        q2 = self.critic2_target(g, next_states, a_next).value
        q_min = np.minimum(q1, q2)
        assert np.all(q_min <= q1) and np.all(q_min <= q2)
        return bellman_target(rewards, dones, q_min, hp.gamma)

    def update(self, buffer: ReplayBuffer, g: MorphologyGraph,
               batch_size: int | None = None) -> dict:
        """One TD3 iteration on a batch drawn from ``buffer`` (one morphology)."""
        hp = self.hp
        batch_size = batch_size or hp.batch_size
        if buffer.size < batch_size:
            raise BufferTooSmall(f"buffer holds {buffer.size} < {batch_size}")
        s, a, r, s2, d = buffer.sample(batch_size)
        y = self.target_q(g, r, s2, d)
        st = Tensor(s)
        self.critic_opt.zero_grad()
        with Tape() as tape:
            q1 = self.critic1(g, st, a)
            q2 = self.critic2(g, st, a)
            yt = Tensor(y)
            loss = ad.add(ad.mean(ad.square(q1 - yt)), ad.mean(ad.square(q2 - yt)))
            backward(loss, tape)
        self.critic_opt.step()
        self.critic_updates += 1
        info = {"critic_loss": loss.item(), "actor_loss": float("nan"),
                "mean_Q": float(np.mean(q1.value))}
        if self.critic_updates % hp.policy_delay == 0:
            mask = Tensor(actuation_mask(g)[None, :])
            self.actor_opt.zero_grad()
            with _frozen(self.critic1.parameters()), Tape() as tape:
                pi = ad.mul(self.actor(g, st), mask)
                actor_loss = ad.scalar_mul(ad.mean(self.critic1(g, st, pi)), -1.0)
                backward(actor_loss, tape)
            self.actor_opt.step()
            self.actor_updates += 1
            info["actor_loss"] = actor_loss.item()
            self.soft_update_targets()
        return info

    def soft_update_targets(self):
        tau = self.hp.tau
        soft_update(self.actor_target.parameters(), self.actor.parameters(), tau)
        soft_update(self.critic1_target.parameters(), self.critic1.parameters(), tau)
        soft_update(self.critic2_target.parameters(), self.critic2.parameters(), tau)

    def sync_targets(self):
        copy_values(self.actor_target.parameters(), self.actor.parameters())
        copy_values(self.critic1_target.parameters(), self.critic1.parameters())
        copy_values(self.critic2_target.parameters(), self.critic2.parameters())


def td3_update(td3: TD3, buffer: ReplayBuffer, g: MorphologyGraph, batch_size: int | None = None):
    return td3.update(buffer, g, batch_size)
