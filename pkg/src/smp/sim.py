"""Planar articulated rigid-body simulator.

Every limb is a uniform rod.  The body root hangs from its origin ``(x, z)``
at angle ``pitch``; every other limb hangs from its body parent's distal end
at a relative joint angle.  An absolute angle of 0 points straight down.

Generalized coordinates are ``q = [x, z, pitch, joint_1 .. joint_{K-1}]``
with joints in breadth-first body order.  Dynamics are assembled from the
per-limb centre-of-mass Jacobians (``M = sum m J^T J + I a a^T``) and
integrated with semi-implicit Euler.  Ground contact is a vertical penalty
spring-damper at the root origin and at every limb's distal end, with
horizontal friction capped by the Coulomb cone.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from .errors import NonFiniteState, ParseError
from .morphology import MorphologyGraph, rest_endpoint_depths

STATE_DIM = 17  # per-limb observation width, see observe()


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.008  # control period; each step runs frame_skip substeps of dt / frame_skip
    frame_skip: int = 4
    gravity: float = 9.81
    ground_stiffness: float = 2.0e4
    ground_damping: float = 300.0
    friction_coefficient: float = 0.9
    alive_bonus: float = 1.0
    ctrl_cost_weight: float = 1e-3
    episode_length: int = 1000
    termination_height: float | None = None  # None: half the root's rest height
    termination_pitch: float = 1.0
    joint_limit_stiffness: float = 100.0
    joint_limit_damping: float = 1.0
    joint_damping: float = 0.05
    init_noise: float = 0.005
    contact: bool = True
    fixed_base: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.frame_skip < 1:
            raise ValueError("frame_skip must be >= 1")
        if self.episode_length <= 0:
            raise ValueError("episode_length must be > 0")

    @property
    def substep(self) -> float:
        return self.dt / self.frame_skip

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EnvConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from None
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ParseError(f"unknown EnvConfig keys {sorted(unknown)}")
        return cls(**doc)


@dataclass
class SimState:
    q: np.ndarray
    qdot: np.ndarray
    t: int = 0

    def copy(self) -> "SimState":
        return SimState(self.q.copy(), self.qdot.copy(), self.t)


@dataclass(frozen=True)
class LimbState:
    """Named view of one row of :func:`observe`'s output."""
    position: tuple[float, float, float]
    linear_velocity: tuple[float, float, float]
    angular_velocity: tuple[float, float, float]
    rotation: tuple[float, float, float]
    joint_range: tuple[float, float, float]
    limb_type_flags: tuple[float, float]

    @classmethod
    def from_vector(cls, v) -> "LimbState":
        v = [float(x) for x in v]
        return cls(tuple(v[0:3]), tuple(v[3:6]), tuple(v[6:9]), tuple(v[9:12]),
                   tuple(v[12:15]), tuple(v[15:17]))

    def vector(self) -> np.ndarray:
        return np.array(self.position + self.linear_velocity + self.angular_velocity
                        + self.rotation + self.joint_range + self.limb_type_flags)


class Body:
    """Precomputed physical layout of a morphology (body tree, BFS order)."""

    def __init__(self, g: MorphologyGraph):
        order = [g.body_root]
        for n in order:
            order.extend(g.body_children(n))
        self.order = order
        self.n = n = len(order)
        self.ndof = n + 2
        idx = {name: i for i, name in enumerate(order)}
        self.parent = np.array([-1] + [idx[g.body_parent[name]] for name in order[1:]])
        limbs = [g.limb(name) for name in order]
        self.length = np.array([l.length for l in limbs])
        self.mass = np.array([l.mass for l in limbs])
        self.inertia = self.mass * self.length ** 2 / 12.0
        self.gear = np.array([l.gear for l in limbs])
        self.low = np.array([l.joint_low for l in limbs])
        self.high = np.array([l.joint_high for l in limbs])
        self.actuated = np.array([l.is_actuated and i > 0 for i, l in enumerate(limbs)])
        # anc[j, k] = 1 when j is k or an ancestor of k
        anc = np.eye(n)
        for k in range(n):
            p = self.parent[k]
            while p >= 0:
                anc[p, k] = 1.0
                p = self.parent[p]
        self.anc = anc
        self.strict = anc - np.eye(n)
        depths = rest_endpoint_depths(g)
        self.rest_height = max(depths.values())
        # canonical limb order (g.names) -> body index
        self.perm = np.array([idx[name] for name in g.names])
        self.actuated_names = [name for name in g.names if self.actuated[idx[name]]]
        self.actuated_index = np.array([idx[name] for name in self.actuated_names], dtype=int)

    def rest_q(self) -> np.ndarray:
        q = np.zeros(self.ndof)
        q[1] = self.rest_height
        return q


@lru_cache(maxsize=256)
def body_of(g: MorphologyGraph) -> Body:
    return Body(g)


def _perp(r):
    return np.stack([-r[..., 1], r[..., 0]], axis=-1)


class _Kin:
    """Kinematic quantities at one configuration."""

    def __init__(self, b: Body, q: np.ndarray, qdot: np.ndarray):
        self.phi = b.anc.T @ q[2:]
        self.phidot = b.anc.T @ qdot[2:]
        s, c = np.sin(self.phi), np.cos(self.phi)
        self.u = np.stack([s, -c], axis=1)
        seg = b.length[:, None] * self.u
        self.prox = q[None, 0:2] + b.strict.T @ seg
        self.dist = self.prox + seg
        self.com = self.prox + 0.5 * seg

    def point_jacobian(self, b: Body, pts: np.ndarray, limb: np.ndarray) -> np.ndarray:
        """Jacobians (len(pts), 2, ndof) of points rigidly attached to limbs."""
        npts = len(pts)
        J = np.zeros((npts, 2, b.ndof))
        J[:, 0, 0] = 1.0
        J[:, 1, 1] = 1.0
        rel = pts[:, None, :] - self.prox[None, :, :]        # (p, j, 2)
        J[:, :, 2:] = (_perp(rel) * b.anc[:, limb].T[:, :, None]).transpose(0, 2, 1)
        return J


def _dynamics_terms(b: Body, kin: _Kin, g: float):
    Jc = kin.point_jacobian(b, kin.com, np.arange(b.n))
    M = np.einsum("k,kai,kaj->ij", b.mass, Jc, Jc)
    M[2:, 2:] += (b.anc * b.inertia[None, :]) @ b.anc.T
    # velocity-product acceleration of each centre of mass
    centripetal = (b.length * kin.phidot ** 2)[:, None] * kin.u
    bias_acc = -(b.strict.T @ centripetal) - 0.5 * centripetal
    h = np.einsum("k,kai,ka->i", b.mass, Jc, bias_acc)
    grav = np.zeros((b.n, 2))
    grav[:, 1] = -b.mass * g
    Qg = np.einsum("kai,ka->i", Jc, grav)
    return M, h, Qg


def _contact_forces(b: Body, kin: _Kin, qdot, Minv, cfg: EnvConfig, h: float) -> np.ndarray:
    pts = np.vstack([kin.prox[:1], kin.dist])
    limb = np.concatenate([[0], np.arange(b.n)])
    below = pts[:, 1] < 0.0
    Q = np.zeros(b.ndof)
    if not below.any():
        return Q
    pts, limb = pts[below], limb[below]
    J = kin.point_jacobian(b, pts, limb)
    vel = J @ qdot
    for i in range(len(pts)):
        Jx, Jz = J[i, 0], J[i, 1]
        m_z = 1.0 / max(Jz @ Minv @ Jz, 1e-12)
        m_x = 1.0 / max(Jx @ Minv @ Jx, 1e-12)
        damping = min(cfg.ground_damping, 0.5 * m_z / h)
        stiffness = min(cfg.ground_stiffness, 0.2 * m_z / h ** 2)
        fn = max(0.0, -stiffness * pts[i, 1] - damping * vel[i, 1])
        cap = cfg.friction_coefficient * fn
        ft = min(max(-0.5 * m_x * vel[i, 0] / h, -cap), cap)
        Q += Jx * ft + Jz * fn
    return Q


def _joint_forces(b: Body, q, qdot, torques, cfg: EnvConfig) -> np.ndarray:
    Q = np.zeros(b.ndof)
    th, thd = q[3:], qdot[3:]
    lo, hi = b.low[1:], b.high[1:]
    over = np.where(th > hi, th - hi, np.where(th < lo, th - lo, 0.0))
    limit = -cfg.joint_limit_stiffness * over - cfg.joint_limit_damping * thd * (over != 0)
    Q[3:] = torques[1:] + limit - cfg.joint_damping * thd
    return Q


def _clamp_joints(b: Body, q, qdot):
    if b.n < 2:
        return
    lo, hi = b.low[1:], b.high[1:]
    slack = 0.1 * (hi - lo)
    th = q[3:]
    low_hit = th < lo - slack
    high_hit = th > hi + slack
    q[3:] = np.clip(th, lo - slack, hi + slack)
    qd = qdot[3:]
    qd[low_hit & (qd < 0)] = 0.0
    qd[high_hit & (qd > 0)] = 0.0


def integrate(b: Body, state: SimState, body_torques: np.ndarray, cfg: EnvConfig,
              substeps: int | None = None) -> SimState:
    """Advance ``substeps`` semi-implicit Euler steps of length ``cfg.substep``."""
    h = cfg.substep
    q, qdot = state.q.copy(), state.qdot.copy()
    for _ in range(cfg.frame_skip if substeps is None else substeps):
        kin = _Kin(b, q, qdot)
        M, bias, Qg = _dynamics_terms(b, kin, cfg.gravity)
        rhs = Qg - bias + _joint_forces(b, q, qdot, body_torques, cfg)
        if cfg.fixed_base:
            qddot = np.zeros(b.ndof)
            qddot[2:] = np.linalg.solve(M[2:, 2:], rhs[2:])
        else:
            if cfg.contact:
                Minv = np.linalg.inv(M)
                rhs = rhs + _contact_forces(b, kin, qdot, Minv, cfg, h)
            qddot = np.linalg.solve(M, rhs)
        qdot = qdot + h * qddot
        if cfg.fixed_base:
            qdot[:2] = 0.0
        q = q + h * qdot
        _clamp_joints(b, q, qdot)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise NonFiniteState("simulation diverged")
    return SimState(q, qdot, state.t)


# ---------------------------------------------------------------------------
# environment API

def reset(g: MorphologyGraph, cfg: EnvConfig, seed) -> tuple[SimState, np.ndarray]:
    """Rest pose plus uniform noise in [-init_noise, init_noise] on q and qdot.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    b = body_of(g)
    q = b.rest_q() + rng.uniform(-cfg.init_noise, cfg.init_noise, b.ndof)
    qdot = rng.uniform(-cfg.init_noise, cfg.init_noise, b.ndof)
    if cfg.fixed_base:
        qdot[:2] = 0.0
    state = SimState(q, qdot, 0)
    return state, observe(state, g, cfg)


def actuated_limbs(g: MorphologyGraph) -> list[str]:
    """Limbs that accept a torque, in canonical (``g.names``) order."""
    return body_of(g).actuated_names


def actions_to_torques(g: MorphologyGraph, actions) -> np.ndarray:
    """Select the actuated entries of a per-limb action vector (canonical order)."""
    b = body_of(g)
    actions = np.asarray(actions, dtype=float)
    return actions[b.actuated[b.perm]]


def termination_height(g: MorphologyGraph, cfg: EnvConfig) -> float:
    if cfg.termination_height is not None:
        return cfg.termination_height
    return 0.5 * body_of(g).rest_height


def step(state: SimState, torques, g: MorphologyGraph, cfg: EnvConfig):
    """One control step.  ``torques`` has one entry per actuated limb.

    Returns ``(next_state, observation, reward, done)``.  Raises
    :class:`NonFiniteState` when the dynamics diverge.
    """
    b = body_of(g)
    torques = np.clip(np.asarray(torques, dtype=float), -1.0, 1.0)
    if torques.shape != (len(b.actuated_names),):
        raise ValueError(f"expected {len(b.actuated_names)} torques, got shape {torques.shape}")
    body_torques = np.zeros(b.n)
    body_torques[b.actuated_index] = b.gear[b.actuated_index] * torques
    nxt = integrate(b, state, body_torques, cfg)
    nxt.t = state.t + 1
    forward_velocity = (nxt.q[0] - state.q[0]) / cfg.dt
    reward = forward_velocity + cfg.alive_bonus - cfg.ctrl_cost_weight * float(np.sum(torques ** 2))
    done = (nxt.t >= cfg.episode_length
            or nxt.q[1] < termination_height(g, cfg)
            or abs(nxt.q[2]) > cfg.termination_pitch)
    return nxt, observe(nxt, g, cfg), float(reward), bool(done)


def observe(state: SimState, g: MorphologyGraph, cfg: EnvConfig | None = None) -> np.ndarray:
    """Per-limb observation matrix of shape ``(K, STATE_DIM)`` in ``g.names`` order.

    Columns: origin position (x relative to the body root, z, 0), origin
    velocity (vx, vz, 0), angular velocity (0, 0, w), exponential-map rotation
    (0, 0, angle), joint range (position, low, high) in [0, 1], flags
    (is_root, is_leaf) for the message tree.
    """
    b = body_of(g)
    kin = _Kin(b, state.q, state.qdot)
    vel = kin.point_jacobian(b, kin.prox, np.arange(b.n)) @ state.qdot
    obs = np.zeros((b.n, STATE_DIM))
    obs[:, 0] = kin.prox[:, 0] - state.q[0]
    obs[:, 1] = kin.prox[:, 1]
    obs[:, 3:5] = vel
    obs[:, 8] = kin.phidot
    obs[:, 11] = np.mod(kin.phi + np.pi, 2 * np.pi) - np.pi
    span = b.high - b.low
    obs[:, 12] = np.clip((state.q[2:] - b.low) / span, 0.0, 1.0)
    obs[:, 13] = (np.clip(b.low, -np.pi, np.pi) + np.pi) / (2 * np.pi)
    obs[:, 14] = (np.clip(b.high, -np.pi, np.pi) + np.pi) / (2 * np.pi)
    obs[0, 12:15] = (0.5, 0.0, 1.0)
    out = obs[b.perm]
    for i, name in enumerate(g.names):
        out[i, 15] = float(name == g.root)
        out[i, 16] = float(g.is_leaf(name))
    return out


def mechanical_energy(g: MorphologyGraph, state: SimState, cfg: EnvConfig) -> float:
    b = body_of(g)
    kin = _Kin(b, state.q, state.qdot)
    M, _, _ = _dynamics_terms(b, kin, cfg.gravity)
    return 0.5 * state.qdot @ M @ state.qdot + cfg.gravity * float(b.mass @ kin.com[:, 1])


class PlanarEnv:
    """Stateful wrapper with a gym-like ``reset``/``step`` over per-limb actions."""

    def __init__(self, g: MorphologyGraph, cfg: EnvConfig | None = None, seed: int = 0):
        self.graph = g
        self.cfg = cfg or EnvConfig()
        self.rng = np.random.default_rng(seed)
        self.state: SimState | None = None

    @property
    def num_limbs(self) -> int:
        return self.graph.num_limbs

    def reset(self) -> np.ndarray:
        self.state, obs = reset(self.graph, self.cfg, self.rng)
        return obs

    def step(self, actions):
        """``actions`` holds one value per limb; unactuated entries are ignored."""
        torques = actions_to_torques(self.graph, actions)
        self.state, obs, reward, done = step(self.state, torques, self.graph, self.cfg)
        return obs, reward, done


def write_trajectory_csv(path, rows) -> None:
    """Dump ``(state, reward, done)`` tuples as CSV: t, q..., qdot..., reward, done."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if not rows:
            return
        n = len(rows[0][0].q)
        w.writerow(["t"] + [f"q{i}" for i in range(n)] + [f"qdot{i}" for i in range(n)]
                   + ["reward", "done"])
        for state, reward, done in rows:
            w.writerow([state.t] + [repr(float(v)) for v in state.q]
                       + [repr(float(v)) for v in state.qdot] + [repr(float(reward)), int(done)])
