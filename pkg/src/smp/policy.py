"""Shared modular policy: one module re-used at every limb of every agent.

Four message schedules are supported:

``none``
    ``a_k = f1(s_k)``
``bottom_up``
    leaf to root, ``a_k, m_k->parent = f1(s_k, child slots)``
``top_down``
    root to leaf, ``a_k, m_k->children = f1(s_k, m_parent->k)``
``both_way``
    up pass ``m_k->parent = f1(s_k, child slots)``, then down pass
    ``a_k, m_k->children = f2(m_k->parent, m_parent->k)``

Child messages occupy ``c_max`` fixed slots (a child's slot is its rank
among its siblings); unused slots are zero on the way up and ignored on the
way down.  Every transmitted message is L2-normalised.

Two evaluation paths exist: the per-node schedules (``act_*``), which walk one
agent's tree node by node, and :func:`depth_batched_forward`, which evaluates
every node at the same depth of every agent in a batch with one matrix
product and records on the autodiff tape when one is active.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, Tensor, checkpoint
from .errors import (BranchingExceedsCmax, DimensionMismatch, ParseError, SchemeMismatch,
                     TooManyChildren)
from .morphology import MorphologyGraph, topological_ordering

SCHEMES = ("none", "bottom_up", "top_down", "both_way")
MSG_DIM = 32
MSG_EPS = 1e-8


def normalize_message(m: np.ndarray, eps: float = MSG_EPS) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return m / max(float(np.linalg.norm(m)), eps)


def pad_child_messages(msgs: Sequence[np.ndarray], c_max: int, msg_dim: int = MSG_DIM) -> np.ndarray:
    """Stack child messages (already in slot order) into ``(c_max, msg_dim)``, zero-filled."""
    if len(msgs) > c_max:
        raise TooManyChildren(f"{len(msgs)} children but only {c_max} slots")
    block = np.zeros((c_max, msg_dim))
    for i, m in enumerate(msgs):
        block[i] = m
    return block


class SmpParams:
    """Parameters of a shared modular network (actor or critic).

    ``theta1`` is the only module for ``none``/``bottom_up``/``top_down`` and
    the upward module for ``both_way``; ``theta2`` is the downward module and
    exists only for ``both_way``.  ``head`` is ``"tanh"`` for actors and
    ``"linear"`` for critics.
    """

    def __init__(self, scheme: str, state_dim: int, c_max: int, *, msg_dim: int = MSG_DIM,
                 hidden: int = 256, head: str = "tanh", rng=None, seed: int = 0,
                 out_scale: float | None = None):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        if head not in ("tanh", "linear"):
            raise ValueError(f"unknown head {head!r}")
        rng = np.random.default_rng(seed) if rng is None else rng
        self.scheme = scheme
        self.state_dim = int(state_dim)
        self.c_max = max(1, int(c_max))
        self.msg_dim = int(msg_dim)
        self.hidden = int(hidden)
        self.head = head
        if out_scale is None:
            out_scale = 0.01 if head == "tanh" else 1.0
        c, M, H = self.c_max, self.msg_dim, self.hidden
        D = self.state_dim

        def mlp(n_in, n_out, name):
            return MLP([n_in, H, H, H, n_out], rng, out_scale=out_scale, name=name)

        self.theta2 = None
        if scheme == "none":
            self.theta1 = mlp(D, 1, "theta1")
        elif scheme == "bottom_up":
            self.theta1 = mlp(D + c * M, 1 + M, "theta1")
        elif scheme == "top_down":
            self.theta1 = mlp(D + M, 1 + c * M, "theta1")
        else:
            self.theta1 = mlp(D + c * M, M, "theta1")
            self.theta2 = mlp(2 * M, 1 + c * M, "theta2")

    # -- parameters -------------------------------------------------------
    @property
    def modules(self) -> list[MLP]:
        return [m for m in (self.theta1, self.theta2) if m is not None]

    def parameters(self) -> list[Tensor]:
        return [p for m in self.modules for p in m.parameters()]

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, tensors) -> None:
        for p in self.parameters():
            if p.name not in tensors:
                raise ParseError(f"checkpoint lacks tensor {p.name!r}")
            if tensors[p.name].shape != p.value.shape:
                raise ParseError(f"tensor {p.name!r} has shape {tensors[p.name].shape}")
            p.value = np.array(tensors[p.name], dtype=float)

    def clone(self) -> "SmpParams":
        twin = SmpParams(self.scheme, self.state_dim, self.c_max, msg_dim=self.msg_dim,
                         hidden=self.hidden, head=self.head, seed=0)
        twin.load_state_dict(self.state_dict())
        return twin

    def header(self) -> dict:
        return {"scheme": self.scheme, "c_max": self.c_max, "msg_dim": self.msg_dim,
                "D_s": self.state_dim, "hidden_width": self.hidden, "head": self.head}

    def save(self, path) -> None:
        """Write the tensors to ``path`` and the header to ``path + '.json'``."""
        checkpoint.save(path, self.state_dict())
        with open(f"{path}.json", "w") as fh:
            json.dump(self.header(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "SmpParams":
        with open(f"{path}.json") as fh:
            hdr = json.load(fh)
        net = cls(hdr["scheme"], hdr["D_s"], hdr["c_max"], msg_dim=hdr["msg_dim"],
                  hidden=hdr["hidden_width"], head=hdr.get("head", "tanh"))
        net.load_state_dict(checkpoint.load(path))
        return net

    def check_graph(self, g: MorphologyGraph) -> None:
        if g.max_branching() > self.c_max:
            raise BranchingExceedsCmax(
                f"{g.name} has a node with {g.max_branching()} children; c_max={self.c_max}")

    def _head(self, x):
        if self.head == "tanh":
            return np.tanh(x) if isinstance(x, np.ndarray) else ad.tanh(x)
        return x


@dataclass
class PolicyOutput:
    """Per-limb results in ``g.names`` order.

    ``up_messages[k]`` is the message limb k sent to its parent;
    ``down_messages[k]`` the message it received from its parent (zero at
    the root).  Either is ``None`` when the scheme has no such pass.
    """
    actions: np.ndarray
    up_messages: np.ndarray | None = None
    down_messages: np.ndarray | None = None


# ---------------------------------------------------------------------------
# per-node schedules

def _check_states(states, g: MorphologyGraph, params: SmpParams) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    if states.shape != (g.num_limbs, params.state_dim):
        raise DimensionMismatch(
            f"expected states of shape {(g.num_limbs, params.state_dim)}, got {states.shape}")
    params.check_graph(g)
    return states


def _require(params: SmpParams, scheme: str):
    if params.scheme != scheme:
        raise SchemeMismatch(f"params use scheme {params.scheme!r}, not {scheme!r}")


def act_no_message(states, g: MorphologyGraph, params: SmpParams) -> PolicyOutput:
    _require(params, "none")
    states = _check_states(states, g, params)
    actions = np.array([params._head(params.theta1.forward_numpy(states[i:i + 1]))[0, 0]
                        for i in range(g.num_limbs)])
    return PolicyOutput(actions)


def act_bottom_up(states, g: MorphologyGraph, params: SmpParams) -> PolicyOutput:
    _require(params, "bottom_up")
    states = _check_states(states, g, params)
    idx = {n: i for i, n in enumerate(g.names)}
    up: dict[str, np.ndarray] = {}
    actions = np.zeros(g.num_limbs)
    for n in reversed(topological_ordering(g)):
        slots = pad_child_messages([up[c] for c in g.children(n)], params.c_max, params.msg_dim)
        x = np.concatenate([states[idx[n]], slots.ravel()])[None]
        out = params.theta1.forward_numpy(x)[0]
        actions[idx[n]] = params._head(out[:1])[0]
        up[n] = normalize_message(out[1:])
    return PolicyOutput(actions, np.array([up[n] for n in g.names]))


def act_top_down(states, g: MorphologyGraph, params: SmpParams) -> PolicyOutput:
    _require(params, "top_down")
    states = _check_states(states, g, params)
    c, M = params.c_max, params.msg_dim
    idx = {n: i for i, n in enumerate(g.names)}
    received = {g.root: np.zeros(M)}
    actions = np.zeros(g.num_limbs)
    for n in topological_ordering(g):
        x = np.concatenate([states[idx[n]], received[n]])[None]
        out = params.theta1.forward_numpy(x)[0]
        actions[idx[n]] = params._head(out[:1])[0]
        sent = out[1:].reshape(c, M)
        for child in g.children(n):
            received[child] = normalize_message(sent[g.slot(child)])
    return PolicyOutput(actions, None, np.array([received[n] for n in g.names]))


def act_both_way(states, g: MorphologyGraph, params: SmpParams) -> PolicyOutput:
    _require(params, "both_way")
    states = _check_states(states, g, params)
    c, M = params.c_max, params.msg_dim
    idx = {n: i for i, n in enumerate(g.names)}
    order = topological_ordering(g)
    up: dict[str, np.ndarray] = {}
    for n in reversed(order):
        slots = pad_child_messages([up[ch] for ch in g.children(n)], c, M)
        x = np.concatenate([states[idx[n]], slots.ravel()])[None]
        up[n] = normalize_message(params.theta1.forward_numpy(x)[0])
    received = {g.root: np.zeros(M)}
    actions = np.zeros(g.num_limbs)
    for n in order:
        x = np.concatenate([up[n], received[n]])[None]
        out = params.theta2.forward_numpy(x)[0]
        actions[idx[n]] = params._head(out[:1])[0]
        sent = out[1:].reshape(c, M)
        for child in g.children(n):
            received[child] = normalize_message(sent[g.slot(child)])
    return PolicyOutput(actions, np.array([up[n] for n in g.names]),
                        np.array([received[n] for n in g.names]))


ACT = {"none": act_no_message, "bottom_up": act_bottom_up, "top_down": act_top_down,
       "both_way": act_both_way}


def act(states, g: MorphologyGraph, params: SmpParams) -> PolicyOutput:
    """Per-node evaluation with the schedule matching ``params.scheme``."""
    return ACT[params.scheme](states, g, params)


# ---------------------------------------------------------------------------
# depth-batched evaluation

class Plan:
    """Index bookkeeping for evaluating a forest of agents level by level.

    Nodes are laid out level by level (depth 0 first); within a level by
    agent, then by the agent's own level order.  ``canon`` maps the
    concatenated level layout back to the flat canonical layout (agents in
    order, limbs in ``g.names`` order).
    """

    def __init__(self, graphs: Sequence[MorphologyGraph], c_max: int):
        self.graphs = list(graphs)
        self.c_max = c_max
        offsets = np.cumsum([0] + [g.num_limbs for g in self.graphs])
        self.offsets = offsets
        self.total = int(offsets[-1])
        depth = max(len(g.levels) for g in self.graphs)
        rows: list[list[tuple[int, str]]] = [[] for _ in range(depth)]
        for a, g in enumerate(self.graphs):
            for d, level in enumerate(g.levels):
                rows[d].extend((a, n) for n in level)
        pos = {}  # (agent, limb) -> row within its level
        for d, level in enumerate(rows):
            for r, key in enumerate(level):
                pos[key] = r
        self.sizes = [len(level) for level in rows]
        self.state_idx = []
        self.child_idx = []   # per level: (n_d * c_max,) rows into next level (+pad)
        self.parent_idx = []  # per level: rows into previous level's (n * c_max) message block
        for d, level in enumerate(rows):
            self.state_idx.append(np.array(
                [offsets[a] + self.graphs[a].names.index(n) for a, n in level], dtype=np.intp))
            pad = self.sizes[d + 1] if d + 1 < depth else 0
            ch = np.full((len(level), c_max), pad, dtype=np.intp)
            par = np.zeros(len(level), dtype=np.intp)
            for r, (a, n) in enumerate(level):
                g = self.graphs[a]
                for s, child in enumerate(g.children(n)):
                    ch[r, s] = pos[(a, child)]
                p = g.parent[n]
                if p is not None:
                    par[r] = pos[(a, p)] * c_max + g.slot(n)
            self.child_idx.append(ch.ravel())
            self.parent_idx.append(par)
        level_start = np.cumsum([0] + self.sizes)
        canon = np.zeros(self.total, dtype=np.intp)
        for d, level in enumerate(rows):
            for r, (a, n) in enumerate(level):
                canon[offsets[a] + self.graphs[a].names.index(n)] = level_start[d] + r
        self.canon = canon

    @property
    def depth(self) -> int:
        return len(self.sizes)


@lru_cache(maxsize=512)
def _cached_plan(graphs: tuple, c_max: int) -> Plan:
    return Plan(graphs, c_max)


def plan_for(graphs: Sequence[MorphologyGraph], c_max: int) -> Plan:
    return _cached_plan(tuple(graphs), c_max)


def replicated_plan(g: MorphologyGraph, copies: int, c_max: int) -> Plan:
    cache = g.__dict__.setdefault("_plan_cache", {})
    key = (copies, c_max)
    if key not in cache:
        cache[key] = Plan((g,) * copies, c_max)
    return cache[key]


@dataclass
class BatchOutput:
    """Flat canonical-order results of a batched forward pass (Tensors)."""
    actions: Tensor                      # (total,)
    up: Tensor | None = None             # (total, msg_dim)
    down: Tensor | None = None           # (total, msg_dim) received from parent


def forward_plan(params: SmpParams, plan: Plan, states: Tensor,
                 with_messages: bool = False) -> BatchOutput:
    """Evaluate ``params`` on every node of ``plan``.

    ``states`` is a ``(plan.total, state_dim)`` tensor in canonical layout.
    """
    if states.shape != (plan.total, params.state_dim):
        raise DimensionMismatch(f"states {states.shape} vs plan {(plan.total, params.state_dim)}")
    if plan.c_max != params.c_max:
        raise DimensionMismatch("plan built for a different c_max")
    c, M, L = params.c_max, params.msg_dim, plan.depth
    scheme = params.scheme
    level_states = [ad.gather_rows(states, idx) for idx in plan.state_idx]
    actions: list = [None] * L
    up: list = [None] * L
    down_in: list = [None] * L

    def child_block(d):
        n = plan.sizes[d]
        if d + 1 >= L:
            return Tensor(np.zeros((n, c * M)))
        padded = ad.concat([up[d + 1], Tensor(np.zeros((1, M)))], axis=0)
        return ad.reshape(ad.gather_rows(padded, plan.child_idx[d]), (n, c * M))

    def head(out):
        return params._head(out[:, 0:1])

    if scheme == "none":
        for d in range(L):
            actions[d] = head(params.theta1(level_states[d]))
    elif scheme == "bottom_up":
        for d in reversed(range(L)):
            out = params.theta1(ad.concat([level_states[d], child_block(d)], axis=1))
            actions[d] = head(out)
            up[d] = ad.normalize_rows(out[:, 1:], MSG_EPS)
    else:
        if scheme == "both_way":
            for d in reversed(range(L)):
                x = ad.concat([level_states[d], child_block(d)], axis=1)
                up[d] = ad.normalize_rows(params.theta1(x), MSG_EPS)
        sent = None
        for d in range(L):
            if d == 0:
                down_in[d] = Tensor(np.zeros((plan.sizes[0], M)))
            else:
                down_in[d] = ad.gather_rows(sent, plan.parent_idx[d])
            if scheme == "both_way":
                out = params.theta2(ad.concat([up[d], down_in[d]], axis=1))
            else:
                out = params.theta1(ad.concat([level_states[d], down_in[d]], axis=1))
            actions[d] = head(out)
            raw = ad.reshape(out[:, 1:], (plan.sizes[d] * c, M))
            sent = ad.normalize_rows(raw, MSG_EPS)
    flat = ad.gather_rows(ad.reshape(ad.concat(actions, axis=0), (-1,)), plan.canon)
    result = BatchOutput(flat)
    if with_messages:
        if up[0] is not None:
            result.up = ad.gather_rows(ad.concat(up, axis=0), plan.canon)
        if down_in[0] is not None:
            result.down = ad.gather_rows(ad.concat(down_in, axis=0), plan.canon)
    return result


def depth_batched_forward(states_list: Sequence[np.ndarray], graphs: Sequence[MorphologyGraph],
                          params: SmpParams) -> list[PolicyOutput]:
    """Evaluate a batch of (possibly different) agents, grouping nodes by depth."""
    if len(states_list) != len(graphs):
        raise DimensionMismatch("one state matrix per graph required")
    for s, g in zip(states_list, graphs):
        _check_states(s, g, params)
    if not graphs:
        return []
    plan = plan_for(graphs, params.c_max)
    states = Tensor(np.concatenate([np.asarray(s, dtype=float) for s in states_list], axis=0))
    out = forward_plan(params, plan, states, with_messages=True)
    results = []
    for a in range(len(graphs)):
        lo, hi = plan.offsets[a], plan.offsets[a + 1]
        results.append(PolicyOutput(
            out.actions.value[lo:hi].copy(),
            None if out.up is None else out.up.value[lo:hi].copy(),
            None if out.down is None else out.down.value[lo:hi].copy()))
    return results


def batch_actions(params: SmpParams, g: MorphologyGraph, states: np.ndarray | Tensor) -> Tensor:
    """Actions for a ``(B, K, state_dim)`` batch of one morphology, shape ``(B, K)``."""
    sv = states.value if isinstance(states, Tensor) else np.asarray(states, dtype=float)
    B, K = sv.shape[:2]
    plan = replicated_plan(g, B, params.c_max)
    flat = states if isinstance(states, Tensor) else Tensor(sv)
    flat = ad.reshape(flat, (B * K, sv.shape[2]))
    return ad.reshape(forward_plan(params, plan, flat).actions, (B, K))
