"""Post-hoc inspection of the messages a trained both-way policy exchanges."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, SchemeMismatch
from .morphology import MorphologyGraph
from .policy import act_both_way
from .sim import STATE_DIM, EnvConfig, PlanarEnv

PROJECTION_NOTE = "1-D projection = first principal component of the centred series"


@dataclass
class MessageLog:
    """Per-timestep arrays; limb axis follows ``names``."""
    names: list[str]
    episode: np.ndarray        # (T,)
    t: np.ndarray              # (T,)
    states: np.ndarray         # (T, K, D)
    actions: np.ndarray        # (T, K)
    up: np.ndarray             # (T, K, M)
    down: np.ndarray           # (T, K, M)

    def __len__(self):
        return len(self.t)

    def columns(self) -> list[str]:
        D, M = self.states.shape[2], self.up.shape[2]
        cols = ["episode", "t"]
        for n in self.names:
            cols += [f"{n}.s{i}" for i in range(D)]
            cols.append(f"{n}.a")
            cols += [f"{n}.up{i}" for i in range(M)]
            cols += [f"{n}.down{i}" for i in range(M)]
        return cols

    def rows(self) -> np.ndarray:
        T, K = self.actions.shape
        per_limb = np.concatenate([self.states, self.actions[..., None], self.up, self.down], axis=2)
        return np.concatenate([self.episode[:, None], self.t[:, None], per_limb.reshape(T, -1)],
                              axis=1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for r in self.rows():
                w.writerow([int(r[0]), int(r[1])] + [repr(float(v)) for v in r[2:]])

    @classmethod
    def from_csv(cls, path, msg_dim: int = 32, state_dim: int = STATE_DIM) -> "MessageLog":
        with open(path) as fh:
            header = next(csv.reader(fh))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        names = [c[:-2] for c in header if c.endswith(".a")]
        K = len(names)
        per = data[:, 2:].reshape(len(data), K, state_dim + 1 + 2 * msg_dim)
        D = state_dim
        return cls(names, data[:, 0].astype(int), data[:, 1].astype(int), per[:, :, :D],
                   per[:, :, D], per[:, :, D + 1:D + 1 + msg_dim], per[:, :, D + 1 + msg_dim:])


def record_messages(actor, g: MorphologyGraph, episodes: int = 1, seed: int = 0,
                    env_cfg: EnvConfig | None = None, path=None) -> MessageLog:
    """Roll the deterministic policy and log every state, action and message."""
    params = getattr(actor, "params", actor)
    if getattr(params, "scheme", None) != "both_way":
        raise SchemeMismatch("message analysis needs a both_way policy")
    params.check_graph(g)
    env = PlanarEnv(g, env_cfg or EnvConfig(), seed=seed)
    ep, ts, S, A, U, Dn = [], [], [], [], [], []
    for e in range(episodes):
        obs = env.reset()
        t = 0
        while True:
            out = act_both_way(obs, g, params)
            ep.append(e)
            ts.append(t)
            S.append(obs)
            A.append(out.actions)
            U.append(out.up_messages)
            Dn.append(out.down_messages)
            obs, _, done = env.step(out.actions)
            t += 1
            if done:
                break
    log = MessageLog(list(g.names), np.array(ep), np.array(ts), np.array(S), np.array(A),
                     np.array(U), np.array(Dn))
    if path is not None:
        log.to_csv(path)
    return log


def project_1d(series) -> np.ndarray:
    """Scores on the first principal direction, sign fixed so element 0 >= 0."""
    X = np.asarray(series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise DegenerateData("need at least two vectors")
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        raise DegenerateData("series has zero variance")
    z = Xc @ vt[0]
    if z[0] < 0:
        z = -z
    return z


def autocorrelation(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    denom = np.dot(x, x)
    if denom <= 0:
        raise DegenerateData("constant series")
    n = len(x)
    full = np.correlate(x, x, mode="full")[n - 1:]
    return full / denom


def dominant_period(x, min_lag: int = 2, max_lag: int | None = None) -> int | None:
    """Lag of the highest autocorrelation peak after the first zero crossing."""
    ac = autocorrelation(x)
    max_lag = len(ac) // 2 if max_lag is None else min(max_lag, len(ac) - 2)
    below = np.nonzero(ac[1:] < 0)[0]
    if len(below) == 0:
        return None
    start = max(min_lag, below[0] + 1)
    best, best_lag = -np.inf, None
    for k in range(start, max_lag + 1):
        if ac[k] >= ac[k - 1] and ac[k] >= ac[k + 1] and ac[k] > best:
            best, best_lag = ac[k], k
    return best_lag


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float) - np.mean(x)
    y = np.asarray(y, dtype=float) - np.mean(y)
    sx, sy = np.sqrt(np.dot(x, x)), np.sqrt(np.dot(y, y))
    if sx <= 1e-12 or sy <= 1e-12:
        raise DegenerateData("correlation undefined for a constant series")
    return float(np.clip(np.dot(x, y) / (sx * sy), -1.0, 1.0))


def root_message_projection(log: MessageLog, root: str, kind: str = "up", episode: int = 0):
    """1-D projection of the root's message over one episode."""
    k = log.names.index(root)
    sel = log.episode == episode
    msgs = (log.up if kind == "up" else log.down)[sel, k]
    return project_1d(msgs)


def message_range_correlation(log: MessageLog, g: MorphologyGraph, path=None) -> list[tuple]:
    """Correlation of each leaf's state and action with the message arriving at
    each ancestor (distance 0 = the leaf's own incoming message).

    The body root receives a constant zero message, so it is never a column.
    Rows: (leaf, distance, ancestor, quantity, correlation); the correlation is
    NaN when either series is constant.
    """
    def corr(x, y):
        try:
            return pearson(x, y)
        except DegenerateData:
            return float("nan")

    def proj(x):
        try:
            return project_1d(x)
        except DegenerateData:
            return np.zeros(len(x))

    idx = {n: i for i, n in enumerate(log.names)}
    rows = []
    for leaf in g.names:
        if not g.is_leaf(leaf) or leaf == g.root:
            continue
        action = log.actions[:, idx[leaf]]
        targets = {"state": proj(log.states[:, idx[leaf]]), "action": action}
        node, dist = leaf, 0
        while node != g.root:
            msg = proj(log.down[:, idx[node]])
            for quantity, series in targets.items():
                rows.append((leaf, dist, node, quantity, corr(series, msg)))
            node, dist = g.parent[node], dist + 1
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["leaf", "distance", "ancestor", "quantity", "correlation"])
            for r in rows:
                w.writerow(list(r[:4]) + [repr(r[4])])
    return rows
