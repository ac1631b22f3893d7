"""Agent morphologies as rooted limb trees.

A morphology file is JSON::

    {"name": "hopper", "root": "torso",
     "limbs": [{"name": "torso", "parent": null, "length": 0.4, "mass": 3.0,
                "is_actuated": false, "joint_low": -1.0, "joint_high": 1.0,
                "gear": 1.0, "child_order_index": 0}, ...]}

Each limb may also carry ``body_parent``: the limb it is physically jointed
to.  It only differs from ``parent`` after :func:`reroot`, which changes the
message-passing tree but not the body.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyVariantSet, ParseError, UnknownLimb, ValidationError

_LIMB_KEYS = ("name", "parent", "length", "mass", "is_actuated", "joint_low",
              "joint_high", "gear", "child_order_index")


@dataclass(frozen=True)
class LimbSpec:
    name: str
    length: float
    mass: float
    is_actuated: bool = True
    joint_low: float = -1.0
    joint_high: float = 1.0
    gear: float = 1.0
    child_order_index: int = 0

    def __post_init__(self):
        if not self.name:
            raise ValidationError("limb name must be non-empty")
        if not self.length > 0:
            raise ValidationError(f"limb {self.name!r}: length must be > 0")
        if not self.mass > 0:
            raise ValidationError(f"limb {self.name!r}: mass must be > 0")
        if not self.gear > 0:
            raise ValidationError(f"limb {self.name!r}: gear must be > 0")
        if not self.joint_low < self.joint_high:
            raise ValidationError(f"limb {self.name!r}: joint_low >= joint_high")


class MorphologyGraph:
    """Immutable rooted tree of limbs.

    ``parent`` defines the message-passing tree (root maps to ``None``);
    ``body_parent`` defines the physical joint tree used by the simulator.
    Children are ordered by ``(child_order_index, name)``; a child's rank in
    that order is its message slot.
    """

    def __init__(self, name: str, root: str, limbs: Sequence[LimbSpec],
                 parent: Mapping[str, str | None],
                 body_parent: Mapping[str, str | None] | None = None):
        self.name = name
        self.root = root
        self.limbs = tuple(limbs)
        self.parent = dict(parent)
        self.body_parent = dict(parent if body_parent is None else body_parent)
        self._validate()

    # -- validation -------------------------------------------------------
    def _validate(self):
        names = [l.name for l in self.limbs]
        if len(set(names)) != len(names):
            raise ValidationError(f"{self.name}: duplicate limb names")
        if self.root not in names:
            raise ValidationError(f"{self.name}: root {self.root!r} is not a limb")
        for tree, label in ((self.parent, "parent"), (self.body_parent, "body_parent")):
            if set(tree) != set(names):
                raise ValidationError(f"{self.name}: {label} map does not cover every limb")
            roots = [n for n, p in tree.items() if p is None]
            if len(roots) != 1:
                raise ValidationError(f"{self.name}: expected one {label} root, got {roots}")
            if label == "parent" and roots[0] != self.root:
                raise ValidationError(f"{self.name}: root field disagrees with parent map")
            for n, p in tree.items():
                if p is not None and p not in tree:
                    raise ValidationError(f"{self.name}: limb {n!r} has unknown {label} {p!r}")
            for n in names:
                seen = {n}
                p = tree[n]
                while p is not None:
                    if p in seen:
                        raise ValidationError(f"{self.name}: cycle through {p!r}")
                    seen.add(p)
                    p = tree[p]
        if self.edges() != _edge_set(self.body_parent):
            raise ValidationError(f"{self.name}: message tree and body tree differ in edges")
        body_root = self.body_root
        for limb in self.limbs:
            if not limb.is_actuated and limb.name != body_root:
                raise ValidationError(
                    f"{self.name}: only the body root may be unactuated ({limb.name!r})")

    # -- structure --------------------------------------------------------
    @cached_property
    def _by_name(self) -> dict[str, LimbSpec]:
        return {l.name: l for l in self.limbs}

    def limb(self, name: str) -> LimbSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownLimb(name) from None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.limbs)

    @property
    def num_limbs(self) -> int:
        return len(self.limbs)

    @cached_property
    def _children(self) -> dict[str, tuple[str, ...]]:
        return _ordered_children(self.parent, self._by_name)

    @cached_property
    def _body_children(self) -> dict[str, tuple[str, ...]]:
        return _ordered_children(self.body_parent, self._by_name)

    def children(self, name: str) -> tuple[str, ...]:
        if name not in self._children:
            raise UnknownLimb(name)
        return self._children[name]

    def body_children(self, name: str) -> tuple[str, ...]:
        return self._body_children[name]

    def slot(self, name: str) -> int:
        """Message slot of ``name`` at its parent (rank among its siblings)."""
        p = self.parent[name]
        return 0 if p is None else self._children[p].index(name)

    def is_leaf(self, name: str) -> bool:
        return not self.children(name)

    @cached_property
    def body_root(self) -> str:
        return next(n for n, p in self.body_parent.items() if p is None)

    @cached_property
    def depth(self) -> dict[str, int]:
        return {n: d for d, level in enumerate(self.levels) for n in level}

    @cached_property
    def levels(self) -> tuple[tuple[str, ...], ...]:
        out, frontier = [], [self.root]
        while frontier:
            out.append(tuple(frontier))
            frontier = [c for n in frontier for c in self._children[n]]
        return tuple(out)

    def edges(self) -> frozenset[frozenset[str]]:
        return _edge_set(self.parent)

    def max_branching(self) -> int:
        return max(len(c) for c in self._children.values())

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        limbs = []
        for l in self.limbs:
            d = {"name": l.name, "parent": self.parent[l.name], "length": l.length,
                 "mass": l.mass, "is_actuated": l.is_actuated, "joint_low": l.joint_low,
                 "joint_high": l.joint_high, "gear": l.gear,
                 "child_order_index": l.child_order_index}
            if self.body_parent[l.name] != self.parent[l.name]:
                d["body_parent"] = self.body_parent[l.name]
            limbs.append(d)
        return {"name": self.name, "root": self.root, "limbs": limbs}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def _key(self):
        return (self.name, self.root, self.limbs,
                tuple(sorted(self.parent.items(), key=lambda kv: kv[0])),
                tuple(sorted(self.body_parent.items(), key=lambda kv: kv[0])))

    def __eq__(self, other):
        if not isinstance(other, MorphologyGraph):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash((self.name, self.root, self.names))

    def __repr__(self):
        return f"MorphologyGraph({self.name!r}, root={self.root!r}, limbs={len(self.limbs)})"


def _edge_set(parent: Mapping[str, str | None]) -> frozenset[frozenset[str]]:
    return frozenset(frozenset((n, p)) for n, p in parent.items() if p is not None)


def _ordered_children(parent, by_name) -> dict[str, tuple[str, ...]]:
    kids: dict[str, list[str]] = {n: [] for n in parent}
    for n, p in parent.items():
        if p is not None:
            kids[p].append(n)
    return {n: tuple(sorted(c, key=lambda k: (by_name[k].child_order_index, k)))
            for n, c in kids.items()}


# ---------------------------------------------------------------------------
# parsing

def graph_from_dict(doc: Mapping) -> MorphologyGraph:
    if not isinstance(doc, Mapping):
        raise ParseError("morphology document must be a JSON object")
    try:
        name, root, raw_limbs = doc["name"], doc["root"], doc["limbs"]
    except KeyError as exc:
        raise ParseError(f"missing key {exc.args[0]!r}") from None
    if not isinstance(raw_limbs, list) or not raw_limbs:
        raise ParseError("'limbs' must be a non-empty list")
    limbs, parent, body_parent = [], {}, {}
    for i, raw in enumerate(raw_limbs):
        if not isinstance(raw, Mapping):
            raise ParseError(f"limb #{i} is not an object")
        missing = [k for k in _LIMB_KEYS if k not in raw]
        if missing:
            raise ParseError(f"limb #{i} missing keys {missing}")
        try:
            limb = LimbSpec(
                name=str(raw["name"]), length=float(raw["length"]), mass=float(raw["mass"]),
                is_actuated=bool(raw["is_actuated"]), joint_low=float(raw["joint_low"]),
                joint_high=float(raw["joint_high"]), gear=float(raw["gear"]),
                child_order_index=int(raw["child_order_index"]))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ParseError(f"limb #{i}: {exc}") from None
        if limb.name in parent:
            raise ValidationError(f"duplicate limb {limb.name!r}")
        limbs.append(limb)
        parent[limb.name] = raw["parent"]
        body_parent[limb.name] = raw.get("body_parent", raw["parent"])
    return MorphologyGraph(str(name), str(root), limbs, parent, body_parent)


def parse_morphology(text: str) -> MorphologyGraph:
    """Parse and validate a JSON morphology document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc)) from None
    return graph_from_dict(doc)


def load_morphology(path) -> MorphologyGraph:
    with open(path) as fh:
        return parse_morphology(fh.read())


# ---------------------------------------------------------------------------
# traversal

def topological_ordering(g: MorphologyGraph) -> list[str]:
    """Breadth-first, root first; siblings follow their slot order."""
    return [n for level in g.levels for n in level]


def max_children(graphs: Iterable[MorphologyGraph]) -> int:
    graphs = list(graphs)
    if not graphs:
        raise ValueError("max_children needs at least one graph")
    return max(g.max_branching() for g in graphs)


def reroot(g: MorphologyGraph, new_root: str) -> MorphologyGraph:
    """Re-hang the message tree from ``new_root``; the body tree is kept."""
    g.limb(new_root)
    if new_root == g.root:
        return g
    adj: dict[str, list[str]] = {n: [] for n in g.names}
    for n, p in g.parent.items():
        if p is not None:
            adj[n].append(p)
            adj[p].append(n)
    old_children = g._children
    parent: dict[str, str | None] = {new_root: None}
    rank: dict[str, int] = {new_root: 0}
    queue = deque([new_root])
    while queue:
        n = queue.popleft()
        # former children keep their order; the former parent comes last
        kids = [c for c in old_children[n] if c not in parent]
        if g.parent[n] is not None and g.parent[n] not in parent:
            kids.append(g.parent[n])
        for i, c in enumerate(kids):
            parent[c] = n
            rank[c] = i
            queue.append(c)
    limbs = [replace(l, child_order_index=rank[l.name]) for l in g.limbs]
    return MorphologyGraph(g.name, new_root, limbs, parent, g.body_parent)


def subgraph(base: MorphologyGraph, keep: Iterable[str], name: str | None = None) -> MorphologyGraph:
    """Induced subtree on ``keep`` (must contain the root and be connected)."""
    keep = set(keep)
    limbs = [l for l in base.limbs if l.name in keep]
    parent = {n: base.parent[n] for n in keep}
    body = {n: base.body_parent[n] for n in keep}
    if base.root not in keep:
        raise ValidationError("subgraph must contain the root")
    return MorphologyGraph(name or base.name, base.root, limbs, parent, body)


# ---------------------------------------------------------------------------
# variants

def rest_endpoint_depths(g: MorphologyGraph) -> dict[str, float]:
    """Depth of every limb's distal end below the body root's origin at rest.

    At rest every limb hangs straight down from its body parent's distal end.
    """
    depth: dict[str, float] = {}

    def visit(n, top):
        depth[n] = top + g.limb(n).length
        for c in g.body_children(n):
            visit(c, depth[n])

    visit(g.body_root, 0.0)
    return depth


def default_feasibility(g: MorphologyGraph) -> bool:
    """At least two limbs, and an actuated limb whose foot reaches the ground at rest."""
    if g.num_limbs < 2:
        return False
    depths = rest_endpoint_depths(g)
    lowest = max(depths.values())
    return any(g.limb(n).is_actuated and math.isclose(d, lowest, abs_tol=1e-9)
               for n, d in depths.items())


def min_limbs(k: int) -> Callable[[MorphologyGraph], bool]:
    return lambda g: g.num_limbs >= k


def always(_g: MorphologyGraph) -> bool:
    return True


def _subtree_choices(g: MorphologyGraph, n: str) -> list[frozenset[str]]:
    """Every connected node set rooted at ``n`` inside n's subtree."""
    per_child = [[frozenset()] + _subtree_choices(g, c) for c in g.children(n)]
    out = []
    for combo in itertools.product(*per_child):
        out.append(frozenset([n]).union(*combo))
    return out


def connected_subtrees(g: MorphologyGraph) -> list[frozenset[str]]:
    return _subtree_choices(g, g.root)


def variant_name(base: MorphologyGraph, keep: frozenset[str]) -> str:
    removed = [n for n in topological_ordering(base) if n not in keep]
    return base.name if not removed else f"{base.name}__minus_{'_'.join(removed)}"


@dataclass
class VariantSet:
    base: MorphologyGraph
    variants: list[MorphologyGraph]
    train_split: list[int] = field(default_factory=list)
    heldout_split: list[int] = field(default_factory=list)

    @property
    def train(self) -> list[MorphologyGraph]:
        return [self.variants[i] for i in self.train_split]

    @property
    def heldout(self) -> list[MorphologyGraph]:
        return [self.variants[i] for i in self.heldout_split]

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(),
                "variants": [v.to_dict() for v in self.variants],
                "split": {"train": list(self.train_split), "heldout": list(self.heldout_split)}}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "VariantSet":
        try:
            base = graph_from_dict(doc["base"])
            variants = [graph_from_dict(v) for v in doc["variants"]]
            split = doc.get("split", {})
            train = [int(i) for i in split.get("train", range(len(variants)))]
            heldout = [int(i) for i in split.get("heldout", [])]
        except KeyError as exc:
            raise ParseError(f"variant set missing key {exc.args[0]!r}") from None
        if set(train) & set(heldout):
            raise ValidationError("train and held-out splits overlap")
        if sorted(train + heldout) != list(range(len(variants))):
            raise ValidationError("splits must cover every variant exactly once")
        return cls(base, variants, train, heldout)


def split_indices(n: int, heldout_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    if not 0 <= heldout_fraction < 1:
        raise ValueError("heldout_fraction must be in [0, 1)")
    n_held = int(math.floor(heldout_fraction * n + 0.5))
    n_held = min(n_held, n - 1) if n > 1 else 0
    perm = np.random.default_rng(seed).permutation(n)
    heldout = sorted(int(i) for i in perm[:n_held])
    train = sorted(int(i) for i in perm[n_held:])
    return train, heldout


def enumerate_variants(base: MorphologyGraph,
                       feasibility: Callable[[MorphologyGraph], bool] = default_feasibility,
                       heldout_fraction: float = 0.2, seed: int = 0) -> VariantSet:
    """All connected, root-containing subtrees of ``base`` passing ``feasibility``.

    Variants are sorted by name, then split into train/held-out with a seeded
    permutation.
    """
    if not 0 <= heldout_fraction < 1:
        raise ValueError("heldout_fraction must be in [0, 1)")
    variants = []
    for keep in connected_subtrees(base):
        v = subgraph(base, keep, variant_name(base, keep))
        if feasibility(v):
            variants.append(v)
    if not variants:
        raise EmptyVariantSet(f"no feasible variant of {base.name}")
    variants.sort(key=lambda v: v.name)
    train, heldout = split_indices(len(variants), heldout_fraction, seed)
    return VariantSet(base, variants, train, heldout)


def load_variant_file(path) -> list[MorphologyGraph]:
    """Read either a single morphology or a variant set; returns its graphs."""
    with open(path) as fh:
        doc = json.load(fh)
    if "variants" in doc:
        return VariantSet.from_dict(doc).variants
    return [graph_from_dict(doc)]
