"""Finite rooted metric trees.

Trees are stored as parent links with positive edge lengths.  Points are
addressed as loci ``(edge, offset)`` where ``edge`` is the id of the child
node of the edge and ``offset`` is measured from that child endpoint toward
the parent; nodes are never materialised for interior points.  The root may
carry a downward extension ray (a truncated open end); its loci use the
sentinel edge id ``RAY`` with offset measured downward from the root, and
the truncation length is reported in serialised output.

The "time" coordinate of a bare tree is its depth from the root, which
matches the convention that evaluation times decrease at unit rate toward
the root in the spatial layer built on top of this module.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

RAY = -1  # sentinel edge id for the root extension ray

EQ_TOL = 1e-12  # locus equality tolerance (avoids zero-length float edges)


@dataclass(frozen=True)
class TreeLocus:
    """A point on a tree: ``edge`` is the child-node id, ``offset`` the
    distance from the child endpoint toward the parent (downward from the
    root for ray loci)."""
    edge: int
    offset: float


@dataclass(frozen=True)
class Segment:
    """The unique arc between two loci with its turning point."""
    a: TreeLocus
    b: TreeLocus
    turn: TreeLocus
    length: float


class FiniteRTree:
    """Rooted tree with weighted edges; immutable after construction."""

    def __init__(self, parents: dict[int, int | None], lengths: dict[int, float],
                 root: int | None = None, root_ray: float = 0.0):
        roots = [v for v, p in parents.items() if p is None]
        if root is None:
            if len(roots) != 1:
                raise ValueError("tree must have exactly one root")
            root = roots[0]
        if parents.get(root, "missing") is not None:
            raise ValueError("root must have parent None")
        self.root = root
        self.parent = dict(parents)
        self.length = {v: float(l) for v, l in lengths.items()}
        if root_ray < 0:
            raise ValueError("root ray length must be nonnegative")
        self.root_ray = float(root_ray)
        self.children: dict[int, list[int]] = {v: [] for v in parents}
        for v, p in parents.items():
            if v != root:
                if self.length.get(v, 0.0) <= 0:
                    raise ValueError(f"edge into node {v} needs positive length")
                if p not in parents:
                    raise ValueError(f"node {v} has unknown parent {p}")
                self.children[p].append(v)
        for v in self.children:
            self.children[v].sort()
        self._check_acyclic()
        self.depth = {root: 0.0}
        for v in self._preorder():
            if v != root:
                self.depth[v] = self.depth[self.parent[v]] + self.length[v]
        self._height: dict[int, float] | None = None

    # -- structure ---------------------------------------------------------

    def _check_acyclic(self):
        seen = {self.root}
        for v in self.parent:
            trail = []
            while v not in seen:
                trail.append(v)
                v = self.parent[v]
                if v is None or len(trail) > len(self.parent):
                    raise ValueError("parent links contain a cycle or dangle")
            seen.update(trail)

    def _preorder(self) -> list[int]:
        out, stack = [], [self.root]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(reversed(self.children[v]))
        return out

    def nodes(self) -> list[int]:
        return self._preorder()

    def tips(self) -> list[int]:
        return [v for v in self.nodes() if not self.children[v]]

    def height(self, v: int) -> float:
        """Largest distance from v to a point below it."""
        if self._height is None:
            h = {u: 0.0 for u in self.parent}
            for u in reversed(self._preorder()):
                if u != self.root:
                    p = self.parent[u]
                    h[p] = max(h[p], h[u] + self.length[u])
            self._height = h
        return self._height[v]

    def total_length(self) -> float:
        return sum(self.length[v] for v in self.parent if v != self.root) + self.root_ray

    # -- loci ---------------------------------------------------------------

    def node_locus(self, v: int) -> TreeLocus:
        return TreeLocus(v, 0.0)

    def canon(self, z: TreeLocus) -> TreeLocus:
        """Canonical form: offsets live in [0, len) and endpoint ties resolve
        to the shallower node."""
        if z.edge == RAY:
            if z.offset < -EQ_TOL or z.offset > self.root_ray + EQ_TOL:
                raise ValueError("ray locus outside the extension")
            if z.offset <= EQ_TOL:
                return TreeLocus(self.root, 0.0)
            return TreeLocus(RAY, min(z.offset, self.root_ray))
        if z.edge not in self.parent:
            raise ValueError(f"unknown edge id {z.edge}")
        if z.edge == self.root:
            if abs(z.offset) > EQ_TOL:
                raise ValueError("root locus must have offset 0")
            return TreeLocus(self.root, 0.0)
        ln = self.length[z.edge]
        if z.offset < -EQ_TOL or z.offset > ln + EQ_TOL:
            raise ValueError("offset outside the edge")
        if z.offset >= ln - EQ_TOL:
            return self.canon(TreeLocus(self.parent[z.edge], 0.0))
        return TreeLocus(z.edge, max(z.offset, 0.0))

    def locus_depth(self, z: TreeLocus) -> float:
        z = self.canon(z)
        if z.edge == RAY:
            return -z.offset
        return self.depth[z.edge] - z.offset

    def locus_eq(self, a: TreeLocus, b: TreeLocus) -> bool:
        a, b = self.canon(a), self.canon(b)
        return a.edge == b.edge and abs(a.offset - b.offset) <= EQ_TOL

    def _ancestor_chain(self, v: int) -> list[int]:
        out = [v]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out

    def dca(self, a: TreeLocus, b: TreeLocus) -> TreeLocus:
        """Deepest common ancestor locus (the turning point of the arc)."""
        a, b = self.canon(a), self.canon(b)
        if a.edge == RAY or b.edge == RAY:
            da, db = self.locus_depth(a), self.locus_depth(b)
            return a if da <= db else b
        if a.edge == b.edge:
            return a if a.offset >= b.offset else b
        chain_a = self._ancestor_chain(a.edge)
        chain_b = set(self._ancestor_chain(b.edge))
        if a.edge in chain_b:
            return a
        if b.edge in set(chain_a):
            return b
        for v in chain_a:
            if v in chain_b:
                return TreeLocus(v, 0.0)
        raise AssertionError("disconnected tree")

    def distance(self, a: TreeLocus, b: TreeLocus) -> float:
        """Tree metric d(a, b)."""
        turn = self.dca(a, b)
        return (self.locus_depth(a) + self.locus_depth(b)
                - 2.0 * self.locus_depth(turn))

    def segment(self, a: TreeLocus, b: TreeLocus) -> Segment:
        """The unique arc joining a and b; its length equals distance(a, b)."""
        a, b = self.canon(a), self.canon(b)
        turn = self.dca(a, b)
        return Segment(a, b, turn, self.distance(a, b))

    def radial(self, z: TreeLocus, s: float) -> TreeLocus:
        """The locus at depth ``s`` on the ray from ``z`` toward the root,
        continued into the root extension for ``s < 0``."""
        z = self.canon(z)
        dz = self.locus_depth(z)
        if s > dz + EQ_TOL:
            raise ValueError("target depth above the locus")
        if s < -self.root_ray - EQ_TOL:
            raise ValueError("target beyond the truncated root ray")
        s = min(s, dz)
        if s <= 0.0:
            return self.canon(TreeLocus(RAY, min(-s, self.root_ray)))
        v = z.edge  # necessarily a tree edge here (ray loci have dz <= 0)
        while v != self.root and self.depth[self.parent[v]] > s + EQ_TOL:
            v = self.parent[v]
        if v == self.root:
            return TreeLocus(self.root, 0.0)
        return self.canon(TreeLocus(v, self.depth[v] - s))

    def locus_on_path(self, z: TreeLocus, w: TreeLocus) -> bool:
        """True when w lies on the root-directed ray from z (w above z)."""
        w = self.canon(w)
        return self.locus_eq(self.dca(z, w), w)

    def point_on_segment(self, seg: Segment, s: float) -> TreeLocus:
        """The point of the arc at arc-length ``s`` from ``seg.a``."""
        if s < -EQ_TOL or s > seg.length + EQ_TOL:
            raise ValueError("arc length outside the segment")
        s = min(max(s, 0.0), seg.length)
        d_at = self.locus_depth(seg.a) - self.locus_depth(seg.turn)
        if s <= d_at:
            return self.walk_down_to_depth(seg.a, self.locus_depth(seg.a) - s)
        return self.walk_down_to_depth(seg.b, self.locus_depth(seg.turn) + (s - d_at))

    def walk_down_to_depth(self, z: TreeLocus, s: float) -> TreeLocus:
        """Radial move toward the root stopping at depth ``s`` (s <= depth z)."""
        return self.radial(z, s)

    def degree(self, z: TreeLocus) -> int:
        """Number of connected components of the tree minus the point."""
        z = self.canon(z)
        if z.edge == RAY:
            return 1 if abs(z.offset - self.root_ray) <= EQ_TOL else 2
        if z.offset > EQ_TOL:
            return 2
        v = z.edge
        deg = len(self.children[v])
        if v == self.root:
            deg += 1 if self.root_ray > 0 else 0
        else:
            deg += 1
        return deg

    # -- trimming ------------------------------------------------------------

    def trim(self, eta: float) -> "FiniteRTree":
        """Keep loci having a descendant at distance >= eta (plus the root).

        Partially surviving edges end in fresh stub nodes; the root ray is
        shortened by eta.
        """
        tree, _ = self.trim_with_map(eta)
        return tree

    def trim_with_map(self, eta: float):
        """Trim and also return ``kept``: node id -> surviving edge length."""
        if eta <= 0:
            raise ValueError("trimming radius must be positive")
        parents: dict[int, int | None] = {self.root: None}
        lengths: dict[int, float] = {}
        kept: dict[int, float] = {}
        next_id = max(self.parent) + 1
        for v in self._preorder():
            if v == self.root:
                continue
            p = self.parent[v]
            if p not in parents:
                kept[v] = 0.0
                continue
            ln = self.length[v]
            h = self.height(v)
            cut = eta - h  # drop offsets below this (measured from child)
            if cut <= 0.0:
                parents[v] = p
                lengths[v] = ln
                kept[v] = ln
            elif cut < ln:
                stub = next_id
                next_id += 1
                parents[stub] = p
                lengths[stub] = ln - cut
                kept[v] = ln - cut
            else:
                kept[v] = 0.0
        ray = max(0.0, self.root_ray - eta)
        return FiniteRTree(parents, lengths, self.root, ray), kept

    def hausdorff_to_lower_subtree(self, kept: dict[int, float],
                                   ray_kept: float | None = None) -> float:
        """Hausdorff distance to a root-containing lower subtree.

        ``kept[v]`` is the surviving length of the edge into ``v`` measured
        from the parent side.  The supremum of the distance to the subtree
        is attained at tips (distance grows at unit rate below the cut).
        """
        if ray_kept is None:
            ray_kept = max(0.0, self.root_ray)
        worst = self.root_ray - ray_kept
        drop: dict[int, float] = {self.root: 0.0}
        for v in self._preorder():
            if v == self.root:
                continue
            p = self.parent[v]
            if drop[p] > 0.0:
                drop[v] = drop[p] + self.length[v]
            else:
                drop[v] = self.length[v] - kept.get(v, self.length[v])
            worst = max(worst, drop[v])
        return worst

    # -- covering numbers ------------------------------------------------------

    def epsilon_net(self, eps: float):
        """Minimal eps-covering size by the bottom-up greedy sweep.

        Returns ``(lower, upper, centers)``.  The greedy count is always an
        upper bound; the recorded trigger points form a packing whose
        pairwise separation certifies the matching lower bound (equality on
        every tree we generate; paths are provably exact).
        """
        if eps <= 0:
            raise ValueError("eps must be positive")
        centers: list[TreeLocus] = []
        triggers: list[TreeLocus] = []

        NEG = -np.inf  # "none" marker for reaches

        def climb(state, ln, mk):
            """Carry (uncovered reach, witness, cover reach) up an edge of
            length ``ln``; ``mk(u)`` is the locus u above the lower end.
            A centre is forced when the uncovered reach hits eps."""
            gv, gwit, rv = state
            up = 0.0
            while gv > NEG and gv + (ln - up) > eps + 1e-15:
                up += eps - gv
                centers.append(self.canon(mk(up)))
                triggers.append(gwit)
                rv = eps
                gv, gwit = NEG, None
            rem = ln - up
            gv = gv + rem if gv > NEG else NEG
            rv = rv - rem
            if rv < 0:
                rv = NEG
            return gv, gwit, rv

        def combine(states, here):
            gv, gwit, rv = 0.0, here, NEG  # the point itself starts uncovered
            for gc, gw, rc in states:
                if gc > gv:
                    gv, gwit = gc, gw
                rv = max(rv, rc)
            if gv <= rv:
                gv, gwit = NEG, None
            return gv, gwit, rv

        state: dict[int, tuple] = {}
        for v in reversed(self._preorder()):
            climbed = [climb(state[c], self.length[c],
                             lambda u, c=c: TreeLocus(c, u))
                       for c in self.children[v]]
            state[v] = combine(climbed, TreeLocus(v, 0.0))
        states = [state[self.root]]
        if self.root_ray > 0:
            ray_end = TreeLocus(RAY, self.root_ray)
            states.append(climb((0.0, ray_end, NEG), self.root_ray,
                                lambda u: TreeLocus(RAY, self.root_ray - u)))
        gv, gwit, rv = combine(states, TreeLocus(self.root, 0.0))
        if gv > NEG:
            centers.append(TreeLocus(self.root, 0.0))
            triggers.append(gwit)
        upper = len(centers)
        lower = self._packing_from([t for t in triggers if t is not None], eps)
        return lower, upper, centers

    def _packing_from(self, pts: Iterable[TreeLocus], eps: float) -> int:
        """Greedy packing (pairwise > 2 eps) among candidate points."""
        chosen: list[TreeLocus] = []
        for z in pts:
            if all(self.distance(z, w) > 2 * eps - 1e-12 for w in chosen):
                chosen.append(z)
        return len(chosen)

    def epsilon_net_size(self, eps: float):
        """Exact covering number when certified, else a (lower, upper) pair."""
        lower, upper, _ = self.epsilon_net(eps)
        if lower == upper:
            return upper
        return (lower, upper)

    # -- serialisation ----------------------------------------------------------

    def to_json(self) -> str:
        nodes = [{"id": v, "parent": self.parent[v],
                  "len": self.length.get(v, 0.0) if v != self.root else 0.0}
                 for v in sorted(self.parent)]
        doc = {"nodes": nodes, "root": self.root}
        if self.root_ray > 0:
            doc["root_ray"] = self.root_ray
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FiniteRTree":
        doc = json.loads(text)
        parents = {n["id"]: n["parent"] for n in doc["nodes"]}
        lengths = {n["id"]: n["len"] for n in doc["nodes"] if n["parent"] is not None}
        return cls(parents, lengths, doc["root"], doc.get("root_ray", 0.0))


def _raise_depth():
    raise ValueError("depth outside the tree")


def path_tree(length: float, pieces: int = 1, root_ray: float = 0.0) -> FiniteRTree:
    """A path of the given length below the root, split into equal edges."""
    parents: dict[int, int | None] = {0: None}
    lengths = {}
    for i in range(1, pieces + 1):
        parents[i] = i - 1
        lengths[i] = length / pieces
    return FiniteRTree(parents, lengths, 0, root_ray)


def y_tree(stem: float = 0.0, left: float = 1.0, right: float = 2.0,
           root_ray: float = 0.0) -> FiniteRTree:
    """Root, optional stem, then two branches."""
    if stem > 0:
        parents = {0: None, 1: 0, 2: 1, 3: 1}
        lengths = {1: stem, 2: left, 3: right}
    else:
        parents = {0: None, 2: 0, 3: 0}
        lengths = {2: left, 3: right}
    return FiniteRTree(parents, lengths, 0, root_ray)


def random_tree(rng: np.random.Generator, n_nodes: int = 8,
                len_lo: float = 0.3, len_hi: float = 2.0,
                root_ray: float = 0.0) -> FiniteRTree:
    """Random topology with uniform edge lengths (test helper)."""
    parents: dict[int, int | None] = {0: None}
    lengths = {}
    for v in range(1, n_nodes):
        parents[v] = int(rng.integers(0, v))
        lengths[v] = float(rng.uniform(len_lo, len_hi))
    return FiniteRTree(parents, lengths, 0, root_ray)
