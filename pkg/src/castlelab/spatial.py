"""Spatial trees: evaluation maps into space-time and their comparison.

A spatial tree wraps a finite rooted tree with an evaluation map
``locus -> (t, x)``.  Time is affine with slope one along root-directed
rays: backward orientation means time decreases toward the root's open end
(``t = t_root + depth``), forward means it increases (``t = t_root -
depth``).  The spatial coordinate is piecewise linear per edge at stored
knots.  Explicit time knots can be supplied to build deliberately broken
trees for negative tests.

The module also carries the machinery for comparing two spatial trees:
correspondences and their distortion, the compact spatial distance with
dyadic-annulus Hoelder term, an M1 estimator on properness maps, the
iterative subtree coupling, and the trimmed path correspondence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rtree import RAY, EQ_TOL, FiniteRTree, TreeLocus
from .stepfn import StepFunction

BACKWARD = 1
FORWARD = -1


class SpatialTreeError(ValueError):
    pass


class PathCorrespondenceError(RuntimeError):
    """Trimmed endpoint structure did not match; carries diagnostics."""


def _interp(knots, u):
    us, xs = knots
    return float(np.interp(u, us, xs))


class SpatialTree:
    """Tree plus evaluation map; immutable after construction.

    ``x_knots[edge] = (offsets, values)`` with offsets ascending from the
    child endpoint; ``x_knots[RAY]`` covers the root extension (offsets
    downward from the root).  ``t_knots`` defaults to the affine map fixed
    by the orientation and exists only so that violating trees can be
    represented for negative tests.
    """

    def __init__(self, tree: FiniteRTree, x_knots: dict, t_root: float = 0.0,
                 orient: int = BACKWARD, t_knots: dict | None = None):
        if orient not in (BACKWARD, FORWARD):
            raise SpatialTreeError("orientation must be +-1")
        self.tree = tree
        self.t_root = float(t_root)
        self.orient = orient
        self.x_knots = {}
        for e, (us, xs) in x_knots.items():
            us = np.asarray(us, dtype=float)
            xs = np.asarray(xs, dtype=float)
            if np.any(np.diff(us) < 0):
                raise SpatialTreeError("knot offsets must be ascending")
            self.x_knots[e] = (us, xs)
        self.t_knots = None
        if t_knots is not None:
            self.t_knots = {e: (np.asarray(u, float), np.asarray(t, float))
                            for e, (u, t) in t_knots.items()}

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_node_positions(cls, tree: FiniteRTree, xpos: dict, t_root=0.0,
                            orient=BACKWARD, ray_x: float | None = None):
        """Linear spatial interpolation between node positions."""
        knots = {}
        for v in tree.parent:
            if v == tree.root:
                continue
            p = tree.parent[v]
            knots[v] = (np.array([0.0, tree.length[v]]),
                        np.array([float(xpos[v]), float(xpos[p])]))
        if tree.root_ray > 0:
            x0 = float(xpos[tree.root])
            x1 = x0 if ray_x is None else float(ray_x)
            knots[RAY] = (np.array([0.0, tree.root_ray]), np.array([x0, x1]))
        return cls(tree, knots, t_root, orient)

    # -- evaluation ------------------------------------------------------------

    def eval_t(self, z: TreeLocus) -> float:
        z = self.tree.canon(z)
        if self.t_knots is not None:
            key = z.edge
            if key in self.t_knots:
                return _interp(self.t_knots[key], z.offset)
        return self.t_root + self.orient * self.tree.locus_depth(z)

    def eval_x(self, z: TreeLocus) -> float:
        z = self.tree.canon(z)
        if z.edge == RAY:
            if RAY in self.x_knots:
                return _interp(self.x_knots[RAY], z.offset)
            return self.eval_x(self.tree.node_locus(self.tree.root))
        if z.edge == self.tree.root:
            # continuity: the parent-end knot of any child edge is the root x
            for c in self.tree.children[self.tree.root]:
                return float(self.x_knots[c][1][-1])
            if RAY in self.x_knots:
                return float(self.x_knots[RAY][1][0])
            return 0.0
        return _interp(self.x_knots[z.edge], z.offset)

    def eval(self, z: TreeLocus):
        return self.eval_t(z), self.eval_x(z)

    def radial_time(self, z: TreeLocus, t: float) -> TreeLocus:
        """The locus at evaluation time ``t`` on the ray from ``z`` toward
        the open end (backward: t below z's time; forward: above)."""
        depth = self.orient * (t - self.t_root)
        return self.tree.radial(z, depth)

    def time_of(self, z: TreeLocus) -> float:
        return self.eval_t(z)

    def mesh_loci(self, mesh: float):
        """Loci covering the tree at arc-length resolution ``mesh``."""
        out = [self.tree.node_locus(self.tree.root)]
        for v in self.tree.parent:
            if v == self.tree.root:
                continue
            ln = self.tree.length[v]
            n = max(1, int(np.ceil(ln / mesh)))
            for i in range(n):
                out.append(TreeLocus(v, ln * i / n))
        if self.tree.root_ray > 0:
            n = max(1, int(np.ceil(self.tree.root_ray / mesh)))
            for i in range(1, n + 1):
                out.append(TreeLocus(RAY, self.tree.root_ray * i / n))
        return out

    def holder_norm(self, alpha: float, mesh: float = 0.05) -> float:
        """Empirical alpha-Hoelder norm of the evaluation map on a mesh."""
        loci = self.mesh_loci(mesh)
        ev = np.array([self.eval(z) for z in loci])
        best = 0.0
        for i, zi in enumerate(loci):
            for jj in range(i + 1, len(loci)):
                d = self.tree.distance(zi, loci[jj])
                if d > EQ_TOL:
                    gap = np.linalg.norm(ev[i] - ev[jj])
                    best = max(best, gap / d**alpha)
        return best


# ---------------------------------------------------------------------------
# characteristic checks

def check_characteristic(zeta: SpatialTree, samples: int = 200, seed: int = 0,
                         tol: float = 1e-9) -> dict:
    """Sampled verification of the two monotonicity identities.

    Time: on random locus pairs, the time of the point at parameter ``s``
    of the arc equals ``max(t0 - s d, t1 - (1-s) d)`` (min for forward
    trees).  Space: loci sharing an evaluation time, followed along their
    rays toward the open end, keep their spatial order.
    """
    rng = np.random.default_rng(seed)
    tree = zeta.tree
    loci = zeta.mesh_loci(max(tree.total_length() / max(samples, 1), 1e-3))
    n_time = 0
    worst_t = 0.0
    for _ in range(samples):
        a = loci[rng.integers(len(loci))]
        b = loci[rng.integers(len(loci))]
        seg = tree.segment(a, b)
        if seg.length <= EQ_TOL:
            continue
        s = float(rng.uniform())
        z = tree.point_on_segment(seg, s * seg.length)
        ta, tb = zeta.eval_t(a), zeta.eval_t(b)
        pred = (max if zeta.orient == BACKWARD else min)(
            ta - zeta.orient * s * seg.length,
            tb - zeta.orient * (1 - s) * seg.length)
        worst_t = max(worst_t, abs(zeta.eval_t(z) - pred))
        n_time += 1
    # space monotonicity via time slices
    n_space = 0
    worst_x = 0.0
    tvals = np.array([zeta.eval_t(z) for z in loci])
    lo, hi = np.quantile(tvals, [0.15, 0.85])
    for _ in range(samples // 4):
        t_slice = float(rng.uniform(lo, hi))
        at_t = _time_slice(zeta, t_slice)
        if len(at_t) < 2:
            continue
        at_t.sort(key=lambda z: zeta.eval_x(z))
        back = t_slice - zeta.orient * float(rng.uniform(0, t_slice - np.min(tvals))) \
            if zeta.orient == BACKWARD else \
            t_slice + float(rng.uniform(0, np.max(tvals) - t_slice))
        for za, zb in zip(at_t[:-1], at_t[1:]):
            try:
                ra = zeta.radial_time(za, back)
                rb = zeta.radial_time(zb, back)
            except ValueError:
                continue
            gap = zeta.eval_x(ra) - zeta.eval_x(rb)
            worst_x = max(worst_x, gap)
            n_space += 1
    return {"n_time_checks": n_time, "max_time_violation": worst_t,
            "n_space_checks": n_space,
            "max_space_violation": max(worst_x, 0.0),
            "ok": worst_t <= tol and worst_x <= tol}


def _time_slice(zeta: SpatialTree, t: float):
    """All loci with evaluation time t (one per crossing edge)."""
    tree = zeta.tree
    out = []
    depth = zeta.orient * (t - zeta.t_root)
    for v in tree.parent:
        if v == tree.root:
            continue
        dv = tree.depth[v]
        dp = tree.depth[tree.parent[v]]
        if dp - EQ_TOL <= depth <= dv + EQ_TOL:
            out.append(tree.canon(TreeLocus(v, min(max(dv - depth, 0.0),
                                                   tree.length[v]))))
    if -tree.root_ray - EQ_TOL <= depth <= EQ_TOL:
        out.append(tree.canon(TreeLocus(RAY, -depth)) if depth < 0
                   else tree.node_locus(tree.root))
    return out


# ---------------------------------------------------------------------------
# properness map

def properness_map(zeta: SpatialTree, r_grid) -> StepFunction:
    """b(r) = sup tree-distance from the root among loci evaluated into
    [-r, r]^2 (zero when the preimage is empty)."""
    r_grid = np.asarray(r_grid, dtype=float)
    if np.any(np.diff(r_grid) <= 0):
        raise SpatialTreeError("r grid must be increasing")
    tree = zeta.tree
    # candidate loci: fine mesh (exact per-edge optimisation is piecewise
    # affine; mesh keeps it simple and the properness map monotone)
    mesh = max(tree.total_length() / 2000.0, 1e-4)
    loci = zeta.mesh_loci(mesh)
    ev = np.array([zeta.eval(z) for z in loci])
    dep = np.array([abs(tree.locus_depth(z)) for z in loci])
    vals = np.empty_like(r_grid)
    for i, r in enumerate(r_grid):
        inside = (np.abs(ev[:, 0]) <= r + 1e-12) & (np.abs(ev[:, 1]) <= r + 1e-12)
        vals[i] = float(dep[inside].max()) if np.any(inside) else 0.0
    vals = np.maximum.accumulate(vals)
    return StepFunction(r_grid, vals, y_before=0.0)


# ---------------------------------------------------------------------------
# correspondences and the compact distance

@dataclass
class Correspondence:
    """Locus pairs covering both trees up to a declared mesh."""
    pairs: list
    mesh: float = np.inf
    includes_roots: bool = True

    def flipped(self):
        return Correspondence([(b, a) for a, b in self.pairs], self.mesh,
                              self.includes_roots)


def identity_correspondence(zeta: SpatialTree, mesh: float = 0.1) -> Correspondence:
    loci = zeta.mesh_loci(mesh)
    return Correspondence([(z, z) for z in loci], mesh)


def natural_correspondence(za: SpatialTree, zb: SpatialTree,
                           mesh: float = 0.1) -> Correspondence:
    """Arclength-fraction matching for trees sharing node ids."""
    ta, tb = za.tree, zb.tree
    if set(ta.parent) != set(tb.parent) or ta.root != tb.root:
        raise SpatialTreeError("trees do not share node ids")
    pairs = [(ta.node_locus(ta.root), tb.node_locus(tb.root))]
    for v in ta.parent:
        if v == ta.root:
            continue
        la, lb = ta.length[v], tb.length[v]
        n = max(1, int(np.ceil(max(la, lb) / mesh)))
        for i in range(n + 1):
            f = i / n
            pairs.append((TreeLocus(v, f * la), TreeLocus(v, f * lb)))
    return Correspondence(pairs, mesh)


def distortion(corr: Correspondence, za: SpatialTree, zb: SpatialTree) -> float:
    """sup over pair couples of |d(z, w) - d'(z', w')|."""
    if not corr.pairs:
        raise SpatialTreeError("empty correspondence")
    return _distortion_pairs(corr.pairs, za.tree, zb.tree)


def _distortion_pairs(pairs, ta: FiniteRTree, tb: FiniteRTree) -> float:
    worst = 0.0
    m = len(pairs)
    for i in range(m):
        ai, bi = pairs[i]
        for j in range(i + 1, m):
            aj, bj = pairs[j]
            worst = max(worst, abs(ta.distance(ai, aj) - tb.distance(bi, bj)))
    return worst


def delta_sp_compact(za: SpatialTree, zb: SpatialTree, corr: Correspondence,
                     alpha: float = 0.4, include_m1: bool = False,
                     r_grid=None) -> tuple[float, dict]:
    """The compact spatial-tree distance for a given correspondence.

    Half the distortion, plus the sup evaluation gap, plus the dyadic
    annulus Hoelder term with the fallback rule when one side of an annulus
    is empty; annuli where both sides are empty are dropped and recorded.
    The M1 properness term is added on request.
    """
    if not 0 < alpha < 1:
        raise SpatialTreeError("alpha must lie in (0, 1)")
    if not corr.pairs:
        raise SpatialTreeError("empty correspondence")
    ta, tb = za.tree, zb.tree
    pairs = corr.pairs
    m = len(pairs)
    ev_a = np.array([za.eval(p[0]) for p in pairs])
    ev_b = np.array([zb.eval(p[1]) for p in pairs])
    sup_eval = float(np.max(np.linalg.norm(ev_a - ev_b, axis=1)))

    d_a = np.zeros((m, m))
    d_b = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            d_a[i, j] = d_a[j, i] = ta.distance(pairs[i][0], pairs[j][0])
            d_b[i, j] = d_b[j, i] = tb.distance(pairs[i][1], pairs[j][1])
    dis = float(np.max(np.abs(d_a - d_b)))

    mesh = corr.mesh if np.isfinite(corr.mesh) else 1e-3
    n_max = max(1, int(np.ceil(np.log2(1.0 / mesh))))
    iu = np.triu_indices(m, k=1)
    da, db = d_a[iu], d_b[iu]
    inc = np.linalg.norm((ev_a[iu[0]] - ev_a[iu[1]])
                         - (ev_b[iu[0]] - ev_b[iu[1]]), axis=1)
    inc_a = np.linalg.norm(ev_a[iu[0]] - ev_a[iu[1]], axis=1)
    inc_b = np.linalg.norm(ev_b[iu[0]] - ev_b[iu[1]], axis=1)
    holder = 0.0
    dropped = []
    for n in range(1, n_max + 1):
        lo, hi = 2.0 ** -n, 2.0 ** -(n - 1)
        in_a = (da > lo) & (da <= hi)
        in_b = (db > lo) & (db <= hi)
        both = in_a & in_b
        if np.any(both):
            term = np.max(inc[both])
        elif np.any(in_a) or np.any(in_b):
            # fallback: the increment of the empty side is removed
            term = 0.0
            if np.any(in_a):
                term = max(term, float(np.max(inc_a[in_a])))
            if np.any(in_b):
                term = max(term, float(np.max(inc_b[in_b])))
        else:
            dropped.append(n)
            continue
        holder = max(holder, 2.0 ** (n * alpha) * float(term))

    value = 0.5 * dis + sup_eval + holder
    report = {"distortion": dis, "sup_eval": sup_eval, "holder": holder,
              "dropped_annuli": dropped, "n_max": n_max}
    if include_m1:
        if r_grid is None:
            r_grid = np.linspace(0.01, 1.05 * max(
                _eval_radius(za), _eval_radius(zb)), 64)
        m1 = m1_distance(properness_map(za, r_grid),
                         properness_map(zb, r_grid))
        value += m1
        report["m1"] = m1
    return value, report


def _eval_radius(zeta: SpatialTree) -> float:
    ev = np.array([zeta.eval(z) for z in zeta.mesh_loci(0.25)])
    return float(np.abs(ev).max())


def best_correspondence(za: SpatialTree, zb: SpatialTree, alpha: float = 0.4,
                        budget: int = 8, mesh: float = 0.1):
    """Search for a low-distance correspondence.

    Exhaustive over structure-preserving node bijections when both trees
    have at most ``budget`` nodes and equal node counts (then completed by
    arclength matching along edges); otherwise a greedy eval-proximity
    matching flagged as an upper bound.
    """
    ta, tb = za.tree, zb.tree
    na, nb = len(ta.parent), len(tb.parent)
    if na == nb and na <= budget:
        best = None
        for mapping in _tree_bijections(ta, tb):
            corr = _corr_from_mapping(ta, tb, mapping, mesh)
            val, _ = delta_sp_compact(za, zb, corr, alpha)
            if best is None or val < best[1]:
                best = (corr, val)
        if best is not None:
            return best[0], best[1], {"exact_search": True}
    # greedy eval-proximity matching
    la = za.mesh_loci(mesh)
    lb = zb.mesh_loci(mesh)
    ev_a = np.array([za.eval(z) for z in la])
    ev_b = np.array([zb.eval(z) for z in lb])
    pairs = []
    for i, z in enumerate(la):
        j = int(np.argmin(np.linalg.norm(ev_b - ev_a[i], axis=1)))
        pairs.append((z, lb[j]))
    for j, w in enumerate(lb):
        i = int(np.argmin(np.linalg.norm(ev_a - ev_b[j], axis=1)))
        pairs.append((la[i], w))
    pairs[0] = (ta.node_locus(ta.root), tb.node_locus(tb.root))
    corr = Correspondence(pairs, mesh)
    val, _ = delta_sp_compact(za, zb, corr, alpha)
    return corr, val, {"exact_search": False, "upper_bound": True}


def _tree_bijections(ta: FiniteRTree, tb: FiniteRTree):
    """Yield root-preserving, parenthood-preserving node bijections."""
    import itertools

    def match(va, vb, acc):
        ca, cb = ta.children[va], tb.children[vb]
        if len(ca) != len(cb):
            return
        if not ca:
            yield acc
            return
        for perm in itertools.permutations(cb):
            stack = [dict(acc)]
            for out in _match_lists(ca, list(perm), stack[0]):
                yield out

    def _match_lists(ca, cb, acc):
        if not ca:
            yield acc
            return
        head_a, head_b = ca[0], cb[0]
        acc2 = dict(acc)
        acc2[head_a] = head_b
        for part in match(head_a, head_b, acc2):
            yield from _match_lists(ca[1:], cb[1:], part)

    yield from match(ta.root, tb.root, {ta.root: tb.root})


def _corr_from_mapping(ta, tb, mapping, mesh):
    pairs = [(ta.node_locus(ta.root), tb.node_locus(tb.root))]
    for v, w in mapping.items():
        if v == ta.root:
            continue
        la, lb = ta.length[v], tb.length[w]
        n = max(1, int(np.ceil(max(la, lb) / mesh)))
        for i in range(n + 1):
            f = i / n
            pairs.append((TreeLocus(v, f * la), TreeLocus(w, f * lb)))
    return Correspondence(pairs, mesh)


# ---------------------------------------------------------------------------
# M1 distance on monotone step functions

def m1_distance(f: StepFunction, g: StepFunction, n_samples: int = 400) -> float:
    """Upper-bound estimator of the M1 metric between nondecreasing step
    functions: discrete Frechet distance (max-norm) between their completed
    graphs, sampled densely along segments."""
    for h in (f, g):
        if not h.is_nondecreasing():
            raise SpatialTreeError("m1 distance needs nondecreasing inputs")
    pa = _dense_graph(f.completed_graph(), n_samples)
    pb = _dense_graph(g.completed_graph(), n_samples)
    return _discrete_frechet(pa, pb)


def _dense_graph(pts, n_samples):
    if len(pts) < 2:
        return pts
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum()
    out = [pts[0]]
    for i, s in enumerate(seg):
        n = max(1, int(np.ceil(s / max(total, 1e-12) * n_samples)))
        for j in range(1, n + 1):
            out.append(pts[i] + (pts[i + 1] - pts[i]) * j / n)
    return np.array(out)


def _discrete_frechet(pa, pb):
    na, nb = len(pa), len(pb)
    d = np.max(np.abs(pa[:, None, :] - pb[None, :, :]), axis=2)
    dp = np.empty((na, nb))
    dp[0, 0] = d[0, 0]
    for j in range(1, nb):
        dp[0, j] = max(dp[0, j - 1], d[0, j])
    for i in range(1, na):
        dp[i, 0] = max(dp[i - 1, 0], d[i, 0])
        row_prev = dp[i - 1]
        row = dp[i]
        for j in range(1, nb):
            row[j] = max(min(row_prev[j], row_prev[j - 1], row[j - 1]), d[i, j])
    return float(dp[-1, -1])


# ---------------------------------------------------------------------------
# embedded lower subtrees (selections of a host tree containing the root)

class EmbeddedSubtree:
    """Connected subtree of a host tree containing the root.

    ``kept[v]`` is the surviving length of the edge into ``v`` measured from
    the parent side; lower-closedness (positive kept implies fully kept
    ancestors) is the maintained invariant.
    """

    def __init__(self, tree: FiniteRTree, kept: dict | None = None):
        self.tree = tree
        self.kept = {v: 0.0 for v in tree.parent if v != tree.root}
        if kept:
            self.kept.update(kept)

    def contains(self, z: TreeLocus) -> bool:
        z = self.tree.canon(z)
        if z.edge == RAY:
            return z.offset <= EQ_TOL
        if z.edge == self.tree.root:
            return True
        return z.offset >= self.tree.length[z.edge] - self.kept[z.edge] - EQ_TOL

    def project(self, z: TreeLocus) -> TreeLocus:
        """Entry point of z's root path into the subtree."""
        z = self.tree.canon(z)
        if self.contains(z):
            return z
        v = z.edge if z.edge != RAY else self.tree.root
        while v != self.tree.root:
            if self.kept[v] > EQ_TOL:
                return self.tree.canon(
                    TreeLocus(v, self.tree.length[v] - self.kept[v]))
            v = self.tree.parent[v]
        return self.tree.node_locus(self.tree.root)

    def dist_to(self, z: TreeLocus) -> float:
        return self.tree.distance(z, self.project(z))

    def farthest_point(self):
        """Tip maximising the distance to the subtree."""
        best, best_d = None, -1.0
        for v in self.tree.tips():
            z = self.tree.node_locus(v)
            d = self.dist_to(z)
            if d > best_d:
                best, best_d = z, d
        if self.tree.root_ray > 0:
            z = TreeLocus(RAY, self.tree.root_ray)
            d = self.tree.root_ray
            if d > best_d:
                best, best_d = z, d
        return best, best_d

    def add_descending_path(self, z: TreeLocus):
        """Extend the subtree by the segment from its boundary down to z."""
        z = self.tree.canon(z)
        if z.edge == RAY:
            raise SpatialTreeError("subtrees do not extend into the root ray")
        v = z.edge
        if v != self.tree.root:
            want = self.tree.length[v] - z.offset
            self.kept[v] = max(self.kept[v], want)
            v = self.tree.parent[v]
        while v != self.tree.root:
            self.kept[v] = self.tree.length[v]
            v = self.tree.parent[v]

    def hausdorff_to_host(self) -> float:
        return self.tree.hausdorff_to_lower_subtree(self.kept, ray_kept=0.0)

    def total_length(self) -> float:
        return float(sum(self.kept.values()))

    def boundary_tips(self):
        """Endpoints of the subtree other than the root.

        By lower-closedness a partially kept edge never has kept material
        below it, so stub ends are always endpoints; a fully kept edge ends
        at an endpoint iff no child edge survives.
        """
        out = []
        for v, k in self.kept.items():
            ln = self.tree.length[v]
            if k <= EQ_TOL:
                continue
            if k < ln - EQ_TOL:
                out.append(TreeLocus(v, ln - k))
            elif not any(self.kept[c] > EQ_TOL for c in self.tree.children[v]):
                out.append(self.tree.node_locus(v))
        return [self.tree.canon(z) for z in out]


# ---------------------------------------------------------------------------
# coupling construction

@dataclass
class MatchedSegment:
    """Isometric pair of descending segments; offsets run top to bottom."""
    top_a: TreeLocus
    bot_a: TreeLocus
    top_b: TreeLocus
    bot_b: TreeLocus
    length: float

    def sample(self, ta: FiniteRTree, tb: FiniteRTree, n: int = 5):
        """Matched locus pairs along the two segments."""
        seg_a = ta.segment(self.top_a, self.bot_a)
        seg_b = tb.segment(self.top_b, self.bot_b)
        out = []
        for i in range(n + 1):
            s = self.length * i / n if n else 0.0
            out.append((ta.point_on_segment(seg_a, s),
                        tb.point_on_segment(seg_b, s)))
        return out


@dataclass
class CouplingResult:
    subtree_a: EmbeddedSubtree
    subtree_b: EmbeddedSubtree
    segments: list
    log: list = field(default_factory=list)
    final_distortion: float = 0.0
    halted_distance: float = 0.0
    eta: float = 0.0

    def phi_pairs(self, n: int = 5):
        ta, tb = self.subtree_a.tree, self.subtree_b.tree
        pairs = [(ta.node_locus(ta.root), tb.node_locus(tb.root))]
        for seg in self.segments:
            pairs.extend(seg.sample(ta, tb, n))
        return pairs

    @property
    def ell_ok(self) -> bool:
        return all(rec["ell"] >= self.eta / 2 - 1e-12 for rec in self.log)


def couple_subtrees(za: SpatialTree, zb: SpatialTree, corr: Correspondence,
                    eta: float, mesh_n: int = 5,
                    max_iter: int = 10_000) -> CouplingResult:
    """Iterative construction of close subtrees with a length-preserving
    matching.

    At each step the point farthest from the current subtree is projected
    onto it, matched through the correspondence, the shorter of the two new
    segments fixes the added length on both sides, and the matching is
    extended isometrically.  The iteration halts when the farthest distance
    drops below ``2 * max(eta, distortion so far)``.
    """
    if not corr.pairs:
        raise SpatialTreeError("empty correspondence")
    ta, tb = za.tree, zb.tree
    if distortion(corr, za, zb) > eta + 1e-12:
        raise SpatialTreeError("correspondence distortion exceeds eta")
    T = EmbeddedSubtree(ta)
    Tp = EmbeddedSubtree(tb)
    segs: list[MatchedSegment] = []
    log = []

    def current_pairs():
        pairs = list(corr.pairs)
        pairs.append((ta.node_locus(ta.root), tb.node_locus(tb.root)))
        for seg in segs:
            pairs.extend(seg.sample(ta, tb, mesh_n))
        return pairs

    dis_now = _distortion_pairs(current_pairs(), ta, tb)
    for _ in range(max_iter):
        v, d = T.farthest_point()
        if d <= 2.0 * max(eta, dis_now) + 1e-12:
            break
        if v.edge == RAY:
            raise SpatialTreeError("coupling does not cover root rays")
        # partner through the correspondence (nearest recorded pair)
        i = int(np.argmin([ta.distance(v, p[0]) for p in corr.pairs]))
        vp = corr.pairs[i][1]
        b = T.project(v)
        bp = Tp.project(vp)
        la = ta.distance(v, b)
        lb = tb.distance(vp, bp)
        ell = min(la, lb)
        seg_a = ta.segment(b, v)
        seg_b = tb.segment(bp, vp)
        vm = ta.point_on_segment(seg_a, ell)
        vmp = tb.point_on_segment(seg_b, ell)
        T.add_descending_path(vm)
        Tp.add_descending_path(vmp)
        dis_before = dis_now
        segs.append(MatchedSegment(b, vm, bp, vmp, ell))
        dis_now = _distortion_pairs(current_pairs(), ta, tb)
        log.append({"v": v, "b": b, "ell": ell, "dis_before": dis_before,
                    "dis_after": dis_now,
                    "farthest_distance": d})
    v, d = T.farthest_point()
    return CouplingResult(T, Tp, segs, log, dis_now, d, eta)


# ---------------------------------------------------------------------------
# trimmed subtrees and the path correspondence

def restricted_trimmed(zeta: SpatialTree, r: float, eta: float) -> EmbeddedSubtree:
    """The eta-trimming of the radius-r ball (the root ray is handled by the
    caller; the returned subtree covers the tree part).

    A locus at depth ``dz`` survives iff a ball point lies at distance at
    least eta below it; the clipped descent below a node ``v`` is
    ``min(height(v), r - depth(v))``.
    """
    tree = zeta.tree
    kept: dict[int, float] = {}
    for v in tree.parent:
        if v == tree.root:
            continue
        dp = tree.depth[tree.parent[v]]
        dv = tree.depth[v]
        if dp >= r:
            kept[v] = 0.0
            continue
        reach = min(dv, r)  # deepest ball point on this edge
        bonus = max(0.0, min(tree.height(v), r - dv)) if dv <= r else 0.0
        deepest_kept = reach + bonus - eta
        kept[v] = max(0.0, min(deepest_kept, reach) - dp)
    return EmbeddedSubtree(tree, kept)


def path_correspondence(z1: SpatialTree, z2: SpatialTree, corr: Correspondence,
                        r: float, eta: float, eps_hint: float | None = None):
    """Ray-synchronised correspondence between trimmed r-balls.

    Endpoints of the eta-trimmed r-ball of the first tree are matched
    through ``corr``, time-aligned (the earlier one is moved along its ray
    to the later time), and each aligned pair is extended along the rays to
    the time-r point.  Returns ``(Correspondence, report)`` with the match
    diagnostics; raises PathCorrespondenceError when the matched endpoint
    sets collapse.
    """
    for zeta in (z1, z2):
        if zeta.tree.root_ray + 1e-9 < r:
            raise SpatialTreeError(
                "root ray shorter than the window radius r")
    if abs(z1.eval_t(z1.tree.node_locus(z1.tree.root)) -
           z2.eval_t(z2.tree.node_locus(z2.tree.root))) > 1e-9:
        raise SpatialTreeError("base points must sit at a common time")
    t1, t2 = z1.tree, z2.tree
    sub1 = restricted_trimmed(z1, r, eta)
    tips1 = sub1.boundary_tips()
    if not tips1:
        raise PathCorrespondenceError("first trimmed tree has no endpoints")
    # match and time-align
    aligned = []
    for v1 in tips1:
        i = int(np.argmin([t1.distance(v1, p[0]) for p in corr.pairs]))
        v2 = corr.pairs[i][1]
        tt1, tt2 = z1.eval_t(v1), z2.eval_t(v2)
        if (z1.orient == FORWARD and tt1 >= tt2) or \
           (z1.orient == BACKWARD and tt1 <= tt2):
            w1 = v1
            w2 = z2.radial_time(v2, tt1)
        else:
            w2 = v2
            w1 = z1.radial_time(v1, tt2)
        aligned.append((w1, w2))
    # distinctness of the matched endpoints
    for i in range(len(aligned)):
        for j in range(i + 1, len(aligned)):
            if t2.locus_eq(aligned[i][1], aligned[j][1]):
                raise PathCorrespondenceError(
                    f"matched endpoints {i} and {j} collapse on the second "
                    f"tree ({aligned[i][1]} vs {aligned[j][1]})")
    segments = []
    pairs = []
    for w1, w2 in aligned:
        tt = z1.eval_t(w1)
        end1 = z1.radial_time(w1, _sign_time(z1, r))
        end2 = z2.radial_time(w2, _sign_time(z2, r))
        length = abs(_sign_time(z1, r) - tt)
        segments.append(MatchedSegment(end1, w1, end2, w2, length))
        n = max(2, int(np.ceil(length / max(corr.mesh, 1e-2))))
        seg_a = t1.segment(end1, w1)
        seg_b = t2.segment(end2, w2)
        for i in range(n + 1):
            s = length * i / n
            pairs.append((t1.point_on_segment(seg_a, s),
                          t2.point_on_segment(seg_b, s)))
    cp = Correspondence(pairs, corr.mesh)
    dis = _distortion_pairs(pairs, t1, t2)
    sup_eval = max(np.linalg.norm(np.array(z1.eval(a)) - np.array(z2.eval(b)))
                   for a, b in pairs)
    report = {"n_endpoints": len(tips1), "distortion": dis,
              "sup_eval": float(sup_eval), "segments": segments,
              "subtree_1": sub1}
    if eps_hint is not None:
        n_eta = len(tips1)
        report["bound_rhs"] = 4 * n_eta * eps_hint
    return cp, report


def _sign_time(zeta: SpatialTree, r: float) -> float:
    """Evaluation time of the point at tree-depth -r on the root ray."""
    return zeta.t_root - zeta.orient * r
