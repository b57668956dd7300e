"""Ballistic deposition on the lattice via its graphical representation.

Three independent Poisson event streams drive the dynamics on a window of
``R x delta*Z``: left arrows and right arrows of intensity
``gamma = 1/(2 delta^2)`` per site and dots of intensity ``2 gamma``.  A
left arrow at site k copies the height from k+delta, a right arrow from
k-delta, a dot raises the height by one.  Equivalently the value at a
space-time point is read off the backward walk that follows arrows down to
time zero, adding one per dot met on the way.

Arrow semantics (fixed once): a right-arrow event at site k sends the
*backward* walk from k to k-delta; the dual forward walks use the mirrored
streams (a primal right arrow at site k pushes the forward walk at the
face k-delta/2 across to k+delta/2), which makes forward and backward
families non-crossing by construction.
"""
from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng as _rng
from .bc import TruncationError, _run_chunks
from .rtree import FiniteRTree, TreeLocus
from .spatial import BACKWARD, SpatialTree
from .stepfn import StepFunction
from .treeproc import BranchingMap

KIND_L, KIND_R, KIND_DOT = 0, 1, 2


@dataclass
class EventField:
    """Realisation of the three event streams on a window."""
    delta: float
    t_lo: float
    t_hi: float
    k_lo: int                     # sites k_lo..k_hi inclusive, x = k*delta
    k_hi: int
    seed: int
    periodic: int | None = None   # number of sites on the circle
    times_L: dict = field(default_factory=dict)
    times_R: dict = field(default_factory=dict)
    times_dot: dict = field(default_factory=dict)

    @property
    def gamma(self):
        return 0.5 / self.delta**2

    def sites(self):
        return range(self.k_lo, self.k_hi + 1)

    def n_sites(self):
        return self.k_hi - self.k_lo + 1

    def wrap(self, k: int) -> int:
        if self.periodic is None:
            return k
        return self.k_lo + (k - self.k_lo) % self.periodic

    def in_window(self, k: int) -> bool:
        return self.k_lo <= k <= self.k_hi

    def merged_events(self):
        """All events sorted by time ascending: (t, site, kind)."""
        rows = []
        for k in self.sites():
            rows.extend((t, k, KIND_L) for t in self.times_L[k])
            rows.extend((t, k, KIND_R) for t in self.times_R[k])
            rows.extend((t, k, KIND_DOT) for t in self.times_dot[k])
        rows.sort()
        return rows

    def dual_events(self, kd: int):
        """Dual stream times at the face kd + 1/2 (between kd and kd+1):
        (times of +delta jumps, times of -delta jumps) for the forward walk.

        A primal right arrow at kd+1 pushes the forward walk at this face
        rightward across kd+1; a primal left arrow at kd pushes it leftward
        across kd.
        """
        plus = self.times_R.get(kd + 1, np.empty(0))
        minus = self.times_L.get(kd, np.empty(0))
        return plus, minus

    def dots_between(self, k: int, s_lo: float, s_hi: float) -> int:
        t = self.times_dot.get(k)
        if t is None:
            return 0
        return bisect_right(t, s_hi) - bisect_left(t, s_lo)

    def to_jsonl(self):
        for t, k, kind in self.merged_events():
            yield json.dumps({"site": k, "time": t,
                              "kind": {0: "L", 1: "R", 2: "dot"}[kind]})


def sample_events(window, delta: float, seed: int,
                  periodic: int | None = None) -> EventField:
    """Independent per-site Poisson streams on the window.

    ``window = (t_lo, t_hi, x_lo, x_hi)``; with ``periodic=N`` the sites
    are 0..N-1 and the spatial window is ignored.  Event times are distinct
    within each site (collisions resampled).
    """
    t_lo, t_hi, x_lo, x_hi = window
    if t_hi <= t_lo:
        raise ValueError("window has no time extent")
    if periodic is not None:
        k_lo, k_hi = 0, periodic - 1
    else:
        k_lo = int(np.floor(x_lo / delta))
        k_hi = int(np.ceil(x_hi / delta))
        if k_hi < k_lo:
            raise ValueError("window has no sites")
    fld = EventField(delta, float(t_lo), float(t_hi), k_lo, k_hi, seed,
                     periodic)
    gen = _rng.stream(seed, _rng.TASK_WEB_EVENTS, 0)
    span = t_hi - t_lo
    gamma = fld.gamma
    for k in fld.sites():
        streams = []
        for rate in (gamma, gamma, 2 * gamma):
            n = gen.poisson(rate * span)
            streams.append(np.sort(t_lo + span * gen.random(n)))
        while True:
            merged = np.concatenate(streams)
            if np.unique(merged).size == merged.size:
                break
            streams = [np.sort(t_lo + span * gen.random(len(s)))
                       for s in streams]
        fld.times_L[k], fld.times_R[k], fld.times_dot[k] = streams
    return fld


# ---------------------------------------------------------------------------
# walks

@dataclass
class LatticePath:
    """Piecewise-constant path: site ``sites[i]`` on [times[i+1], times[i])
    going backward (times descending, ending at the window floor)."""
    times: np.ndarray      # descending; times[0] = start time
    sites: np.ndarray      # len(times); sites[i] from times[i] down
    delta: float

    def site_at(self, s: float) -> int:
        i = np.searchsorted(-self.times, -s, side="right") - 1
        return int(self.sites[max(i, 0)])

    def x_at(self, s: float) -> float:
        return self.site_at(s) * self.delta

    def segments(self, s_lo: float, s_hi: float):
        """(site, lo, hi) pieces of the path within [s_lo, s_hi]."""
        out = []
        for i in range(len(self.sites)):
            hi = self.times[i]
            lo = self.times[i + 1] if i + 1 < len(self.times) else -np.inf
            a, b = max(lo, s_lo), min(hi, s_hi)
            if a < b:
                out.append((int(self.sites[i]), a, b))
        return out


class DiscreteWeb:
    """Backward and dual forward coalescing walks over an event field."""

    def __init__(self, fld: EventField):
        self.field = fld
        self._bw_cache: dict = {}

    def backward_walk(self, z) -> LatticePath:
        """Follow arrows down from z = (t, x), x on the site lattice."""
        t, x = z
        fld = self.field
        k = int(round(x / fld.delta))
        if abs(k * fld.delta - x) > 1e-9 * max(1.0, abs(x)):
            raise ValueError("start position off the site lattice")
        if not fld.in_window(k) or not (fld.t_lo <= t <= fld.t_hi):
            raise ValueError("start point outside the window")
        key = (round(float(t), 12), k)
        if key in self._bw_cache:
            return self._bw_cache[key]
        times = [float(t)]
        sites = [k]
        s = float(t)
        while True:
            tl = fld.times_L[fld.wrap(k)]
            tr = fld.times_R[fld.wrap(k)]
            il = bisect_left(tl, s) - 1
            ir = bisect_left(tr, s) - 1
            cand = []
            if il >= 0:
                cand.append((tl[il], +1))
            if ir >= 0:
                cand.append((tr[ir], -1))
            if not cand:
                break
            s_next, step = max(cand)
            k = k + step
            if fld.periodic is None and not fld.in_window(k):
                raise TruncationError(
                    f"backward walk left the site window at time {s_next}")
            s = s_next
            times.append(s)
            sites.append(fld.wrap(k))
        path = LatticePath(np.array(times), np.array(sites), fld.delta)
        self._bw_cache[key] = path
        return path

    def forward_walk(self, zhat) -> LatticePath:
        """Dual walk from (t, kd + 1/2) up to the window ceiling.

        Returned with times ascending in ``times`` (mirrored convention:
        site[i] holds on [times[i], times[i+1])).
        """
        t, khalf = zhat
        fld = self.field
        if abs(khalf - round(khalf - 0.5) - 0.5) > 1e-9:
            raise ValueError("dual walks start on the half-integer lattice")
        kd = int(round(khalf - 0.5))
        times = [float(t)]
        sites = [kd]
        s = float(t)
        while True:
            plus, minus = self.field.dual_events(kd)
            ip = bisect_right(plus, s)
            im = bisect_right(minus, s)
            cand = []
            if ip < len(plus):
                cand.append((plus[ip], +1))
            if im < len(minus):
                cand.append((minus[im], -1))
            if not cand:
                break
            s_next, step = min(cand)
            kd += step
            if fld.periodic is None and not (fld.k_lo <= kd < fld.k_hi):
                break
            s = s_next
            times.append(s)
            sites.append(kd)
        return LatticePath(np.array(times), np.array(sites), fld.delta)

    def meeting_time(self, z1, z2):
        """sup{s <= t1 ^ t2 : backward walks agree at s}, or None."""
        p1 = self.backward_walk(z1)
        p2 = self.backward_walk(z2)
        s = min(p1.times[0], p2.times[0])
        events = np.concatenate([p1.times[p1.times <= s],
                                 p2.times[p2.times <= s]])
        events = np.unique(events)[::-1]
        for ev in events:
            if p1.site_at(ev) == p2.site_at(ev):
                return float(ev)
        return None

    def ancestral_distance(self, z1, z2) -> float:
        """t + t' - 2 * meeting time of the two backward walks."""
        s = self.meeting_time(z1, z2)
        if s is None:
            raise TruncationError(
                f"no coalescence above the window floor {self.field.t_lo}")
        return z1[0] + z2[0] - 2.0 * s

    # -- spanned tree --------------------------------------------------------

    def web_tree_view(self, points) -> tuple[SpatialTree, dict]:
        """Spatial tree spanned by backward walks from the query points.

        Evaluation knots interpolate the walk positions linearly across
        jumps, and the report records ``sup |interpolated - step| <= delta``.
        """
        fld = self.field
        pts = sorted(points, key=lambda z: (z[1], -z[0]))
        paths = [self.backward_walk(z) for z in pts]
        k = len(pts)
        meets = [self.meeting_time(pts[i], pts[i + 1]) for i in range(k - 1)]
        if any(m is None for m in meets):
            raise TruncationError("query points do not fully coalesce")
        # hierarchical merge structure from adjacent meeting times
        order = np.argsort(meets)[::-1]
        nodes = {}
        parents: dict[int, int | None] = {}
        lengths: dict[int, float] = {}
        nid = 0
        cur = {}
        for i, (t, kk) in enumerate(pts):
            nodes[nid] = ("leaf", i, float(t))
            cur[i] = (nid, float(t))
            nid += 1
        group = {i: i for i in range(k)}

        def find(i):
            while group[i] != i:
                i = group[i]
            return i
        for j in order:
            s = meets[j]
            a, b = find(j), find(j + 1)
            na, ta = cur[a]
            nb, tb = cur[b]
            if min(ta, tb) - s <= 1e-12:
                # one lineage sits exactly at the merge point: identify nodes
                keep, tk = (na, ta) if ta <= tb else (nb, tb)
                other, to = (nb, tb) if ta <= tb else (na, ta)
                if to - s > 1e-12:
                    parents[other] = keep
                    lengths[other] = to - s
                group[b] = a
                cur[a] = (keep, float(s))
                continue
            nodes[nid] = ("merge", j, float(s))
            parents[na] = nid
            lengths[na] = ta - s
            parents[nb] = nid
            lengths[nb] = tb - s
            group[b] = a
            cur[a] = (nid, float(s))
            nid += 1
        root_id, t_root = cur[find(0)]
        floor = fld.t_lo
        if t_root > floor:
            nodes[nid] = ("root", 0, floor)
            parents[root_id] = nid
            lengths[root_id] = t_root - floor
            root_id, t_root = nid, floor
            nid += 1
        parents[root_id] = None
        tree = FiniteRTree(parents, lengths, root_id)
        # evaluation knots per edge from the walk of any leaf below it
        leaf_of = {}
        for v in tree.nodes():
            kind, idx, tv = nodes[v]
            if kind == "leaf":
                leaf_of[v] = idx
                p = tree.parent[v]
                while p is not None and p not in leaf_of:
                    leaf_of[p] = idx
                    p = tree.parent[p]
        knots = {}
        interp_gap = 0.0
        for v in tree.parent:
            if v == root_id:
                continue
            p = tree.parent[v]
            t_child = nodes[v][2]
            t_par = nodes[p][2]
            path = paths[leaf_of[v]]
            seg_t = [t_child]
            seg_x = [path.x_at(t_child)]
            for tt in path.times:
                if t_par < tt < t_child:
                    seg_t.append(float(tt))
                    seg_x.append(path.x_at(tt))
            seg_t.append(t_par)
            seg_x.append(path.x_at(t_par))
            us = t_child - np.array(seg_t)
            knots[v] = (us, np.array(seg_x))
            interp_gap = max(interp_gap, fld.delta)
        zeta = SpatialTree(tree, knots, t_root=floor, orient=BACKWARD)
        report = {"interpolation_gap_bound": fld.delta,
                  "interp_gap_checked": interp_gap <= fld.delta + 1e-12,
                  "node_meta": nodes}
        return zeta, report

    def rcpp_on_tree(self, zeta: SpatialTree, node_meta: dict,
                     knot_spacing: float = 0.05) -> BranchingMap:
        """Rescaled compensated dot count along root paths of the web tree:
        ``delta * (dots on the segment - 2 gamma * length)``."""
        fld = self.field
        tree = zeta.tree
        knots = {}
        for v in tree.parent:
            if v == tree.root:
                continue
            ln = tree.length[v]
            n = max(1, int(np.ceil(ln / knot_spacing)))
            us = np.linspace(0.0, ln, n + 1)
            vals = np.empty_like(us)
            for i, u in enumerate(us):
                z = tree.canon(TreeLocus(v, float(u)))
                vals[i] = self._rcpp_value(zeta, z)
            knots[v] = (us, vals)
        return BranchingMap(tree, knots)

    def _rcpp_value(self, zeta: SpatialTree, z: TreeLocus) -> float:
        fld = self.field
        tree = zeta.tree
        s_hi = zeta.eval_t(z)
        dots = 0
        # climb from z to the root, counting dots on each edge piece
        cur = z
        while True:
            if cur.edge == tree.root:
                break
            v = cur.edge
            t_top = zeta.eval_t(tree.canon(TreeLocus(v, 0.0)))
            t_bot = zeta.eval_t(tree.node_locus(tree.parent[v]))
            lo = t_bot
            hi = min(zeta.eval_t(cur), t_top)
            us, xs = zeta.x_knots[v]
            # walk pieces on this edge: constant site between stored knots
            for i in range(len(us) - 1):
                a = t_top - float(us[i + 1])
                b = t_top - float(us[i])
                a2, b2 = max(a, lo), min(b, hi)
                if a2 < b2:
                    site = int(round(xs[i] / fld.delta))
                    dots += fld.dots_between(site, a2, b2)
            cur = tree.node_locus(tree.parent[v])
        length = zeta.eval_t(z) - zeta.t_root
        return fld.delta * (dots - 2.0 * fld.gamma * length)


# ---------------------------------------------------------------------------
# height dynamics

@dataclass
class HeightField:
    """Heights on the window sites at a fixed time."""
    t: float
    delta: float
    k_lo: int
    values: np.ndarray     # per site, integer for raw heights

    def x(self):
        return (self.k_lo + np.arange(len(self.values))) * self.delta

    def rows(self):
        for x, h in zip(self.x(), self.values):
            yield self.t, float(x), float(h)


@dataclass
class BDTrajectory:
    field: EventField
    beta: float
    h0: np.ndarray
    event_times: np.ndarray
    event_sites: np.ndarray
    event_values: np.ndarray     # height of the site after the update
    skipped_boundary: int = 0

    def heights_at(self, t: float) -> HeightField:
        fld = self.field
        h = self.h0.astype(float).copy()
        idx = np.searchsorted(self.event_times, t, side="right")
        for i in range(idx):
            h[self.event_sites[i] - fld.k_lo] = self.event_values[i]
        return HeightField(t, fld.delta, fld.k_lo, h)


def simulate_beta_bd(fld: EventField, beta: float, h0) -> BDTrajectory:
    """Event-driven deposition dynamics on the field's window.

    ``beta = 0`` consumes the three streams as the three update cases
    (arrows copy the indicated neighbour, dots raise by one) -- the model
    whose backward-walk representation and rescaling are exact.  For
    ``0 < beta < inf`` every event of the merged streams acts as one ring
    of a single per-site clock and the update is drawn from the Gibbs
    weights ``exp(beta * y)`` over the three candidate heights; ``beta =
    inf`` takes the maximum with ties resolved toward the middle option,
    then the left.  Non-periodic boundary sites skip updates that need a
    missing neighbour (counted in the trajectory).
    """
    h0 = np.asarray(h0)
    if h0.shape != (fld.n_sites(),):
        raise ValueError("initial condition must cover the window sites")
    if beta < 0:
        raise ValueError("beta must be nonnegative (or inf)")
    gen = _rng.stream(fld.seed, _rng.TASK_BETA_BD, 0)
    h = h0.astype(np.int64).copy()
    ev_t, ev_k, ev_v = [], [], []
    skipped = 0

    def neighbors(k):
        kl, kr = k - 1, k + 1
        if fld.periodic is not None:
            kl, kr = fld.wrap(kl), fld.wrap(kr)
        return kl, kr

    for t, k, kind in fld.merged_events():
        kl, kr = neighbors(k)
        if fld.periodic is None and (kl < fld.k_lo or kr > fld.k_hi):
            skipped += 1
            continue
        i, il, ir = k - fld.k_lo, kl - fld.k_lo, kr - fld.k_lo
        if beta == 0:
            if kind == KIND_L:
                new = h[ir]
            elif kind == KIND_R:
                new = h[il]
            else:
                new = h[i] + 1
        else:
            opts = np.array([h[il], h[i] + 1, h[ir]])
            if np.isinf(beta):
                m = opts.max()
                new = opts[1] if opts[1] == m else (
                    opts[0] if opts[0] == m else opts[2])
            else:
                w = np.exp(beta * (opts - opts.max()))
                new = int(gen.choice(opts, p=w / w.sum()))
        h[i] = new
        ev_t.append(t)
        ev_k.append(k)
        ev_v.append(int(new))
    return BDTrajectory(fld, beta, h0, np.array(ev_t), np.array(ev_k),
                        np.array(ev_v), skipped)


def gibbs_weights(beta: float, options) -> np.ndarray:
    """P(pick option) under the exponential tilt; uniform at beta = 0."""
    opts = np.asarray(options, dtype=float)
    w = np.exp(beta * (opts - opts.max()))
    return w / w.sum()


def simulate_bd_max(fld: EventField, h0) -> BDTrajectory:
    """Literal maximum-rule deposition driven by the merged event clock."""
    return simulate_beta_bd(fld, np.inf, h0)


def rescale_height(traj: BDTrajectory, t: float) -> HeightField:
    """Recentred and rescaled height ``delta * (h(t) - 2 gamma (t - t_lo))``.

    Only defined for the ``beta = 0`` stream-split model, whose dot drift
    equals the compensator of the rescaled dot count.
    """
    if traj.beta != 0:
        raise ValueError("rescaling is specific to the beta = 0 model")
    fld = traj.field
    raw = traj.heights_at(t)
    drift = 2.0 * fld.gamma * (t - fld.t_lo)
    vals = fld.delta * (raw.values - drift)
    return HeightField(t, fld.delta, fld.k_lo, vals)


def bd_height_at(web: DiscreteWeb, h0_step: StepFunction, z) -> float:
    """Backward-walk evaluation of the rescaled height at z = (t, x).

    ``h0(foot) + delta * (dots met on [0, t] - 2 gamma t)`` with the start
    point snapped to the lattice cell floor(x / delta).
    """
    t, x = z
    fld = web.field
    if t < 0 or fld.t_lo > 0:
        raise ValueError("needs t >= 0 and a window reaching time 0")
    k = int(np.floor(x / fld.delta + 1e-12))
    path = web.backward_walk((t, k * fld.delta))
    dots = sum(fld.dots_between(site, lo, hi)
               for site, lo, hi in path.segments(0.0, t))
    foot = path.x_at(0.0)
    return float(h0_step(foot)) + fld.delta * (dots - 2.0 * fld.gamma * t)


def bd_increment_samples(delta: float, T: float, x1: float, x2: float,
                         n_rep: int, seed: int = 0,
                         h0: StepFunction | None = None,
                         workers: int = 1) -> np.ndarray:
    """Replicas of ``h(T, x1) - h(T, x2)`` of the rescaled model.

    Samples just the two backward walks and the dot counts over their
    private path segments (independent Poisson across the disjoint lattice
    pieces the walks occupy before meeting), which has the same law as the
    field-based evaluation; the compensators cancel in the difference.
    """
    out = _run_chunks("bd_pair_batch", seed, _rng.TASK_BD_PAIR, n_rep,
                      workers=workers, delta=float(delta), T=float(T),
                      x1=float(x1), x2=float(x2))
    inc = delta * (out["dots1"].astype(float) - out["dots2"].astype(float))
    if h0 is not None:
        inc = inc + np.asarray(h0(out["foot1"])) - np.asarray(h0(out["foot2"]))
    return inc


def with_window_doubling(fn, base_window, max_doublings: int = 6):
    """Re-run ``fn(window)`` with geometrically enlarged windows on
    truncation; raises the last TruncationError after the cap."""
    t_lo, t_hi, x_lo, x_hi = base_window
    last = None
    for i in range(max_doublings + 1):
        f = 2.0 ** i
        cx = 0.5 * (x_lo + x_hi)
        half = 0.5 * (x_hi - x_lo) * f
        window = (t_hi - (t_hi - t_lo) * f, t_hi, cx - half, cx + half)
        try:
            return fn(window)
        except TruncationError as exc:
            last = exc
    raise last
