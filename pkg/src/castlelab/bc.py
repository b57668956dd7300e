"""Exact finite-dimensional sampling of the Brownian castle.

The castle value at a space-time point is the initial condition at the
foot of its backward characteristic plus independent centred Gaussians
attached to the edges of the coalescence forest, with variance equal to
the edge's elapsed time.  Forests are sampled by the bridge-rule kernels;
conditional on a forest, joint values are Gaussian with covariance given
by shared ancestral path lengths and are drawn by batched Cholesky.

Modes: ``fixed`` runs the backward paths to the time-0 floor and reads the
initial condition there; ``stationary`` runs with no floor to full
coalescence and returns increments only (translation quotient);
``periodic`` does the same on a circle.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng as _rng
from .stepfn import StepFunction

STATIONARY_C_REL = 0.02     # step = c * (min gap)^2 in stationary mode
STATIONARY_G_TOL = 1e-6     # merge when a gap shrinks below g_tol * span
MAX_STEPS = 50_000_000


class TruncationError(RuntimeError):
    """A sampler ran out of its configured horizon or step budget."""


@dataclass
class BCQuery:
    """Evaluation points plus initial condition and mode."""
    points: list                      # [(t, x)] with t >= 0
    h0: StepFunction | None = None
    mode: str = "fixed"               # fixed | stationary | periodic
    circumference: float | None = None

    def __post_init__(self):
        if self.mode not in ("fixed", "stationary", "periodic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        pts = sorted(self.points, key=lambda p: (p[0], p[1]))
        for (t1, x1), (t2, x2) in zip(pts, pts[1:]):
            if t1 == t2 and x1 == x2:
                raise ValueError("query points must be distinct")
            if t1 == t2 and x2 < x1:
                raise ValueError("points must be x-sorted within equal times")
        if self.mode == "periodic" and not self.circumference:
            raise ValueError("periodic mode needs a circumference")
        if self.mode == "fixed" and any(t < 0 for t, _ in self.points):
            raise ValueError("fixed-ic mode needs t >= 0")


@dataclass
class CoalescenceForest:
    """Merge structure of coalescing backward paths.

    Leaves are indexed in input order; merge records hold the two group
    leader labels (smallest leaf index of each group).  In fixed mode every
    group ends in a root at the floor with a recorded position; stationary
    and periodic forests coalesce to a single open root.
    """
    leaf_times: np.ndarray
    leaf_xs: np.ndarray
    merge_times: np.ndarray           # absolute times (fixed) or -elapsed
    merge_left: np.ndarray
    merge_right: np.ndarray
    merge_pos: np.ndarray
    root_labels: np.ndarray | None = None   # per leaf: group leader at floor
    root_pos: np.ndarray | None = None      # per leaf: foot position
    mode: str = "fixed"
    floor: float = 0.0

    @property
    def k(self):
        return self.leaf_times.size

    def pair_merge_times(self) -> np.ndarray:
        """Symmetric matrix of group merge times (NaN when never merged)."""
        k = self.k
        s = np.full((k, k), np.nan)
        group = {i: {i} for i in range(k)}
        for t, la, lb in zip(self.merge_times, self.merge_left,
                             self.merge_right):
            a, b = group[la], group[lb]
            for i in a:
                for j in b:
                    s[i, j] = s[j, i] = t
            group[la] = a | b
        np.fill_diagonal(s, self.leaf_times)
        return s

    def edges(self):
        """(child_node, parent_node, length) triples; node ids are
        ("leaf", i), ("merge", m) and ("root", leader)."""
        out = []
        cur = {i: (("leaf", i), self.leaf_times[i]) for i in range(self.k)}
        for m, (t, la, lb) in enumerate(zip(self.merge_times,
                                            self.merge_left,
                                            self.merge_right)):
            node = ("merge", m)
            for lab in (la, lb):
                child, tc = cur[lab]
                out.append((child, node, tc - t))
            cur[la] = (node, t)
            del cur[lb]
        if self.mode == "fixed":
            for lab, (child, tc) in cur.items():
                out.append((child, ("root", lab), tc - self.floor))
        return out

    def covariance(self) -> np.ndarray:
        """Conditional covariance of leaf values given the forest.

        Entries are shared ancestral path lengths: from the floor in fixed
        mode (zero across distinct roots), from the final merge point in
        stationary mode.
        """
        s = self.pair_merge_times()
        if self.mode == "fixed":
            return np.where(np.isnan(s), 0.0, np.maximum(s - self.floor, 0.0))
        t_final = np.nanmin(s) if self.k > 1 else 0.0
        return s - t_final


def _kernel_chunk(args):
    name, seed, task, chunk_idx, size, kw = args
    gen = _rng.stream(seed, task, chunk_idx)
    fn = getattr(_kernels, name)
    return fn(gen, n_rep=size, **kw)


def _run_chunks(name: str, seed: int, task: int, n_rep: int, workers: int = 1,
                **kw) -> dict:
    jobs = [(name, seed, task, idx, size, kw)
            for idx, size in _rng.chunked(n_rep)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_kernel_chunk, jobs))
    else:
        parts = [_kernel_chunk(j) for j in jobs]
    return {k: np.concatenate([p[k] for p in parts], axis=0)
            for k in parts[0]}


# ---------------------------------------------------------------------------
# forest sampling

def _forest_from_fixed(out, r, t0, x0, floor):
    nm = int(out["n_merge"][r])
    labels = out["final_label"][r]
    pos = out["final_pos"][r]
    k = len(x0)
    root_label = np.empty(k, dtype=np.int64)
    root_pos = np.empty(k)
    leader = {int(l): (int(l), float(p)) for l, p in zip(labels, pos)
              if l >= 0}
    group = {i: i for i in range(k)}
    for la, lb in zip(out["m_left"][r][:nm], out["m_right"][r][:nm]):
        group[int(lb)] = int(la)

    def find(i):
        while group[i] != i:
            i = group[i]
        return i
    for i in range(k):
        g = find(i)
        root_label[i] = g
        root_pos[i] = leader[g][1]
    return CoalescenceForest(
        leaf_times=np.asarray(t0, dtype=float),
        leaf_xs=np.asarray(x0, dtype=float),
        merge_times=out["m_time"][r][:nm].copy(),
        merge_left=out["m_left"][r][:nm].copy(),
        merge_right=out["m_right"][r][:nm].copy(),
        merge_pos=out["m_pos"][r][:nm].copy(),
        root_labels=root_label, root_pos=root_pos, mode="fixed", floor=floor)


def sample_coalescing_forest(query: BCQuery, dt: float = 1e-4, seed: int = 0,
                             floor: float = 0.0) -> CoalescenceForest:
    """One forest realisation for the query.

    Fixed mode uses the constant-step kernel with the bridge crossing rule;
    stationary and periodic modes use the gap-adaptive kernel (step
    proportional to the squared minimal gap), which resolves the merge time
    to the local diffusive scale at any depth.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    pts = sorted(query.points, key=lambda p: (-p[0], p[1]))
    t0 = np.array([p[0] for p in pts])
    x0 = np.array([p[1] for p in pts])
    if query.mode == "fixed":
        out = _run_chunks("forest_fixed_batch", seed, _rng.TASK_FOREST, 1,
                          x0=x0, t0=t0, floor_t=floor, dt=dt)
        return _forest_from_fixed(out, 0, t0, x0, floor)
    if query.mode == "stationary":
        if np.any(t0 != t0[0]):
            raise ValueError("stationary queries sit at a common time")
        xs = np.sort(x0)
        out = _stationary_records(xs, 1, seed)
        return CoalescenceForest(
            leaf_times=np.zeros_like(xs), leaf_xs=xs,
            merge_times=-out["m_elapsed"][0], merge_left=out["m_left"][0],
            merge_right=out["m_right"][0], merge_pos=out["m_pos"][0],
            mode="stationary")
    # periodic
    L = float(query.circumference)
    xs = np.sort(np.mod(x0, L))
    out = _run_chunks("periodic_tau_batch", seed, _rng.TASK_PERIODIC, 1,
                      x0=xs, L=L, c_rel=STATIONARY_C_REL,
                      g_tol_rel=STATIONARY_G_TOL, max_steps=MAX_STEPS)
    return CoalescenceForest(
        leaf_times=np.zeros_like(xs), leaf_xs=xs,
        merge_times=-out["m_elapsed"][0], merge_left=out["m_left"][0],
        merge_right=out["m_right"][0],
        merge_pos=np.full(xs.size - 1, np.nan), mode="periodic")


def _stationary_records(xs, n_rep, seed, workers: int = 1):
    try:
        return _run_chunks("stationary_batch", seed, _rng.TASK_STATIONARY,
                           n_rep, workers=workers, x0=np.asarray(xs, float),
                           c_rel=STATIONARY_C_REL,
                           g_tol_rel=STATIONARY_G_TOL, max_steps=MAX_STEPS)
    except RuntimeError as exc:
        raise TruncationError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Gaussian value assignment

def evaluate_bc(forest: CoalescenceForest, h0: StepFunction | None,
                seed: int = 0, rng: np.random.Generator | None = None):
    """Leaf values: initial condition at the foot plus edge Gaussians."""
    gen = rng if rng is not None else _rng.stream(seed, _rng.TASK_BC_EDGES, 0)
    if forest.mode == "fixed":
        if h0 is None:
            raise ValueError("fixed-ic evaluation needs an initial condition")
        base = h0(forest.root_pos)
    else:
        base = np.zeros(forest.k)
    cov = forest.covariance()
    jitter = 1e-12 * max(1.0, float(np.max(np.abs(cov))))
    L = np.linalg.cholesky(cov + jitter * np.eye(forest.k))
    return np.asarray(base) + L @ gen.standard_normal(forest.k)


def _batch_values_stationary(m_elapsed, m_left, m_right, k, gen):
    """Joint leaf values (up to a common shift) for stationary records."""
    n = m_elapsed.shape[0]
    s = np.zeros((n, k, k))
    for r in range(n):
        group = {i: {i} for i in range(k)}
        for t, la, lb in zip(m_elapsed[r], m_left[r], m_right[r]):
            a, b = group[int(la)], group[int(lb)]
            for i in a:
                for j in b:
                    s[r, i, j] = s[r, j, i] = t
            group[int(la)] = a | b
    t_final = s.max(axis=(1, 2))
    cov = t_final[:, None, None] - s
    cov += 1e-12 * np.eye(k)[None, :, :] * np.maximum(t_final, 1.0)[:, None, None]
    L = np.linalg.cholesky(cov)
    z = gen.standard_normal((n, k, 1))
    return (L @ z)[:, :, 0]


def stationary_increments(x_points, seed: int = 0) -> np.ndarray:
    """Increments H(x_i) - H(x_1) of the stationary interface (one draw)."""
    return stationary_increment_batch(x_points, 1, seed)[0]


def stationary_increment_batch(x_points, n_rep: int, seed: int = 0,
                               workers: int = 1) -> np.ndarray:
    """(n_rep, k-1) array of increments against the leftmost point."""
    xs = np.asarray(sorted(x_points), dtype=float)
    if xs.size < 2:
        raise ValueError("need at least two points")
    rec = _stationary_records(xs, n_rep, seed, workers)
    k = xs.size
    if k == 2:
        tau = rec["m_elapsed"][:, 0]
        gen = _rng.stream(seed, _rng.TASK_BC_EDGES, 0)
        z = gen.standard_normal(n_rep)
        return (np.sqrt(2.0 * tau) * z)[:, None]
    gen = _rng.stream(seed, _rng.TASK_BC_EDGES, 0)
    vals = _batch_values_stationary(rec["m_elapsed"], rec["m_left"],
                                    rec["m_right"], k, gen)
    return vals[:, 1:] - vals[:, :1]


def pair_merge_time_batch(gap: float, n_rep: int, seed: int = 0,
                          workers: int = 1) -> np.ndarray:
    """Coalescence times of two stationary paths at the given gap."""
    rec = _stationary_records(np.array([0.0, float(gap)]), n_rep, seed, workers)
    return rec["m_elapsed"][:, 0]


def fixed_forest_batch(x0, t0, floor, dt, n_rep, seed, workers: int = 1) -> dict:
    """Raw kernel records for repeated fixed-floor forests."""
    return _run_chunks("forest_fixed_batch", seed, _rng.TASK_FOREST, n_rep,
                       workers=workers, x0=np.asarray(x0, float),
                       t0=np.asarray(t0, float), floor_t=floor, dt=dt)


# ---------------------------------------------------------------------------
# slices and the coalescing point set

def bc_slice(t: float, interval, n: int, h0: StepFunction, seed: int = 0,
             dt: float | None = None, refinements: int = 0,
             cells: bool = False):
    """Piecewise-constant slice approximant of the castle at time t.

    Backward paths start from ``n`` grid points (the finest level when
    ``refinements > 0``); each grid point carries its sampled value and the
    output is constant between grid points (right limit at jumps).  Nested
    coarser slices are leaf subsets of the same forest with the same edge
    Gaussians, so a refinement changes the function only by inserting
    jumps.

    ``cells=True`` additionally collapses each slice to the coalescing
    point set refinement: leaves sharing a time-0 ancestor form a cell and
    the cell takes the value of its leftmost leaf, so the number of
    distinct values is bounded by the number of distinct ancestors.

    Returns the finest StepFunction, or the list of nested slices (coarsest
    first) when refinements are requested.
    """
    if t <= 0:
        raise ValueError("slice time must be positive")
    lo, hi = interval
    xs = np.linspace(lo, hi, n, endpoint=False) + (hi - lo) / (2 * n)
    if dt is None:
        spacing = (hi - lo) / n
        dt = 0.25 * spacing * spacing
    out = fixed_forest_batch(xs, np.full(n, float(t)), 0.0, dt, 1, seed)
    forest = _forest_from_fixed(out, 0, np.full(n, float(t)), xs, 0.0)
    values = evaluate_bc(forest, h0, seed=seed)
    levels = []
    for level in range(refinements + 1):
        stride = 2 ** (refinements - level)
        idx = np.arange(0, n, stride)
        if cells:
            levels.append(_slice_from_groups(xs[idx], values[idx],
                                             forest.root_labels[idx]))
        else:
            levels.append(StepFunction(xs[idx], values[idx],
                                       y_before=float(values[idx][0])))
    return levels if refinements else levels[0]


def _slice_from_groups(xs, values, groups):
    keep = np.concatenate([[True], groups[1:] != groups[:-1]])
    return StepFunction(xs[keep], values[keep], y_before=float(values[0]))


def coalescing_point_count(t: float, eps_list, R: float, n: int,
                           seed: int = 0, n_rep: int = 64,
                           workers: int = 1) -> np.ndarray:
    """eta_hat(t, eps): distinct ancestries at time t - eps of n grid points
    on [-R, R].  One run per replica serves every requested depth (counts
    are read off the merge-time records), which realises the monotone
    coupling exactly.
    """
    eps = np.asarray(eps_list, dtype=float)
    xs = np.linspace(-R, R, n)
    spacing = 2 * R / (n - 1)
    dt = 0.25 * spacing * spacing
    out = fixed_forest_batch(xs, np.full(n, float(t)), t - float(eps.max()),
                             dt, n_rep, seed, workers)
    m_time = out["m_time"]
    counts = np.empty((n_rep, eps.size), dtype=np.int64)
    for j, e in enumerate(eps):
        counts[:, j] = n - np.sum(np.nan_to_num(m_time, nan=-np.inf)
                                  >= t - e, axis=1)
    return counts


def nested_subset_counts(m_time, m_left, m_right, n_leaves, leaf_subset,
                         t, eps):
    """Ancestry count of a leaf subset at depth eps from one merge record."""
    group = {i: i for i in range(n_leaves)}

    def find(i):
        while group[i] != i:
            i = group[i]
        return i
    for s, la, lb in zip(m_time, m_left, m_right):
        if np.isnan(s) or s < t - eps:
            continue
        group[find(int(lb))] = find(int(la))
    return len({find(int(i)) for i in leaf_subset})


def periodic_coalescence_time(L: float, n: int, seed: int = 0,
                              n_rep: int = 1, workers: int = 1) -> np.ndarray:
    """Full-coalescence times of an n-point grid on a circle of length L."""
    if n < 2:
        return np.zeros(n_rep)
    xs = np.arange(n) * (L / n)
    try:
        out = _run_chunks("periodic_tau_batch", seed, _rng.TASK_PERIODIC,
                          n_rep, workers=workers, x0=xs, L=float(L),
                          c_rel=STATIONARY_C_REL,
                          g_tol_rel=STATIONARY_G_TOL, max_steps=MAX_STEPS)
    except RuntimeError as exc:
        raise TruncationError(str(exc)) from exc
    return out["tau"]


# ---------------------------------------------------------------------------
# p-variation

def p_variation_estimate(f, p: float, partitions: str = "exact") -> float:
    """p-variation of a step function.

    ``exact`` enumerates jumps and maximises over consecutive groupings by
    dynamic programming (exact for piecewise-constant inputs); ``greedy``
    and ``dyadic`` give certified lower bounds for sampled inputs.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    if isinstance(f, StepFunction):
        ys = np.concatenate([[f.y_before], f.values])
    else:
        ys = np.asarray(f, dtype=float)
    if partitions == "exact":
        return _pvar_dp(ys, p)
    if partitions == "greedy":
        return _pvar_greedy(ys, p)
    if partitions == "dyadic":
        best = 0.0
        m = len(ys)
        step = 1
        while step < m:
            sub = ys[::step]
            best = max(best, float(np.sum(np.abs(np.diff(sub)) ** p)))
            step *= 2
        return best
    raise ValueError(f"unknown partition scheme {partitions!r}")


def _pvar_dp(ys, p):
    """max over partitions of sum |increment|^p (returns the p-th power sum)."""
    dif = np.diff(ys)
    keep = dif != 0.0
    if not np.any(keep):
        return 0.0
    pre = np.concatenate([[0.0], np.cumsum(dif[keep])])
    m = pre.size
    best = np.zeros(m)
    for i in range(1, m):
        best[i] = np.max(best[:i] + np.abs(pre[i] - pre[:i]) ** p)
    return float(best[-1])


def _pvar_greedy(ys, p):
    """Monotone-run grouping: a lower bound on the DP value."""
    dif = np.diff(ys)
    dif = dif[dif != 0.0]
    if dif.size == 0:
        return 0.0
    runs = []
    acc = dif[0]
    for d in dif[1:]:
        if np.sign(d) == np.sign(acc):
            acc += d
        else:
            runs.append(acc)
            acc = d
    runs.append(acc)
    return float(np.sum(np.abs(runs) ** p))
