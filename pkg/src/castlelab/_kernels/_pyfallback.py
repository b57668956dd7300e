"""Pure-numpy lane for the hot kernels.

Implements the same sampling schemes as the compiled lane (bridge-rule
merge detection, gap-adaptive stationary stepping, on-the-fly lattice
pairs), vectorised across replicas.  Live paths are kept compacted in the
leading columns of ``(n_rep, k)`` arrays; merge bookkeeping runs scalar on
the (rare) flagged rows.

Deterministic per stream, but randomness is consumed in a different order
than in the compiled lane, so the two lanes agree in law, not bitwise.
"""
from __future__ import annotations

import numpy as np

BRIDGE_CUTOFF = 40.0

LANE = "python"


def _merge_row(pos, lab, nlive, r, rowflag, rec, m_time, m_left, m_right,
               m_pos, n_merge):
    """Collapse flagged chains in row ``r`` (linear union, left to right)."""
    n = nlive[r]
    write = 0
    for j in range(n):
        if j > 0 and rowflag[j - 1]:
            nm = n_merge[r]
            m_time[r, nm] = rec
            m_left[r, nm] = lab[r, write - 1]
            m_right[r, nm] = lab[r, j]
            pos[r, write - 1] = 0.5 * (pos[r, write - 1] + pos[r, j])
            m_pos[r, nm] = pos[r, write - 1]
            n_merge[r] = nm + 1
        else:
            pos[r, write] = pos[r, j]
            lab[r, write] = lab[r, j]
            write += 1
    nlive[r] = write


def _insert_row(pos, lab, nlive, r, x, label):
    n = nlive[r]
    j = n
    while j > 0 and pos[r, j - 1] > x:
        pos[r, j] = pos[r, j - 1]
        lab[r, j] = lab[r, j - 1]
        j -= 1
    pos[r, j] = x
    lab[r, j] = label
    nlive[r] = n + 1


def _flag_matrix(gen, pregap, postgap, step, g_tol, pairmask):
    """Bridge-rule crossing flags for adjacent pairs (vectorised)."""
    certain = (postgap <= 0.0) | (postgap < g_tol)
    prod = pregap * postgap
    step_b = step if np.isscalar(step) else np.asarray(step)[:, None]
    with np.errstate(invalid="ignore"):
        feasible = ~certain & (prod < BRIDGE_CUTOFF * step_b) & pairmask
        flag = certain & pairmask
        if np.any(feasible):
            e = gen.standard_exponential(size=prod.shape)
            flag = flag | (feasible & (e > prod / step_b))
    return flag


def forest_fixed_batch(gen, x0, t0, floor_t, dt, n_rep):
    """See the compiled lane for the contract."""
    x0 = np.ascontiguousarray(x0, dtype=float)
    t0 = np.ascontiguousarray(t0, dtype=float)
    k = x0.shape[0]
    if k < 1:
        raise ValueError("need at least one leaf")
    if dt <= 0:
        raise ValueError("dt must be positive")
    mcap = max(k - 1, 1)
    m_time = np.full((n_rep, mcap), np.nan)
    m_left = np.full((n_rep, mcap), -1, dtype=np.int64)
    m_right = np.full((n_rep, mcap), -1, dtype=np.int64)
    m_pos = np.full((n_rep, mcap), np.nan)
    first_pos = np.full((n_rep, k), np.nan)
    final_label = np.full((n_rep, k), -1, dtype=np.int64)
    final_pos = np.full((n_rep, k), np.nan)
    n_merge = np.zeros(n_rep, dtype=np.int64)

    pos = np.zeros((n_rep, k))
    lab = np.zeros((n_rep, k), dtype=np.int64)
    nlive = np.zeros(n_rep, dtype=np.int64)

    bounds = np.unique(t0)[::-1]
    col = np.arange(k)

    for b_idx, t_hi in enumerate(bounds):
        if t_hi <= floor_t:
            break
        idx = np.nonzero(t0 == t_hi)[0]
        if b_idx == 0:
            # common case: all leaves activate at the top (already x-sorted)
            order = idx[np.argsort(x0[idx], kind="stable")]
            pos[:, : idx.size] = x0[order]
            lab[:, : idx.size] = order
            nlive[:] = idx.size
        else:
            for i in idx:
                for r in range(n_rep):
                    _insert_row(pos, lab, nlive, r, x0[i], i)
        t_next = floor_t
        if b_idx + 1 < len(bounds) and bounds[b_idx + 1] > floor_t:
            t_next = bounds[b_idx + 1]
        seg = t_hi - t_next
        n_full = int(seg / dt)
        rem = seg - n_full * dt
        steps = [dt] * n_full + ([rem] if rem > 1e-14 * (1.0 + seg) else [])
        s = t_hi
        single = np.nonzero(nlive == 1)[0]
        if single.size and seg > 0:
            pos[single, 0] += np.sqrt(seg) * gen.standard_normal(single.size)
        multi = np.nonzero(nlive > 1)[0]
        for step in steps:
            if multi.size == 0:
                break
            sq = np.sqrt(step)
            p = pos[multi]
            n_m = nlive[multi]
            pairmask = col[None, :-1] + 1 < n_m[:, None]
            livemask = col[None, :] < n_m[:, None]
            pregap = p[:, 1:] - p[:, :-1]
            p = p + np.where(livemask, sq * gen.standard_normal(p.shape), 0.0)
            postgap = p[:, 1:] - p[:, :-1]
            flag = _flag_matrix(gen, pregap, postgap, step, 0.0, pairmask)
            pos[multi] = p
            hit = np.nonzero(flag.any(axis=1))[0]
            if hit.size:
                rec = s - 0.5 * step
                for rr in hit:
                    r = multi[rr]
                    _merge_row(pos, lab, nlive, r, flag[rr], rec,
                               m_time, m_left, m_right, m_pos, n_merge)
                    if np.isnan(first_pos[r, 0]):
                        first_pos[r, : nlive[r]] = pos[r, : nlive[r]]
                done = multi[nlive[multi] == 1]
                if done.size:
                    # a single path cannot merge: jump straight to t_next
                    s_left = s - step - t_next
                    if s_left > 0:
                        pos[done, 0] += np.sqrt(s_left) * gen.standard_normal(done.size)
                    multi = multi[nlive[multi] > 1]
            s -= step
    # leaves sitting exactly on the floor join as static paths
    for i in np.nonzero(t0 <= floor_t)[0]:
        for r in range(n_rep):
            _insert_row(pos, lab, nlive, r, x0[i], i)
    for r in range(n_rep):
        n = nlive[r]
        final_label[r, :n] = lab[r, :n]
        final_pos[r, :n] = pos[r, :n]
    return dict(m_time=m_time, m_left=m_left, m_right=m_right, m_pos=m_pos,
                first_pos=first_pos, final_label=final_label,
                final_pos=final_pos, n_merge=n_merge)


def stationary_batch(gen, x0, n_rep, c_rel, g_tol_rel, max_steps):
    """See the compiled lane for the contract."""
    x0 = np.ascontiguousarray(x0, dtype=float)
    k = x0.shape[0]
    if k < 2:
        raise ValueError("need at least two paths")
    span = x0[-1] - x0[0]
    if span <= 0:
        raise ValueError("positions must be strictly increasing")
    g_tol = g_tol_rel * span

    m_el = np.full((n_rep, k - 1), np.nan)
    m_left = np.full((n_rep, k - 1), -1, dtype=np.int64)
    m_right = np.full((n_rep, k - 1), -1, dtype=np.int64)
    m_pos = np.full((n_rep, k - 1), np.nan)
    n_merge = np.zeros(n_rep, dtype=np.int64)

    pos = np.tile(x0, (n_rep, 1))
    lab = np.tile(np.arange(k, dtype=np.int64), (n_rep, 1))
    nlive = np.full(n_rep, k, dtype=np.int64)
    elapsed = np.zeros(n_rep)
    col = np.arange(k)

    active = np.arange(n_rep)
    steps = 0
    while active.size:
        p = pos[active]
        n_a = nlive[active]
        pairmask = col[None, :-1] + 1 < n_a[:, None]
        livemask = col[None, :] < n_a[:, None]
        pregap = np.where(pairmask, p[:, 1:] - p[:, :-1], np.inf)
        gmin = pregap.min(axis=1)
        dt = c_rel * gmin * gmin
        p = p + np.where(livemask, np.sqrt(dt)[:, None] * gen.standard_normal(p.shape), 0.0)
        postgap = p[:, 1:] - p[:, :-1]
        flag = _flag_matrix(gen, pregap, postgap, dt, g_tol, pairmask)
        pos[active] = p
        elapsed[active] += dt
        hit = np.nonzero(flag.any(axis=1))[0]
        if hit.size:
            for rr in hit:
                r = active[rr]
                _merge_row(pos, lab, nlive, r, flag[rr],
                           elapsed[r] - 0.5 * dt[rr],
                           m_el, m_left, m_right, m_pos, n_merge)
            active = active[nlive[active] > 1]
        steps += 1
        if steps >= max_steps:
            raise RuntimeError(f"stationary fallback exceeded {max_steps} steps")
    return dict(m_elapsed=m_el, m_left=m_left, m_right=m_right, m_pos=m_pos)


def periodic_tau_batch(gen, x0, L, n_rep, c_rel, g_tol_rel, max_steps):
    """See the compiled lane for the contract."""
    x0 = np.ascontiguousarray(x0, dtype=float)
    k = x0.shape[0]
    if k < 2:
        raise ValueError("need at least two paths")
    if L <= 0:
        raise ValueError("circumference must be positive")
    g_tol = g_tol_rel * L
    dt_cap = c_rel * (0.25 * L) ** 2

    tau = np.zeros(n_rep)
    m_el = np.full((n_rep, k - 1), np.nan)
    m_left = np.full((n_rep, k - 1), -1, dtype=np.int64)
    m_right = np.full((n_rep, k - 1), -1, dtype=np.int64)
    m_scratch = np.empty((n_rep, k - 1))
    n_merge = np.zeros(n_rep, dtype=np.int64)

    pos = np.tile(x0, (n_rep, 1))
    lab = np.tile(np.arange(k, dtype=np.int64), (n_rep, 1))
    nlive = np.full(n_rep, k, dtype=np.int64)
    elapsed = np.zeros(n_rep)
    col = np.arange(k)

    active = np.arange(n_rep)
    steps = 0
    while active.size:
        p = pos[active]
        n_a = nlive[active]
        livemask = col[None, :] < n_a[:, None]
        nxt = np.where(col[None, :] + 1 < n_a[:, None], col[None, :] + 1, 0)
        wrap = col[None, :] + 1 == n_a[:, None]
        p_next = np.take_along_axis(p, nxt, axis=1)
        pregap = np.where(livemask, p_next - p + np.where(wrap, L, 0.0), np.inf)
        gmin = pregap.min(axis=1)
        dt = np.minimum(c_rel * gmin * gmin, dt_cap)
        p = p + np.where(livemask, np.sqrt(dt)[:, None] * gen.standard_normal(p.shape), 0.0)
        p_next = np.take_along_axis(p, nxt, axis=1)
        postgap = np.where(livemask, p_next - p + np.where(wrap, L, 0.0), np.inf)
        flag = _flag_matrix(gen, pregap, postgap, dt, g_tol, livemask)
        pos[active] = p
        elapsed[active] += dt
        hit = np.nonzero(flag.any(axis=1))[0]
        for rr in hit:
            r = active[rr]
            n = nlive[r]
            rec = elapsed[r] - 0.5 * dt[rr]
            _merge_row(pos, lab, nlive, r, flag[rr], rec,
                       m_el, m_left, m_right, m_scratch, n_merge)
            write = nlive[r]
            if flag[rr, n - 1] and write > 1:
                nm = n_merge[r]
                la, lb = lab[r, 0], lab[r, write - 1]
                m_el[r, nm] = rec
                m_left[r, nm] = min(la, lb)
                m_right[r, nm] = max(la, lb)
                n_merge[r] = nm + 1
                pos[r, 0] = 0.5 * (pos[r, 0] + pos[r, write - 1] - L)
                lab[r, 0] = min(la, lb)
                nlive[r] = write - 1
            if nlive[r] == 1:
                tau[r] = m_el[r, n_merge[r] - 1]
        if hit.size:
            active = active[nlive[active] > 1]
        steps += 1
        if steps >= max_steps:
            raise RuntimeError(f"periodic fallback exceeded {max_steps} steps")
    return dict(tau=tau, m_elapsed=m_el, m_left=m_left, m_right=m_right)


def bd_pair_batch(gen, delta, T, x1, x2, n_rep):
    """See the compiled lane for the contract."""
    if delta <= 0 or T <= 0:
        raise ValueError("delta and T must be positive")
    gamma = 0.5 / delta**2
    jump_rate = 2.0 * gamma
    dot_rate = 2.0 * gamma

    a = np.full(n_rep, delta * round(x1 / delta))
    b = np.full(n_rep, delta * round(x2 / delta))
    s = np.full(n_rep, float(T))
    merge_time = np.full(n_rep, np.nan)

    active = np.nonzero(a != b)[0]
    while active.size:
        ds = gen.standard_exponential(active.size) / (2.0 * jump_rate)
        s[active] -= ds
        alive = s[active] > 0.0
        act = active[alive]
        if act.size:
            which = gen.random(act.size) < 0.5
            sign = np.where(gen.random(act.size) < 0.5, delta, -delta)
            a[act[which]] += sign[which]
            b[act[~which]] += sign[~which]
            met = act[a[act] == b[act]]
            merge_time[met] = s[met]
        active = act[a[act] != b[act]]

    merged = ~np.isnan(merge_time)
    priv = T - np.where(merged, merge_time, 0.0)
    dots1 = gen.poisson(dot_rate * priv).astype(np.int64)
    dots2 = gen.poisson(dot_rate * priv).astype(np.int64)
    if np.any(merged):
        n_jump = gen.poisson(jump_rate * merge_time[merged])
        disp = delta * (2.0 * gen.binomial(n_jump, 0.5) - n_jump)
        a[merged] += disp
        b[merged] = a[merged]
    return dict(merge_time=merge_time, dots1=dots1, dots2=dots2,
                foot1=a, foot2=b)
