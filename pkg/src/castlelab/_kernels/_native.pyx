# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: coalescing Brownian paths and lattice walk pairs.

All samplers use the Brownian-bridge crossing rule for merge detection: an
adjacent pair with positive gap ``a`` before a step of length ``dt`` and
positive gap ``b`` after it has crossed within the step with probability
``exp(-a*b/dt)`` (difference of two independent standard paths, variance 2
per unit time).  A non-positive ``b`` is a certain crossing.  The test is
skipped when ``a*b/dt > 40``: the probability is then below 2^-53 and can
never fire, so no randomness is consumed.

The numpy lane in ``_pyfallback`` implements the same schemes; each lane is
deterministic for a given stream but the two lanes consume randomness in
different orders and are not bit-identical.
"""
import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport sqrt
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_poisson,
    random_standard_exponential,
    random_standard_normal,
)

cnp.import_array()

DEF BRIDGE_CUTOFF = 40.0

LANE = "native"


cdef inline bitgen_t *_bitgen(gen) except NULL:
    return <bitgen_t *> PyCapsule_GetPointer(gen.bit_generator.capsule, "BitGenerator")


cdef inline double _unif(bitgen_t *bg) noexcept nogil:
    return bg.next_double(bg.state)


cdef Py_ssize_t _flag_pairs(double *pos, double *pregap, signed char *flag,
                            Py_ssize_t nlive, double step, double g_tol,
                            bitgen_t *bg) noexcept nogil:
    """Set flag[j]=1 when pair (j, j+1) crossed during the step."""
    cdef Py_ssize_t j, n_flag = 0
    cdef double a, b
    for j in range(nlive - 1):
        a = pregap[j]
        b = pos[j + 1] - pos[j]
        flag[j] = 0
        if b <= 0.0 or b < g_tol:
            flag[j] = 1
        elif a * b < BRIDGE_CUTOFF * step:
            if random_standard_exponential(bg) > a * b / step:
                flag[j] = 1
        if flag[j]:
            n_flag += 1
    return n_flag


cdef Py_ssize_t _union_pairs(double *pos, long *lab, signed char *flag,
                             Py_ssize_t nlive, double t_rec,
                             double *m_time, long *m_left, long *m_right,
                             double *m_pos, Py_ssize_t *n_merge) noexcept nogil:
    """Collapse flagged chains left to right; returns new live count."""
    cdef Py_ssize_t j, write = 0
    cdef Py_ssize_t nm = n_merge[0]
    for j in range(nlive):
        if j > 0 and flag[j - 1]:
            m_time[nm] = t_rec
            m_left[nm] = lab[write - 1]
            m_right[nm] = lab[j]
            pos[write - 1] = 0.5 * (pos[write - 1] + pos[j])
            m_pos[nm] = pos[write - 1]
            nm += 1
        else:
            pos[write] = pos[j]
            lab[write] = lab[j]
            write += 1
    n_merge[0] = nm
    return write


cdef Py_ssize_t _insert_leaf(double *pos, long *lab, Py_ssize_t nlive,
                             double x, long label) noexcept nogil:
    """Insert a newly activated leaf keeping spatial order."""
    cdef Py_ssize_t j = nlive
    while j > 0 and pos[j - 1] > x:
        pos[j] = pos[j - 1]
        lab[j] = lab[j - 1]
        j -= 1
    pos[j] = x
    lab[j] = label
    return nlive + 1


def forest_fixed_batch(gen, double[::1] x0, double[::1] t0, double floor_t,
                       double dt, Py_ssize_t n_rep):
    """Coalescing backward paths from leaves ``(t0[i], x0[i])`` to a floor.

    Fixed step ``dt``; steps are shortened to land exactly on leaf
    activation times and on the floor.  Leaves must be sorted by position
    within equal times.  Merge times are recorded at step midpoints.

    Returns a dict of per-replica arrays:
      m_time/m_left/m_right/m_pos : (n_rep, k-1) merge records (NaN/-1 pad)
      first_pos : (n_rep, k) live positions right after the first merge step
      final_label/final_pos : (n_rep, k) live groups at the floor
      n_merge : (n_rep,)
    """
    cdef Py_ssize_t k = x0.shape[0]
    if k < 1:
        raise ValueError("need at least one leaf")
    if dt <= 0:
        raise ValueError("dt must be positive")
    cdef bitgen_t *bg = _bitgen(gen)

    cdef Py_ssize_t mcap = k - 1 if k > 1 else 1
    m_time_a = np.full((n_rep, mcap), np.nan)
    m_left_a = np.full((n_rep, mcap), -1, dtype=np.int64)
    m_right_a = np.full((n_rep, mcap), -1, dtype=np.int64)
    m_pos_a = np.full((n_rep, mcap), np.nan)
    first_pos_a = np.full((n_rep, k), np.nan)
    final_label_a = np.full((n_rep, k), -1, dtype=np.int64)
    final_pos_a = np.full((n_rep, k), np.nan)
    n_merge_a = np.zeros(n_rep, dtype=np.int64)

    cdef double[:, ::1] m_time = m_time_a
    cdef long[:, ::1] m_left = m_left_a
    cdef long[:, ::1] m_right = m_right_a
    cdef double[:, ::1] m_pos = m_pos_a
    cdef double[:, ::1] first_pos = first_pos_a
    cdef long[:, ::1] final_label = final_label_a
    cdef double[:, ::1] final_pos = final_pos_a
    cdef long[::1] n_merge = n_merge_a

    # segment boundaries: distinct leaf times descending, then the floor
    t0_arr = np.asarray(t0)
    bounds_a = np.unique(t0_arr)[::-1].copy()
    cdef double[::1] bounds = bounds_a
    cdef Py_ssize_t n_bound = bounds_a.shape[0]

    pos_a = np.empty(k)
    lab_a = np.empty(k, dtype=np.int64)
    gap_a = np.empty(max(k, 2))
    flag_a = np.zeros(max(k, 2), dtype=np.int8)
    cdef double[::1] pos = pos_a
    cdef long[::1] lab = lab_a
    cdef double[::1] gap = gap_a
    cdef signed char[::1] flag = flag_a

    cdef Py_ssize_t r, i, j, b_idx, nlive, nm, n_full, istep
    cdef double s, seg, rem, sq, t_next, step
    cdef bint first_done

    for r in range(n_rep):
        nlive = 0
        nm = 0
        first_done = 0
        for b_idx in range(n_bound):
            s = bounds[b_idx]
            if s <= floor_t:
                break
            for i in range(k):
                if t0[i] == s:
                    nlive = _insert_leaf(&pos[0], &lab[0], nlive, x0[i], i)
            t_next = floor_t
            if b_idx + 1 < n_bound and bounds[b_idx + 1] > floor_t:
                t_next = bounds[b_idx + 1]
            seg = s - t_next
            if nlive == 1 and seg > 0.0:
                # a single path cannot merge: one exact Gaussian jump
                pos[0] += sqrt(seg) * random_standard_normal(bg)
                continue
            n_full = <Py_ssize_t> (seg / dt)
            rem = seg - n_full * dt
            for istep in range(n_full + 1):
                step = dt if istep < n_full else rem
                if step <= 1e-14 * (1.0 + seg) or nlive == 0:
                    s -= step
                    continue
                sq = sqrt(step)
                for j in range(nlive - 1):
                    gap[j] = pos[j + 1] - pos[j]
                for j in range(nlive):
                    pos[j] += sq * random_standard_normal(bg)
                if nlive > 1 and _flag_pairs(&pos[0], &gap[0], &flag[0], nlive,
                                             step, 0.0, bg) > 0:
                    nlive = _union_pairs(&pos[0], &lab[0], &flag[0], nlive,
                                         s - 0.5 * step,
                                         &m_time[r, 0], &m_left[r, 0],
                                         &m_right[r, 0], &m_pos[r, 0], &nm)
                    if not first_done:
                        first_done = 1
                        for j in range(nlive):
                            first_pos[r, j] = pos[j]
                s -= step
                if nlive == 1 and s > t_next:
                    pos[0] += sqrt(s - t_next) * random_standard_normal(bg)
                    s = t_next
                    break
        # leaves sitting exactly on the floor join as static paths
        for i in range(k):
            if t0[i] <= floor_t:
                nlive = _insert_leaf(&pos[0], &lab[0], nlive, x0[i], i)
        for j in range(nlive):
            final_label[r, j] = lab[j]
            final_pos[r, j] = pos[j]
        n_merge[r] = nm

    return dict(m_time=m_time_a, m_left=m_left_a, m_right=m_right_a,
                m_pos=m_pos_a, first_pos=first_pos_a,
                final_label=final_label_a, final_pos=final_pos_a,
                n_merge=n_merge_a)


def stationary_batch(gen, double[::1] x0, Py_ssize_t n_rep, double c_rel,
                     double g_tol_rel, long max_steps):
    """Coalescing paths started at time 0, run to full coalescence.

    No floor: the step adapts to the smallest adjacent gap,
    ``dt = c_rel * gmin**2``, so the walk resolves every gap relative to its
    own diffusive scale and the total step count stays logarithmic in
    ``g_tol_rel``.  The bridge rule is exact at every step; a pair whose gap
    falls below ``g_tol_rel * span`` merges (the remaining true coalescence
    time is O(gap^2)).

    Returns merge records in elapsed time as (n_rep, k-1) arrays.
    """
    cdef Py_ssize_t k = x0.shape[0]
    if k < 2:
        raise ValueError("need at least two paths")
    cdef bitgen_t *bg = _bitgen(gen)
    cdef double span = x0[k - 1] - x0[0]
    if span <= 0:
        raise ValueError("positions must be strictly increasing")
    cdef double g_tol = g_tol_rel * span

    m_el_a = np.full((n_rep, k - 1), np.nan)
    m_left_a = np.full((n_rep, k - 1), -1, dtype=np.int64)
    m_right_a = np.full((n_rep, k - 1), -1, dtype=np.int64)
    m_pos_a = np.full((n_rep, k - 1), np.nan)
    cdef double[:, ::1] m_el = m_el_a
    cdef long[:, ::1] m_left = m_left_a
    cdef long[:, ::1] m_right = m_right_a
    cdef double[:, ::1] m_pos = m_pos_a

    pos_a = np.empty(k)
    lab_a = np.empty(k, dtype=np.int64)
    gap_a = np.empty(max(k, 2))
    flag_a = np.zeros(max(k, 2), dtype=np.int8)
    cdef double[::1] pos = pos_a
    cdef long[::1] lab = lab_a
    cdef double[::1] gap = gap_a
    cdef signed char[::1] flag = flag_a

    cdef Py_ssize_t r, j, nlive, nm
    cdef double u, dt, sq, gmin
    cdef long steps

    for r in range(n_rep):
        for j in range(k):
            pos[j] = x0[j]
            lab[j] = j
        nlive = k
        nm = 0
        u = 0.0
        steps = 0
        while nlive > 1:
            gmin = pos[1] - pos[0]
            for j in range(1, nlive - 1):
                if pos[j + 1] - pos[j] < gmin:
                    gmin = pos[j + 1] - pos[j]
            dt = c_rel * gmin * gmin
            sq = sqrt(dt)
            for j in range(nlive - 1):
                gap[j] = pos[j + 1] - pos[j]
            for j in range(nlive):
                pos[j] += sq * random_standard_normal(bg)
            u += dt
            if _flag_pairs(&pos[0], &gap[0], &flag[0], nlive, dt, g_tol, bg) > 0:
                nlive = _union_pairs(&pos[0], &lab[0], &flag[0], nlive,
                                     u - 0.5 * dt,
                                     &m_el[r, 0], &m_left[r, 0],
                                     &m_right[r, 0], &m_pos[r, 0], &nm)
            steps += 1
            if steps >= max_steps:
                raise RuntimeError(
                    f"stationary kernel exceeded {max_steps} steps in replica {r}")
    return dict(m_elapsed=m_el_a, m_left=m_left_a, m_right=m_right_a,
                m_pos=m_pos_a)


def periodic_tau_batch(gen, double[::1] x0, double L, Py_ssize_t n_rep,
                       double c_rel, double g_tol_rel, long max_steps):
    """Full-coalescence time of paths on a circle of circumference ``L``.

    Adjacency is circular: ``n`` live paths bound ``n`` arcs and a merge
    fires when any arc closes (bridge rule per arc; with two paths left the
    two arcs are the two crossing channels of the same pair).  The step is
    ``c_rel * min(arc)^2`` capped at ``c_rel * (L/4)^2``.
    """
    cdef Py_ssize_t k = x0.shape[0]
    if k < 2:
        raise ValueError("need at least two paths")
    if L <= 0:
        raise ValueError("circumference must be positive")
    cdef bitgen_t *bg = _bitgen(gen)
    cdef double g_tol = g_tol_rel * L
    cdef double dt_cap = c_rel * (0.25 * L) * (0.25 * L)

    tau_a = np.empty(n_rep)
    m_el_a = np.full((n_rep, k - 1), np.nan)
    m_left_a = np.full((n_rep, k - 1), -1, dtype=np.int64)
    m_right_a = np.full((n_rep, k - 1), -1, dtype=np.int64)
    cdef double[::1] tau = tau_a
    cdef double[:, ::1] m_el = m_el_a
    cdef long[:, ::1] m_left = m_left_a
    cdef long[:, ::1] m_right = m_right_a

    pos_a = np.empty(k)
    lab_a = np.empty(k, dtype=np.int64)
    gap_a = np.empty(k)
    flag_a = np.zeros(k, dtype=np.int8)
    cdef double[::1] pos = pos_a
    cdef long[::1] lab = lab_a
    cdef double[::1] gap = gap_a
    cdef signed char[::1] flag = flag_a

    cdef Py_ssize_t r, j, jn, nlive, nm, write
    cdef double u, dt, sq, gmin, b
    cdef long steps, la, lb

    for r in range(n_rep):
        for j in range(k):
            pos[j] = x0[j]
            lab[j] = j
        nlive = k
        nm = 0
        u = 0.0
        steps = 0
        while nlive > 1:
            gmin = L
            for j in range(nlive):
                jn = j + 1 if j + 1 < nlive else 0
                b = pos[jn] - pos[j]
                if jn == 0:
                    b += L
                gap[j] = b
                if b < gmin:
                    gmin = b
            dt = c_rel * gmin * gmin
            if dt > dt_cap:
                dt = dt_cap
            sq = sqrt(dt)
            for j in range(nlive):
                pos[j] += sq * random_standard_normal(bg)
            u += dt
            # flag arcs (arc j joins live slots j and (j+1) mod nlive)
            for j in range(nlive):
                jn = j + 1 if j + 1 < nlive else 0
                b = pos[jn] - pos[j]
                if jn == 0:
                    b += L
                flag[j] = 0
                if b <= 0.0 or b < g_tol:
                    flag[j] = 1
                elif gap[j] * b < BRIDGE_CUTOFF * dt:
                    if random_standard_exponential(bg) > gap[j] * b / dt:
                        flag[j] = 1
            # linear unions over arcs 0..nlive-2
            write = 0
            for j in range(nlive):
                if j > 0 and flag[j - 1]:
                    m_el[r, nm] = u - 0.5 * dt
                    m_left[r, nm] = lab[write - 1]
                    m_right[r, nm] = lab[j]
                    nm += 1
                    pos[write - 1] = 0.5 * (pos[write - 1] + pos[j])
                else:
                    pos[write] = pos[j]
                    lab[write] = lab[j]
                    write += 1
            # wrap arc joins the last live block with the first
            if flag[nlive - 1] and write > 1:
                la = lab[0]
                lb = lab[write - 1]
                m_el[r, nm] = u - 0.5 * dt
                m_left[r, nm] = la if la < lb else lb
                m_right[r, nm] = lb if la < lb else la
                nm += 1
                pos[0] = 0.5 * (pos[0] + pos[write - 1] - L)
                if lb < la:
                    lab[0] = lb
                write -= 1
            nlive = write
            steps += 1
            if steps >= max_steps:
                raise RuntimeError(
                    f"periodic kernel exceeded {max_steps} steps in replica {r}")
        tau[r] = m_el[r, nm - 1] if nm > 0 else 0.0
    return dict(tau=tau_a, m_elapsed=m_el_a, m_left=m_left_a, m_right=m_right_a)


def bd_pair_batch(gen, double delta, double T, double x1, double x2,
                  Py_ssize_t n_rep):
    """Two backward lattice walks with on-the-fly dot counting.

    Each walk jumps +-delta at total rate 1/delta^2 (two arrow streams of
    intensity 1/(2 delta^2) each) and the pair sticks on first meeting.
    Dot counts over the private portions of the two paths are Poisson with
    intensity 1/delta^2 per unit time, independent across the disjoint
    lattice segments the two walks occupy before meeting.

    Returns merge_time (NaN if none above 0), dots1, dots2, foot1, foot2.
    """
    if delta <= 0 or T <= 0:
        raise ValueError("delta and T must be positive")
    cdef bitgen_t *bg = _bitgen(gen)
    cdef double gamma = 0.5 / (delta * delta)
    cdef double jump_rate = 2.0 * gamma          # per walk
    cdef double dot_rate = 2.0 * gamma           # per site

    mt_a = np.full(n_rep, np.nan)
    d1_a = np.zeros(n_rep, dtype=np.int64)
    d2_a = np.zeros(n_rep, dtype=np.int64)
    f1_a = np.empty(n_rep)
    f2_a = np.empty(n_rep)
    cdef double[::1] mt = mt_a
    cdef long[::1] d1 = d1_a
    cdef long[::1] d2 = d2_a
    cdef double[::1] f1 = f1_a
    cdef double[::1] f2 = f2_a

    cdef Py_ssize_t r
    cdef double a, b, s, sm, priv
    cdef long n_jump, i

    for r in range(n_rep):
        a = delta * round(x1 / delta)
        b = delta * round(x2 / delta)
        s = T
        sm = -1.0
        while a != b:
            s -= random_standard_exponential(bg) / (2.0 * jump_rate)
            if s <= 0.0:
                break
            if _unif(bg) < 0.5:
                a += delta if _unif(bg) < 0.5 else -delta
            else:
                b += delta if _unif(bg) < 0.5 else -delta
        if a == b and s > 0.0:
            sm = s
            mt[r] = s
        priv = T - (sm if sm > 0.0 else 0.0)
        d1[r] = random_poisson(bg, dot_rate * priv)
        d2[r] = random_poisson(bg, dot_rate * priv)
        if sm > 0.0:
            # continue the merged walk to time 0 for the foot position
            n_jump = random_poisson(bg, jump_rate * sm)
            for i in range(n_jump):
                a += delta if _unif(bg) < 0.5 else -delta
            b = a
        f1[r] = a
        f2[r] = b
    return dict(merge_time=mt_a, dots1=d1_a, dots2=d2_a, foot1=f1_a, foot2=f2_a)
