"""Closed-form and quadrature reference laws.

Heat kernel, Levy and Cauchy families, Karlin-McGregor survival
determinants, the first-coalescence determinant density of ordered
Brownian paths, and the recursive characteristic function of multi-point
increments of the stationary Brownian castle.

Two-point scale constant
------------------------
``KAPPA_TWO_POINT`` is the scale of the stationary two-point increment law
Cauchy(0, kappa*|x-y|), frozen from the following derivation rather than
quoted: two independent standard backward paths at gap ``d`` have a
variance-2 difference, so their coalescence time is ``tau ~ Levy(d^2/2)``
(first passage of a standard path from ``d/sqrt(2)`` to 0).  Conditional
on the forest the increment is centred Gaussian with variance equal to the
tree distance ``2*tau``, hence its characteristic function is

    E exp(-a^2 tau) = exp(-sqrt(2 * (d^2/2) * a^2)) = exp(-d*|a|),

the Laplace transform of the Levy law at ``a^2``.  That is Cauchy(0, d):
kappa = 1.  The widely quoted value 2 for this law does not match this
derivation; the statistical harness reports the fitted constant against
both candidates.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import erf, erfc, ndtr

KAPPA_TWO_POINT = 1.0
#: value quoted in the literature for the same constant (not used in checks)
KAPPA_QUOTED = 2.0

_SQRT2PI = np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# elementary kernels and families

def heat_kernel(t, u):
    """Gaussian heat kernel ``p_t(u)`` and its spatial derivative."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("heat kernel needs t > 0")
    u = np.asarray(u, dtype=float)
    p = np.exp(-u * u / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return p, -(u / t) * p


def levy_density(t, c):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.sqrt(c / (2.0 * np.pi)) * t[pos] ** -1.5 * np.exp(-c / (2.0 * t[pos]))
    return out


def levy_cdf(t, c):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = erfc(np.sqrt(c / (2.0 * t[pos])))
    return out


def levy_laplace(lam, c):
    """E[exp(-lam * tau)] for tau ~ Levy(c)."""
    return np.exp(-np.sqrt(2.0 * c * np.asarray(lam, dtype=float)))


def levy_laplace_truncated(lam, c, T):
    """E[exp(-lam*tau); tau <= T] for tau ~ Levy(c).

    Via the drift change of measure: exp(-lam t) times the passage density
    to level a = sqrt(c) equals exp(-a*mu) times the passage density of a
    drift-mu path, mu = sqrt(2 lam).
    """
    a = np.sqrt(c)
    mu = np.sqrt(2.0 * lam)
    sT = np.sqrt(T)
    return np.exp(-a * mu) * ndtr((mu * T - a) / sT) + np.exp(a * mu) * ndtr(-(mu * T + a) / sT)


def cauchy_density(x, gamma, loc=0.0):
    x = np.asarray(x, dtype=float)
    return gamma / (np.pi * ((x - loc) ** 2 + gamma**2))


def cauchy_cdf(x, gamma, loc=0.0):
    x = np.asarray(x, dtype=float)
    return 0.5 + np.arctan((x - loc) / gamma) / np.pi


def cauchy_charfn(a, gamma, loc=0.0):
    a = np.asarray(a, dtype=float)
    return np.exp(1j * loc * a - gamma * np.abs(a))


def levy_cauchy_closed_forms(kind, params, arg):
    """Dispatch table for the closed forms above.

    ``kind`` is one of ``levy_density``, ``levy_cdf``, ``levy_laplace``,
    ``cauchy_density``, ``cauchy_cdf``, ``cauchy_charfn``; ``params`` is the
    scale (Levy ``c`` or Cauchy ``gamma``), optionally ``(loc, scale)`` for
    Cauchy.
    """
    scale = params[-1] if isinstance(params, (tuple, list)) else params
    loc = params[0] if isinstance(params, (tuple, list)) and len(params) == 2 else 0.0
    if scale <= 0:
        raise ValueError("scale must be positive")
    table = {
        "levy_density": lambda: levy_density(np.asarray(arg, float), scale),
        "levy_cdf": lambda: levy_cdf(np.asarray(arg, float), scale),
        "levy_laplace": lambda: levy_laplace(arg, scale),
        "cauchy_density": lambda: cauchy_density(arg, scale, loc),
        "cauchy_cdf": lambda: cauchy_cdf(arg, scale, loc),
        "cauchy_charfn": lambda: cauchy_charfn(arg, scale, loc),
    }
    try:
        return table[kind]()
    except KeyError:
        raise ValueError(f"unknown closed form {kind!r}") from None


# ---------------------------------------------------------------------------
# coalescence-time law of a pair of independent standard paths

def pair_coalescence_cdf(s, gap):
    """P(tau <= s) for the meeting time of two standard paths at distance gap."""
    return levy_cdf(np.asarray(s, dtype=float), 0.5 * gap * gap)


def pair_coalescence_density(s, gap):
    """gap / sqrt(4 pi s^3) * exp(-gap^2 / (4 s))."""
    return levy_density(np.asarray(s, dtype=float), 0.5 * gap * gap)


def two_point_charfn(a, d):
    """Characteristic function of the stationary two-point increment.

    ``exp(-KAPPA_TWO_POINT * |a| * d)``; see the module docstring for the
    frozen derivation of the constant.
    """
    if d < 0:
        raise ValueError("gap must be nonnegative")
    return np.exp(-KAPPA_TWO_POINT * np.abs(np.asarray(a, dtype=float)) * d)


# ---------------------------------------------------------------------------
# Karlin-McGregor determinants

def km_survival_density(t, x, y):
    """det[p_t(y_k - x_i)]: density of ordered paths surviving to t at y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
        raise ValueError("x and y must be strictly increasing")
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    p, _ = heat_kernel(t, y[None, :] - x[:, None])
    return float(np.linalg.det(p))


def first_coalescence_matrix(t, j, x, y):
    """The n x n kernel matrix of the first-coalescence density.

    Column ``k`` holds ``p_t(y_k - x_i)`` for ``k < j``, a derivative column
    at ``k = j`` and the shifted ``p_t(y_{k-1} - x_i)`` for ``k > j``
    (1-based ``j``).  The derivative column carries the inward-normal
    orientation ``-p'_t(y_j - x_i) = ((y_j - x_i)/t) p_t``, which is the
    sign that makes the determinant a probability density.  Broadcasts over
    leading axes of ``t`` and ``y``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if not 1 <= j <= n - 1:
        raise ValueError("meeting index out of range")
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != n - 1:
        raise ValueError("exit vector must have length n-1")
    cols = []
    for k in range(1, n + 1):
        if k < j:
            u = y[..., k - 1, None] - x
            col = heat_kernel(t[..., None], u)[0]
        elif k == j:
            u = y[..., j - 1, None] - x
            col = -heat_kernel(t[..., None], u)[1]
        else:
            u = y[..., k - 2, None] - x
            col = heat_kernel(t[..., None], u)[0]
        cols.append(col)
    return np.stack(cols, axis=-1)


def first_coalescence_density(t, j, x, y):
    """det M^j_t(x, y): joint density of (tau, iota=j, Pi) at (t, y)."""
    x = np.asarray(x, dtype=float)
    if np.any(np.diff(x) <= 0):
        raise ValueError("start vector must be strictly increasing")
    m = first_coalescence_matrix(t, j, x, y)
    return np.linalg.det(m)


# ---------------------------------------------------------------------------
# quadrature machinery

def _gl(n):
    nodes, weights = leggauss(n)
    return nodes, weights


def _panel_nodes(lo, hi, n_panels, n_nodes):
    """Geometric panels on [lo, hi] with Gauss-Legendre nodes in each."""
    edges = np.geomspace(lo, hi, n_panels + 1)
    z, w = _gl(n_nodes)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * z[None, :]).ravel()
    wt = (half[:, None] * w[None, :] * np.ones_like(z)[None, :]).ravel()
    return t, wt


def integrated_first_coalescence(x, j, lam=0.0, t_max=None, n_panels=48,
                                 n_nodes=16, y_nodes=48, width=10.0,
                                 weight=None):
    """Quadrature of ``exp(-lam t) * w(t, y) * det M^j_t(x, y)`` over t and y.

    ``weight`` is an optional callable ``w(t, y) -> array`` evaluated on the
    quadrature tensor (``y`` of shape (..., n-1)).  Returns ``(value,
    tail_bound)`` where the tail bound controls the neglected ``t > t_max``
    mass (before discounting it is a probability bound).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    gaps = np.diff(x)
    d_min = gaps.min()
    if t_max is None:
        t_max = 8.0 * (x[-1] - x[0]) ** 2
        if lam > 0:
            t_max = max(t_max, 40.0 / lam)
    t_lo = d_min**2 / 64.0
    t, wt = _panel_nodes(t_lo, t_max, n_panels, n_nodes)
    z, w = _gl(y_nodes)

    total = 0.0
    if n == 2:
        # single exit coordinate on a widening window
        centre = 0.5 * (x[0] + x[1])
        halfw = 0.5 * (x[1] - x[0]) + width * np.sqrt(t)
        y = centre + halfw[:, None] * z[None, :]
        dets = first_coalescence_density(t[:, None], j, x, y[..., None])
        integrand = dets
        if weight is not None:
            integrand = integrand * weight(t[:, None], y[..., None])
        if lam > 0:
            integrand = integrand * np.exp(-lam * t)[:, None]
        total = float(np.sum(wt[:, None] * integrand * halfw[:, None] * w[None, :]))
    elif n == 3:
        # ordered pair (y1, y2): y_merged on a window, spectator beyond it
        lo_w = x[0] - width * np.sqrt(t)
        hi_w = x[-1] + width * np.sqrt(t)
        halfw = 0.5 * (hi_w - lo_w)
        mid = 0.5 * (hi_w + lo_w)
        ym = mid[:, None] + halfw[:, None] * z[None, :]          # (nt, ny)
        # spectator grid between the ordering bound and the window edge
        zs, ws = _gl(y_nodes)
        if j == 1:
            s_lo = ym
            s_hi = hi_w[:, None] + 0.0 * ym
        else:
            s_lo = lo_w[:, None] + 0.0 * ym
            s_hi = ym
        s_half = 0.5 * (s_hi - s_lo)
        s_mid = 0.5 * (s_hi + s_lo)
        ys = s_mid[..., None] + s_half[..., None] * zs[None, None, :]  # (nt, ny, ns)
        ymb = np.broadcast_to(ym[..., None], ys.shape)
        if j == 1:
            yy = np.stack([ymb, ys], axis=-1)
        else:
            yy = np.stack([ys, ymb], axis=-1)
        dets = _det3(first_coalescence_matrix(
            np.broadcast_to(t[:, None, None], ys.shape), j, x, yy))
        if weight is not None:
            dets = dets * weight(np.broadcast_to(t[:, None, None], ys.shape), yy)
        if lam > 0:
            dets = dets * np.exp(-lam * t)[:, None, None]
        inner = np.sum(dets * ws[None, None, :], axis=-1) * s_half
        total = float(np.sum(wt[:, None] * inner * halfw[:, None] * w[None, :]))
    else:
        raise ValueError("implemented for 2 or 3 paths")

    tail = float(np.exp(-lam * t_max) * min(1.0, float(np.min(erfc(gaps / (2.0 * np.sqrt(t_max)))))))
    return total, tail


def _det3(m):
    """Determinant of a (... ,3,3) stack via the explicit formula."""
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    d, e, f = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    g, h, i = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


# ---------------------------------------------------------------------------
# characteristic-function recursion

def contract(alpha, j):
    """Merge coefficients j, j+1 (1-based) into their sum."""
    alpha = np.asarray(alpha, dtype=float)
    out = np.concatenate([alpha[: j - 1], [alpha[j - 1] + alpha[j]], alpha[j + 1:]])
    return out


def recursion_charfn(alpha, x, t_max=None, n_panels=48, n_nodes=16,
                     y_nodes=48, tol_flag=1e-6):
    """Characteristic function of stationary multi-point increments.

    Recursive evaluation: ``F_1 = 1`` and

        F_n(alpha, x) = sum_j  int exp(-|alpha|^2 t / 2)
                        F_{n-1}(c_j alpha, y) det M^j_t(x, y) dy dt

    over meeting times t and ordered exit points y.  Supported for n <= 3
    (the simplex quadrature cost grows with n).  The two-point factor
    inside the n = 3 integrand uses the closed form ``exp(-kappa |b| gap)``
    whose agreement with the quadrature route is itself a verified check.

    Returns ``(value, tail_bound)``; a large tail bound signals that t_max
    truncation is not converged for this alpha.
    """
    alpha = np.asarray(alpha, dtype=float)
    x = np.asarray(x, dtype=float)
    n = alpha.shape[0]
    if x.shape[0] != n:
        raise ValueError("alpha and x must have equal length")
    if abs(alpha.sum()) > 1e-12 * (1 + np.abs(alpha).max()):
        raise ValueError("coefficients must sum to zero")
    if np.any(np.diff(x) <= 0):
        raise ValueError("points must be strictly increasing")
    if n == 1:
        return 1.0, 0.0
    lam = 0.5 * float(np.dot(alpha, alpha))
    if n == 2:
        if lam == 0.0:
            return 1.0, 0.0
        d = x[1] - x[0]
        if t_max is None:
            t_max = 8.0 * d * d + 40.0 / lam
        val, _ = integrated_first_coalescence(
            x, 1, lam=lam, t_max=t_max, n_panels=n_panels, n_nodes=n_nodes,
            y_nodes=y_nodes)
        # analytic completion of the t-tail (the y-marginal of the
        # determinant is the Levy(d^2/2) density)
        c = 0.5 * d * d
        tail_exact = levy_laplace(lam, c) - levy_laplace_truncated(lam, c, t_max)
        lo_mass = levy_cdf(np.asarray([x[1] - x[0]]) * 0.0 + (x[1] - x[0])**2 / 64.0, c)[0]
        return float(val + tail_exact), float(lo_mass)
    if n == 3:
        if lam == 0.0:
            return 1.0, 0.0
        if t_max is None:
            t_max = 8.0 * (x[-1] - x[0]) ** 2 + 40.0 / lam
        total = 0.0
        tail = 0.0
        for j in (1, 2):
            aj = contract(alpha, j)
            b = abs(aj[0])

            def weight(t, y, _b=b):
                gap = y[..., 1] - y[..., 0]
                return np.exp(-KAPPA_TWO_POINT * _b * np.abs(gap))

            val, tl = integrated_first_coalescence(
                x, j, lam=lam, t_max=t_max, n_panels=n_panels,
                n_nodes=n_nodes, y_nodes=y_nodes, weight=weight)
            total += val
            tail = max(tail, tl)
        return float(total), float(tail)
    raise ValueError("recursion implemented for n <= 3")
