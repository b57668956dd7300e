"""Statistical machinery tying the samplers to the oracle laws.

Distribution tests (KS one- and two-sample), heavy-tail scale fitting,
empirical characteristic functions, log-log exponent fits, the lattice
model to castle convergence experiment, and the multi-point functional
that separates the castle's law from the Cauchy process.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import kolmogorov

from . import bc, oracles, web
from . import rng as _rng


@dataclass
class TestReport:
    """Pure-data record of one check."""
    name: str
    value: float
    threshold: float | None = None
    higher_is_better: bool = False
    n: int = 0
    seeds: tuple = ()
    se: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.threshold is None:
            return True
        if self.higher_is_better:
            return self.value >= self.threshold
        return self.value <= self.threshold

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        thr = "" if self.threshold is None else (
            f" {'>=' if self.higher_is_better else '<='} {self.threshold:g}")
        se = f" (se {self.se:.2e})" if self.se is not None else ""
        return f"[{mark}] {self.name}: {self.value:.6g}{thr}{se}"

    def to_json(self) -> dict:
        return {"name": self.name, "value": self.value,
                "threshold": self.threshold,
                "higher_is_better": self.higher_is_better,
                "pass": self.passed, "n": self.n, "seeds": list(self.seeds),
                "se": self.se,
                "extra": {k: _jsonable(v) for k, v in self.extra.items()}}


def _jsonable(v):
    if isinstance(v, (np.ndarray, list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return float(v)
    return v


# ---------------------------------------------------------------------------
# distribution tests

def ks_statistic(samples, cdf=None, samples2=None, name="ks") -> TestReport:
    """One-sample KS against a callable cdf, or two-sample KS."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    flags = []
    if n < 100:
        flags.append("few_samples")
    if cdf is not None:
        f = np.asarray(cdf(x), dtype=float)
        up = np.max(np.arange(1, n + 1) / n - f)
        lo = np.max(f - np.arange(0, n) / n)
        d = float(max(up, lo))
        n_eff = n
    elif samples2 is not None:
        y = np.sort(np.asarray(samples2, dtype=float))
        m = y.size
        grid = np.concatenate([x, y])
        fx = np.searchsorted(x, grid, side="right") / n
        fy = np.searchsorted(y, grid, side="right") / m
        d = float(np.max(np.abs(fx - fy)))
        n_eff = n * m / (n + m)
    else:
        raise ValueError("need a cdf or a second sample")
    p = float(kolmogorov(np.sqrt(n_eff) * d))
    return TestReport(name, d, n=n, extra={"pvalue": p, "flags": flags})


def ks_se_bootstrap(samples, cdf=None, samples2=None, n_boot: int = 64,
                    seed: int = 0) -> float:
    """Bootstrap standard error of the KS statistic."""
    gen = _rng.stream(seed, _rng.TASK_GENERIC, 0)
    x = np.asarray(samples, dtype=float)
    vals = []
    for _ in range(n_boot):
        xb = x[gen.integers(0, x.size, x.size)]
        if samples2 is not None:
            y = np.asarray(samples2, dtype=float)
            yb = y[gen.integers(0, y.size, y.size)]
            vals.append(ks_statistic(xb, samples2=yb).value)
        else:
            vals.append(ks_statistic(xb, cdf=cdf).value)
    return float(np.std(vals))


def cauchy_scale_fit(increments, n_boot: int = 200, seed: int = 0) -> dict:
    """Quartile-based Cauchy scale: for Cauchy(0, g) the quartiles are +-g.

    Scale-equivariant and location-invariant by construction; a companion
    tail-exponent check flags non-Cauchy input (survival of |X| should
    decay like 1/x, slope -1 in log-log).
    """
    x = np.asarray(increments, dtype=float)
    if x.size < 1000:
        raise ValueError("need at least 1e3 samples")
    q1, q3 = np.quantile(x, [0.25, 0.75])
    gamma = float((q3 - q1) / 2.0)
    gen = _rng.stream(seed, _rng.TASK_GENERIC, 1)
    boots = []
    for _ in range(n_boot):
        xb = x[gen.integers(0, x.size, x.size)]
        b1, b3 = np.quantile(xb, [0.25, 0.75])
        boots.append((b3 - b1) / 2.0)
    lo, hi = np.quantile(boots, [0.025, 0.975])
    # tail-exponent companion: log survival vs log u should have slope -1
    u = np.quantile(np.abs(x), np.linspace(0.9, 0.999, 8))
    surv = np.array([(np.abs(x) > uu).mean() for uu in u])
    slope = float(np.polyfit(np.log(u), np.log(surv), 1)[0])
    tail_ok = bool(-1.5 < slope < -0.6)
    return {"gamma": gamma, "ci": (float(lo), float(hi)),
            "tail_slope": slope, "tail_consistent": tail_ok}


def empirical_charfn(samples, a_grid):
    """Mean of exp(i a X) with per-point standard errors."""
    x = np.asarray(samples, dtype=float)
    a = np.asarray(a_grid, dtype=float)
    z = np.exp(1j * a[:, None] * x[None, :])
    mean = z.mean(axis=1)
    se_re = z.real.std(axis=1) / np.sqrt(x.size)
    se_im = z.imag.std(axis=1) / np.sqrt(x.size)
    return mean, se_re, se_im


def exponent_fit(scales, values) -> dict:
    """Least-squares slope in log-log coordinates with a 95% CI."""
    s = np.asarray(scales, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0) or np.any(s <= 0):
        raise ValueError("positive scales and values required")
    if s.size < 4 or np.log2(s.max() / s.min()) < 2:
        raise ValueError("need >= 4 scales spanning >= 2 octaves")
    ls, lv = np.log(s), np.log(v)
    A = np.vstack([np.ones_like(ls), ls]).T
    coef, res, *_ = np.linalg.lstsq(A, lv, rcond=None)
    fit = A @ coef
    dof = max(s.size - 2, 1)
    sigma2 = float(np.sum((lv - fit) ** 2)) / dof
    sxx = float(np.sum((ls - ls.mean()) ** 2))
    se = np.sqrt(sigma2 / sxx)
    return {"slope": float(coef[1]), "intercept": float(coef[0]),
            "ci": (float(coef[1] - 1.96 * se), float(coef[1] + 1.96 * se)),
            "se": float(se)}


# ---------------------------------------------------------------------------
# model-to-castle convergence

def bc_pair_increment_samples(T: float, gap: float, n_rep: int,
                              seed: int = 0, dt: float = 1e-3,
                              workers: int = 1) -> np.ndarray:
    """Castle increments h(T, x) - h(T, x + gap) under a flat start.

    Conditional on the pair forest the increment is centred Gaussian with
    variance twice the private path length (= T when the pair never meets
    above the floor)."""
    out = bc.fixed_forest_batch(np.array([0.0, gap]), np.array([T, T]), 0.0,
                                dt, n_rep, seed, workers)
    mt = out["m_time"][:, 0]
    var = 2.0 * np.where(np.isnan(mt), T, T - mt)
    gen = _rng.stream(seed, _rng.TASK_BC_EDGES, 1)
    return np.sqrt(var) * gen.standard_normal(n_rep)


def convergence_experiment(deltas, T: float, x_pair, n_rep: int = 10_000,
                           seed: int = 0, workers: int = 1) -> list[TestReport]:
    """Two-sample KS between rescaled lattice increments and castle
    increments, per delta, with bootstrap errors for the trend."""
    x1, x2 = x_pair
    gap = abs(x2 - x1)
    ref = bc_pair_increment_samples(T, gap, n_rep, seed=seed + 1,
                                    workers=workers)
    reports = []
    for i, d in enumerate(sorted(deltas, reverse=True)):
        inc = web.bd_increment_samples(d, T, x1, x2, n_rep, seed=seed + 2 + i,
                                       workers=workers)
        rep = ks_statistic(inc, samples2=ref, name=f"bd_vs_bc_delta={d:g}")
        rep.se = ks_se_bootstrap(inc[:4000], samples2=ref[:4000],
                                 seed=seed + 50 + i)
        rep.extra["delta"] = d
        rep.n = n_rep
        reports.append(rep)
    return reports


# ---------------------------------------------------------------------------
# separating functional

def cauchy_process_increment_pairs(x_desc, n_rep: int, seed: int = 0):
    """Exact (V1, V2) for the Cauchy process: V_i = h(x_i) - h(x_0).

    Independent rescaled increments: A ~ Cauchy(0, x0-x1),
    B ~ Cauchy(0, x1-x2); V1 = -A, V2 = -(A + B)."""
    x0, x1, x2 = x_desc
    gen = _rng.stream(seed, _rng.TASK_GENERIC, 2)
    a = (x0 - x1) * np.tan(np.pi * (gen.random(n_rep) - 0.5))
    b = (x1 - x2) * np.tan(np.pi * (gen.random(n_rep) - 0.5))
    return -a, -(a + b)


def bc_increment_pairs(x_desc, n_rep: int, seed: int = 0, lam: float = 1.0,
                       workers: int = 1):
    """(V1, V2) for the stationary castle, sampled at scale ``lam`` using
    the exact 1:1:2 scaling (the law does not depend on lam)."""
    x0, x1, x2 = x_desc
    pts = np.array([x2, x1, x0]) / lam
    inc = bc.stationary_increment_batch(pts, n_rep, seed=seed,
                                        workers=workers)
    b1 = inc[:, 0]   # H(x1/lam) - H(x2/lam)
    b2 = inc[:, 1]   # H(x0/lam) - H(x2/lam)
    v1 = lam * (b1 - b2)
    v2 = lam * (0.0 - b2)
    return v1, v2


def cos_pair(v1, v2):
    return np.cos(v1) * np.cos(v2)


def cauchy_cos_pair_closed_form(x_desc) -> float:
    """E[cos V1 cos V2] for the Cauchy process via independent increments:
    0.5 * (exp(-g_B) + exp(-(2 g_A + g_B)))."""
    x0, x1, x2 = x_desc
    ga, gb = x0 - x1, x1 - x2
    return 0.5 * (np.exp(-gb) + np.exp(-(2 * ga + gb)))


def bc_cos_pair_quadrature(x_desc) -> float:
    """E[cos V1 cos V2] for the castle via the recursion oracle:
    0.5 * (Re F3((1,1,-2)) + exp(-kappa * (x1 - x2)))."""
    x0, x1, x2 = x_desc
    f3, _ = oracles.recursion_charfn(np.array([1.0, 1.0, -2.0]),
                                     np.array([x2, x1, x0]))
    return 0.5 * (float(np.real(f3)) +
                  float(oracles.two_point_charfn(1.0, x1 - x2)))


def singularity_statistic(process: str, m: int = 2, x_desc=(1.0, 0.75, 0.5),
                          phi=cos_pair, lambdas=(1.0,), n_rep: int = 10_000,
                          seed: int = 0, workers: int = 1) -> dict:
    """Monte Carlo estimate of the time-averaged separating functional.

    ``I_k`` rescales the multi-point increments at ``x_i / lambda_k`` by
    ``lambda_k``; both processes are scale-invariant so every k is
    identically distributed and the estimate targets E[phi(I_1)].
    """
    if m != 2:
        raise ValueError("the default functional is implemented for m = 2")
    xs = tuple(float(x) for x in x_desc)
    if not (xs[0] <= 1.0 + 1e-12 and xs[-1] >= 0.5 - 1e-12
            and all(a > b for a, b in zip(xs, xs[1:]))):
        raise ValueError("points must satisfy 1 >= x0 > ... > xm >= 1/2")
    lam = np.asarray(lambdas, dtype=float)
    if np.any(lam[1:] < 4 * lam[:-1]):
        raise ValueError("lambda sequence must grow by factors >= 4")
    per_k = []
    for k, l in enumerate(lam):
        if process == "cauchy":
            v1, v2 = cauchy_process_increment_pairs(xs, n_rep, seed=seed + k)
        elif process == "bc":
            v1, v2 = bc_increment_pairs(xs, n_rep, seed=seed + k, lam=l,
                                        workers=workers)
        else:
            raise ValueError("process must be 'bc' or 'cauchy'")
        per_k.append(phi(v1, v2))
    vals = np.mean(per_k, axis=0)
    return {"estimate": float(vals.mean()),
            "se": float(vals.std() / np.sqrt(vals.size)),
            "per_lambda": [float(np.mean(p)) for p in per_k],
            "n": int(vals.size)}
