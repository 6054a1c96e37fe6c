"""Closed forms for transfer entropy from a lagged Poisson counting process to itself.

``X`` counts the events of a homogeneous Poisson process with intensity
``lam`` and the source is ``Y(t) = X(t + epsilon)``.  At step ``i`` of a comb
grid the destination's own past enters only through ``a = X(t_{i+1})`` and the
source's history only through ``c = X(t_{i+L} + epsilon)`` with
``L = floor(r/dt)``; ``d = c - a`` events are known to fall in an interval of
length ``epsilon + (1 - L) dt`` of which the step covers ``dt``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._rng import path_rng
from ._validation import check_finite, check_nonnegative, check_positive
from .comb import CombGrid, gfloor
from .dte import CondPmfTable, HistoryKey, Pmf, kl_divergence
from .exceptions import ContractError, ParameterError
from .paths import ProcessPair, SamplePath, lag_path, poisson_arrivals

TAIL_MASS = 1e-12


def pois(x, n):
    """``exp(-x) x**n / n!``."""
    x = check_nonnegative(x, "x", ContractError)
    if int(n) != n or n < 0:
        raise ContractError(f"n must be a non-negative integer, got {n!r}")
    n = int(n)
    if x == 0.0:
        return 1.0 if n == 0 else 0.0
    if n > 20:
        return math.exp(-x + n * math.log(x) - math.lgamma(n + 1))
    return math.exp(-x) * x ** n / math.factorial(n)


def eta(x):
    return x * math.log(x) if x > 0 else 0.0


@dataclass(frozen=True)
class LaggedPoissonParams:
    lam: float
    epsilon: float
    r: float
    s: float
    t0: float
    T: float

    def __post_init__(self):
        check_positive(self.lam, "lambda")
        check_positive(self.epsilon, "epsilon")
        check_positive(self.r, "r")
        check_positive(self.s, "s")
        check_finite(self.t0, "t0")
        check_finite(self.T, "T")
        if not self.r < self.epsilon:
            raise ParameterError(
                f"source history r={self.r} must be shorter than the lag "
                f"epsilon={self.epsilon} (0 < r < epsilon)")
        if not self.t0 < self.T:
            raise ParameterError(f"need t0 < T, got [{self.t0}, {self.T})")

    def grid(self, dt):
        return CombGrid(self.t0, self.T, self.s, self.r, dt)


@dataclass(frozen=True)
class StepContext:
    a: int
    c: int

    def __post_init__(self):
        if self.c < self.a:
            raise ContractError(f"counting path decreased: a={self.a}, c={self.c}")

    @property
    def d(self):
        return self.c - self.a


def lag_steps(params, dt):
    """``L = floor(r/dt)``, validated against ``L dt < epsilon``."""
    dt = check_positive(dt, "dt")
    L = gfloor(params.r / dt)
    if not L * dt < params.epsilon:
        raise ParameterError(
            f"dt={dt} too coarse: need floor(r/dt)*dt < epsilon={params.epsilon}")
    return L


def _split(params, dt):
    """(step share q, its complement rho, long interval length D, L)."""
    L = lag_steps(params, dt)
    D = params.epsilon + (1 - L) * dt
    rest = params.epsilon - L * dt
    return dt / D, rest / D, D, L


def poisson_pmf(mean, offset=0, tail=TAIL_MASS, min_support=0):
    """Poisson pmf shifted by ``offset``, truncated at ``tail`` and renormalized.

    The support always reaches at least ``offset + min_support``.
    """
    if mean == 0.0:
        return Pmf.point(offset)
    n_max = max(int(stats.poisson.isf(tail, mean)) + 1, int(min_support))
    k = np.arange(n_max + 1)
    p = stats.poisson.pmf(k, mean)
    p /= p.sum()
    return Pmf((offset + k).tolist(), p)


def binomial_pmf(n, q, offset=0):
    k = np.arange(n + 1)
    p = stats.binom.pmf(k, n, q)
    p /= p.sum()
    return Pmf((offset + k).tolist(), p)


def cond_pmf_given_x(lam, dt, a, tail=TAIL_MASS, min_support=0):
    """Law of the next count ``b`` given ``a``: ``b - a ~ Poisson(lam dt)``."""
    lam = check_positive(lam, "lambda")
    dt = check_positive(dt, "dt")
    return poisson_pmf(lam * dt, int(a), tail, min_support)


def cond_pmf_given_xy(params, dt, ctx):
    """Law of ``b`` given ``(a, c)``: ``b - a ~ Binomial(d, dt / (eps + (1-L) dt))``."""
    q, _, _, _ = _split(params, dt)
    return binomial_pmf(ctx.d, q, ctx.a)


def cond_pmf_given_xy_ratio(params, dt, ctx):
    """Same law written as the ratio of Poisson terms (validation form)."""
    _, _, D, L = _split(params, dt)
    lam = params.lam
    rest = params.epsilon - L * dt
    denom = pois(lam * D, ctx.d)
    support = list(range(ctx.a, ctx.c + 1))
    probs = [pois(lam * rest, ctx.c - b) * pois(lam * dt, b - ctx.a) / denom
             for b in support]
    return Pmf(support, probs, atol=1e-9)


def S(lam, dt, epsilon, r):
    """Per-step KL when exactly one source-announced event is pending."""
    lam = check_positive(lam, "lambda")
    dt = check_positive(dt, "dt")
    L = gfloor(r / dt)
    if not L * dt < epsilon:
        raise ParameterError(f"dt={dt} too coarse for epsilon={epsilon}, r={r}")
    D = epsilon + (1 - L) * dt
    rho = (epsilon - L * dt) / D
    return (lam * dt * rho + eta(rho) + (lam * dt ** 2 - math.log(lam) * dt) / D
            + dt * eta(1.0 / D))


def _falling_log(d, b):
    return math.lgamma(d + 1) - math.lgamma(d - b + 1)


def per_step_kl_sum(params, dt, d, variant="corrected"):
    """Finite-sum expression of the per-step KL for ``d`` pending events.

    ``"corrected"`` uses ``(epsilon - L*dt)`` inside the logarithm, which is
    what the binomial/Poisson ratio gives.  ``variant="printed"`` keeps the
    ``(epsilon - lam*dt)`` form that circulates in write-ups, for comparison.
    """
    if variant not in ("corrected", "printed"):
        raise ParameterError(f"variant must be 'corrected' or 'printed', got {variant!r}")
    q, rho, D, L = _split(params, dt)
    lam = params.lam
    rest = params.epsilon - L * dt
    inner = rest if variant == "corrected" else params.epsilon - lam * dt
    if inner <= 0:
        raise ParameterError(f"log argument epsilon - {'L' if variant == 'corrected' else 'lam'}*dt <= 0")
    total = 0.0
    for b in range(d + 1):
        w = math.comb(d, b) * q ** b * rho ** (d - b)
        if w == 0.0:
            continue
        total += w * (lam * dt + _falling_log(d, b) - b * math.log(lam * inner)
                      + d * math.log(rho))
    return max(total, 0.0)


def per_step_kl(params, dt, ctx, variant="corrected"):
    """KL of the (x, y)-conditioned law against the x-conditioned law at one step.

    ``d = 0`` gives ``lam * dt``, ``d = 1`` gives :func:`S`, larger ``d`` uses
    the finite sum.
    """
    d = ctx.d if isinstance(ctx, StepContext) else int(ctx)
    if d < 0:
        raise ContractError("pending event count d must be >= 0")
    lag_steps(params, dt)
    if d == 0:
        return params.lam * dt
    if d == 1:
        return S(params.lam, dt, params.epsilon, params.r)
    return per_step_kl_sum(params, dt, d, variant)


def per_step_kl_direct(params, dt, ctx):
    """Oracle: KL computed from the two explicit pmfs."""
    if not isinstance(ctx, StepContext):
        ctx = StepContext(0, int(ctx))
    return kl_divergence(cond_pmf_given_xy(params, dt, ctx),
                         cond_pmf_given_x(params.lam, dt, ctx.a, min_support=ctx.d))


def analytic_limit(params):
    """Closed-form limit of ``tau * S`` as printed: ``(T-t0)(lam - ln(lam u)/u)``, ``u = eps - r``."""
    if not params.r < params.epsilon:
        raise ParameterError("need r < epsilon")
    u = params.epsilon - params.r
    return (params.T - params.t0) * (params.lam - math.log(params.lam * u) / u)


def tau_S_limit(params):
    """Actual limit of ``tau * S(lam, dt)`` as ``dt -> 0``.

    ``eta(rho)/dt -> -1/u`` contributes the extra ``-1/u`` that
    :func:`analytic_limit` omits.
    """
    u = params.epsilon - params.r
    return (params.T - params.t0) * (params.lam - (1.0 + math.log(params.lam * u)) / u)


def ept_rate(params, tail=1e-16):
    """Limit per unit time of the exact expected comb sum.

    With ``d ~ Poisson(lam u)`` pending events, the per-step KL is
    ``dt [lam + (d/u)(ln(d/(lam u)) - 1)] + o(dt)``; averaging over ``d`` gives
    ``E[d ln d]/u - lam ln(lam u)``.
    """
    u = params.epsilon - params.r
    m = params.lam * u
    n_max = int(stats.poisson.isf(tail, m)) + 2
    d = np.arange(2, n_max + 1)
    e_dlogd = float(np.sum(stats.poisson.pmf(d, m) * d * np.log(d)))
    return e_dlogd / u - params.lam * math.log(m)


def tau_S_schedule(params, dt_schedule):
    """Rows ``(dt, tau, S, tau*S, analytic_limit)`` for each step size."""
    rows = []
    limit = analytic_limit(params)
    for dt in dt_schedule:
        grid = params.grid(dt)
        s_val = S(params.lam, dt, params.epsilon, params.r)
        rows.append({"dt": float(dt), "tau": grid.tau, "S": s_val,
                     "tauS": grid.tau * s_val, "analytic_limit": limit})
    return rows


def single_jump_ok(path, dt, window=None):
    """True when no two jumps of ``path`` (inside ``window``) are within ``dt``."""
    jt = path.jump_times
    if window is not None:
        jt = jt[(jt >= window[0]) & (jt <= window[1])]
    if jt.size < 2:
        return True
    return bool(np.all(np.diff(jt) > dt))


@dataclass(frozen=True)
class PathKL:
    value: float
    tau: int
    Q: int
    max_d: int
    single_jump: bool
    closed_form: float = None
    per_step: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def multi_event_steps(self):
        return self.max_d > 1


def step_counts(params, dt, pair, grid=None):
    """Per-step ``(a_i, c_i)`` for ``i = 0..tau-1`` read off a realized pair."""
    grid = params.grid(dt) if grid is None else grid
    L = lag_steps(params, dt)
    idx = grid.n_hi - np.arange(grid.tau)
    a = pair.x.sample_on_grid((idx - 1) * grid.dt)
    c = pair.y.sample_on_grid((idx - L) * grid.dt)
    return a, c


class _KLCache:
    def __init__(self, params, dt):
        self.params = params
        self.dt = dt
        self.values = {}

    def __call__(self, d):
        d = np.asarray(d)
        uniq = np.unique(d)
        for v in uniq.tolist():
            if v not in self.values:
                self.values[v] = per_step_kl(self.params, self.dt, int(v))
        lut = np.array([self.values[v] for v in uniq.tolist()])
        return lut[np.searchsorted(uniq, d)]


def _relevant_window(params, grid):
    return (grid.lowest_index * grid.dt, grid.T + params.epsilon)


def path_kl(params, dt, pair, grid=None):
    """Per-path KL summed over the comb: ``sum_i per_step_kl(d_i)``.

    When every ``d_i <= 1`` this equals ``lam tau dt + Q (S - lam dt)`` with
    ``Q = sum_i d_i``; that closed form is returned alongside for comparison.
    """
    grid = params.grid(dt) if grid is None else grid
    a, c = step_counts(params, dt, pair, grid)
    d = c - a
    if np.any(d < 0):
        raise ContractError("source count below destination count; is y a lag of x?")
    kl = _KLCache(params, grid.dt)(d)
    value = math.fsum(kl.tolist())
    Q = int(d.sum())
    max_d = int(d.max()) if d.size else 0
    closed = None
    if max_d <= 1:
        s_val = S(params.lam, grid.dt, params.epsilon, params.r)
        closed = params.lam * grid.tau * grid.dt + Q * (s_val - params.lam * grid.dt)
    return PathKL(value=value, tau=grid.tau, Q=Q, max_d=max_d,
                  single_jump=single_jump_ok(pair.x, grid.dt, _relevant_window(params, grid)),
                  closed_form=closed, per_step=kl)


def path_kl_batch(params, dt, ensemble, grid=None):
    """Vectorized :func:`path_kl` values for a :class:`~cttx.dte.PairEnsemble`."""
    grid = params.grid(dt) if grid is None else grid
    L = lag_steps(params, grid.dt)
    idx = grid.n_hi - np.arange(grid.tau)
    a = ensemble.x.evaluate((idx - 1) * grid.dt)
    c = ensemble.y.evaluate((idx - L) * grid.dt)
    d = c - a
    kl = _KLCache(params, grid.dt)(d)
    return kl.sum(axis=1), d


class LaggedPoissonModel:
    """Generative and exact model for the lagged Poisson pair.

    ``lam_after``/``switch_time`` optionally switch the intensity once, which
    gives a non-stationary counterexample; the closed forms above only cover
    the homogeneous case.
    """

    stationary = True
    plugin_relative = True

    def __init__(self, params, lam_after=None, switch_time=None):
        self.params = params
        self.lam_after = params.lam if lam_after is None else check_positive(lam_after, "lam_after")
        self.switch_time = params.T if switch_time is None else float(switch_time)
        self.stationary = self.lam_after == params.lam

    def cumulative(self, a, b):
        """Integrated intensity over ``(a, b]``."""
        lam0, lam1, ts = self.params.lam, self.lam_after, self.switch_time
        lo, hi = min(a, ts), min(b, ts)
        return lam0 * max(hi - lo, 0.0) + lam1 * max(max(b, ts) - max(a, ts), 0.0)

    @property
    def origin(self):
        p = self.params
        return p.t0 - max(p.epsilon, p.s, p.r)

    def x_window(self, dt_max):
        p = self.params
        return (p.t0 - max(p.s, p.r) - 2 * dt_max, p.T + p.epsilon + 2 * dt_max)

    def simulate_pair(self, seed, index=0, dt_max=0.1):
        lo, hi = self.x_window(dt_max)
        rng = path_rng(seed, index)
        if self.stationary:
            times = poisson_arrivals(self.params.lam, lo, hi, rng)
        else:
            ts = min(max(self.switch_time, lo), hi)
            parts = []
            if ts > lo:
                parts.append(poisson_arrivals(self.params.lam, lo, ts, rng))
            if hi > ts:
                parts.append(poisson_arrivals(self.lam_after, ts, hi, rng))
            times = np.concatenate(parts)
        x = SamplePath._from_parts(times, 0.0, lo, hi,
                                   np.arange(times.size + 1, dtype=np.int64))
        return ProcessPair(x, lag_path(x, self.params.epsilon))

    def simulate(self, n_paths, seed, dt_max=0.1):
        return [self.simulate_pair(seed, j, dt_max) for j in range(n_paths)]

    @property
    def t0(self):
        return self.params.t0

    @property
    def T(self):
        return self.params.T

    def grid(self, dt):
        return self.params.grid(dt)

    def bound(self, grid):
        """``tau * S(lam, dt)`` for ``grid``."""
        p = self.params
        return grid.tau * S(p.lam, grid.dt, p.epsilon, p.r)

    def path_kl_values(self, ensemble, grid):
        return path_kl_batch(self.params, grid.dt, ensemble, grid)[0]

    def plugin_lengths(self, grid):
        """History lengths that make the plug-in condition on the same nodes."""
        L = lag_steps(self.params, grid.dt)
        if L < 1:
            raise ParameterError("plug-in needs dt <= r so the source history is non-empty")
        return {"x_len": grid.k, "y_len": L - 1}

    def exact_step_tables(self, grid, i, tail=1e-14):
        """Exact conditional tables for step ``i``, keyed by ``(a,)`` and ``(c,)``.

        ``a`` and ``c`` are sufficient statistics of the two histories.
        """
        p = self.params
        L = lag_steps(p, grid.dt)
        t_i = grid.node(i)
        t_prev = grid.node_time(i + 1)
        t_c = grid.node_time(i + L) + p.epsilon
        m_step = self.cumulative(t_prev, t_i)
        m_rest = self.cumulative(t_i, t_c)
        q = m_step / (m_step + m_rest)
        a_pmf = poisson_pmf(self.cumulative(self.origin, t_prev), 0, tail)
        d_pmf = poisson_pmf(m_step + m_rest, 0, tail)
        d_max = max(d_pmf.support)
        x_probs = poisson_pmf(m_step, 0, min_support=d_max).probs
        binom = {d: binomial_pmf(d, q).probs for d in d_pmf.support}
        x_entries = {}
        xy_entries = {}
        for a, wa in zip(a_pmf.support, a_pmf.probs):
            x_entries[HistoryKey((a,))] = (Pmf(range(a, a + x_probs.size), x_probs),
                                           float(wa))
            for d, wd in zip(d_pmf.support, d_pmf.probs):
                xy_entries[HistoryKey((a,), (a + d,))] = (Pmf(range(a, a + d + 1), binom[d]),
                                                          float(wa * wd))
        return CondPmfTable(xy_entries), CondPmfTable(x_entries)

    def exact_step_te(self, grid, i):
        """Per-step TE via the closed-form per-step KL (homogeneous case)."""
        p = self.params
        L = lag_steps(p, grid.dt)
        d_pmf = poisson_pmf(p.lam * (p.epsilon + (1 - L) * grid.dt))
        return math.fsum(w * per_step_kl(p, grid.dt, d)
                         for d, w in zip(d_pmf.support, d_pmf.probs))

    def ept(self, t_start, t_end, dt=1e-3, surrogate="tauS"):
        """EPT over ``[t_start, t_end)`` from ``tau * S`` or the exact comb sum."""
        p = self.params
        sub = LaggedPoissonParams(p.lam, p.epsilon, p.r, p.s, t_start, t_end)
        grid = sub.grid(dt)
        if surrogate == "tauS":
            return grid.tau * S(p.lam, dt, p.epsilon, p.r), 0.0
        model = LaggedPoissonModel(sub)
        return math.fsum(model.exact_step_te(grid, i) for i in range(grid.tau)), 0.0

    def te_rate(self, t=None):
        return ept_rate(self.params), 0.0
