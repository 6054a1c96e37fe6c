"""Convergence, boundedness and rate checks across step-size schedules."""

import math
from dataclasses import dataclass, field

import numpy as np

from .comb import refines
from .dte import (PairEnsemble, Pmf, encode_rows, kl_divergence, plugin_log_ratios,
                  te_comb_sum)
from .exceptions import ContractError, EstimationError, GridError, ParameterError
from .markov import ept_monte_carlo, poisson_dest_te_rate
from .poisson import LaggedPoissonModel, LaggedPoissonParams

CAUCHY_FLOOR = 1e-3


@dataclass(frozen=True)
class Schedule:
    """Strictly decreasing step sizes; optionally each must divide the previous."""

    dt_values: tuple
    require_refinement: bool = False

    def __post_init__(self):
        vals = tuple(float(v) for v in self.dt_values)
        if not vals:
            raise GridError("empty schedule")
        if any(not math.isfinite(v) or v <= 0 for v in vals):
            raise GridError("schedule entries must be finite and > 0")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise GridError("schedule must be strictly decreasing")
        if self.require_refinement:
            for a, b in zip(vals, vals[1:]):
                if not refines(b, a):
                    raise GridError(f"{b} does not divide {a}")
        object.__setattr__(self, "dt_values", vals)

    def __iter__(self):
        return iter(self.dt_values)

    def __len__(self):
        return len(self.dt_values)


def as_schedule(schedule):
    return schedule if isinstance(schedule, Schedule) else Schedule(tuple(schedule))


@dataclass(frozen=True)
class ConvergenceRow:
    dt: float
    te_sum: float
    stderr: float
    bound_value: float = math.nan
    bound_satisfied_fraction: float = math.nan

    @property
    def divergent(self):
        return math.isinf(self.te_sum)


@dataclass(frozen=True)
class ConvergenceReport:
    rows: tuple
    limit_estimate: float
    cauchy_gap: float
    converged: bool
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "rows": [{"dt": r.dt, "te_sum": r.te_sum, "stderr": r.stderr,
                      "bound": r.bound_value, "fraction_in_bound": r.bound_satisfied_fraction}
                     for r in self.rows],
            "limit_estimate": self.limit_estimate,
            "cauchy_gap": self.cauchy_gap,
            "converged": self.converged,
            "metadata": self.metadata,
        }


def richardson(dts, values):
    """Linear-in-``dt`` extrapolation to ``dt = 0`` from the last two points."""
    if len(values) == 0:
        return math.nan
    if len(values) == 1 or any(math.isinf(v) for v in values[-2:]):
        return float(values[-1])
    d1, d2 = dts[-2], dts[-1]
    f1, f2 = values[-2], values[-1]
    return float((d1 * f2 - d2 * f1) / (d1 - d2))


def cauchy_gap(values):
    """Largest jump between consecutive values among the last three."""
    tail = list(values)[-3:]
    if len(tail) < 2:
        return math.nan
    return float(max(abs(b - a) for a, b in zip(tail, tail[1:])))


def simulate_ensemble(model, n_paths, seed, dt_max):
    n_paths = int(n_paths)
    if n_paths < 2:
        raise EstimationError("an ensemble needs at least 2 paths")
    return PairEnsemble(model.simulate(n_paths, seed, dt_max=dt_max))


def _plugin_estimate(model, ensemble, grid):
    lengths = model.plugin_lengths(grid)
    return te_comb_sum(ensemble, grid, relative=getattr(model, "plugin_relative", False),
                       **lengths)


def converge_te(model, schedule, mode="auto", n_paths=0, seed=0, ensemble=None):
    """Comb TE sums along a step-size schedule.

    ``mode="exact"`` needs a model with ``exact_step_tables``; ``"plugin"``
    simulates one ensemble (or takes ``ensemble``) and reuses it for every
    row.  With ``mode="auto"`` exact is used when available.  Models with a
    ``bound`` hook (the lagged Poisson) also get ``tau * S`` per row and, when
    an ensemble exists, the fraction of paths whose path KL stays below it.
    """
    schedule = as_schedule(schedule)
    if mode == "auto":
        mode = "exact" if hasattr(model, "exact_step_tables") else "plugin"
    if mode not in ("exact", "plugin"):
        raise ParameterError(f"unknown mode {mode!r}")
    if mode == "exact" and not hasattr(model, "exact_step_tables"):
        raise ParameterError("model has no exact tables; use mode='plugin'")
    dt_max = schedule.dt_values[0]
    if ensemble is None and (mode == "plugin" or (n_paths and hasattr(model, "bound"))):
        ensemble = simulate_ensemble(model, n_paths, seed, dt_max)

    rows = []
    for dt in schedule:
        grid = model.grid(dt)
        if mode == "exact":
            est = te_comb_sum(model, grid)
        else:
            est = _plugin_estimate(model, ensemble, grid)
        bound = frac = math.nan
        if hasattr(model, "bound"):
            bound = float(model.bound(grid))
            if ensemble is not None:
                frac = float(np.mean(model.path_kl_values(ensemble, grid) <= bound))
        rows.append(ConvergenceRow(dt=float(dt), te_sum=float(est.value),
                                   stderr=float(est.stderr), bound_value=bound,
                                   bound_satisfied_fraction=frac))
    values = [r.te_sum for r in rows]
    limit = richardson(schedule.dt_values, values)
    gap = cauchy_gap(values)
    tail_err = max((r.stderr for r in rows[-3:]), default=0.0)
    converged = bool(math.isfinite(gap) and gap < max(CAUCHY_FLOOR, 3.0 * tail_err))
    return ConvergenceReport(rows=tuple(rows), limit_estimate=limit, cauchy_gap=gap,
                             converged=converged,
                             metadata={"mode": mode, "n_paths": 0 if ensemble is None
                                       else len(ensemble)})


@dataclass(frozen=True)
class BoundCheck:
    gamma: float
    dt_values: tuple
    fractions: tuple
    n_paths: int

    def rows(self):
        return list(zip(self.dt_values, self.fractions))


def check_bound(model, schedule, gamma, n_paths=10_000, seed=0, ensemble=None):
    """Fraction of paths in ``B_{dt, gamma}`` for each ``dt`` of the schedule.

    ``B_{dt, gamma}`` holds the paths whose path KL stays ``<= gamma`` at every
    schedule entry ``dt' <= dt``; the sets shrink as ``dt`` grows, so the
    fractions are non-decreasing as ``dt`` decreases.
    """
    if not hasattr(model, "path_kl_values"):
        raise ParameterError("check_bound needs a model with per-path KL (lagged Poisson)")
    schedule = as_schedule(schedule)
    if ensemble is None:
        ensemble = simulate_ensemble(model, n_paths, seed, schedule.dt_values[0])
    kl = np.column_stack([model.path_kl_values(ensemble, model.grid(dt))
                          for dt in schedule])
    # Column j holds dt_j; sup over dt' <= dt_j is a reverse running max.
    sup = np.maximum.accumulate(kl[:, ::-1], axis=1)[:, ::-1]
    fractions = tuple(float(v) for v in np.mean(sup <= gamma, axis=0))
    return BoundCheck(gamma=float(gamma), dt_values=schedule.dt_values,
                      fractions=fractions, n_paths=len(ensemble))


@dataclass(frozen=True)
class RateReport:
    h_values: tuple
    ept_over_h: tuple
    stderr: tuple
    rate: float
    divergent: bool = False

    def rows(self):
        return list(zip(self.h_values, self.ept_over_h, self.stderr))


def _lagged_ept(model, t_start, t_end, dt, surrogate):
    return model.ept(t_start, t_end, dt=dt, surrogate=surrogate)


def te_rate_fd(model, t, h_schedule, dt=None, surrogate="tauS", n_paths=1000, seed=0):
    """``EPT(t, t + h) / h`` along decreasing window lengths ``h``.

    The lagged Poisson uses ``tau * S`` (or the exact comb sum) at step
    ``dt`` (default: a tenth of the smallest ``h``); simulated models use
    Girsanov Monte Carlo with a common seed.  The reported rate is the
    linear-in-``h`` extrapolation of the last two rows.
    """
    hs = as_schedule(h_schedule).dt_values
    vals, errs = [], []
    for h in hs:
        if isinstance(model, LaggedPoissonModel):
            step = dt if dt is not None else min(hs) / 10.0
            if step >= h:
                raise GridError(f"dt={step} must be below the window length h={h}")
            v, e = _lagged_ept(model, t, t + h, step, surrogate)
        else:
            est = ept_monte_carlo(model, n_paths, seed, t0=t, T=t + h)
            v, e = est.value, est.stderr
        vals.append(v / h)
        errs.append(e / h)
    divergent = any(math.isinf(v) for v in vals)
    return RateReport(h_values=hs, ept_over_h=tuple(vals), stderr=tuple(errs),
                      rate=math.inf if divergent else richardson(hs, vals),
                      divergent=divergent)


@dataclass(frozen=True)
class StationarityReport:
    per_step_equal: bool
    per_step_spread: float
    rate: float
    rate_stderr: float
    ept_per_time: float
    ept_stderr: float
    rate_matches: bool
    details: dict = field(default_factory=dict)


def stationary_rate_check(model, grid, n_paths=10_000, seed=0, rate_time=None):
    """Check per-step TE equality and ``rate == EPT / (T - t0)`` for a stationary model.

    Exact models are held to 1e-10 and use the per-step value over ``dt`` as
    the rate.  Simulated models use plug-in per-step values (equal when at
    least 99% lie within 3 standard errors of their mean) and a Monte Carlo
    rate at ``rate_time`` (default: mid-window) against Girsanov EPT.
    """
    span = grid.T - grid.t0
    if hasattr(model, "exact_step_tables"):
        est = te_comb_sum(model, grid)
        steps = np.array([v for _, v in est.per_step])
        spread = float(steps.max() - steps.min())
        equal = spread <= 1e-10
        rate = float(steps.mean() / grid.dt)
        ept = est.value / span
        match = abs(rate - ept) <= 1e-10 * max(1.0, abs(rate))
        return StationarityReport(
            per_step_equal=bool(equal), per_step_spread=spread, rate=rate, rate_stderr=0.0,
            ept_per_time=float(ept), ept_stderr=0.0, rate_matches=bool(match),
            details={"mode": "exact", "per_step": steps.tolist()})

    ensemble = simulate_ensemble(model, n_paths, seed, grid.dt)
    est = _plugin_estimate(model, ensemble, grid)
    steps = np.array([v for _, v in est.per_step])
    errs = np.array(est.step_stderr)
    z = np.abs(steps - steps.mean()) / np.where(errs > 0, errs, np.inf)
    within = float(np.mean(z <= 3.0))
    t_mid = 0.5 * (grid.t0 + grid.T) if rate_time is None else rate_time
    rate, rate_err = poisson_dest_te_rate(model, t_mid, n_paths, seed + 1)
    girs = ept_monte_carlo(model, n_paths, seed + 2, t0=grid.t0, T=grid.T)
    ept, ept_err = girs.value / span, girs.stderr / span
    match = abs(rate - ept) <= 3.0 * math.hypot(rate_err, ept_err)
    return StationarityReport(
        per_step_equal=within >= 0.99, per_step_spread=float(steps.max() - steps.min()),
        rate=rate, rate_stderr=rate_err, ept_per_time=ept, ept_stderr=ept_err,
        rate_matches=bool(match),
        details={"mode": "plugin", "fraction_within_3se": within,
                 "plugin_te": est.value, "plugin_stderr": est.stderr})


def _segment_samples(ens_part, t_a, t_b, micro, include_start):
    """Values at ``micro`` equally spaced nodes in ``(t_a, t_b]`` (plus ``t_a``)."""
    times = t_a + (t_b - t_a) * np.arange(0 if include_start else 1, micro + 1) / micro
    return ens_part.evaluate(times)


def conditional_mutual_information(a, b, c):
    """Plug-in ``I(A; B | C)`` in nats from paired symbol rows."""
    a = np.asarray(a)
    n = a.shape[0]
    a_codes = encode_rows(a.reshape(n, -1))[0]
    return float(plugin_log_ratios(a_codes, np.asarray(c).reshape(n, -1),
                                   np.asarray(b).reshape(n, -1)).mean())


def subpartition_ept(ensemble, partition, s, r, T=None, micro=4, relative=True,
                     max_context_ratio=0.2):
    """Sum over partition cells of the plug-in ``I(X-segment; Y-window | X-history)``.

    Cells are ``[t_{i-1}, t_i]`` for consecutive partition points, with ``T``
    appended as the closing point when given.  Each continuous segment is
    represented by ``micro`` equally spaced samples; destination symbols are
    taken relative to ``X(t_{i-1})`` when ``relative`` is set (counting data).
    """
    ens = ensemble if isinstance(ensemble, PairEnsemble) else PairEnsemble(ensemble)
    pts = [float(v) for v in partition]
    if T is not None:
        pts.append(float(T))
    if len(pts) < 2 or any(b <= a for a, b in zip(pts, pts[1:])):
        raise ContractError("partition must hold at least two increasing times")
    if int(micro) < 1:
        raise ParameterError("micro must be >= 1")
    n = len(ens)
    total = 0.0
    cells = []
    for t_a, t_b in zip(pts, pts[1:]):
        anchor = ens.x.evaluate([t_a])[:, 0]
        seg = _segment_samples(ens.x, t_a, t_b, micro, include_start=False)
        hist = _segment_samples(ens.x, t_a - s, t_a, micro, include_start=True)
        ywin = _segment_samples(ens.y, t_b - r, t_b, micro, include_start=True)
        if relative:
            seg = seg - anchor[:, None]
            hist = hist - anchor[:, None]
            if relative != "x":
                ywin = ywin - anchor[:, None]
        n_ctx = encode_rows(np.column_stack([hist, ywin]))[1]
        if n_ctx > max_context_ratio * n:
            raise EstimationError(
                f"cell [{t_a}, {t_b}] has {n_ctx} distinct contexts for {n} paths; "
                "use more paths, a coarser micro-grid or shorter histories")
        cmi = conditional_mutual_information(seg, ywin, hist)
        cells.append((t_a, t_b, cmi))
        total += cmi
    return total, tuple(cells)


def _marginal(pmf, keep):
    out = {}
    for sym, p in zip(pmf.support, pmf.probs):
        key = tuple(sym[j] for j in keep)
        out[key] = out.get(key, 0.0) + float(p)
    return Pmf.from_dict(out, atol=1e-9)


def kl_coarsening_check(p, q, keep):
    """``(KL(p || q), KL(p_S || q_S))`` for the marginals on coordinates ``keep``.

    ``p`` and ``q`` are :class:`~cttx.dte.Pmf` objects over equal-length
    tuples.  The second value never exceeds the first.
    """
    keep = tuple(int(j) for j in keep)
    kl_fine = kl_divergence(p, q)
    if not keep:
        return kl_fine, 0.0
    return kl_fine, kl_divergence(_marginal(p, keep), _marginal(q, keep))


def lagged_poisson_model(lam, epsilon, r, s, t0, T):
    return LaggedPoissonModel(LaggedPoissonParams(lam, epsilon, r, s, t0, T))
