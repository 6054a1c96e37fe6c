"""Jump-process transfer entropy through conditional transition rates.

A destination ``X`` with finitely many transition channels out of each state
is described by two families of rates: ``psi_xy(t, pair, x_to)``, conditioned
on both histories, and ``psi_x(t, pair, x_to)``, conditioned on the
destination's own history only.  The log Radon-Nikodym derivative between the
two conditional path laws of ``X`` on ``[t0, T)`` is

    sum over X-jumps tau in (t0, T) of ln psi_xy(tau, x_tau) / psi_x(tau, x_tau)
    + integral over [t0, T) of (lambda_x - lambda_xy) dt,

where the lambdas are escape rates (sums over all channels out of ``x_{t-}``).

Built-in models have a hidden two-state (or finite) source ``Y``.  Their
``psi_x`` is the exact finite-window filter: the posterior of ``Y_t`` given the
destination's events in ``[t - s, t)``, started from the stationary law.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import expm, null_space

from ._rng import path_rng
from ._validation import check_finite, check_nonnegative, check_positive, check_seed
from .comb import CombGrid
from .dte import TEEstimate
from .exceptions import (AbsoluteContinuityError, ConfigError, EstimationError,
                         ModelError, NumericalError, ParameterError)
from .paths import ProcessPair, SamplePath, poisson_arrivals

GL_NODES = 12
TRAPEZOID_STEP = 1e-4
CONSTANT_RTOL = 1e-12

_GL_X, _GL_W = leggauss(GL_NODES)


def _left_index(jump_times, t):
    return np.searchsorted(jump_times, t, side="left")


def _left_states(path, times):
    """Vectorized left limits of ``path`` at ``times``."""
    return path.states[_left_index(path.jump_times, times)]


class ConditionalRates:
    """Conditional transition rates of a jump-process destination.

    Subclass and override :meth:`psi_xy`, :meth:`psi_x` and :meth:`targets`,
    or pass the three callables to the constructor.

    ``piecewise_constant`` declares that both rates are constant between the
    points returned by :meth:`breakpoints` (by default the union of the jump
    times of ``X`` and ``Y``).  The declaration is checked on every segment;
    a segment that fails falls back to the trapezoid rule with a warning.
    """

    piecewise_constant = True

    def __init__(self, psi_xy=None, psi_x=None, targets=None):
        if psi_xy is not None:
            self.psi_xy = psi_xy
        if psi_x is not None:
            self.psi_x = psi_x
        if targets is not None:
            self.targets = targets

    def psi_xy(self, t, pair, x_to):
        raise NotImplementedError

    def psi_x(self, t, pair, x_to):
        raise NotImplementedError

    def targets(self, x_from):
        """States reachable from ``x_from`` in one jump."""
        raise NotImplementedError

    def breakpoints(self, pair, t0, T):
        jt = np.concatenate([pair.x.jump_times, pair.y.jump_times])
        return jt[(jt > t0) & (jt < T)]

    def segment_kind(self, pair, a, b):
        """``"constant"``, ``"smooth"`` or ``"unknown"`` on the open segment ``(a, b)``."""
        return "constant" if self.piecewise_constant else "unknown"

    def escape_rates(self, pair, times):
        """Arrays ``(lambda_xy, lambda_x)`` at each time."""
        times = np.asarray(times, dtype=float).reshape(-1)
        lxy = np.array([escape_rate(self, "xy", t, pair) for t in times])
        lx = np.array([escape_rate(self, "x", t, pair) for t in times])
        return lxy, lx


def _checked_rate(value, what):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ModelError(f"{what} returned a non-numeric rate {value!r}") from None
    if not math.isfinite(value) or value < 0.0:
        raise ModelError(f"{what} returned an invalid rate {value!r}")
    return value


def escape_rate(rates, which, t, pair):
    """Sum of ``psi_{which}`` over every state other than ``x(t-)``."""
    if which not in ("xy", "x"):
        raise ParameterError(f"which must be 'xy' or 'x', got {which!r}")
    x_now = pair.x.eval_left(t)
    fn = rates.psi_xy if which == "xy" else rates.psi_x
    total = 0.0
    for x_to in rates.targets(x_now):
        if x_to == x_now:
            continue
        total += _checked_rate(fn(t, pair, x_to), f"psi_{which}")
    return total


@dataclass(frozen=True)
class JumpTEResult:
    pathwise_te: float
    jump_sum: float
    integral_term: float
    n_jumps: int


def _trapezoid(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def _integrate_delta(rates, pair, t0, T):
    """``integral (lambda_x - lambda_xy) dt`` over ``[t0, T)``, segment by segment.

    Each kind of segment is evaluated in one vectorized ``escape_rates`` call.
    """
    bps = np.unique(np.concatenate([[t0, T], rates.breakpoints(pair, t0, T)]))
    bps = bps[(bps >= t0) & (bps <= T)]
    a, b = bps[:-1], bps[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    width = b - a
    kinds = np.array([rates.segment_kind(pair, lo, hi) for lo, hi in zip(a, b)])
    total = 0.0

    const = np.flatnonzero(kinds == "constant")
    if const.size:
        probes = np.concatenate([a[const] + 0.5 * width[const],
                                 a[const] + 0.25 * width[const]])
        lxy, lx = rates.escape_rates(pair, probes)
        d = (lx - lxy).reshape(2, const.size)
        ok = np.abs(d[0] - d[1]) <= CONSTANT_RTOL * np.maximum(1.0, np.abs(d[0]))
        total += float(np.dot(d[0][ok], width[const][ok]))
        if not np.all(ok):
            warnings.warn(
                f"rates declared piecewise constant vary on {int((~ok).sum())} "
                "segment(s); using the trapezoid rule there", RuntimeWarning, stacklevel=3)
            kinds[const[~ok]] = "unknown"

    smooth = np.flatnonzero(kinds == "smooth")
    if smooth.size:
        half = 0.5 * width[smooth]
        times = (a[smooth][:, None] + half[:, None] * (_GL_X[None, :] + 1.0)).ravel()
        lxy, lx = rates.escape_rates(pair, times)
        d = (lx - lxy).reshape(smooth.size, GL_NODES)
        total += float(np.sum(half * (d @ _GL_W)))

    for j in np.flatnonzero(kinds == "unknown"):
        n = max(2, int(math.ceil(width[j] / TRAPEZOID_STEP)) + 1)
        # Stay strictly inside the open segment: rates jump at its ends.
        pad = 1e-12 * max(1.0, abs(b[j]))
        times = np.linspace(a[j] + pad, b[j] - pad, n)
        lxy, lx = rates.escape_rates(pair, times)
        total += _trapezoid(lx - lxy, times)
    return total


def girsanov_pathwise_te(rates, pair, t0, T):
    """Pathwise TE of a realized pair on ``[t0, T)`` via the jump-process Girsanov formula.

    Raises
    ------
    AbsoluteContinuityError
        A realized jump has ``psi_x = 0`` but ``psi_xy > 0``.
    ModelError
        Rates disagree at ``t0`` (the initial-rate hypothesis), are negative or
        non-finite, or a realized jump has zero rate under both laws.
    """
    t0 = check_finite(t0, "t0")
    T = check_finite(T, "T")
    if not t0 < T:
        raise ParameterError(f"need t0 < T, got [{t0}, {T})")
    if pair.x.t_start > t0 or pair.x.t_end < T:
        raise ParameterError("destination path does not cover [t0, T)")

    x0 = pair.x.eval(t0)
    r_xy = _checked_rate(rates.psi_xy(t0, pair, x0), "psi_xy")
    r_x = _checked_rate(rates.psi_x(t0, pair, x0), "psi_x")
    if abs(r_xy - r_x) > CONSTANT_RTOL * max(1.0, r_x):
        raise ModelError(
            f"initial rates disagree at t0={t0}: psi_xy={r_xy}, psi_x={r_x}")

    jt = pair.x.jump_times
    first = np.searchsorted(jt, t0, side="right")
    last = np.searchsorted(jt, T, side="left")
    jump_sum = 0.0
    for j in range(first, last):
        tau = float(jt[j])
        x_to = int(pair.x.states[j + 1])
        num = _checked_rate(rates.psi_xy(tau, pair, x_to), "psi_xy")
        den = _checked_rate(rates.psi_x(tau, pair, x_to), "psi_x")
        if den == 0.0:
            if num > 0.0:
                raise AbsoluteContinuityError(
                    f"jump to {x_to} at t={tau} has psi_x = 0 but psi_xy = {num}")
            raise ModelError(f"realized jump to {x_to} at t={tau} has zero rate")
        if num == 0.0:
            raise ModelError(
                f"realized jump to {x_to} at t={tau} is impossible under psi_xy")
        jump_sum += math.log(num / den)
    integral = _integrate_delta(rates, pair, t0, T)
    total = jump_sum + integral
    if not math.isfinite(total):
        raise NumericalError(f"non-finite pathwise TE {total!r}")
    return JumpTEResult(pathwise_te=total, jump_sum=jump_sum, integral_term=integral,
                        n_jumps=int(last - first))


# -- built-in models ----------------------------------------------------------

class _Propagator:
    """Row-vector propagation ``v -> v expm(M h)`` for many ``h`` at once."""

    def __init__(self, m):
        self.m = np.asarray(m, dtype=float)
        w, v = np.linalg.eig(self.m)
        self.eigen = None
        if np.all(np.abs(w.imag) < 1e-14) and np.linalg.cond(v) < 1e8:
            v = v.real
            self.eigen = (w.real, v, np.linalg.inv(v))

    def apply(self, vecs, h):
        """``vecs`` has shape ``(n, k)``; ``h`` is a scalar or ``(n,)``."""
        h = np.broadcast_to(np.asarray(h, dtype=float), (vecs.shape[0],))
        if self.eigen is not None:
            w, v, vinv = self.eigen
            return ((vecs @ v) * np.exp(np.outer(h, w))) @ vinv
        mats = expm(self.m[None, :, :] * h[:, None, None])
        return np.einsum("ni,nij->nj", vecs, mats)


def _as_generator(rates):
    q = np.array(rates, dtype=float)
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def _stationary(rates):
    """Stationary law of the chain with off-diagonal ``rates`` (diagonal ignored)."""
    ns = null_space(_as_generator(rates).T)
    if ns.shape[1] != 1:
        raise ParameterError("chain does not have a unique stationary law")
    pi = np.abs(ns[:, 0])
    return pi / pi.sum()


class HiddenSourceModel(ConditionalRates):
    """Destination ``X`` driven by a finite-state source ``Y``; ``(X, Y)`` jointly Markov.

    Subclasses define :meth:`channels` (the destination's jumps and their
    rates as a vector over source states) and :meth:`source_generator`.
    ``counting`` destinations have one channel ``x -> x + 1`` whose rates do
    not depend on ``x``.  Histories: the destination over ``[t - s, t)`` and
    the source over ``[t - r, t]``; the rates here only need ``Y(t-)``.
    """

    piecewise_constant = False
    counting = False
    stationary = True
    n_source = 2

    def __init__(self, t0=0.0, T=1.0, s=0.1, r=0.1):
        self.t0 = check_finite(t0, "t0")
        self.T = check_finite(T, "T")
        if not self.t0 < self.T:
            raise ParameterError(f"need t0 < T, got [{t0}, {T})")
        self.s = check_positive(s, "s")
        self.r = check_positive(r, "r")
        self._props = {}
        self._const_post = {}
        self._init_cdf = None

    # model definition --------------------------------------------------------
    def channels(self, x):
        """List of ``(x_to, rates over source states)``."""
        raise NotImplementedError

    def source_generator(self, x):
        raise NotImplementedError

    def mode(self, x):
        """Class of destination states sharing channel rates and source dynamics."""
        return 0 if self.counting else int(x)

    def initial_state(self, rng):
        """Stationary draw of ``(x, y)``; counting destinations start at 0."""
        if self._init_cdf is None:
            law = self.prior(0) if self.counting else self._joint_stationary()[0]
            self._init_cdf = np.cumsum(law)
        k = int(np.searchsorted(self._init_cdf, rng.random() * self._init_cdf[-1],
                                side="right"))
        k = min(k, self._init_cdf.size - 1)
        if self.counting:
            return 0, k
        return k // self.n_source, k % self.n_source

    def _joint_stationary(self):
        nx = self.n_destination
        ny = self.n_source
        q = np.zeros((nx * ny, nx * ny))
        for x in range(nx):
            qy = self.source_generator(x)
            for y in range(ny):
                for y2 in range(ny):
                    if y2 != y:
                        q[x * ny + y, x * ny + y2] += qy[y, y2]
                for x_to, vec in self.channels(x):
                    q[x * ny + y, x_to * ny + y] += vec[y]
        np.fill_diagonal(q, -q.sum(axis=1))
        return _stationary(q), nx

    def prior(self, x):
        """Law of ``Y`` at the start of the destination window, given ``X`` there."""
        m = self.mode(x)
        if m not in self._const_post:
            if self.counting:
                p = _stationary(self.source_generator(0))
            else:
                joint, _ = self._joint_stationary()
                p = joint.reshape(self.n_destination, self.n_source)[m]
                p = p / p.sum()
            self._const_post[m] = p
        return self._const_post[m]

    def exit_vector(self, x):
        m = ("exit", self.mode(x))
        if m not in self._const_post:
            out = np.zeros(self.n_source)
            for _, vec in self.channels(x):
                out += vec
            self._const_post[m] = out
        return self._const_post[m]

    def _propagator(self, x):
        m = self.mode(x)
        if m not in self._props:
            gen = _as_generator(self.source_generator(x))
            self._props[m] = _Propagator(gen - np.diag(self.exit_vector(x)))
        return self._props[m]

    def _channel_vector(self, x_from, x_to):
        for target, vec in self.channels(x_from):
            if target == x_to:
                return vec
        return None

    # simulation --------------------------------------------------------------
    @property
    def history_span(self):
        return max(self.s, self.r)

    def sim_window(self, dt_max=0.0, t0=None, T=None):
        t0 = self.t0 if t0 is None else t0
        T = self.T if T is None else T
        return t0 - self.history_span - 2 * dt_max - 1e-9, T + 2 * dt_max + 1e-9

    def simulate_pair(self, seed, index=0, dt_max=0.0, t0=None, T=None):
        """Joint Gillespie trajectory started from the stationary law."""
        lo, hi = self.sim_window(dt_max, t0, T)
        rng = path_rng(check_seed(seed), index)
        x, y = self.initial_state(rng)
        xt, xs, yt, ys = [], [x], [], [y]
        t = lo
        while True:
            chans = self.channels(x)
            qy = self.source_generator(x)[y].copy()
            qy[y] = 0.0
            rates = np.array([vec[y] for _, vec in chans] + qy.tolist())
            total = rates.sum()
            if total <= 0.0:
                break
            t += rng.exponential(1.0 / total)
            if t >= hi:
                break
            k = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
            k = min(k, rates.size - 1)
            if k < len(chans):
                x = chans[k][0]
                xt.append(t)
                xs.append(x)
            else:
                y = k - len(chans)
                yt.append(t)
                ys.append(y)
        xp = SamplePath._from_parts(np.asarray(xt, dtype=float), 0.0, lo, hi,
                                    np.asarray(xs, dtype=np.int64))
        yp = SamplePath._from_parts(np.asarray(yt, dtype=float), 0.0, lo, hi,
                                    np.asarray(ys, dtype=np.int64))
        return ProcessPair(xp, yp)

    def simulate(self, n_paths, seed, dt_max=0.0, t0=None, T=None):
        return [self.simulate_pair(seed, j, dt_max, t0, T) for j in range(n_paths)]

    # rates -------------------------------------------------------------------
    def targets(self, x_from):
        return [x_to for x_to, _ in self.channels(x_from)]

    def psi_xy(self, t, pair, x_to):
        x_now = pair.x.eval_left(t)
        vec = self._channel_vector(x_now, x_to)
        if vec is None:
            return 0.0
        return float(vec[pair.y.eval_left(t)])

    def psi_x(self, t, pair, x_to):
        x_now = pair.x.eval_left(t)
        vec = self._channel_vector(x_now, x_to)
        if vec is None:
            return 0.0
        return float(self.posterior(pair, [t])[0] @ vec)

    def posterior(self, pair, times):
        """Filter ``P(Y_t = . | destination events in [t - s, t))`` for each time."""
        times = np.asarray(times, dtype=float).reshape(-1)
        jt = pair.x.jump_times
        states = pair.x.states
        lo = np.searchsorted(jt, times - self.s, side="right")
        hi = np.searchsorted(jt, times, side="left")
        out = np.empty((times.size, self.n_source))
        empty = lo == hi
        if empty.any():
            # No destination event in the window: the posterior only depends
            # on the destination's state class.
            modes = states[lo[empty]] if not self.counting else None
            if modes is None or np.all(modes == modes[0]):
                out[empty] = self._window_post(int(states[lo[empty][0]]))
            else:
                idx = np.flatnonzero(empty)
                for j, x in zip(idx, modes):
                    out[j] = self._window_post(int(x))
        if not empty.all():
            busy = np.flatnonzero(~empty)
            keys = lo[busy] * (jt.size + 1) + hi[busy]
            for key in np.unique(keys):
                sel = busy[keys == key]
                out[sel] = self._filter_group(times[sel], jt, states,
                                              int(lo[sel[0]]), int(hi[sel[0]]))
        return out

    def _window_post(self, x):
        m = ("window", self.mode(x))
        if m not in self._const_post:
            v = self._propagator(x).apply(self.prior(x)[None, :], self.s)
            self._const_post[m] = v[0] / v[0].sum()
        return self._const_post[m]

    def _filter_group(self, ts, jt, states, j0, j1):
        x_cur = int(states[j0])
        v = np.broadcast_to(self.prior(x_cur), (ts.size, self.n_source)).copy()
        cur = ts - self.s
        for j in range(j0, j1):
            tau = float(jt[j])
            v = self._propagator(x_cur).apply(v, tau - cur)
            x_new = int(states[j + 1])
            vec = self._channel_vector(x_cur, x_new)
            if vec is None:
                raise ModelError(f"destination jump {x_cur} -> {x_new} is not a channel")
            v = v * vec
            total = v.sum(axis=1, keepdims=True)
            if np.any(total <= 0.0):
                raise AbsoluteContinuityError(
                    f"destination jump at t={tau} has zero probability under the model")
            v = v / total
            cur = tau
            x_cur = x_new
        v = self._propagator(x_cur).apply(v, ts - cur)
        return v / v.sum(axis=1, keepdims=True)

    def breakpoints(self, pair, t0, T):
        jx = pair.x.jump_times
        pts = np.concatenate([jx, jx + self.s, pair.y.jump_times])
        return pts[(pts > t0) & (pts < T)]

    def segment_kind(self, pair, a, b):
        jt = pair.x.jump_times
        # The window [t - s, t) holds a destination jump for some t in (a, b)
        # iff some jump lies in (a - s, b).
        n_in = np.searchsorted(jt, b, side="left") - np.searchsorted(jt, a - self.s,
                                                                     side="right")
        return "smooth" if n_in > 0 else "constant"

    def escape_rates(self, pair, times):
        times = np.asarray(times, dtype=float).reshape(-1)
        xl = _left_states(pair.x, times)
        yl = _left_states(pair.y, times)
        post = self.posterior(pair, times)
        if self.counting:
            ev = self.exit_vector(0)
            return ev[yl], post @ ev
        lxy = np.empty(times.size)
        lx = np.empty(times.size)
        for x in np.unique(xl):
            sel = xl == x
            ev = self.exit_vector(int(x))
            lxy[sel] = ev[yl[sel]]
            lx[sel] = post[sel] @ ev
        return lxy, lx

    # grid/plug-in hooks ------------------------------------------------------
    def grid(self, dt):
        return CombGrid(self.t0, self.T, self.s, self.r, dt)

    def plugin_lengths(self, grid):
        return {"x_len": grid.k, "y_len": grid.l}

    @property
    def plugin_relative(self):
        return "x" if self.counting else False

    def source_free(self):
        """Rates with the source ignored: ``psi_xy`` replaced by ``psi_x``."""
        return ConditionalRates(self.psi_x, self.psi_x, self.targets)


class ModulatedPoissonModel(HiddenSourceModel):
    """Counting destination with intensity ``lam0`` or ``lam1`` set by a 2-state source.

    The source flips ``0 -> 1`` at rate ``rate01`` and ``1 -> 0`` at ``rate10``.
    """

    counting = True

    def __init__(self, lam0=1.0, lam1=4.0, rate01=1.0, rate10=1.0, t0=0.0, T=1.0,
                 s=0.1, r=0.1):
        super().__init__(t0, T, s, r)
        self.lam = np.array([check_nonnegative(lam0, "lam0"),
                             check_nonnegative(lam1, "lam1")])
        self.q = np.array([[0.0, check_positive(rate01, "rate01")],
                           [check_positive(rate10, "rate10"), 0.0]])
        if self.lam.max() <= 0:
            raise ParameterError("at least one intensity must be positive")

    def channels(self, x):
        return [(x + 1, self.lam)]

    def source_generator(self, x):
        return self.q

    def stationary_rate(self):
        """TE rate in the short-window limit, where ``psi_x`` is the stationary mean."""
        pi = _stationary(self.q)
        lx = float(pi @ self.lam)
        terms = [l * math.log(l / lx) - l + lx if l > 0 else lx for l in self.lam]
        return float(pi @ np.array(terms))


class TwoStateFeedbackModel(HiddenSourceModel):
    """Binary destination and binary source that modulate each other's flip rates.

    ``x_rates[x][y]`` is the rate at which ``X`` leaves ``x`` while ``Y = y``;
    ``y_rates[y][x]`` is the rate at which ``Y`` leaves ``y`` while ``X = x``.
    """

    n_destination = 2

    def __init__(self, x_rates=((1.0, 3.0), (2.0, 0.5)), y_rates=((1.0, 2.0), (2.0, 1.0)),
                 t0=0.0, T=1.0, s=0.1, r=0.1):
        super().__init__(t0, T, s, r)
        self.x_rates = np.array(x_rates, dtype=float)
        self.y_rates = np.array(y_rates, dtype=float)
        for name, arr in (("x_rates", self.x_rates), ("y_rates", self.y_rates)):
            if arr.shape != (2, 2) or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ParameterError(f"{name} must be a 2x2 array of positive rates")

    def channels(self, x):
        return [(1 - x, self.x_rates[x])]

    def source_generator(self, x):
        return np.array([[0.0, self.y_rates[0, x]], [self.y_rates[1, x], 0.0]])


class IndependentPoissonModel(ConditionalRates):
    """Destination and source are independent Poisson counting processes."""

    piecewise_constant = True
    counting = True
    stationary = True

    def __init__(self, lam=1.0, mu=1.0, t0=0.0, T=1.0, s=0.1, r=0.1):
        super().__init__()
        self.lam = check_positive(lam, "lam")
        self.mu = check_positive(mu, "mu")
        self.t0 = check_finite(t0, "t0")
        self.T = check_finite(T, "T")
        if not self.t0 < self.T:
            raise ParameterError(f"need t0 < T, got [{t0}, {T})")
        self.s = check_positive(s, "s")
        self.r = check_positive(r, "r")

    def targets(self, x_from):
        return [x_from + 1]

    def psi_xy(self, t, pair, x_to):
        return self.lam if x_to == pair.x.eval_left(t) + 1 else 0.0

    psi_x = psi_xy

    @property
    def history_span(self):
        return max(self.s, self.r)

    def sim_window(self, dt_max=0.0, t0=None, T=None):
        t0 = self.t0 if t0 is None else t0
        T = self.T if T is None else T
        return t0 - self.history_span - 2 * dt_max - 1e-9, T + 2 * dt_max + 1e-9

    def simulate_pair(self, seed, index=0, dt_max=0.0, t0=None, T=None):
        lo, hi = self.sim_window(dt_max, t0, T)
        rng = path_rng(check_seed(seed), index)
        paths = []
        for rate in (self.lam, self.mu):
            times = poisson_arrivals(rate, lo, hi, rng)
            paths.append(SamplePath._from_parts(times, 0.0, lo, hi,
                                                np.arange(times.size + 1, dtype=np.int64)))
        return ProcessPair(*paths)

    def simulate(self, n_paths, seed, dt_max=0.0, t0=None, T=None):
        return [self.simulate_pair(seed, j, dt_max, t0, T) for j in range(n_paths)]

    def grid(self, dt):
        return CombGrid(self.t0, self.T, self.s, self.r, dt)

    def plugin_lengths(self, grid):
        return {"x_len": grid.k, "y_len": grid.l}

    plugin_relative = True

    def source_free(self):
        return self


MODELS = {
    "independent-poisson": IndependentPoissonModel,
    "modulated-poisson": ModulatedPoissonModel,
    "two-state-feedback": TwoStateFeedbackModel,
}


def make_model(name, params=None):
    """Instantiate a registered model from a JSON-style parameter block."""
    if name not in MODELS:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
    try:
        return MODELS[name](**(params or {}))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name!r}: {exc}") from None


# -- Monte Carlo ---------------------------------------------------------------

def _window(model, t0, T):
    t0 = model.t0 if t0 is None else check_finite(t0, "t0")
    T = model.T if T is None else check_finite(T, "T")
    if not t0 < T:
        raise ParameterError(f"need t0 < T, got [{t0}, {T})")
    return t0, T


def ept_monte_carlo(model, n_paths, seed, t0=None, T=None, rates=None):
    """Mean and standard error of the pathwise TE over ``n_paths`` simulated pairs.

    ``rates`` defaults to the model's own (true) conditional rates.
    """
    n_paths = int(n_paths)
    if n_paths < 2:
        raise EstimationError("Monte Carlo EPT needs at least 2 paths")
    seed = check_seed(seed)
    t0, T = _window(model, t0, T)
    rates = model if rates is None else rates
    pt = np.empty(n_paths)
    js = np.empty(n_paths)
    it = np.empty(n_paths)
    for j in range(n_paths):
        pair = model.simulate_pair(seed, j, t0=t0, T=T)
        try:
            res = girsanov_pathwise_te(rates, pair, t0, T)
        except AbsoluteContinuityError as exc:
            raise AbsoluteContinuityError(f"path {j} (seed {seed}): {exc}") from exc
        pt[j] = res.pathwise_te
        js[j] = res.jump_sum
        it[j] = res.integral_term
    return TEEstimate(
        value=float(pt.mean()), stderr=float(pt.std(ddof=1) / math.sqrt(n_paths)),
        n_paths=n_paths, samples=pt,
        metadata={"mode": "girsanov", "t0": t0, "T": T,
                  "jump_sum_mean": float(js.mean()), "integral_mean": float(it.mean())})


def rate_integrand(rates, pair, t):
    """``sum over channels of psi_xy ln(psi_xy/psi_x) - psi_xy + psi_x`` at ``t``.

    For a counting destination this is ``lambda_xy (ln(psi_xy/psi_x) - 1) + lambda_x``.
    """
    x_now = pair.x.eval_left(t)
    total = 0.0
    for x_to in rates.targets(x_now):
        if x_to == x_now:
            continue
        a = _checked_rate(rates.psi_xy(t, pair, x_to), "psi_xy")
        b = _checked_rate(rates.psi_x(t, pair, x_to), "psi_x")
        if a > 0.0:
            if b == 0.0:
                raise AbsoluteContinuityError(
                    f"channel {x_now} -> {x_to} at t={t}: psi_x = 0 < psi_xy = {a}")
            total += a * math.log(a / b)
        total += b - a
    return total


def poisson_dest_te_rate(model, t, n_paths, seed, rates=None):
    """Monte Carlo TE rate at time ``t``; returns ``(rate, stderr)``."""
    t = check_finite(t, "t")
    n_paths = int(n_paths)
    if n_paths < 2:
        raise EstimationError("TE rate needs at least 2 paths")
    seed = check_seed(seed)
    rates = model if rates is None else rates
    vals = np.empty(n_paths)
    for j in range(n_paths):
        pair = model.simulate_pair(seed, j, t0=t, T=t + 1e-6)
        vals[j] = rate_integrand(rates, pair, t)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))
