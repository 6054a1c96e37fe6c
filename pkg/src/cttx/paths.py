"""Piecewise-constant sample paths and the processes that generate them.

A :class:`SamplePath` is a right-continuous step function on a half-open
window ``[t_start, t_end)``.  Simulators here produce the three kinds of path
the rest of the package works with: counting paths of a homogeneous Poisson
process, deterministically lagged copies of a path, and trajectories of a
finite-state continuous-time Markov chain.
"""

from dataclasses import dataclass

import numpy as np

from ._rng import path_rng
from ._validation import check_positive, check_seed, check_window
from .exceptions import DomainError, ParameterError


class SamplePath:
    """Right-continuous step path on ``[t_start, t_end)``.

    Parameters
    ----------
    t_start, t_end : float
        Window the path is defined on.
    jump_times : array_like
        Strictly increasing jump times inside ``(t_start, t_end)``.
    states : array_like of int
        ``len(jump_times) + 1`` states; ``states[0]`` holds on
        ``[t_start, jump_times[0])`` and consecutive states differ.
    """

    __slots__ = ("_base", "_shift", "_start", "_end", "_states")

    def __init__(self, t_start, t_end, jump_times, states):
        t_start, t_end = check_window(t_start, t_end)
        jt = np.array(jump_times, dtype=float).reshape(-1)
        st = np.array(states, dtype=np.int64).reshape(-1)
        if st.size != jt.size + 1:
            raise ParameterError(
                f"need len(states) == len(jump_times) + 1, got {st.size} and {jt.size}")
        if jt.size:
            if not np.all(np.isfinite(jt)):
                raise ParameterError("jump times must be finite")
            if np.any(np.diff(jt) <= 0):
                raise ParameterError("jump times must be strictly increasing")
            if jt[0] <= t_start or jt[-1] >= t_end:
                raise ParameterError("jump times must lie inside (t_start, t_end)")
            if np.any(st[1:] == st[:-1]):
                raise ParameterError("consecutive states must differ")
        self._init(jt, 0.0, t_start, t_end, st)

    def _init(self, base, shift, start, end, states):
        base.setflags(write=False)
        states.setflags(write=False)
        self._base = base
        self._shift = shift
        self._start = start
        self._end = end
        self._states = states

    @classmethod
    def _from_parts(cls, base, shift, start, end, states):
        # Trusted constructor: no validation, arrays must already be owned.
        obj = cls.__new__(cls)
        obj._init(base, shift, start, end, states)
        return obj

    @classmethod
    def constant(cls, t_start, t_end, state=0):
        return cls(t_start, t_end, [], [state])

    # Jump times are stored unshifted; lagging only changes ``_shift``.  That
    # keeps ``lag_path(x, e)`` evaluations bit-identical to ``x`` at ``t + e``.
    @property
    def t_start(self):
        return self._start - self._shift

    @property
    def t_end(self):
        return self._end - self._shift

    @property
    def jump_times(self):
        if self._shift == 0.0:
            return self._base
        return self._base - self._shift

    @property
    def states(self):
        return self._states

    @property
    def n_jumps(self):
        return int(self._base.size)

    def _check_times(self, base_t):
        lo = np.min(base_t)
        hi = np.max(base_t)
        if lo < self._start or hi >= self._end:
            raise DomainError(
                f"time outside the path window [{self.t_start}, {self.t_end})")

    def eval(self, t):
        """Value at ``t`` (post-jump value at a jump time)."""
        b = float(t) + self._shift
        self._check_times(b)
        return int(self._states[np.searchsorted(self._base, b, side="right")])

    def eval_left(self, t):
        """Left limit at ``t`` (pre-jump value at a jump time)."""
        b = float(t) + self._shift
        self._check_times(b)
        return int(self._states[np.searchsorted(self._base, b, side="left")])

    def sample_on_grid(self, times):
        times = np.asarray(times, dtype=float).reshape(-1)
        if times.size == 0:
            return np.empty(0, dtype=np.int64)
        b = times + self._shift
        self._check_times(b)
        return self._states[np.searchsorted(self._base, b, side="right")]

    def count_in(self, a, b):
        """Number of jumps in ``(a, b]``."""
        lo = np.searchsorted(self._base, float(a) + self._shift, side="right")
        hi = np.searchsorted(self._base, float(b) + self._shift, side="right")
        return int(hi - lo)

    def restrict(self, t_start, t_end):
        """The same path seen on the sub-window ``[t_start, t_end)``."""
        t_start, t_end = check_window(t_start, t_end)
        if t_start < self.t_start or t_end > self.t_end:
            raise DomainError("restriction must lie inside the path window")
        jt = self.jump_times
        keep = (jt > t_start) & (jt < t_end)
        first = np.searchsorted(jt, t_start, side="right")
        states = self._states[first:first + int(keep.sum()) + 1]
        return SamplePath(t_start, t_end, jt[keep], states)

    def to_dict(self):
        return {
            "t_start": self.t_start,
            "t_end": self.t_end,
            "jump_times": [float(v) for v in self.jump_times],
            "states": [int(v) for v in self._states],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["t_start"], data["t_end"], data["jump_times"], data["states"])

    def __eq__(self, other):
        if not isinstance(other, SamplePath):
            return NotImplemented
        return (self.t_start == other.t_start and self.t_end == other.t_end
                and np.array_equal(self.jump_times, other.jump_times)
                and np.array_equal(self._states, other._states))

    def __hash__(self):
        return hash((self.t_start, self.t_end, self.jump_times.tobytes(),
                     self._states.tobytes()))

    def __repr__(self):
        return (f"SamplePath([{self.t_start:g}, {self.t_end:g}), "
                f"{self.n_jumps} jumps, x0={int(self._states[0])})")


@dataclass(frozen=True)
class ProcessPair:
    """Destination ``x`` and source ``y`` observed together.

    The two components may be defined on different windows (a lagged source
    is); :attr:`t_start`/:attr:`t_end` give the common part.
    """

    x: SamplePath
    y: SamplePath

    @property
    def t_start(self):
        return max(self.x.t_start, self.y.t_start)

    @property
    def t_end(self):
        return min(self.x.t_end, self.y.t_end)

    def to_dict(self):
        return {"x": self.x.to_dict(), "y": self.y.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(SamplePath.from_dict(data["x"]), SamplePath.from_dict(data["y"]))


@dataclass(frozen=True)
class PoissonSpec:
    lam: float
    epsilon: float = 1.0

    def __post_init__(self):
        check_positive(self.lam, "lambda")
        check_positive(self.epsilon, "epsilon")


@dataclass(frozen=True)
class CtmcSpec:
    rate_matrix: tuple
    init_state: int = 0

    def __post_init__(self):
        q = np.asarray(self.rate_matrix, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] == 0:
            raise ParameterError("rate_matrix must be a non-empty square matrix")
        off = q[~np.eye(q.shape[0], dtype=bool)]
        if not np.all(np.isfinite(off)) or np.any(off < 0):
            raise ParameterError("off-diagonal rates must be finite and >= 0")
        if not 0 <= int(self.init_state) < q.shape[0]:
            raise ParameterError(f"init_state {self.init_state} out of range")
        object.__setattr__(self, "rate_matrix", tuple(map(tuple, q.tolist())))

    @property
    def n_states(self):
        return len(self.rate_matrix)

    def generator(self):
        """Rate matrix with the diagonal reset to minus the row sums."""
        q = np.array(self.rate_matrix, dtype=float)
        np.fill_diagonal(q, 0.0)
        np.fill_diagonal(q, -q.sum(axis=1))
        return q


def poisson_arrivals(lam, t_start, t_end, rng):
    """Arrival times of a rate-``lam`` Poisson process on ``(t_start, t_end)``.

    Inter-arrival gaps are drawn as iid exponentials, in batches.
    """
    span = t_end - t_start
    mean = lam * span
    batch = int(mean + 5.0 * np.sqrt(mean) + 10)
    out = []
    t = t_start
    while True:
        gaps = rng.exponential(1.0 / lam, size=batch)
        times = t + np.cumsum(gaps)
        if times[-1] >= t_end:
            out.append(times[times < t_end])
            break
        out.append(times)
        t = times[-1]
    times = np.concatenate(out)
    # An arrival landing exactly on t_start is a measure-zero event.
    return times[times > t_start]


def simulate_thppp(spec, t_start, t_end, seed, index=0):
    """Counting path of a homogeneous Poisson process, starting at 0."""
    if not isinstance(spec, PoissonSpec):
        spec = PoissonSpec(check_positive(spec, "lambda"))
    t_start, t_end = check_window(t_start, t_end)
    rng = path_rng(check_seed(seed), index)
    times = poisson_arrivals(spec.lam, t_start, t_end, rng)
    return SamplePath._from_parts(times, 0.0, t_start, t_end,
                                  np.arange(times.size + 1, dtype=np.int64))


def lag_path(x, epsilon):
    """Path ``y`` with ``y(t) = x(t + epsilon)`` on ``[t_start - eps, t_end - eps)``."""
    epsilon = check_positive(epsilon, "epsilon")
    return SamplePath._from_parts(x._base, x._shift + epsilon, x._start, x._end,
                                  x._states)


def gillespie(generator, init_state, t_start, t_end, rng):
    """Jump times and states of a CTMC with the given generator."""
    q = np.asarray(generator, dtype=float)
    exit_rates = -np.diag(q)
    jump_probs = []
    for i in range(q.shape[0]):
        row = q[i].copy()
        row[i] = 0.0
        total = row.sum()
        jump_probs.append(np.cumsum(row / total) if total > 0 else None)
    times = []
    states = [int(init_state)]
    t = t_start
    s = int(init_state)
    while True:
        rate = exit_rates[s]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= t_end:
            break
        s = int(np.searchsorted(jump_probs[s], rng.random(), side="right"))
        times.append(t)
        states.append(s)
    return np.asarray(times, dtype=float), np.asarray(states, dtype=np.int64)


def simulate_ctmc(spec, t_start, t_end, seed, index=0):
    """Gillespie trajectory of a finite-state, time-homogeneous Markov chain."""
    t_start, t_end = check_window(t_start, t_end)
    rng = path_rng(check_seed(seed), index)
    times, states = gillespie(spec.generator(), spec.init_state, t_start, t_end, rng)
    return SamplePath._from_parts(times, 0.0, t_start, t_end, states)


def sample_on_grid(path, times):
    return path.sample_on_grid(times)


class PathEnsemble:
    """Many paths evaluated together on shared time grids.

    ``evaluate`` returns an ``(n_paths, n_times)`` matrix with the same values
    ``SamplePath.sample_on_grid`` would give, without a Python loop per path.
    """

    def __init__(self, paths):
        paths = list(paths)
        if not paths:
            raise ParameterError("empty ensemble")
        self.paths = paths
        n = len(paths)
        sizes = np.fromiter((p._base.size for p in paths), dtype=np.int64, count=n)
        self._owner = np.repeat(np.arange(n), sizes)
        self._base = (np.concatenate([p._base for p in paths])
                      if sizes.sum() else np.empty(0))
        self._state_off = np.concatenate([[0], np.cumsum(sizes + 1)[:-1]])
        self._states = np.concatenate([p._states for p in paths])
        self._shift = np.array([p._shift for p in paths])
        self._start = np.array([p._start for p in paths])
        self._end = np.array([p._end for p in paths])
        self._shift_groups = {float(s): np.flatnonzero(self._shift == s)
                              for s in np.unique(self._shift)}

    def __len__(self):
        return len(self.paths)

    def evaluate(self, times, block=64):
        times = np.asarray(times, dtype=float).reshape(-1)
        n = len(self.paths)
        out = np.empty((n, times.size), dtype=np.int64)
        if times.size == 0:
            return out
        lo, hi = times.min(), times.max()
        if np.any(lo + self._shift < self._start) or np.any(hi + self._shift >= self._end):
            raise DomainError("grid time outside some path window")
        order = np.argsort(times, kind="stable")
        sorted_times = times[order]
        for shift, members in self._shift_groups.items():
            mask = np.zeros(n, dtype=bool)
            mask[members] = True
            jmask = mask[self._owner]
            base = self._base[jmask]
            owner = self._owner[jmask]
            # Re-index owners to 0..len(members)-1 for bincount.
            local = np.searchsorted(members, owner)
            for b0 in range(0, times.size, block):
                nodes = sorted_times[b0:b0 + block] + shift
                m = nodes.size
                pos = np.searchsorted(nodes, base, side="left")
                counts = np.bincount(local * (m + 1) + pos,
                                     minlength=members.size * (m + 1))
                counts = counts.reshape(members.size, m + 1)[:, :m].cumsum(axis=1)
                idx = self._state_off[members][:, None] + counts
                out[np.ix_(members, order[b0:b0 + m])] = self._states[idx]
        return out
