"""Uniform comb grids over ``[t0, T)`` with history tails below ``t0``.

All node times are rebuilt as ``integer_index * dt`` so that a grid and any
refinement of it agree exactly on shared nodes.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_finite, check_positive
from .exceptions import GridError

FLOOR_GUARD = 1e-9


def gfloor(x):
    """``floor`` with a small guard so that e.g. ``0.3 / 0.1`` floors to 3."""
    return math.floor(x + FLOOR_GUARD)


@dataclass(frozen=True)
class CombGrid:
    """Comb grid for window ``[t0, T)``, history lengths ``s``, ``r`` and step ``dt``.

    Derived integers: ``n_lo = floor(t0/dt)``, ``n_hi = floor(T/dt)``,
    ``w = floor(max(s, r)/dt)``, ``tau = n_hi - n_lo``, ``k = floor(s/dt)``,
    ``l = floor(r/dt)``.  Node ``i`` sits at ``(n_hi - i) * dt``.
    """

    t0: float
    T: float
    s: float
    r: float
    dt: float

    def __post_init__(self):
        t0 = check_finite(self.t0, "t0", GridError)
        T = check_finite(self.T, "T", GridError)
        check_positive(self.s, "s", GridError)
        check_positive(self.r, "r", GridError)
        dt = check_positive(self.dt, "dt", GridError)
        if not t0 < T:
            raise GridError(f"need t0 < T, got [{t0}, {T})")
        if dt >= T - t0:
            raise GridError(f"dt={dt} is not smaller than the window length {T - t0}")
        if self.tau < 1:
            raise GridError(f"dt={dt} leaves no grid step inside [{t0}, {T})")

    @property
    def n_lo(self):
        return gfloor(self.t0 / self.dt)

    @property
    def n_hi(self):
        return gfloor(self.T / self.dt)

    @property
    def w(self):
        return gfloor(max(self.s, self.r) / self.dt)

    @property
    def tau(self):
        return self.n_hi - self.n_lo

    @property
    def k(self):
        return gfloor(self.s / self.dt)

    @property
    def l(self):  # noqa: E743
        return gfloor(self.r / self.dt)

    def node(self, i):
        """Time of node ``i`` (node 0 is the top of the grid)."""
        if not 0 <= i < self.tau:
            raise IndexError(f"node index {i} outside [0, {self.tau})")
        return (self.n_hi - i) * self.dt

    def node_time(self, i):
        # Unchecked; used for history nodes below the bottom step.
        return (self.n_hi - i) * self.dt

    def comb_indices(self):
        """Integer indices of the comb set, exactly as the closed form writes it."""
        return np.arange(self.n_lo - self.w + 1, self.n_hi + 1)

    def comb(self):
        return self.comb_indices() * self.dt

    @property
    def lowest_index(self):
        # One node below the verbatim comb: the deepest history node any step
        # with history length w needs.
        return self.n_lo - self.w

    def history_nodes(self, i, length):
        """The ``length + 1`` history times of step ``i``, oldest first."""
        if not 0 <= i < self.tau:
            raise IndexError(f"step index {i} outside [0, {self.tau})")
        if length < 0:
            raise GridError("history length must be >= 0")
        idx = np.arange(self.n_hi - i - length - 1, self.n_hi - i)
        if idx[0] < self.lowest_index:
            raise GridError(
                f"history of step {i} with length {length} runs below the comb")
        return idx * self.dt

    def all_times(self):
        """Every time any step of this grid can touch, ascending."""
        return np.arange(self.lowest_index, self.n_hi + 1) * self.dt

    def with_dt(self, dt):
        return CombGrid(self.t0, self.T, self.s, self.r, dt)


def build_grid(t0, T, s, r, dt):
    return CombGrid(t0, T, s, r, dt)


def node(grid, i):
    return grid.node(i)


def history_nodes(grid, i, length):
    return grid.history_nodes(i, length)


def refines(dt_fine, dt_coarse, rtol=1e-12):
    """True when ``dt_coarse`` is a whole multiple of ``dt_fine``."""
    dt_fine = check_positive(dt_fine, "dt_fine", GridError)
    dt_coarse = check_positive(dt_coarse, "dt_coarse", GridError)
    m = round(dt_coarse / dt_fine)
    if m < 1:
        return False
    return abs(m * dt_fine - dt_coarse) <= rtol * dt_coarse
