"""Discrete-time transfer entropy on finite alphabets.

Everything is in nats.  A KL divergence whose first argument puts mass where
the second has none is reported as ``math.inf``.

Two routes compute the same per-step quantity:

* exact: conditional pmf tables (:class:`CondPmfTable`) built from a known
  joint law and combined by :func:`te_step`;
* plug-in: symbol counts over a Monte Carlo ensemble.  The fast path
  (:func:`plugin_log_ratios`) works on integer arrays; :func:`estimate_cond_table`
  exposes the same counts as tables.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .comb import CombGrid
from .exceptions import ContractError, EstimationError
from .paths import PathEnsemble, ProcessPair

PMF_ATOL = 1e-12
WEIGHT_ATOL = 1e-9


class Pmf:
    """Finite probability mass function over hashable symbols."""

    __slots__ = ("support", "probs", "_index")

    def __init__(self, support, probs, atol=PMF_ATOL):
        support = tuple(support)
        probs = np.asarray(probs, dtype=float).reshape(-1)
        if len(support) != probs.size:
            raise ContractError("support and probs differ in length")
        if len(set(support)) != len(support):
            raise ContractError("duplicate symbols in pmf support")
        if probs.size == 0:
            raise ContractError("empty pmf")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ContractError("probabilities must be finite and >= 0")
        if abs(probs.sum() - 1.0) > atol:
            raise ContractError(f"probabilities sum to {probs.sum()!r}, not 1")
        self.support = support
        self.probs = probs
        self._index = {x: j for j, x in enumerate(support)}

    @classmethod
    def from_dict(cls, mapping, atol=PMF_ATOL):
        return cls(list(mapping.keys()), list(mapping.values()), atol=atol)

    @classmethod
    def from_counts(cls, mapping):
        total = float(sum(mapping.values()))
        return cls(list(mapping.keys()), [c / total for c in mapping.values()])

    @classmethod
    def point(cls, symbol):
        return cls([symbol], [1.0])

    def prob(self, symbol):
        j = self._index.get(symbol)
        return 0.0 if j is None else float(self.probs[j])

    def to_dict(self):
        return dict(zip(self.support, self.probs.tolist()))

    def mean(self):
        return float(np.dot(np.asarray(self.support, dtype=float), self.probs))

    def entropy(self):
        p = self.probs[self.probs > 0]
        return float(-np.sum(p * np.log(p)))

    def __len__(self):
        return len(self.support)

    def __repr__(self):
        return f"Pmf({self.to_dict()!r})"


def kl_divergence(p, q):
    """``sum_x p(x) ln(p(x)/q(x))``; ``inf`` when ``p`` is not dominated by ``q``."""
    if not isinstance(p, Pmf) or not isinstance(q, Pmf):
        raise ContractError("kl_divergence expects two Pmf objects")
    total = 0.0
    for x, px in zip(p.support, p.probs):
        if px <= 0.0:
            continue
        qx = q.prob(x)
        if qx <= 0.0:
            return math.inf
        total += px * math.log(px / qx)
    # Rounding can leave tiny negatives for p == q.
    return max(total, 0.0)


def product_pmf(pmfs):
    """Joint pmf of independent coordinates, keyed by symbol tuples."""
    joint = {(): 1.0}
    for p in pmfs:
        joint = {key + (x,): w * px for key, w in joint.items()
                 for x, px in zip(p.support, p.probs)}
    return Pmf.from_dict(joint, atol=1e-9)


def product_kl(ps, qs):
    """KL between product measures, as the sum of the factor divergences."""
    ps, qs = list(ps), list(qs)
    if len(ps) != len(qs):
        raise ContractError(f"{len(ps)} factors against {len(qs)}")
    total = 0.0
    for p, q in zip(ps, qs):
        total += kl_divergence(p, q)
    return total


class HistoryKey(NamedTuple):
    x_hist: tuple
    y_hist: Optional[tuple] = None


class CondPmfTable:
    """Conditional pmfs indexed by history context, with context weights."""

    def __init__(self, entries, atol=WEIGHT_ATOL):
        entries = dict(entries)
        if not entries:
            raise ContractError("empty conditional table")
        total = 0.0
        for key, (pmf, weight) in entries.items():
            if not isinstance(pmf, Pmf):
                raise ContractError(f"entry {key!r} does not hold a Pmf")
            if weight < 0:
                raise ContractError(f"negative weight for {key!r}")
            total += weight
        if abs(total - 1.0) > atol:
            raise ContractError(f"context weights sum to {total!r}, not 1")
        self.entries = entries

    def __getitem__(self, key):
        return self.entries[key]

    def __contains__(self, key):
        return key in self.entries

    def __len__(self):
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def pmf(self, key):
        return self.entries[key][0]

    def weight(self, key):
        return self.entries[key][1]


@dataclass(frozen=True)
class TEEstimate:
    """A transfer-entropy value (nats) with its per-step breakdown.

    ``per_step`` holds ``(i, te_i)`` pairs and ``value`` is their sum.  Monte
    Carlo path-measure estimates have no grid and leave ``per_step`` empty.
    """

    value: float
    stderr: float = 0.0
    n_paths: int = 0
    per_step: tuple = ()
    node_times: tuple = ()
    step_stderr: tuple = ()
    samples: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def divergent(self):
        return math.isinf(self.value)

    def to_dict(self):
        out = {
            "value": self.value,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "per_step": [{"i": i, "node_time": t, "te_nats": v}
                         for (i, v), t in zip(self.per_step, self.node_times)],
        }
        if self.metadata:
            out["metadata"] = self.metadata
        return out


# -- exact route ---------------------------------------------------------------

def te_step(joint_table, x_table):
    """Expected KL between the (x, y)-conditioned and x-conditioned pmfs."""
    total = 0.0
    for key, (pmf_xy, weight) in joint_table.items():
        if weight == 0.0:
            continue
        x_key = HistoryKey(key.x_hist)
        if x_key not in x_table:
            raise ContractError(f"x-history {key.x_hist!r} missing from x-only table")
        kl = kl_divergence(pmf_xy, x_table.pmf(x_key))
        if math.isinf(kl):
            return math.inf
        total += weight * kl
    return total


def _as_tuple(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v,)


def joint_to_tables(joint):
    """Split an exact joint ``{(x_n, x_hist, y_hist): p}`` into conditional tables."""
    ctx_xy = defaultdict(lambda: defaultdict(float))
    ctx_x = defaultdict(lambda: defaultdict(float))
    for (xn, xh, yh), p in joint.items():
        if p < 0:
            raise ContractError("negative joint probability")
        if p == 0.0:
            continue
        xh, yh = _as_tuple(xh), _as_tuple(yh)
        ctx_xy[HistoryKey(xh, yh)][xn] += p
        ctx_x[HistoryKey(xh)][xn] += p
    total = sum(sum(d.values()) for d in ctx_x.values())
    if abs(total - 1.0) > PMF_ATOL * max(1, len(joint)):
        raise ContractError(f"joint probabilities sum to {total!r}")

    def build(ctx):
        entries = {}
        for key, d in ctx.items():
            w = sum(d.values())
            entries[key] = (Pmf(list(d), [v / w for v in d.values()], atol=1e-9),
                            w / total)
        return CondPmfTable(entries)

    return build(ctx_xy), build(ctx_x)


def schreiber_te(joint, k=None, l=None):  # noqa: E741
    """Schreiber's transfer entropy from an exact joint pmf.

    ``joint`` maps ``(x_n, x_hist, y_hist)`` to probabilities, with
    ``x_hist``/``y_hist`` tuples of ``k + 1`` and ``l + 1`` symbols.  Evaluated
    as the triple sum of ``p(x_n, xh, yh) ln[p(x_n|xh,yh) / p(x_n|xh)]``.
    """
    p_xy_ctx = defaultdict(float)
    p_x_ctx = defaultdict(float)
    p_xn_x = defaultdict(float)
    items = []
    for (xn, xh, yh), p in joint.items():
        xh, yh = _as_tuple(xh), _as_tuple(yh)
        if k is not None and len(xh) != k + 1:
            raise ContractError(f"x history {xh!r} does not have k + 1 = {k + 1} symbols")
        if l is not None and len(yh) != l + 1:
            raise ContractError(f"y history {yh!r} does not have l + 1 = {l + 1} symbols")
        if p < 0:
            raise ContractError("negative joint probability")
        if p == 0.0:
            continue
        items.append((xn, xh, yh, p))
        p_xy_ctx[(xh, yh)] += p
        p_x_ctx[xh] += p
        p_xn_x[(xn, xh)] += p
    total = sum(p_x_ctx.values())
    if abs(total - 1.0) > PMF_ATOL * max(1, len(items)):
        raise ContractError(f"joint probabilities sum to {total!r}")
    te = 0.0
    for xn, xh, yh, p in items:
        cond_xy = p / p_xy_ctx[(xh, yh)]
        cond_x = p_xn_x[(xn, xh)] / p_x_ctx[xh]
        if cond_x <= 0.0:
            # Conditionals of one joint law cannot do this.
            raise AssertionError("conditional of a common joint lost absolute continuity")
        te += p * math.log(cond_xy / cond_x)
    return max(te, 0.0)


# -- plug-in route ------------------------------------------------------------

def encode_rows(arr):
    """Map the rows of an integer matrix to dense codes ``0..n_unique-1``."""
    arr = np.asarray(arr)
    n = arr.shape[0]
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[1] == 0:
        return np.zeros(n, dtype=np.int64), 1
    lo = arr.min(axis=0)
    span = arr.max(axis=0) - lo + 1
    if float(np.prod(span.astype(float))) < 2 ** 62:
        codes = np.zeros(n, dtype=np.int64)
        for j in range(arr.shape[1]):
            codes = codes * int(span[j]) + (arr[:, j] - lo[j])
        uniq, inv = np.unique(codes, return_inverse=True)
    else:
        uniq, inv = np.unique(arr, axis=0, return_inverse=True)
    return inv.reshape(-1).astype(np.int64), len(uniq)


def plugin_log_ratios(target, x_hist, y_hist):
    """Per-sample ``ln p̂(x|xh,yh) - ln p̂(x|xh)`` from raw counts.

    Their mean is the plug-in TE of the step.  With counts from one sample the
    ratio is always finite: a target seen under ``(xh, yh)`` was also seen
    under ``xh``.
    """
    target = np.asarray(target).reshape(-1)
    n = target.size
    if n == 0:
        raise ContractError("empty ensemble")
    cx, nx = encode_rows(x_hist)
    cxy, nxy = encode_rows(np.column_stack([cx, encode_rows(y_hist)[0]]))
    ct, nt = encode_rows(target)
    n_x = np.bincount(cx, minlength=nx)
    n_xy = np.bincount(cxy, minlength=nxy)
    n_xt = np.bincount(cx * nt + ct, minlength=nx * nt)
    n_xyt = np.bincount(cxy * nt + ct, minlength=nxy * nt)
    a = n_xyt[cxy * nt + ct] * n_x[cx]
    b = n_xy[cxy] * n_xt[cx * nt + ct]
    assert np.all(b > 0)
    return np.log(a / b)


def _relative(block, anchor):
    return block - anchor[:, None]


class PairEnsemble:
    """Destination and source ensembles evaluated together."""

    def __init__(self, pairs):
        pairs = list(pairs)
        if not pairs:
            raise ContractError("empty ensemble")
        self.pairs = pairs
        self.x = PathEnsemble(p.x for p in pairs)
        self.y = PathEnsemble(p.y for p in pairs)

    def __len__(self):
        return len(self.pairs)


def as_pair_ensemble(ensemble):
    if isinstance(ensemble, PairEnsemble):
        return ensemble
    ensemble = list(ensemble)
    if not ensemble:
        raise ContractError("empty ensemble")
    if not all(isinstance(p, ProcessPair) for p in ensemble):
        raise ContractError("ensemble must hold ProcessPair objects")
    return PairEnsemble(ensemble)


def _step_arrays(xmat, ymat, col, x_len, y_len, relative):
    """Target, x-history and y-history symbols for the step at column ``col``.

    ``xmat``/``ymat`` columns are ascending grid times; ``col`` indexes the
    target node.
    """
    target = xmat[:, col]
    xh = xmat[:, col - x_len - 1:col]
    yh = ymat[:, col - y_len - 1:col]
    # ``relative`` shifts symbols by the destination value at the anchor node
    # (the last history node): True or "xy" shifts both histories, "x" only the
    # destination's.
    if relative:
        anchor = xmat[:, col - 1]
        target = target - anchor
        xh = _relative(xh, anchor)
        if relative != "x":
            yh = _relative(yh, anchor)
    return target, xh, yh


def estimate_cond_table(ensemble, grid, i, conditioning="xy", x_len=None, y_len=None,
                        relative=False, alpha=0.0):
    """Empirical conditional pmfs of the target at step ``i``.

    ``conditioning`` is ``"x"`` (own history only) or ``"xy"``.  Contexts that
    never occur are left out.  ``alpha > 0`` adds Laplace smoothing over the
    observed target alphabet.
    """
    ens = as_pair_ensemble(ensemble)
    x_len = grid.k if x_len is None else x_len
    y_len = grid.l if y_len is None else y_len
    length = max(x_len, y_len)
    times = np.append(grid.history_nodes(i, length), grid.node(i))
    xmat = ens.x.evaluate(times)
    ymat = ens.y.evaluate(times)
    target, xh, yh = _step_arrays(xmat, ymat, times.size - 1, x_len, y_len, relative)
    return _table_from_arrays(target, xh, yh if conditioning == "xy" else None, alpha)


def _table_from_arrays(target, xh, yh, alpha=0.0):
    counts = defaultdict(lambda: defaultdict(int))
    alphabet = sorted(set(np.asarray(target).tolist()))
    for j in range(target.shape[0]):
        key = HistoryKey(tuple(xh[j].tolist()),
                         None if yh is None else tuple(yh[j].tolist()))
        counts[key][int(target[j])] += 1
    n = target.shape[0]
    entries = {}
    for key, d in counts.items():
        m = sum(d.values())
        if alpha > 0:
            denom = m + alpha * len(alphabet)
            pmf = Pmf(alphabet, [(d.get(a, 0) + alpha) / denom for a in alphabet],
                      atol=1e-9)
        else:
            pmf = Pmf(list(d), [c / m for c in d.values()], atol=1e-9)
        entries[key] = (pmf, m / n)
    return CondPmfTable(entries)


def plugin_tables(target, x_hist, y_hist, alpha=0.0):
    """(joint-context table, x-only table) from symbol arrays."""
    target = np.asarray(target).reshape(-1)
    if target.size == 0:
        raise ContractError("empty ensemble")
    xh = np.asarray(x_hist).reshape(target.size, -1)
    yh = np.asarray(y_hist).reshape(target.size, -1)
    return (_table_from_arrays(target, xh, yh, alpha),
            _table_from_arrays(target, xh, None, alpha))


def plugin_comb(ensemble, grid, x_len=None, y_len=None, relative=False, block=64,
                min_paths=2):
    """Plug-in comb sum over all ``tau`` steps of ``grid``.

    Returns a :class:`TEEstimate` whose stderr is the spread of the per-path
    summed log ratios divided by ``sqrt(N)``.
    """
    ens = as_pair_ensemble(ensemble)
    n = len(ens)
    if n < min_paths:
        raise EstimationError(f"plug-in estimation needs at least {min_paths} paths")
    x_len = grid.k if x_len is None else x_len
    y_len = grid.l if y_len is None else y_len
    length = max(x_len, y_len)
    per_path = np.zeros(n)
    per_step = []
    step_err = []
    tau = grid.tau
    # Steps i..i+b-1 need grid indices n_hi-i-b-length .. n_hi-i.
    for i0 in range(0, tau, block):
        i1 = min(tau, i0 + block)
        idx = np.arange(grid.n_hi - (i1 - 1) - length - 1, grid.n_hi - i0 + 1)
        if idx[0] < grid.lowest_index:
            raise EstimationError("history runs below the comb")
        times = idx * grid.dt
        xmat = ens.x.evaluate(times)
        ymat = ens.y.evaluate(times)
        for i in range(i0, i1):
            col = grid.n_hi - i - idx[0]
            target, xh, yh = _step_arrays(xmat, ymat, col, x_len, y_len, relative)
            lr = plugin_log_ratios(target, xh, yh)
            per_path += lr
            per_step.append((i, float(lr.mean())))
            step_err.append(float(lr.std(ddof=1) / math.sqrt(n)))
    value = float(sum(v for _, v in per_step))
    stderr = float(per_path.std(ddof=1) / math.sqrt(n))
    return TEEstimate(
        value=value, stderr=stderr, n_paths=n, per_step=tuple(per_step),
        node_times=tuple(grid.node(i) for i, _ in per_step),
        step_stderr=tuple(step_err), samples=per_path,
        metadata={"mode": "plug-in", "x_len": x_len, "y_len": y_len,
                  "relative": relative, "dt": grid.dt})


def exact_comb(model, grid):
    """Exact comb sum from a model that supplies per-step conditional tables."""
    per_step = []
    for i in range(grid.tau):
        joint_table, x_table = model.exact_step_tables(grid, i)
        per_step.append((i, te_step(joint_table, x_table)))
    value = math.fsum(v for _, v in per_step)
    return TEEstimate(
        value=value, stderr=0.0, n_paths=0, per_step=tuple(per_step),
        node_times=tuple(grid.node(i) for i, _ in per_step),
        step_stderr=tuple(0.0 for _ in per_step),
        metadata={"mode": "exact", "dt": grid.dt})


def te_comb_sum(source, grid, **kwargs):
    """Sum of per-step TE over the ``tau`` steps of a comb grid.

    ``source`` is either a model exposing ``exact_step_tables`` (exact mode)
    or an ensemble of :class:`ProcessPair` (plug-in mode).
    """
    if not isinstance(grid, CombGrid):
        raise ContractError("grid must be a CombGrid")
    if hasattr(source, "exact_step_tables"):
        return exact_comb(source, grid)
    return plugin_comb(source, grid, **kwargs)


def te_sequences(x, y, k=1, l=1, relative=False):  # noqa: E741
    """Plug-in TE at the last time index of discrete sequences.

    ``x`` and ``y`` are ``(n_sequences, n_times)`` integer arrays; histories
    are ``k + 1`` and ``l + 1`` symbols ending one step before the target.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape != y.shape:
        raise ContractError("x and y must be 2-D arrays of equal shape")
    col = x.shape[1] - 1
    if col < max(k, l) + 1:
        raise ContractError("sequences too short for the requested histories")
    target, xh, yh = _step_arrays(x, y, col, k, l, relative)
    lr = plugin_log_ratios(target, xh, yh)
    n = lr.size
    return TEEstimate(value=float(lr.mean()), stderr=float(lr.std(ddof=1) / math.sqrt(n)),
                      n_paths=n, per_step=((col, float(lr.mean())),), node_times=(col,),
                      samples=lr)
