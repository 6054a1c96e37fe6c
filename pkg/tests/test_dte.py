import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cttx.comb import build_grid
from cttx.dte import (CondPmfTable, HistoryKey, PairEnsemble, Pmf, TEEstimate,
                      estimate_cond_table, joint_to_tables, kl_divergence, plugin_log_ratios,
                      product_kl, product_pmf, schreiber_te, te_comb_sum, te_sequences,
                      te_step)
from cttx.exceptions import ContractError
from cttx.paths import ProcessPair, SamplePath
from cttx.poisson import LaggedPoissonModel, LaggedPoissonParams


def random_pmf(rng, n):
    p = rng.dirichlet(np.ones(n))
    return Pmf(list(range(n)), p)


class TestPmf:
    def test_rejects_bad_mass(self):
        with pytest.raises(ContractError):
            Pmf([0, 1], [0.5, 0.6])
        with pytest.raises(ContractError):
            Pmf([0, 0], [0.5, 0.5])
        with pytest.raises(ContractError):
            Pmf([0, 1], [1.5, -0.5])

    def test_queries(self):
        p = Pmf(["a", "b"], [0.25, 0.75])
        assert p.prob("b") == 0.75 and p.prob("z") == 0.0
        assert p.entropy() == pytest.approx(-(0.25 * math.log(0.25) + 0.75 * math.log(0.75)))
        assert Pmf.from_counts({1: 1, 3: 3}).mean() == pytest.approx(2.5)


class TestKL:
    def test_identity(self):
        p = Pmf([0, 1], [0.3, 0.7])
        assert kl_divergence(p, p) == 0.0

    def test_point_mass_against_uniform(self):
        assert kl_divergence(Pmf([0, 1], [1, 0]), Pmf([0, 1], [0.5, 0.5])) == pytest.approx(
            0.6931471805599453, abs=1e-15)

    def test_absolute_continuity_failure(self):
        assert kl_divergence(Pmf([0, 1], [0.5, 0.5]), Pmf([0, 1], [1, 0])) == math.inf

    def test_empty_product(self):
        assert product_kl([], []) == 0.0

    def test_product_additivity_against_enumeration(self):
        rng = np.random.default_rng(0)
        ps = [random_pmf(rng, 3) for _ in range(2)]
        qs = [random_pmf(rng, 3) for _ in range(2)]
        direct = 0.0
        for a, b in itertools.product(range(3), range(3)):
            pa = ps[0].probs[a] * ps[1].probs[b]
            qa = qs[0].probs[a] * qs[1].probs[b]
            direct += pa * math.log(pa / qa)
        assert product_kl(ps, qs) == pytest.approx(direct, abs=1e-12)
        assert kl_divergence(product_pmf(ps), product_pmf(qs)) == pytest.approx(direct,
                                                                              abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2 ** 32), n=st.integers(1, 5))
    def test_gibbs(self, seed, n):
        rng = np.random.default_rng(seed)
        p, q = random_pmf(rng, n), random_pmf(rng, n)
        kl = kl_divergence(p, q)
        assert kl >= 0.0
        if np.allclose(p.probs, q.probs, atol=1e-15, rtol=0):
            assert kl <= 1e-12


def copy_chain_joint():
    # X_n = Y_{n-1}; Y iid Bernoulli(1/2); histories (X_{n-2}, X_{n-1}), (Y_{n-2}, Y_{n-1}).
    joint = {}
    for y2, y1, x2, x1 in itertools.product((0, 1), repeat=4):
        joint[(y1, (x2, x1), (y2, y1))] = 1 / 16
    return joint


class TestSchreiber:
    def test_copy_chain(self):
        assert schreiber_te(copy_chain_joint(), 1, 1) == pytest.approx(math.log(2), abs=1e-12)

    def test_product_joint_is_zero(self):
        rng = np.random.default_rng(5)
        px = rng.dirichlet(np.ones(2))
        pxh = rng.dirichlet(np.ones(4))
        pyh = rng.dirichlet(np.ones(4))
        hist = list(itertools.product((0, 1), repeat=2))
        joint = {(x, xh, yh): px[x] * pxh[i] * pyh[j]
                 for x in (0, 1) for i, xh in enumerate(hist) for j, yh in enumerate(hist)}
        assert abs(schreiber_te(joint, 1, 1)) <= 1e-12

    def test_deterministic_own_copy_is_zero(self):
        joint = {(x1, (x2, x1), (y2, y1)): 1 / 16
                 for x2, x1, y2, y1 in itertools.product((0, 1), repeat=4)}
        assert schreiber_te(joint, 1, 1) == 0.0

    def test_history_length_checked(self):
        with pytest.raises(ContractError):
            schreiber_te(copy_chain_joint(), 2, 1)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 32))
    def test_agrees_with_table_route(self, seed):
        rng = np.random.default_rng(seed)
        keys = [(x, (a,), (b,)) for x in range(3) for a in range(2) for b in range(3)]
        p = rng.dirichlet(np.ones(len(keys)))
        joint = dict(zip(keys, p))
        xy, x = joint_to_tables(joint)
        assert te_step(xy, x) == pytest.approx(schreiber_te(joint, 0, 0), abs=1e-12)


def test_te_step_independent_source_is_zero():
    px = Pmf([0, 1], [0.2, 0.8])
    x_tab = CondPmfTable({HistoryKey((0,)): (px, 1.0)})
    xy_tab = CondPmfTable({HistoryKey((0,), (0,)): (px, 0.4), HistoryKey((0,), (1,)): (px, 0.6)})
    assert te_step(xy_tab, x_tab) == 0.0


def test_cond_table_weights_validated():
    with pytest.raises(ContractError):
        CondPmfTable({HistoryKey((0,)): (Pmf.point(0), 0.5)})


def test_plugin_log_ratios_from_counts():
    # Two contexts; brute-force the conditional frequencies.
    target = np.array([0, 1, 1, 1, 0, 0])
    xh = np.zeros((6, 1), dtype=int)
    yh = np.array([[0], [0], [0], [1], [1], [1]])
    lr = plugin_log_ratios(target, xh, yh)
    want = [math.log((1 / 3) / (3 / 6)), math.log((2 / 3) / (3 / 6)), math.log((2 / 3) / 0.5),
            math.log((1 / 3) / 0.5), math.log((2 / 3) / 0.5), math.log((2 / 3) / 0.5)]
    assert np.allclose(lr, want, atol=1e-15)


def sequences_copy_chain(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=(n, 3))
    x = np.empty_like(y)
    x[:, 0] = rng.integers(0, 2, size=n)
    x[:, 1:] = y[:, :-1]
    return x, y


def test_plugin_consistency_improves_with_n():
    errs = []
    for n in (1_000, 10_000, 100_000):
        x, y = sequences_copy_chain(n, 11)
        rng = np.random.default_rng(3)
        y = y.copy()
        # Noisy copy: flip 20% of the copied bits, exact TE = ln2 - H(0.2).
        flip = rng.random(n) < 0.2
        x[:, 2] = np.where(flip, 1 - y[:, 1], y[:, 1])
        exact = math.log(2) + 0.2 * math.log(0.2) + 0.8 * math.log(0.8)
        errs.append(abs(te_sequences(x, y, 1, 1).value - exact))
    assert errs[2] < errs[0]
    assert errs[2] < 0.01


def constant_pairs(n):
    c = SamplePath(-1.0, 2.0, [], [3])
    return [ProcessPair(c, c) for _ in range(n)]


def node_valued_pairs(values_x, values_y, times):
    """Paths holding the given symbol from each grid time on."""
    pairs = []
    lo, hi = times[0] - 0.5, times[-1] + 0.5
    for vx, vy in zip(values_x, values_y):
        paths = []
        for v in (vx, vy):
            states = [int(v[0])]
            jumps = []
            for t, s in zip(times[1:], v[1:]):
                if s != states[-1]:
                    jumps.append(t)
                    states.append(int(s))
            paths.append(SamplePath(lo, hi, jumps, states))
        pairs.append(ProcessPair(*paths))
    return pairs


class TestCondTables:
    def test_constant_paths_give_point_mass(self):
        g = build_grid(0.0, 1.0, 0.25, 0.25, 0.25)
        tab = estimate_cond_table(constant_pairs(20), g, 1, conditioning="xy")
        assert len(tab) == 1
        (pmf, w), = tab.entries.values()
        assert pmf.to_dict() == {3: 1.0} and w == 1.0

    def test_iid_bernoulli_nodes(self):
        g = build_grid(0.0, 1.0, 0.25, 0.25, 0.25)
        times = g.all_times()
        rng = np.random.default_rng(2)
        n = 100_000
        pairs = node_valued_pairs(rng.integers(0, 2, (n, times.size)),
                                  rng.integers(0, 2, (n, times.size)), times)
        tab = estimate_cond_table(pairs, g, 0, conditioning="xy", x_len=0, y_len=0)
        assert len(tab) == 4
        for pmf, _ in tab.entries.values():
            assert abs(pmf.prob(0) - 0.5) < 0.01

    def test_copy_process_gives_point_masses(self):
        g = build_grid(0.0, 1.0, 0.25, 0.25, 0.25)
        times = g.all_times()
        rng = np.random.default_rng(4)
        y = rng.integers(0, 2, (2000, times.size))
        x = np.roll(y, 1, axis=1)
        pairs = node_valued_pairs(x, y, times)
        tab = estimate_cond_table(pairs, g, 0, conditioning="xy", x_len=0, y_len=0)
        assert all(pmf.entropy() == 0.0 for pmf, _ in tab.entries.values())


LP = LaggedPoissonParams(lam=1.0, epsilon=1.0, r=0.5, s=0.25, t0=2.0, T=3.0)


class TestCombSum:
    def test_exact_tables_match_closed_form_per_step(self):
        model = LaggedPoissonModel(LP)
        g = LP.grid(0.1)
        xy, x = model.exact_step_tables(g, 3)
        assert te_step(xy, x) == pytest.approx(model.exact_step_te(g, 3), abs=1e-10)

    def test_exact_sum_values(self):
        # Frozen from the independent E_d[KL(Binomial || Poisson)] route in test_poisson.
        est = te_comb_sum(LaggedPoissonModel(LP), LP.grid(0.05))
        assert est.value == pytest.approx(0.97272444246, abs=1e-9)
        vals = [v for _, v in est.per_step]
        assert max(vals) - min(vals) <= 1e-10
        assert est.value == pytest.approx(sum(vals), abs=1e-12)

    def test_plugin_converges_to_exact(self):
        model = LaggedPoissonModel(LP)
        g = LP.grid(0.1)
        pairs = model.simulate(50_000, seed=21, dt_max=0.1)
        exact = te_comb_sum(model, g).value
        errs = [te_comb_sum(PairEnsemble(pairs[:n]), g, relative=True,
                            **model.plugin_lengths(g)).value - exact
                for n in (12_500, 25_000, 50_000)]
        # Positive count bias that shrinks as N grows.
        assert errs[0] > errs[1] > errs[2] > 0
        assert errs[2] < 0.05 * exact

    def test_independent_pair_only_has_finite_sample_bias(self):
        from cttx.markov import IndependentPoissonModel
        m = IndependentPoissonModel(lam=2.0, mu=2.0, s=0.1, r=0.1)
        g = m.grid(0.1)
        ens = PairEnsemble(m.simulate(20_000, seed=2, dt_max=0.1))
        small = te_comb_sum(PairEnsemble(ens.pairs[:5_000]), g, relative=True,
                            **m.plugin_lengths(g)).value
        full = te_comb_sum(ens, g, relative=True, **m.plugin_lengths(g)).value
        # The plug-in bias of a zero TE decays like 1/N.
        assert 0.0 <= full < small / 2.5
        assert full < 0.06

    def test_estimate_serialization(self):
        est = TEEstimate(value=0.5, per_step=((0, 0.2), (1, 0.3)), node_times=(1.0, 0.9))
        d = est.to_dict()
        assert d["per_step"][1] == {"i": 1, "node_time": 0.9, "te_nats": 0.3}
        assert not est.divergent
