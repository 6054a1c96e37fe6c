import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cttx.dte import PairEnsemble, te_comb_sum
from cttx.exceptions import ContractError, ParameterError
from cttx.paths import ProcessPair, SamplePath, lag_path
from cttx.poisson import (S, LaggedPoissonModel, LaggedPoissonParams, StepContext,
                          analytic_limit, cond_pmf_given_xy,
                          cond_pmf_given_xy_ratio, ept_rate, path_kl, path_kl_batch,
                          per_step_kl, per_step_kl_direct, per_step_kl_sum, pois,
                          single_jump_ok, tau_S_limit, tau_S_schedule)

P = LaggedPoissonParams(lam=1.0, epsilon=1.0, r=0.5, s=0.5, t0=2.0, T=3.0)


def params(lam=1.0, epsilon=1.0, r=0.5, s=0.5, t0=2.0, T=3.0):
    return LaggedPoissonParams(lam, epsilon, r, s, t0, T)


def kl_by_hand(params, dt, d):
    """Independent oracle: KL(Binomial(d, q) || Poisson(lam dt)) built from math only."""
    L = math.floor(params.r / dt + 1e-9)
    D = params.epsilon + (1 - L) * dt
    q = dt / D
    m = params.lam * dt
    total = 0.0
    for b in range(d + 1):
        pb = math.comb(d, b) * q ** b * (1 - q) ** (d - b)
        if pb > 0:
            qb = math.exp(-m) * m ** b / math.factorial(b)
            total += pb * math.log(pb / qb)
    return total


class TestPrimitives:
    def test_pois(self):
        assert pois(0.0, 0) == 1.0 and pois(0.0, 3) == 0.0
        assert pois(2.0, 3) == pytest.approx(math.exp(-2) * 8 / 6, rel=1e-15)
        assert pois(30.0, 25) == pytest.approx(stats.poisson.pmf(25, 30.0), rel=1e-12)
        with pytest.raises(ContractError):
            pois(1.0, 1.5)

    def test_decreasing_count_rejected(self):
        with pytest.raises(ContractError):
            StepContext(3, 2)

    def test_lag_must_exceed_history(self):
        with pytest.raises(ParameterError, match="0 < r < epsilon"):
            params(r=1.0)
        with pytest.raises(ParameterError):
            params(r=1.5)

    @pytest.mark.parametrize("d", range(0, 21))
    def test_binomial_matches_poisson_ratio(self, d):
        for dt in (0.1, 0.01):
            ctx = StepContext(3, 3 + d)
            a = cond_pmf_given_xy(P, dt, ctx)
            b = cond_pmf_given_xy_ratio(P, dt, ctx)
            assert a.support == b.support
            assert np.allclose(a.probs, b.probs, atol=1e-12, rtol=0)


class TestS:
    def test_frozen_value(self):
        assert S(1.0, 0.1, 1.0, 0.5) == pytest.approx(0.033202973299369644, abs=1e-15)

    @pytest.mark.parametrize("lam", [0.3, 0.7, 1.0, 2.0, 5.0])
    @pytest.mark.parametrize("dt", [0.2, 0.1, 0.05, 0.01, 0.001])
    def test_closed_forms_match_direct_kl(self, lam, dt):
        p = params(lam=lam)
        assert per_step_kl(p, dt, 0) == lam * dt
        assert per_step_kl(p, dt, 0) == pytest.approx(per_step_kl_direct(p, dt, 0), abs=1e-10)
        assert per_step_kl(p, dt, 1) == S(lam, dt, 1.0, 0.5)
        assert per_step_kl(p, dt, 1) == pytest.approx(per_step_kl_direct(p, dt, 1), abs=1e-10)
        assert per_step_kl(p, dt, 1) == pytest.approx(kl_by_hand(p, dt, 1), abs=1e-12)

    @pytest.mark.parametrize("d,want", [(0, 0.1), (1, 0.0332030), (2, 0.1782009),
                                        (3, 0.4137944), (4, 0.7067489), (5, 1.0420205)])
    def test_per_step_table(self, d, want):
        assert per_step_kl(P, 0.1, d) == pytest.approx(want, abs=5e-8)

    @settings(max_examples=100, deadline=None)
    @given(lam=st.floats(0.1, 5), dt=st.floats(0.005, 0.3), d=st.integers(2, 12))
    def test_finite_sum_matches_direct(self, lam, dt, d):
        p = params(lam=lam)
        assert per_step_kl_sum(p, dt, d) == pytest.approx(kl_by_hand(p, dt, d), abs=1e-9)

    def test_printed_variant_differs(self):
        assert abs(per_step_kl_sum(P, 0.1, 3, variant="printed")
                   - per_step_kl_sum(P, 0.1, 3)) > 1e-3

    def test_true_limit_of_tau_S(self):
        rows = tau_S_schedule(P, [1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
        lim = tau_S_limit(P)
        assert lim == pytest.approx(1.0 - 2 * (1 + math.log(0.5)), abs=1e-15)
        assert lim == pytest.approx(0.3862944, abs=1e-7)
        gaps = [abs(r["tauS"] - lim) for r in rows]
        for g1, g2 in zip(gaps, gaps[1:]):
            assert 5 < g1 / g2 < 20
        assert rows[-1]["analytic_limit"] == analytic_limit(P)

    def test_balanced_lag_limit_is_zero_rate(self):
        # lam (eps - r) = 1 pins the limit to lam - 1/u.
        p = params(lam=2.0, epsilon=1.0, r=0.5)
        assert tau_S_limit(p) == pytest.approx(0.0, abs=1e-15)
        assert p.grid(1e-5).tau * S(2.0, 1e-5, 1.0, 0.5) == pytest.approx(0.0, abs=1e-3)

    def test_tau_S_schedule_rows(self):
        rows = tau_S_schedule(P, [0.5, 0.25])
        assert [r["tau"] for r in rows] == [2, 4]
        assert rows[1]["tauS"] == 4 * S(1.0, 0.25, 1.0, 0.5)


def exact_sum_oracle(p, dt):
    """tau * E_d[KL] with d ~ Poisson(lam D), the pending count over D = eps + (1-L) dt."""
    L = math.floor(p.r / dt + 1e-9)
    D = p.epsilon + (1 - L) * dt
    tau = round((p.T - p.t0) / dt)
    d = np.arange(0, 60)
    w = stats.poisson.pmf(d, p.lam * D)
    return tau * math.fsum(wi * kl_by_hand(p, dt, int(di)) for di, wi in zip(d, w))


class TestExactCombSum:
    @pytest.mark.parametrize("dt,want", [(0.1, 0.94115), (0.05, 0.9727244424666717),
                                         (0.02, 0.9929479), (0.01, 0.9999216)])
    def test_exact_sums(self, dt, want):
        model = LaggedPoissonModel(P)
        value = te_comb_sum(model, P.grid(dt)).value
        assert value == pytest.approx(exact_sum_oracle(P, dt), abs=1e-9)
        assert value == pytest.approx(want, abs=1e-5)

    def test_rate_limit(self):
        assert ept_rate(P) == pytest.approx(1.007018, abs=1e-6)
        # The exact sums creep up to the rate as dt shrinks.
        assert abs(exact_sum_oracle(P, 0.002) - ept_rate(P)) < 0.002

    def test_ept_surrogates(self):
        model = LaggedPoissonModel(P)
        assert model.ept(2.0, 3.0, 0.1)[0] == pytest.approx(10 * S(1.0, 0.1, 1.0, 0.5))
        assert model.ept(2.0, 3.0, 0.1, surrogate="exact")[0] == pytest.approx(0.94115,
                                                                               abs=1e-5)


def hand_pair(jumps):
    x = SamplePath(0.0, 5.0, jumps, list(range(len(jumps) + 1)))
    return ProcessPair(x, lag_path(x, P.epsilon))


class TestPathKL:
    def test_no_events_gives_lam_T(self):
        res = path_kl(P, 0.1, hand_pair([]))
        assert res.value == pytest.approx(1.0, abs=1e-12)
        assert res.Q == 0 and res.closed_form == pytest.approx(1.0)

    def test_closed_form_when_counts_at_most_one(self):
        res = path_kl(P, 0.1, hand_pair([3.2]))
        assert res.max_d == 1
        assert res.value == pytest.approx(res.closed_form, abs=1e-12)

    def test_single_event_counts_by_hand(self):
        # Step i reads a at 2.9 - 0.1 i and c at X(3.5 - 0.1 i); the event at 3.2
        # is pending for i = 0..3.
        res = path_kl(P, 0.1, hand_pair([3.2]))
        assert res.Q == 4
        assert res.value == pytest.approx(4 * S(1.0, 0.1, 1.0, 0.5) + 6 * 0.1, abs=1e-12)

    def test_multi_event_steps_use_the_finite_sum(self):
        res = path_kl(P, 0.1, hand_pair([3.2, 3.25]))
        assert res.max_d == 2 and res.closed_form is None and res.multi_event_steps
        assert not res.single_jump

    def test_batch_agrees(self):
        model = LaggedPoissonModel(P)
        pairs = model.simulate(200, seed=4, dt_max=0.05)
        got, _ = path_kl_batch(P, 0.05, PairEnsemble(pairs))
        want = [path_kl(P, 0.05, pr).value for pr in pairs]
        assert np.allclose(got, want, atol=1e-12)

    def test_mean_path_kl_is_the_exact_sum(self):
        model = LaggedPoissonModel(P)
        got, _ = path_kl_batch(P, 0.05, PairEnsemble(model.simulate(4000, seed=4, dt_max=0.05)))
        assert abs(got.mean() - exact_sum_oracle(P, 0.05)) <= 3 * got.std() / math.sqrt(got.size)

    def test_bound_holds_when_s_exceeds_lam_dt(self):
        # lam D < 1/e makes S > lam dt, so every path with counts <= 1 sits below tau S.
        p = params(lam=0.5, epsilon=0.5, r=0.1, s=0.1)
        model = LaggedPoissonModel(p)
        dt = 0.01
        bound = p.grid(dt).tau * S(0.5, dt, 0.5, 0.1)
        checked = 0
        for pr in model.simulate(500, seed=9, dt_max=dt):
            res = path_kl(p, dt, pr)
            if res.max_d <= 1:
                checked += 1
                assert res.value <= bound + 1e-12
        assert checked > 400

    def test_single_jump_detection(self):
        x = SamplePath(0.0, 5.0, [1.0, 1.05, 3.0], [0, 1, 2, 3])
        assert not single_jump_ok(x, 0.1)
        assert single_jump_ok(x, 0.01)
        assert single_jump_ok(x, 0.1, window=(2.0, 4.0))


class TestModel:
    def test_exact_tables_match_closed_form(self):
        model = LaggedPoissonModel(P)
        g = P.grid(0.05)
        for i in (0, 7, g.tau - 1):
            assert model.exact_step_te(g, i) == pytest.approx(
                exact_sum_oracle(P, 0.05) / g.tau, abs=1e-10)

    def test_plugin_lengths(self):
        model = LaggedPoissonModel(P)
        assert model.plugin_lengths(P.grid(0.1)) == {"x_len": 5, "y_len": 4}
        with pytest.raises(ParameterError):
            model.plugin_lengths(P.grid(0.75))

    def test_nonstationary_switch_breaks_step_equality(self):
        model = LaggedPoissonModel(P, lam_after=3.0, switch_time=2.5)
        g = P.grid(0.1)
        from cttx.dte import te_step
        vals = [te_step(*model.exact_step_tables(g, i)) for i in range(g.tau)]
        assert max(vals) - min(vals) > 0.01

    def test_simulated_source_is_exact_lag(self):
        pair = LaggedPoissonModel(P).simulate_pair(3, 0)
        for t in np.linspace(1.5, 3.0, 50):
            assert pair.y.eval(t) == pair.x.eval(t + 1.0)
