"""End-to-end acceptance checks, one per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` or directly as a script.
"""

import itertools
import math
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from cttx import cli
from cttx.dte import Pmf, kl_divergence, product_kl, product_pmf, schreiber_te
from cttx.dte import te_comb_sum, te_sequences
from cttx.limits import check_bound, converge_te, kl_coarsening_check
from cttx.markov import (ConditionalRates, ModulatedPoissonModel, ept_monte_carlo,
                         girsanov_pathwise_te, poisson_dest_te_rate)
from cttx.paths import ProcessPair, SamplePath
from cttx.poisson import (S, LaggedPoissonModel, LaggedPoissonParams, analytic_limit,
                          path_kl, per_step_kl, per_step_kl_direct, tau_S_schedule)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
LAGGED = LaggedPoissonParams(lam=1.0, epsilon=1.0, r=0.5, s=0.5, t0=2.0, T=3.0)


def criterion_1():
    target = 1.0 + 2.0 * math.log(2.0)
    (row,) = tau_S_schedule(LAGGED, [1e-4])
    rel = abs(row["tauS"] - target) / target
    return rel <= 0.005, f"tauS(1e-4)={row['tauS']:.6f} target={target:.6f} rel.err={rel:.3%}"


def criterion_2():
    worst = 0.0
    exact = True
    for lam, dt in itertools.product([0.3, 0.7, 1.0, 2.0, 5.0],
                                     [0.2, 0.1, 0.05, 0.01, 0.001]):
        p = LaggedPoissonParams(lam, 1.0, 0.5, 0.5, 2.0, 3.0)
        k0, k1 = per_step_kl(p, dt, 0), per_step_kl(p, dt, 1)
        exact &= k0 == lam * dt and k1 == S(lam, dt, 1.0, 0.5)
        worst = max(worst, abs(k0 - per_step_kl_direct(p, dt, 0)),
                    abs(k1 - per_step_kl_direct(p, dt, 1)))
    return exact and worst <= 1e-10, f"closed forms exact={exact}, max |direct - closed|={worst:.2e}"


def criterion_3():
    model = LaggedPoissonModel(LAGGED)
    dt = 0.01
    bound = LAGGED.grid(dt).tau * S(1.0, dt, 1.0, 0.5)
    single = violations = 0
    for pair in model.simulate(1000, seed=2024, dt_max=dt):
        res = path_kl(LAGGED, dt, pair)
        if res.single_jump:
            single += 1
            violations += res.value > bound
    multi = sum(not path_kl(LAGGED, 1e-3, pr).single_jump
                for pr in model.simulate(1000, seed=2025, dt_max=1e-3))
    frac = multi / 1000
    ok = violations == 0 and frac <= 0.01
    return ok, (f"violations of path_kl <= tauS: {violations}/{single} single-jump paths; "
                f"non-single-jump fraction at dt=1e-3: {frac:.3%}")


def _random_pmf(rng, n):
    return Pmf(list(range(n)), rng.dirichlet(np.ones(n)))


def criterion_4():
    rng = np.random.default_rng(4)
    worst = 0.0
    gibbs_bad = 0
    for _ in range(1000):
        m = int(rng.integers(1, 5))
        sizes = rng.integers(1, 6, size=m)
        ps = [_random_pmf(rng, int(n)) for n in sizes]
        qs = [_random_pmf(rng, int(n)) for n in sizes]
        gibbs_bad += any(kl_divergence(p, q) < 0 for p, q in zip(ps, qs))
        brute = 0.0
        for idx in itertools.product(*[range(int(n)) for n in sizes]):
            pa = math.prod(p.probs[i] for p, i in zip(ps, idx))
            qa = math.prod(q.probs[i] for q, i in zip(qs, idx))
            if pa > 0:
                brute += pa * math.log(pa / qa)
        worst = max(worst, abs(product_kl(ps, qs) - brute),
                    abs(kl_divergence(product_pmf(ps), product_pmf(qs)) - brute))
    coarse_bad = 0
    for _ in range(1000):
        n_coords = int(rng.integers(1, 4))
        alpha = int(rng.integers(2, 4))
        support = list(itertools.product(range(alpha), repeat=n_coords))
        p = Pmf(support, rng.dirichlet(np.ones(len(support))))
        q = Pmf(support, rng.dirichlet(np.ones(len(support))))
        keep = [j for j in range(n_coords) if rng.random() < 0.5]
        fine, coarse = kl_coarsening_check(p, q, keep)
        coarse_bad += coarse > fine + 1e-12
    ok = worst <= 1e-12 and gibbs_bad == 0 and coarse_bad == 0
    return ok, (f"max additivity error={worst:.1e}, Gibbs violations={gibbs_bad}, "
                f"coarsening violations={coarse_bad}")


def criterion_5():
    joint = {(y1, (x2, x1), (y2, y1)): 1 / 16
             for y2, y1, x2, x1 in itertools.product((0, 1), repeat=4)}
    err_copy = abs(schreiber_te(joint, 1, 1) - math.log(2))
    rng = np.random.default_rng(5)
    px, pxh, pyh = (rng.dirichlet(np.ones(n)) for n in (2, 4, 4))
    hist = list(itertools.product((0, 1), repeat=2))
    prod = {(x, xh, yh): px[x] * pxh[i] * pyh[j] for x in (0, 1)
            for i, xh in enumerate(hist) for j, yh in enumerate(hist)}
    err_prod = abs(schreiber_te(prod, 1, 1))
    n = 100_000
    y = rng.integers(0, 2, (n, 4))
    x = rng.integers(0, 2, (n, 4))
    x[:, 1:] = y[:, :-1]
    est = te_sequences(x, y, 1, 1)
    z = abs(est.value - math.log(2)) / est.stderr
    ok = err_copy <= 1e-12 and err_prod <= 1e-12 and z <= 3
    return ok, (f"|copy - ln2|={err_copy:.1e}, |product|={err_prod:.1e}, "
                f"plug-in={est.value:.6f} ({z:.2f} stderr from ln2)")


def criterion_6():
    m = ModulatedPoissonModel(s=0.2, r=0.2)
    rates = m.source_free()
    nonzero = sum(girsanov_pathwise_te(rates, m.simulate_pair(6, j), 0.0, 1.0).pathwise_te != 0.0
                  for j in range(500))

    def counting(a, b):
        def fn(v):
            return lambda t, pair, x_to: v if x_to == pair.x.eval_left(t) + 1 else 0.0
        return ConditionalRates(fn(a), fn(b), lambda x: [x + 1])

    def pair(jumps):
        return ProcessPair(SamplePath(-1.0, 2.0, jumps, list(range(len(jumps) + 1))),
                           SamplePath(-1.0, 2.0, [], [0]))

    no_jump = girsanov_pathwise_te(counting(1.0, 2.0), pair([]), 0.0, 1.0).pathwise_te
    one_jump = girsanov_pathwise_te(counting(2.0, 1.0), pair([0.5]), 0.0, 1.0).pathwise_te
    e1, e2 = abs(no_jump - 1.0), abs(one_jump - (math.log(2) - 1.0))
    ok = nonzero == 0 and e1 <= 1e-12 and e2 <= 1e-12
    return ok, f"nonzero source-free paths={nonzero}/500, no-jump err={e1:.1e}, one-jump err={e2:.1e}"


def criterion_7():
    model = ModulatedPoissonModel(lam0=1.0, lam1=4.0, rate01=1.0, rate10=1.0,
                                  t0=0.0, T=1.0, s=5e-4, r=5e-4)
    plug = converge_te(model, [1e-3], mode="plugin", n_paths=100_000, seed=70).rows[0]
    girs = ept_monte_carlo(model, 100_000, seed=71)
    diff = abs(plug.te_sum - girs.value)
    sigma = math.hypot(plug.stderr, girs.stderr)
    tol = max(0.05 * abs(girs.value), 3 * sigma)
    return diff <= tol, (f"plug-in={plug.te_sum:.4f}+-{plug.stderr:.4f}, "
                         f"girsanov={girs.value:.4f}+-{girs.stderr:.4f}, "
                         f"|diff|={diff:.4f} tol={tol:.4f}")


def criterion_8():
    model = LaggedPoissonModel(LAGGED)
    steps = [v for _, v in te_comb_sum(model, LAGGED.grid(0.05)).per_step]
    spread = max(steps) - min(steps)
    mod = ModulatedPoissonModel(s=0.2, r=0.2, t0=0.0, T=1.0)
    one = ept_monte_carlo(mod, 4000, seed=80, t0=0.0, T=1.0)
    two = ept_monte_carlo(mod, 4000, seed=81, t0=0.0, T=2.0)
    lin_z = abs(two.value - 2 * one.value) / math.hypot(two.stderr, 2 * one.stderr)
    r1, e1 = poisson_dest_te_rate(mod, 0.3, 8000, seed=82)
    r2, e2 = poisson_dest_te_rate(mod, 0.7, 8000, seed=83)
    rate_z = abs(r1 - r2) / math.hypot(e1, e2)
    ept_z = abs(r1 - one.value) / math.hypot(e1, one.stderr)
    ok = spread <= 1e-10 and lin_z <= 3 and rate_z <= 3 and ept_z <= 3
    return ok, (f"lagged per-step spread={spread:.1e}; EPT[0,2)={two.value:.4f} vs "
                f"2xEPT[0,1)={2 * one.value:.4f} ({lin_z:.2f} sd); rate(0.3)={r1:.4f}, "
                f"rate(0.7)={r2:.4f} ({rate_z:.2f} sd); rate vs EPT/(T-t0) {ept_z:.2f} sd")


def criterion_9():
    model = LaggedPoissonModel(LAGGED)
    gamma = 1.2 * analytic_limit(LAGGED)
    bc = check_bound(model, [0.1, 0.01, 1e-3], gamma, n_paths=10_000, seed=90)
    monotone = all(b >= a for a, b in zip(bc.fractions, bc.fractions[1:]))
    frac = bc.fractions[-1]
    ok = frac >= 0.99 and monotone
    return ok, (f"gamma={gamma:.4f}; fractions {dict(bc.rows())}; "
                f"at dt=1e-3: {frac:.4f}; non-decreasing={monotone}")


def criterion_10():
    same = []
    with tempfile.TemporaryDirectory() as tmp:
        for command in cli.COMMANDS:
            outs = []
            for k in range(2):
                out = str(Path(tmp) / f"{command}-{k}.out")
                code = cli.main([command, "--config", str(CONFIGS / f"{command}.json"),
                                 "--out", out])
                outs.append(Path(out).read_bytes() if code == 0 else None)
            same.append(outs[0] is not None and outs[0] == outs[1])
    return all(same), ", ".join(f"{c}={'same' if s else 'DIFFERENT'}"
                                for c, s in zip(cli.COMMANDS, same))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10]


def _line(n, ok, detail):
    return f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.acceptance
@pytest.mark.parametrize("n", range(1, 11))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n - 1]()
    with capsys.disabled():
        print("\n" + _line(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for n, fn in enumerate(CRITERIA, start=1):
        ok, detail = fn()
        failed += not ok
        print(_line(n, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
