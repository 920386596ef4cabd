"""Acceptance criteria 1-12, each reported as one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` (or ``python tests/test_acceptance.py``).
Simulation budgets are sized for one CPU core; the whole file takes several minutes.
"""
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import record  # noqa: E402

from kpoll import builtin, ctmc, dists, htcalc, reproduce, sim  # noqa: E402
from kpoll.model import PollingModel, QueueSpec, cycle_condition, load_report  # noqa: E402

TABLE1 = {
    "P1": [0.589, 0.275, 0.095, 0.029, 0.009, 0.003],
    "P2": [0.585, 0.277, 0.096, 0.030, 0.009, 0.003],
    "P3": [0.583, 0.278, 0.097, 0.030, 0.009, 0.003],
}
ROW_V = [0.582, 0.278, 0.097, 0.030, 0.009, 0.003]
CORRELATIONS = {"P1": 0.048, "P2": 0.022, "P3": 0.004}
EX1_HORIZON = {"P1": 1e7, "P2": 1e7, "P3": 1e8}


@pytest.fixture(scope="module")
def ex1_sims():
    t0 = time.perf_counter()
    out = {}
    for name, lam in builtin.EX1_LAMBDA2.items():
        run = sim.RunConfig(horizon=EX1_HORIZON[name], replications=10, seed=1)
        out[name] = sim.replicate(builtin.example1(lam), run, designated=1)
    spec = htcalc.vacation_model(builtin.example1(), 0, 1)
    out["V"] = ctmc.vacation_steady_state(spec, 200)
    out["seconds"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="module")
def ex1_chains():
    out = {}
    for name, lam in builtin.EX1_LAMBDA2.items():
        m = builtin.example1(lam)
        gen = ctmc.build_generator(m)
        table = ctmc.steady_state(gen)
        vac = ctmc.vacation_steady_state(htcalc.vacation_model(m, 0, 1), gen.N1max)
        out[name] = ctmc.product_form_gap(table, htcalc.eta(m, 1).eta, vac)
    return out


def test_c01_example1_eta():
    eta = htcalc.eta(builtin.example1(), 1).eta
    assert record("C1 analytic eta, Example 1", abs(eta - 1.289) <= 1e-3, f"eta={eta:.6f} (target 1.289+-0.001)")


def test_c02_example1_utilizations():
    got = [load_report(builtin.example1(l)).utilizations[1] for l in (0.25, 0.258, 0.263)]
    ok = [round(u, 3) for u in got] == [0.953, 0.980, 0.997]
    assert record("C2 utilizations, Example 1", ok, "u2=" + "/".join(f"{u:.5f}" for u in got))


def test_c03_example3_eta_and_critical_rate():
    d = htcalc.eta(builtin.example3(0.2635), 1)
    ok = abs(d.eta - 2.527) <= 0.002 and abs(d.lambda_crit - 0.2635) <= 1e-4
    assert record("C3 analytic eta and lambda_crit, Example 3", ok,
                  f"eta={d.eta:.5f} (2.527+-0.002), lambda_crit={d.lambda_crit:.6f} (0.2635+-0.0001)")


def test_c04_example4_ladder():
    stages = htcalc.critical_ladder(builtin.example4(), builtin.EX4_RATIOS)
    exact = [Fraction(25, 74), Fraction(10, 23), Fraction(15, 26), Fraction(7, 6)]
    errs = [abs(s.Lambda_crit / float(f) - 1) for s, f in zip(stages, exact)]
    ok = [s.queue for s in stages] == [3, 2, 1, 0] and max(errs) <= 1e-9
    assert record("C4 critical ladder, Example 4", ok,
                  "Lambda=" + ", ".join(f"{s.Lambda_crit:.10f}" for s in stages) + f"; max rel err {max(errs):.1e}")


def test_c05_example4_ray_eta():
    stages = htcalc.critical_ladder(builtin.example4(), builtin.EX4_RATIOS)
    by_queue = {s.queue: s.derivation.eta for s in stages}
    got = [by_queue[q] for q in range(4)]
    target = [1.364, 2.875, 3.739, 4.529]
    ok = all(abs(g - t) <= 0.002 for g, t in zip(got, target))
    assert record("C5 ray-scaled eta, Example 4", ok, "eta_1..4=" + ", ".join(f"{g:.5f}" for g in got))


def test_c06_table1(ex1_sims):
    worst = {name: float(np.abs(ex1_sims[name].queue_dist[0, :6] - TABLE1[name]).max()) for name in TABLE1}
    v_err = float(np.abs(ex1_sims["V"][:6] - ROW_V).max())
    secs = ex1_sims["seconds"]
    ok = max(worst.values()) <= 0.005 and v_err <= 0.002 and secs <= 600
    detail = ", ".join(f"{k} max|d|={v:.4f}" for k, v in worst.items()) + f", V max|d|={v_err:.4f}, {secs:.0f}s"
    assert record("C6 Table 1 reproduction", ok, detail)


def test_c07_vacation_convergence(ex1_chains):
    tv = [ex1_chains[n].tv_n1_vs_vacation for n in ("P1", "P2", "P3")]
    ok = tv[1] <= 0.01 and tv[2] <= 0.004 and tv[0] > tv[1] > tv[2]
    assert record("C7 N1 marginal vs vacation queue (CTMC)", ok, "TV=" + "/".join(f"{t:.5f}" for t in tv))


def test_c08_scaled_n2(ex1_chains, ex1_sims):
    g = ex1_chains["P3"]
    rel = abs(g.mean_scaled_n2 / (1 / 1.289) - 1)
    p1 = ex1_sims["P1"]
    ks = sim.scaled_histogram(p1).ks_exponential(htcalc.eta(builtin.example1(), 1).eta)
    ok = rel <= 0.05 and ks <= 0.05
    assert record("C8 scaled queue 2 (CTMC mean at u2=0.997, KS for P1)", ok,
                  f"(1-u2)E[N2]={g.mean_scaled_n2:.4f} (rel err {rel:.3%} vs 0.776), KS={ks:.4f}")


def test_c09_independence(ex1_chains, ex1_sims):
    tv = [ex1_chains[n].tv_joint_vs_product for n in ("P1", "P2", "P3")]
    corr = {n: ex1_sims[n].correlation for n in CORRELATIONS}
    ok = tv[0] > tv[1] > tv[2] and all(abs(corr[n] - CORRELATIONS[n]) <= 0.01 for n in CORRELATIONS)
    assert record("C9 asymptotic independence", ok,
                  "joint-vs-product TV=" + "/".join(f"{t:.4f}" for t in tv)
                  + "; simulated corr=" + "/".join(f"{corr[n]:.4f}" for n in CORRELATIONS))


def test_c10_interchange():
    base = builtin.example1(0.263)
    ref = htcalc.effective_service(base, 1)
    invariant = all(
        math.isclose(e.mean, ref.mean, rel_tol=1e-12) and math.isclose(e.variance, ref.variance, rel_tol=1e-12)
        for e in (htcalc.effective_service(htcalc.interchange(base, a), 1) for a in (0.0, 0.5, 1.0))
    )
    run = sim.RunConfig(horizon=2e8, replications=20, seed=1)
    res = {}
    for name, alpha in (("R3", 0.5), ("S3", 1.0)):
        s = sim.replicate(htcalc.interchange(base, alpha), run, designated=1)
        res[name] = (s.scaled_mean(), s.scaled_mean_ci())
    near = all(abs(m - 0.776) <= 0.05 for m, _ in res.values())
    (ma, ca), (mb, cb) = res["R3"], res["S3"]
    overlap = abs(ma - mb) <= ca + cb
    ok = invariant and near and overlap
    assert record("C10 Example 2 interchange", ok,
                  f"B' invariant={invariant}; " + ", ".join(f"{k} mean={m:.4f}+-{c:.4f}" for k, (m, c) in res.items()))


def test_c11_table5():
    opts = reproduce.Options(reps=10, horizon=3e7, seed=1)
    diffs = []
    for stage, lam, survivors, pa, pb in reproduce.table5_stats(opts):
        diffs.append((stage.queue + 1, float(np.abs(pa - pb).max())))
    ok = all(d <= 0.005 for _, d in diffs)
    assert record("C11 Table 5 original vs corresponding", ok,
                  ", ".join(f"Lambda~L{q}crit max|d|={d:.4f}" for q, d in diffs))


def test_c12_property_suite():
    checks = {}
    gen = ctmc.build_generator(builtin.example1(), 30, 200)
    checks["row sums"] = float(np.abs(np.asarray(gen.Q.sum(axis=1)).ravel()).max()) <= 1e-12
    checks["residual"] = ctmc.steady_state(gen).residual <= 1e-10

    eq = []
    for lam1, mu1, k2, s in ((0.06, 0.5, 3, 0.5), (0.1, 1.0, 2, 2.0), (0.02, 0.3, 5, 1.0)):
        m = PollingModel((
            QueueSpec(dists.exponential(lam1), dists.exponential(mu1), 2, (dists.exponential(s),)),
            QueueSpec(dists.exponential(0.1), dists.exponential(0.5), k2, (dists.exponential(s),)),
        ))
        d = htcalc.eta(m, 1)
        eb, eb2 = d.effective.mean, d.effective.second_moment
        special = 2 * (1 / eb) * eb**2 / (2 * lam1 / mu1**2 + (1 / eb) * (1 - lam1 / mu1) * eb2)
        eq.append(math.isclose(d.eta, special, rel_tol=1e-12))
        eq.append(math.isclose(d.c2 / (d.c0 + d.c1), d.eta, rel_tol=1e-12))
    checks["eta forms and C identity"] = all(eq)

    rng = np.random.default_rng(0)
    stab = []
    for _ in range(300):
        m = PollingModel(tuple(
            QueueSpec(dists.exponential(rng.uniform(0, 0.2)), dists.exponential(rng.uniform(0.5, 4)),
                      int(rng.integers(1, 6)), (dists.exponential(rng.uniform(0.2, 3)),))
            for _ in range(int(rng.integers(2, 5)))))
        rep = load_report(m)
        if rep.rho < 1:
            stab.append(rep.stable == cycle_condition(m))
    checks["stability equivalence"] = all(stab)

    moments_ok = []
    for spec in (dists.exponential(0.5), dists.gamma(0.5, 0.03), dists.uniform(0, 4), dists.pareto(1.17, 2.4)):
        x = dists.sample(spec, dists.RandomStream(12, 0), 200_000)
        mm = dists.moments(spec)
        moments_ok.append(abs(x.mean() - mm.mean) <= 3 * math.sqrt(mm.variance / x.size))
    checks["sampler moments"] = all(moments_ok)

    m = builtin.example3(0.25)
    run = sim.RunConfig(horizon=2e5, replications=2, seed=99)
    a, b = sim.replicate(m, run), sim.replicate(m, run)
    checks["conservation"] = bool(np.array_equal(a.arrivals, a.departures + a.in_system)
                                  and (a.max_served <= np.asarray(m.limits)).all())
    checks["determinism"] = a.to_csv() == b.to_csv() and a.queue_dist.tobytes() == b.queue_dist.tobytes()

    ok = all(checks.values())
    assert record("C12 property suite", ok, ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()))


@pytest.mark.slow
@pytest.mark.xfail(reason="heavy-tailed inputs at 1-u2=1.6e-4 need far longer runs than feasible; see README",
                   strict=False)
def test_c03_supplement_example3_p4_scaled_mean():
    m = builtin.example3(0.2635)
    s = sim.replicate(m, sim.RunConfig(horizon=1e9, replications=4, seed=1), designated=1)
    target = 1 / htcalc.eta(m, 1).eta
    rel = abs(s.scaled_mean() / target - 1)
    assert record("C3-supplement Example 3 P4 simulated (1-u2)E[N2] within 10%", rel <= 0.10,
                  f"mean={s.scaled_mean():.4f}+-{s.scaled_mean_ci():.4f} vs {target:.4f} (rel err {rel:.1%})")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
