import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpoll import builtin, ctmc, dists, htcalc, sim
from kpoll.htcalc import VacationModelSpec
from kpoll.model import PollingModel, QueueSpec, load_report


def check_invariants(stats, limits):
    assert np.array_equal(stats.arrivals, stats.departures + stats.in_system)
    assert (stats.max_served <= np.asarray(limits)).all()
    assert np.abs(stats.queue_dist.sum(axis=1) - 1).max() <= 1e-9
    assert (stats.full_visits <= stats.visits).all()


def test_runconfig_validation():
    assert sim.RunConfig(horizon=100).warmup == 10
    for bad in (dict(horizon=10, warmup=10), dict(histogram_cap=0), dict(replications=0), dict(batches=5)):
        with pytest.raises(ValueError):
            sim.RunConfig(**bad)


def test_conservation_and_limits_example4():
    m = builtin.example4(0.4)
    s = sim.replicate(m, sim.RunConfig(horizon=2e5, replications=3), designated=3)
    check_invariants(s, m.limits)
    assert s.arrivals.sum() > 0


@settings(max_examples=12, deadline=None)
@given(st.lists(st.floats(0.0, 0.3), min_size=2, max_size=4), st.integers(1, 4), st.booleans(),
       st.integers(0, 2**32))
def test_conservation_property(rates, k, waiting, seed):
    qs = tuple(QueueSpec(dists.exponential(r), dists.gamma(2.0, 2.0), k, (dists.uniform(0.0, 1.0),))
               for r in rates)
    m = PollingModel(qs)
    s = sim.simulate(m, sim.RunConfig(horizon=3e3, seed=seed, waiting_server=waiting), designated=0)
    check_invariants(s, m.limits)


def test_determinism_byte_identical():
    m = builtin.example3(0.25)
    run = sim.RunConfig(horizon=1e5, replications=2, seed=42)
    a, b = sim.replicate(m, run), sim.replicate(m, run)
    assert a.to_csv() == b.to_csv()
    assert a.queue_dist.tobytes() == b.queue_dist.tobytes()
    assert a.wait_mean.tobytes() == b.wait_mean.tobytes()
    assert a.correlation == b.correlation


def test_replications_use_distinct_streams():
    m = builtin.example1()
    run = sim.RunConfig(horizon=1e5, seed=7)
    a = sim.simulate(m, run, replication=0)
    b = sim.simulate(m, run, replication=1)
    assert not np.array_equal(a.arrivals, b.arrivals)


def test_zero_arrivals():
    m = builtin.example1().with_rates((0.0, 0.0))
    s = sim.simulate(m, sim.RunConfig(horizon=1e4))
    assert (s.queue_dist[:, 0] == 1.0).all()
    assert (s.departures == 0).all() and (s.arrivals == 0).all()


def test_zero_switchover_model_runs():
    m = htcalc.interchange(builtin.example1(0.2), 1.0)
    s = sim.simulate(m, sim.RunConfig(horizon=2e5))
    check_invariants(s, m.limits)
    # with no switch-over time the server is never idle while work is present
    rho = load_report(m).rho
    assert s.queue_dist[0, 0] + s.queue_dist[1, 0] > 0


def test_waiting_server_mode():
    m = builtin.example1(0.1)
    a = sim.simulate(m, sim.RunConfig(horizon=2e5, waiting_server=True))
    b = sim.simulate(m, sim.RunConfig(horizon=2e5))
    check_invariants(a, m.limits)
    assert not np.array_equal(a.queue_dist, b.queue_dist)


def test_buffer_growth_for_unstable_queue():
    m = builtin.example1(0.4)  # queue 2 overloaded
    s = sim.simulate(m, sim.RunConfig(horizon=5e4, histogram_cap=50))
    check_invariants(s, m.limits)
    assert s.in_system[1] > 1024
    assert s.queue_dist[1, -1] > 0.5
    assert math.isnan(s.factor)


def test_littles_law():
    m = builtin.example1(0.25)
    s = sim.simulate(m, sim.RunConfig(horizon=5e6))
    for q in range(2):
        lam = m.rates[q]
        expected = lam * (s.wait_mean[q] + 2.0)  # mean sojourn = wait + E[B]
        assert s.mean_queue[q] == pytest.approx(expected, rel=0.03)


def test_full_visits_in_heavy_traffic():
    m = builtin.example1(0.263)
    s = sim.simulate(m, sim.RunConfig(horizon=1e7), designated=1)
    assert s.full_visit_fraction[1] > 0.95


def test_matches_ctmc_oracle_moderate_load():
    # every reported marginal probability within +-0.005 of the exact chain
    for lam2 in (0.25, 0.258):
        m = builtin.example1(lam2)
        p1, p2, _ = ctmc.marginals(ctmc.steady_state(ctmc.build_generator(m, 40, 500)))
        s = sim.replicate(m, sim.RunConfig(horizon=1e7, replications=4, seed=3))
        assert np.abs(s.queue_dist[0, :41] - p1).max() <= 0.005
        assert np.abs(s.queue_dist[1, :501] - p2).max() <= 0.005


def test_vacation_sim_matches_chain_k1():
    spec = VacationModelSpec(dists.exponential(0.2), dists.exponential(1.0), 1, (dists.exponential(0.5),))
    v = ctmc.vacation_steady_state(spec, 100)
    s = sim.simulate_vacation(spec, sim.RunConfig(horizon=4e6))
    assert np.abs(s.queue_dist[0, :50] - v[:50]).max() <= 0.003


def test_vacation_sim_example1_row():
    spec = htcalc.vacation_model(builtin.example1(), 0, 1)
    s = sim.simulate_vacation(spec, sim.RunConfig(horizon=1e7))
    assert np.abs(s.queue_dist[0, :6] - [0.582, 0.278, 0.097, 0.030, 0.009, 0.003]).max() <= 0.005


def test_vacation_sim_no_arrivals():
    spec = VacationModelSpec(dists.exponential(0.0), dists.exponential(1.0), 2, (dists.constant(1.0),))
    s = sim.simulate_vacation(spec, sim.RunConfig(horizon=1e3))
    assert s.queue_dist[0, 0] == 1.0


def test_interval_shrinks_with_replications():
    m = builtin.example1()
    s = sim.replicate(m, sim.RunConfig(horizon=1e7, replications=10), designated=0)
    assert s.mean_ci[0] < 0.01 * s.mean_queue[0]
    assert s.rep_means.shape == (10, 2)
    assert s.batch_means.shape == (10, 20, 2)


def test_final_phase_is_consistent():
    m = builtin.example1()
    s = sim.simulate(m, sim.RunConfig(horizon=1234.5))
    ph = s.final_phase
    assert isinstance(ph, (sim.Visiting, sim.Switching))
    if isinstance(ph, sim.Visiting):
        assert ph.served <= m.limits[ph.queue]


def test_density_table_integrates_to_one():
    probs = np.array([0.5, 0.25, 0.125, 0.125])
    d = sim.scaled_histogram(probs, factor=0.5)
    assert (d.density * 0.5).sum() == pytest.approx(1.0)
    assert d.midpoints[0] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        sim.scaled_histogram(probs, factor=0.0)


def test_ks_of_discretized_exponential_is_tiny():
    eta, f = 1.3, 1e-3
    n = np.arange(20000)
    probs = np.exp(-eta * f * n) - np.exp(-eta * f * (n + 1))
    d = sim.DensityTable(f, probs)
    assert d.ks_exponential(eta) < 1e-3
    assert d.ks_exponential(2 * eta) > 0.2


def test_csv_formats():
    m = builtin.example1()
    s = sim.simulate(m, sim.RunConfig(horizon=1e4))
    lines = s.to_csv(upto=3).splitlines()
    assert lines[0] == "queue,k,p0,p1,p2,p3,overflow,mean,ci_halfwidth"
    assert lines[1].startswith("1,2,")
    assert s.correlation_csv().splitlines()[0] == "pair,corr"
    dens = sim.scaled_histogram(s).to_csv().splitlines()
    assert dens[0] == "xi,density"
