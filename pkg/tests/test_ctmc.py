import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpoll import builtin, ctmc, dists, htcalc
from kpoll.htcalc import VacationModelSpec
from kpoll.model import PollingModel, QueueSpec


def exp_model(lam1, lam2, mu1=0.5, mu2=0.5, k1=2, k2=3, s1=0.5, s2=0.5):
    return PollingModel((
        QueueSpec(dists.exponential(lam1), dists.exponential(mu1), k1, (dists.exponential(s1),)),
        QueueSpec(dists.exponential(lam2), dists.exponential(mu2), k2, (dists.exponential(s2),)),
    ))


def exhaustive_vacation_law(lam, mu, gamma, n):
    """Queue length of the exhaustive M/M/1 with multiple Exp(gamma) vacations:
    M/M/1 geometric convolved with arrivals during an exponential residual vacation."""
    rho = lam / mu
    a = (1 - rho) * rho ** np.arange(n)
    q = lam / (lam + gamma)
    b = (1 - q) * q ** np.arange(n)
    return np.convolve(a, b)[:n]


def test_generator_rows_sum_to_zero():
    gen = ctmc.build_generator(builtin.example1(), 15, 40)
    assert np.abs(np.asarray(gen.Q.sum(axis=1)).ravel()).max() < 1e-13
    assert gen.size == len(gen.n1)
    assert (gen.Q.diagonal() < 0).all()


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 0.2), st.floats(0.0, 0.3), st.integers(1, 4), st.integers(1, 4))
def test_generator_rows_property(l1, l2, k1, k2):
    gen = ctmc.build_generator(exp_model(l1, l2, k1=k1, k2=k2), 8, 10)
    assert np.abs(np.asarray(gen.Q.sum(axis=1)).ravel()).max() < 1e-13


def test_state_index_roundtrip():
    gen = ctmc.build_generator(builtin.example1(), 10, 12)
    for s in range(0, gen.size, 37):
        assert gen.state(int(gen.n1[s]), int(gen.n2[s]), int(gen.h[s]) + 1) == s


@pytest.mark.filterwarnings("ignore:truncation boundary")
def test_solvers_agree_and_residual_small():
    gen = ctmc.build_generator(builtin.example1(0.258), 20, 120)
    tabs = {m: ctmc.steady_state(gen, method=m) for m in ("direct", "levels")}
    for t in tabs.values():
        assert t.residual <= 1e-10
        assert t.pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.abs(tabs["direct"].pi - tabs["levels"].pi).max() < 1e-10


@pytest.mark.filterwarnings("ignore:truncation boundary")
def test_power_method_small_chain():
    gen = ctmc.build_generator(exp_model(0.1, 0.1), 8, 8)
    a = ctmc.steady_state(gen, method="power", tolerance=1e-10)
    b = ctmc.steady_state(gen, method="direct")
    assert np.abs(a.pi - b.pi).max() < 1e-8


@pytest.mark.filterwarnings("ignore:truncation boundary")
def test_balance_spot_checks():
    gen = ctmc.build_generator(builtin.example1(), 20, 80)
    tab = ctmc.steady_state(gen)
    rep = ctmc.balance_residual(gen, tab)
    assert rep.max <= 1e-12


def test_one_sided_arrivals_match_vacation_chain():
    # with no queue-1 arrivals, queue 2 is a k2-limited multiple-vacation queue
    # whose vacation is S2 followed by S1
    m = exp_model(0.0, 0.2, k2=2, s1=0.7, s2=1.3)
    p1, p2, _ = ctmc.marginals(ctmc.steady_state(ctmc.build_generator(m, 6, 120)))
    spec = VacationModelSpec(m[1].arrival, m[1].service, 2, (m[1].switchover[0], m[0].switchover[0]))
    v = ctmc.vacation_steady_state(spec, 120)
    assert p1[0] == pytest.approx(1.0)
    assert np.abs(p2 - v).max() < 1e-9


def test_vacation_chain_exhaustive_closed_form():
    lam, mu, gamma = 0.3, 1.0, 0.4
    spec = VacationModelSpec(dists.exponential(lam), dists.exponential(mu), 400, (dists.exponential(gamma),))
    v = ctmc.vacation_steady_state(spec, 150)
    ref = exhaustive_vacation_law(lam, mu, gamma, 151)
    assert np.abs(v - ref).max() < 1e-10


def test_vacation_chain_example1_row_v():
    spec = htcalc.vacation_model(builtin.example1(), 0, 1)
    v = ctmc.vacation_steady_state(spec, 200)
    table_v = [0.582, 0.278, 0.097, 0.030, 0.009, 0.003]
    assert np.abs(v[:6] - table_v).max() <= 0.002
    assert v.sum() == pytest.approx(1.0)


def test_vacation_chain_no_arrivals():
    spec = VacationModelSpec(dists.exponential(0.0), dists.exponential(1.0), 1, (dists.exponential(1.0),))
    v = ctmc.vacation_steady_state(spec, 10)
    assert v[0] == 1.0


def test_oracle_rejects_general_models():
    with pytest.raises(ctmc.OracleError):
        ctmc.build_generator(builtin.example3())
    with pytest.raises(ctmc.OracleError):
        ctmc.build_generator(builtin.example4())


def test_tail_warning_on_tight_truncation():
    gen = ctmc.build_generator(builtin.example1(0.263), 10, 20)
    with pytest.warns(RuntimeWarning, match="truncation"):
        tab = ctmc.steady_state(gen)
    assert tab.tail_warning


def test_example1_p1_marginal_and_correlation():
    gen = ctmc.build_generator(builtin.example1(0.25), 40, 300)
    tab = ctmc.steady_state(gen)
    p1, p2, joint = ctmc.marginals(tab)
    table_p1 = [0.589, 0.275, 0.095, 0.029, 0.009, 0.003]
    assert np.abs(p1[:6] - table_p1).max() <= 0.005
    assert ctmc.correlation_from_joint(joint) == pytest.approx(0.048, abs=0.005)


def test_total_variation_basics():
    assert ctmc.total_variation(np.array([1.0, 0]), np.array([0, 1.0])) == 1.0
    assert ctmc.total_variation(np.array([0.5, 0.5]), np.array([0.5, 0.5, 0.0])) == 0.0


def test_product_form_gap_of_independent_joint():
    p = np.array([0.5, 0.3, 0.2])
    q = np.array([0.6, 0.4])
    g = ctmc.product_form_gap(np.outer(p, q), 1.0, p, u2=0.9)
    assert g.tv_joint_vs_product == pytest.approx(0.0, abs=1e-15)
    assert g.tv_n1_vs_vacation == pytest.approx(0.0, abs=1e-15)
    assert g.correlation == pytest.approx(0.0, abs=1e-12)
    assert g.mean_scaled_n2 == pytest.approx(0.1 * 0.4)
