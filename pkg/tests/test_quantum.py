import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnpg.instances import bandit, chain, single_action
from qnpg.mdp import SoftmaxPolicy
from qnpg.quantum import (
    NoiseModel,
    OracleCost,
    QueryLedger,
    RandomVariableHandle,
    expected_qvr_queries,
    level_target,
    make_f_handle,
    make_g_handle,
    qme_plus,
    qme_plus_parameters,
    qme_plus_query_count,
    qme_query_count,
    qme_simulate,
    qvariance_reduce,
    trajectory_query_cost,
)
from qnpg.trajectories import exact_truncated_moments_dp

GAUSS = NoiseModel()


def constant_handle(mean, L=1.0, spread=0.0):
    mean = np.asarray(mean, dtype=float)
    return RandomVariableHandle(
        dimension=mean.size,
        variance_bound_L=L,
        exact_mean_provider=lambda: mean,
        classical_sampler=lambda rng: (mean.copy(), 3),
        per_quantum_query_cost=trajectory_query_cost(3),
        spread=spread,
    )


@pytest.fixture
def bandit_g():
    m = bandit()
    return make_g_handle(m, SoftmaxPolicy.for_mdp(m), 10)


# -- ledger ------------------------------------------------------------------

def test_oracle_cost_arithmetic():
    c = trajectory_query_cost(10)
    assert c == OracleCost(1, 10, 10)
    assert c + c == OracleCost(2, 20, 20)
    assert c.times(3) == OracleCost(3, 30, 30)
    with pytest.raises(ValueError):
        OracleCost(-1, 0, 0)


def test_one_query_decomposition(bandit_g):
    ledger = QueryLedger()
    ledger.charge_quantum("g", 1, bandit_g.per_quantum_query_cost)
    assert (ledger.u_rho, ledger.u_p, ledger.pi) == (1, 10, 10)
    assert ledger.u_g_queries == 1


def test_ledger_conservation_after_qvr(bandit_g):
    m = bandit()
    f = make_f_handle(m, SoftmaxPolicy.for_mdp(m), 10)
    ledger = QueryLedger()
    rng = np.random.default_rng(0)
    for _ in range(200):
        qvariance_reduce(bandit_g, 0.04, GAUSS, ledger, rng)
        qvariance_reduce(f, 0.01, GAUSS, ledger, rng)
    assert ledger.reconstruct() == ledger.totals
    assert ledger.u_rho == ledger.u_g_queries + ledger.u_f_queries + ledger.classical_samples
    assert ledger.u_p == 10 * (ledger.u_g_queries + ledger.u_f_queries) + ledger.classical_steps


def test_ledger_monotone(bandit_g):
    ledger = QueryLedger()
    rng = np.random.default_rng(1)
    prev = ledger.snapshot()
    for _ in range(50):
        qvariance_reduce(bandit_g, 0.04, GAUSS, ledger, rng)
        snap = ledger.snapshot("r", 0, 0)
        for k in ("u_rho", "u_p", "pi", "u_g_queries", "classical_samples"):
            assert snap[k] >= prev[k]
        prev = snap
    assert set(prev) >= {"run_id", "k", "h", "u_rho", "u_p", "pi", "u_g_queries",
                         "u_f_queries", "classical_samples"}


# -- handles -----------------------------------------------------------------

def test_handle_constants():
    m = chain(discount=0.5)  # d = 4
    p = SoftmaxPolicy.for_mdp(m)
    g = make_g_handle(m, p, 10)
    f = make_f_handle(m, p, 10)
    assert g.dimension == 4 and f.dimension == 16
    assert g.variance_bound_L == pytest.approx(8 * math.sqrt(2))
    assert f.variance_bound_L == pytest.approx(4.0)
    assert g.per_quantum_query_cost == f.per_quantum_query_cost == OracleCost(1, 10, 10)


def test_handle_means_come_from_dp(chain_mdp):
    p = SoftmaxPolicy.for_mdp(chain_mdp, np.array([0.1, 0.4, -0.3, 0.0]))
    mom = exact_truncated_moments_dp(chain_mdp, p, 6)
    np.testing.assert_array_equal(make_g_handle(chain_mdp, p, 6).exact_mean(), mom.mean_g)
    np.testing.assert_array_equal(make_f_handle(chain_mdp, p, 6, mom).exact_mean(), mom.mean_F.ravel())


# -- qme_simulate ------------------------------------------------------------

def test_query_count_example():
    assert qme_query_count(4.0, 2, 1.0, math.exp(-1.0)) == 6
    h = constant_handle([0.0, 0.0], L=4.0)
    ledger = QueryLedger()
    qme_simulate(h, 1.0, math.exp(-1.0), GAUSS, ledger, np.random.default_rng(0))
    assert ledger.other_queries + ledger.u_g_queries + ledger.u_f_queries == 6


def test_qme_degenerate_is_exact(rng):
    m = single_action()
    h = make_g_handle(m, SoftmaxPolicy.for_mdp(m), 5)
    ledger = QueryLedger()
    for _ in range(20):
        out = qme_simulate(h, 0.5 * h.variance_bound_L, 0.3, GAUSS, ledger, rng)
        np.testing.assert_array_equal(out, [0.0])


def test_qme_argument_errors(bandit_g, rng):
    ledger = QueryLedger()
    with pytest.raises(ValueError):
        qme_simulate(bandit_g, 0.0, 0.1, GAUSS, ledger, rng)
    with pytest.raises(ValueError):
        qme_simulate(bandit_g, 2 * bandit_g.variance_bound_L, 0.1, GAUSS, ledger, rng)
    with pytest.raises(ValueError):
        qme_simulate(bandit_g, 0.1, 1.5, GAUSS, ledger, rng)


def test_qme_failure_rate(bandit_g):
    rng = np.random.default_rng(2)
    ledger = QueryLedger()
    acc = 0.05
    mu = bandit_g.exact_mean()
    bad = 0
    n = 10_000
    for _ in range(n):
        out = qme_simulate(bandit_g, acc, 0.01, GAUSS, ledger, rng)
        bad += np.linalg.norm(out - mu) > acc * (1 + 1e-9)  # clipped draws sit on the boundary
    assert bad / n <= 0.02


@given(st.floats(0.01, 1.0), st.sampled_from(["zero_mean_gaussian", "biased_per_level"]),
       st.floats(-1.0, 1.0), st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_success_branch_stays_in_ball(acc, kind, c, seed):
    h = constant_handle([0.2, -0.1, 0.4], L=2.0, spread=2.0)
    noise = NoiseModel(kind, c)
    out = qme_simulate(h, acc, 1e-12, noise, QueryLedger(), np.random.default_rng(seed))
    assert np.linalg.norm(out - h.exact_mean()) <= acc * (1 + 1e-12)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel("laplace")
    with pytest.raises(ValueError):
        NoiseModel("biased_per_level", float("nan"))
    with pytest.raises(ValueError):
        NoiseModel("biased_per_level", 1.5)


# -- qme_plus ----------------------------------------------------------------

def test_qme_plus_parameters_example():
    delta, D = qme_plus_parameters(1.0, 4.0)
    assert delta == pytest.approx(16.0**-6, rel=1e-12)
    assert D == pytest.approx(1024.25, rel=1e-12)


def test_qme_plus_constant(rng):
    h = constant_handle([0.25, 0.75], L=1.0)
    out = qme_plus(h, 0.5, GAUSS, QueryLedger(), rng)
    np.testing.assert_array_equal(out, [0.25, 0.75])


def test_qme_plus_mse(bandit_g):
    rng = np.random.default_rng(3)
    ledger = QueryLedger()
    mu = bandit_g.exact_mean()
    target = 0.2
    err = np.array([np.sum((qme_plus(bandit_g, target, GAUSS, ledger, rng) - mu) ** 2)
                    for _ in range(10_000)])
    assert err.mean() <= target**2 * 1.1
    assert ledger.reconstruct() == ledger.totals


def test_qme_plus_query_count_matches_charge(bandit_g):
    ledger = QueryLedger()
    qme_plus(bandit_g, 0.1, GAUSS, ledger, np.random.default_rng(0))
    assert ledger.u_g_queries == qme_plus_query_count(bandit_g.variance_bound_L, 2, 0.1)


# -- qvariance_reduce -----------------------------------------------------------

def test_level_targets():
    assert level_target(0, 0.2) == pytest.approx(0.02)
    assert level_target(4, 0.2) == pytest.approx(0.02 / 8)


def test_qvr_exact_subestimator_gives_mean(rng):
    h = constant_handle([0.3, 0.7], L=1.0)
    for _ in range(50):
        out = qvariance_reduce(h, 0.01, GAUSS, QueryLedger(), rng)
        np.testing.assert_allclose(out, [0.3, 0.7], atol=1e-15)


def test_qvr_argument_errors(bandit_g, rng):
    with pytest.raises(ValueError):
        qvariance_reduce(bandit_g, 0.0, GAUSS, QueryLedger(), rng)
    with pytest.raises(ValueError):
        qvariance_reduce(bandit_g, (2 * bandit_g.variance_bound_L) ** 2, GAUSS, QueryLedger(), rng)


def test_geometric_levels(bandit_g):
    rng = np.random.default_rng(4)
    ledger = QueryLedger()
    n = 20_000
    js = np.array([qvariance_reduce(bandit_g, 0.04, GAUSS, ledger, rng, return_level=True)[1]
                   for _ in range(n)])
    assert js.min() >= 1
    for j, p in ((1, 0.5), (2, 0.25)):
        freq = np.mean(js == j)
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_qvr_unbiased_on_chain():
    m = chain()
    p = SoftmaxPolicy.for_mdp(m, np.array([0.3, -0.2, 0.0, 0.5]))
    h = make_g_handle(m, p, 10)
    rng = np.random.default_rng(5)
    ledger = QueryLedger()
    sigma2 = 0.04
    xs = np.array([qvariance_reduce(h, sigma2, GAUSS, ledger, rng) for _ in range(100_000)])
    se = xs.std(axis=0, ddof=1) / math.sqrt(len(xs))
    assert np.all(np.abs(xs.mean(axis=0) - h.exact_mean()) <= 4 * se)
    assert xs.var(axis=0, ddof=1).sum() <= 1.5 * sigma2


def test_qvr_query_doubling(bandit_g):
    # common random numbers: the same seed for each sigma
    means = []
    for sigma in (0.2, 0.1):
        ledger = QueryLedger()
        rng = np.random.default_rng(6)
        for _ in range(1000):
            qvariance_reduce(bandit_g, sigma**2, GAUSS, ledger, rng)
        means.append(ledger.u_g_queries / 1000)
    assert 2 * 0.75 <= means[1] / means[0] <= 2 * 1.25


def test_expected_cost_matches_analytic_series(bandit_g):
    rng = np.random.default_rng(7)
    ledger = QueryLedger()
    n = 20_000
    for _ in range(n):
        qvariance_reduce(bandit_g, 0.04, GAUSS, ledger, rng)
    analytic = expected_qvr_queries(bandit_g.variance_bound_L, 2, 0.04)
    assert ledger.u_g_queries / n == pytest.approx(analytic, rel=0.25)


def test_analytic_series_scaling():
    costs = [expected_qvr_queries(10.0, 4, s**2) for s in (0.4, 0.2, 0.1, 0.05)]
    for a, b in zip(costs, costs[1:]):
        assert 1.5 <= b / a <= 2.5
