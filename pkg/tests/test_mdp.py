import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnpg.instances import bandit, chain, random_mdp, single_action
from qnpg.mdp import (
    MdpValidationError,
    SoftmaxPolicy,
    TabularMdp,
    advantage,
    exact_fisher,
    exact_policy_gradient,
    kl_to_optimal,
    load_mdp,
    measured_score_bound,
    objective,
    objective_from_occupancy,
    occupancy_measures,
    optimal_objective,
    optimal_policy,
    policy_matrices,
    q_function,
    save_mdp,
    score_function,
    smoothness_constants,
    value_function,
)

SQRT2 = math.sqrt(2.0)


def mdps():
    return st.builds(
        random_mdp,
        num_states=st.integers(1, 4),
        num_actions=st.integers(1, 3),
        discount=st.floats(0.1, 0.95),
        seed=st.integers(0, 2**31 - 1),
    )


def with_theta(mdp_strategy, scale=3.0):
    @st.composite
    def build(draw):
        mdp = draw(mdp_strategy)
        seed = draw(st.integers(0, 2**31 - 1))
        theta = np.random.default_rng(seed).uniform(-scale, scale, mdp.dim)
        return mdp, SoftmaxPolicy.for_mdp(mdp, theta)
    return build()


# -- construction and validation ---------------------------------------------

def test_json_round_trip(tmp_path, chain_mdp):
    path = tmp_path / "chain.json"
    save_mdp(chain_mdp, path)
    back = load_mdp(path)
    assert back.num_states == 2 and back.num_actions == 2
    np.testing.assert_array_equal(back.transition, chain_mdp.transition)
    np.testing.assert_array_equal(back.reward, chain_mdp.reward)
    assert back.discount == chain_mdp.discount


def test_validation_names_field_and_index():
    d = chain().to_dict()
    d["transition"][1][0] = [0.5, 0.6]
    with pytest.raises(MdpValidationError, match=r"transition\[1\]\[0\]"):
        TabularMdp.from_dict(d)
    d = chain().to_dict()
    d["reward"][0][1] = 1.5
    with pytest.raises(MdpValidationError, match=r"reward\[0\]\[1\]"):
        TabularMdp.from_dict(d)
    d = chain().to_dict()
    d["initial_dist"] = [0.7, 0.7]
    with pytest.raises(MdpValidationError, match="initial_dist"):
        TabularMdp.from_dict(d)
    d = chain().to_dict()
    del d["discount"]
    with pytest.raises(MdpValidationError, match="discount"):
        TabularMdp.from_dict(d)
    d = chain().to_dict()
    d["discount"] = 1.0
    with pytest.raises(MdpValidationError, match="discount"):
        TabularMdp.from_dict(d)


def test_load_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(MdpValidationError):
        load_mdp(p)
    with pytest.raises(OSError):
        load_mdp(tmp_path / "missing.json")


def test_arrays_are_read_only(chain_mdp):
    with pytest.raises(ValueError):
        chain_mdp.transition[0, 0, 0] = 0.3


# -- policy and score --------------------------------------------------------

def test_score_examples():
    p = SoftmaxPolicy(np.zeros(2), 1, 2)
    np.testing.assert_allclose(score_function(p, 0, 0), [0.5, -0.5])
    p1 = SoftmaxPolicy(np.array([3.7]), 1, 1)
    np.testing.assert_allclose(score_function(p1, 0, 0), [0.0])
    p2 = SoftmaxPolicy(np.zeros(4), 2, 2)
    np.testing.assert_allclose(score_function(p2, 1, 1), [0, 0, -0.5, 0.5])


def test_score_index_errors():
    p = SoftmaxPolicy(np.zeros(4), 2, 2)
    with pytest.raises((IndexError, ValueError)):
        score_function(p, 2, 0)
    with pytest.raises((IndexError, ValueError)):
        score_function(p, 0, -1)


def test_theta_dimension_checked():
    with pytest.raises(ValueError):
        SoftmaxPolicy(np.zeros(3), 2, 2)


@given(with_theta(mdps(), scale=5.0))
@settings(max_examples=60, deadline=None)
def test_softmax_normalised_and_positive(case):
    _, policy = case
    pi = policy.probs
    assert np.all(np.abs(pi.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(pi > 0)


@given(with_theta(mdps(), scale=5.0))
@settings(max_examples=60, deadline=None)
def test_score_zero_mean_and_bounded(case):
    _, policy = case
    pi = policy.probs
    scores = policy.scores()
    for s in range(policy.num_states):
        mean = (pi[s][:, None] * scores[s]).sum(axis=0)
        assert np.linalg.norm(mean) <= 1e-10
    assert measured_score_bound(policy) <= SQRT2 + 1e-12


def test_score_bound_random_grid():
    # max ||score|| over a theta grid stays below sqrt(2)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        A = int(rng.integers(2, 6))
        p = SoftmaxPolicy(rng.uniform(-10, 10, 2 * A), 2, A)
        worst = max(worst, measured_score_bound(p))
    assert worst <= SQRT2


# -- exact solvers ---------------------------------------------------------------

def test_single_state_single_action_values():
    m = single_action(reward=1.0, discount=0.5)
    p = SoftmaxPolicy.for_mdp(m)
    np.testing.assert_allclose(value_function(m, p), [2.0])
    np.testing.assert_allclose(q_function(m, p), [[2.0]])
    np.testing.assert_allclose(advantage(m, p), [[0.0]])
    assert objective(m, p) == pytest.approx(2.0)
    d, nu = occupancy_measures(m, p)
    np.testing.assert_allclose(d, [1.0])
    np.testing.assert_allclose(exact_policy_gradient(m, p), [0.0])
    np.testing.assert_allclose(exact_fisher(m, p), [[0.0]])


def test_zero_reward_gives_zero_everything():
    m = random_mdp(3, 2, 0.8, seed=4)
    m = TabularMdp(3, 2, m.transition, np.zeros((3, 2)), 0.8, m.initial_dist)
    p = SoftmaxPolicy.for_mdp(m, np.arange(6.0))
    np.testing.assert_array_equal(value_function(m, p), 0.0)
    np.testing.assert_array_equal(q_function(m, p), 0.0)
    assert objective(m, p) == 0.0


def test_value_matches_iterative_evaluation(random2_mdp):
    m = random2_mdp
    p = SoftmaxPolicy.for_mdp(m, np.array([0.3, -0.2, 1.0, 0.5]))
    P_pi, r_pi = policy_matrices(m, p)
    V = np.zeros(2)
    for _ in range(2000):
        V = r_pi + m.discount * P_pi @ V
    np.testing.assert_allclose(value_function(m, p), V, atol=1e-10)


def test_symmetric_bandit_advantage_zero():
    m = bandit(rewards=(0.4, 0.4))
    np.testing.assert_allclose(advantage(m, SoftmaxPolicy.for_mdp(m)), 0.0, atol=1e-12)


def test_occupancy_matches_truncated_series(random2_mdp):
    m = random2_mdp
    p = SoftmaxPolicy.for_mdp(m, np.array([0.1, 0.9, -0.4, 0.2]))
    P_pi, _ = policy_matrices(m, p)
    dist = m.initial_dist.copy()
    acc = np.zeros(2)
    T = int(np.ceil(np.log(1e-13) / np.log(m.discount)))
    for t in range(T + 1):
        acc += m.discount**t * dist
        dist = dist @ P_pi
    d, _ = occupancy_measures(m, p)
    np.testing.assert_allclose(d, (1 - m.discount) * acc, atol=1e-10)


@given(with_theta(mdps()))
@settings(max_examples=60, deadline=None)
def test_solver_identities(case):
    m, p = case
    V = value_function(m, p)
    Q = q_function(m, p)
    A = advantage(m, p)
    pi = p.probs
    np.testing.assert_allclose((pi * Q).sum(axis=1), V, atol=1e-10)
    np.testing.assert_allclose((pi * A).sum(axis=1), 0.0, atol=1e-10)
    d, nu = occupancy_measures(m, p)
    assert abs(d.sum() - 1) <= 1e-10 and abs(nu.sum() - 1) <= 1e-10
    assert np.all(d >= -1e-12)
    assert objective(m, p) == pytest.approx(objective_from_occupancy(m, p), abs=1e-10)


@given(with_theta(mdps(), scale=2.0))
@settings(max_examples=40, deadline=None)
def test_gradient_matches_finite_differences(case):
    m, p = case
    g = exact_policy_gradient(m, p)
    h = 1e-5
    fd = np.empty(m.dim)
    for i in range(m.dim):
        e = np.zeros(m.dim)
        e[i] = h
        fd[i] = (objective(m, p.with_theta(p.theta + e)) - objective(m, p.with_theta(p.theta - e))) / (2 * h)
    scale = max(np.linalg.norm(fd), 1e-3)
    assert np.linalg.norm(g - fd) <= 1e-6 * scale


@given(with_theta(mdps()))
@settings(max_examples=60, deadline=None)
def test_fisher_psd_and_bounded(case):
    m, p = case
    F = exact_fisher(m, p)
    np.testing.assert_array_equal(F, F.T)
    eig = np.linalg.eigvalsh(F)
    assert eig.min() >= -1e-10
    assert eig.max() <= 2.0 + 1e-10


def test_bandit_gradient_and_fisher(bandit_mdp):
    p = SoftmaxPolicy.for_mdp(bandit_mdp)
    np.testing.assert_allclose(exact_policy_gradient(bandit_mdp, p), [0.5, -0.5], atol=1e-12)
    np.testing.assert_allclose(exact_fisher(bandit_mdp, p), 0.25 * np.array([[1, -1], [-1, 1]]), atol=1e-12)


def test_fisher_psd_random3(random3_mdp):
    p = SoftmaxPolicy.for_mdp(random3_mdp, np.linspace(-1, 1, 6))
    assert np.linalg.eigvalsh(exact_fisher(random3_mdp, p)).min() >= -1e-10


# -- optimum -----------------------------------------------------------------

def test_optimal_objective_bandit_and_chain():
    assert optimal_objective(bandit()) == pytest.approx(2.0)
    m = chain()
    actions, _ = optimal_policy(m)
    np.testing.assert_array_equal(actions, [1, 0])
    J = optimal_objective(m)
    # brute force over the four deterministic policies
    best = -np.inf
    for a0 in range(2):
        for a1 in range(2):
            theta = np.full(4, -40.0)
            theta[a0] = theta[2 + a1] = 40.0
            best = max(best, objective(m, SoftmaxPolicy.for_mdp(m, theta)))
    assert J == pytest.approx(best, abs=1e-9)


@given(mdps())
@settings(max_examples=30, deadline=None)
def test_optimum_dominates_random_policies(m):
    J_star = optimal_objective(m)
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = SoftmaxPolicy.for_mdp(m, rng.normal(size=m.dim) * 3)
        assert objective(m, p) <= J_star + 1e-10


def test_kl_to_optimal_nonnegative_and_shrinks(chain_mdp):
    k0 = kl_to_optimal(chain_mdp, SoftmaxPolicy.for_mdp(chain_mdp))
    theta = np.array([-3.0, 3.0, 3.0, -3.0])  # move in state 0, stay in state 1
    k1 = kl_to_optimal(chain_mdp, SoftmaxPolicy.for_mdp(chain_mdp, theta))
    assert k0 > 0 and 0 <= k1 < k0


# -- constants ---------------------------------------------------------------

def test_smoothness_constants_example():
    c = smoothness_constants(0.5, G=SQRT2, B=1.0)
    assert c.L == pytest.approx(36.0, rel=1e-12)
    with pytest.raises(ValueError):
        smoothness_constants(0.0, G=1.0, B=1.0)
    with pytest.raises(ValueError):
        smoothness_constants(0.5, G=-1.0)
    with pytest.raises(ValueError):
        smoothness_constants(0.5, mu_F=0.0)


def test_json_file_format(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({
        "num_states": 1, "num_actions": 2, "transition": [[[1.0], [1.0]]],
        "reward": [[1.0, 0.0]], "discount": 0.5, "initial_dist": [1.0],
    }))
    m = load_mdp(p)
    assert m.dim == 2
