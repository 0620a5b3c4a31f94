"""Pinned test MDPs shared by the tests, scripts and shipped data files."""

import numpy as np

from .mdp import TabularMdp


def bandit(discount: float = 0.5, rewards=(1.0, 0.0)) -> TabularMdp:
    """One-state, two-armed bandit (self loop)."""
    A = len(rewards)
    return TabularMdp(
        num_states=1,
        num_actions=A,
        transition=np.ones((1, A, 1)),
        reward=np.array([rewards], dtype=float),
        discount=discount,
        initial_dist=np.array([1.0]),
    )


def single_action(num_states: int = 1, reward: float = 1.0, discount: float = 0.5) -> TabularMdp:
    """Every state has one action; useful for degenerate (zero-score) checks."""
    P = np.zeros((num_states, 1, num_states))
    for s in range(num_states):
        P[s, 0, (s + 1) % num_states] = 1.0
    return TabularMdp(
        num_states=num_states,
        num_actions=1,
        transition=P,
        reward=np.full((num_states, 1), reward),
        discount=discount,
        initial_dist=np.full(num_states, 1.0 / num_states),
    )


def chain(discount: float = 0.8) -> TabularMdp:
    """Two-state chain: action 0 stays, action 1 switches (with 10% slip).

    Reward 1 is only earned by staying in state 1, so the optimal policy must
    move from state 0 and then stay.
    """
    P = np.zeros((2, 2, 2))
    P[0, 0] = [0.9, 0.1]
    P[0, 1] = [0.1, 0.9]
    P[1, 0] = [0.1, 0.9]
    P[1, 1] = [0.9, 0.1]
    r = np.array([[0.0, 0.1], [1.0, 0.0]])
    return TabularMdp(2, 2, P, r, discount, np.array([1.0, 0.0]))


def random_mdp(num_states: int, num_actions: int, discount: float, seed: int) -> TabularMdp:
    """Dense random MDP with full-support transitions."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    r = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    rho = rng.dirichlet(np.ones(num_states))
    # renormalise so rows sum to 1 to machine precision
    P /= P.sum(axis=2, keepdims=True)
    rho /= rho.sum()
    return TabularMdp(num_states, num_actions, P, r, discount, rho)


def random3(discount: float = 0.9) -> TabularMdp:
    """The pinned 3-state / 2-action random instance."""
    return random_mdp(3, 2, discount, seed=20240613)


PINNED = {
    "bandit": bandit,
    "chain": chain,
    "random3": random3,
}
