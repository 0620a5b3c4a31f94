"""Tabular MDPs, softmax policies and exact (closed-form) solvers.

Everything here is a pure function of its inputs and serves as the ground
truth the sampling-based estimators are checked against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

SQRT2 = math.sqrt(2.0)
RESIDUAL_TOL = 1e-10


class MdpValidationError(ValueError):
    """Raised when an MDP (or its file representation) is malformed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP.

    ``transition[s, a, s']`` is P(s'|s,a), ``reward[s, a]`` lies in [0, 1].
    """

    num_states: int
    num_actions: int
    transition: np.ndarray
    reward: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self):
        S, A = self.num_states, self.num_actions
        if int(S) != S or S < 1:
            raise MdpValidationError(f"num_states: must be a positive integer, got {S!r}")
        if int(A) != A or A < 1:
            raise MdpValidationError(f"num_actions: must be a positive integer, got {A!r}")
        P = _frozen(self.transition)
        r = _frozen(self.reward)
        rho = _frozen(self.initial_dist)
        if P.shape != (S, A, S):
            raise MdpValidationError(f"transition: expected shape {(S, A, S)}, got {P.shape}")
        if r.shape != (S, A):
            raise MdpValidationError(f"reward: expected shape {(S, A)}, got {r.shape}")
        if rho.shape != (S,):
            raise MdpValidationError(f"initial_dist: expected shape {(S,)}, got {rho.shape}")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            idx = tuple(int(i) for i in np.argwhere(~(P >= 0))[0])
            raise MdpValidationError(f"transition{list(idx)}: entries must be finite and >= 0")
        rows = P.sum(axis=2)
        bad = np.argwhere(np.abs(rows - 1.0) > 1e-12)
        if bad.size:
            s, a = (int(i) for i in bad[0])
            raise MdpValidationError(
                f"transition[{s}][{a}]: row sums to {rows[s, a]!r}, expected 1"
            )
        bad = np.argwhere(~((r >= 0) & (r <= 1)))
        if bad.size:
            s, a = (int(i) for i in bad[0])
            raise MdpValidationError(f"reward[{s}][{a}]: {r[s, a]!r} outside [0, 1]")
        bad = np.argwhere(~(rho >= 0))
        if bad.size:
            raise MdpValidationError(f"initial_dist[{int(bad[0][0])}]: must be >= 0")
        if abs(rho.sum() - 1.0) > 1e-12:
            raise MdpValidationError(f"initial_dist: sums to {rho.sum()!r}, expected 1")
        if not (0.0 < self.discount < 1.0):
            raise MdpValidationError(f"discount: must lie in (0, 1), got {self.discount!r}")
        object.__setattr__(self, "num_states", int(S))
        object.__setattr__(self, "num_actions", int(A))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", rho)

    @property
    def dim(self) -> int:
        """Number of softmax parameters, one logit per state-action pair."""
        return self.num_states * self.num_actions

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "discount": self.discount,
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMdp":
        for key in ("num_states", "num_actions", "transition", "reward", "discount", "initial_dist"):
            if key not in data:
                raise MdpValidationError(f"{key}: missing field")
        try:
            return cls(
                num_states=data["num_states"],
                num_actions=data["num_actions"],
                transition=np.asarray(data["transition"], dtype=float),
                reward=np.asarray(data["reward"], dtype=float),
                discount=float(data["discount"]),
                initial_dist=np.asarray(data["initial_dist"], dtype=float),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, MdpValidationError):
                raise
            raise MdpValidationError(f"malformed MDP data: {exc}") from exc


def load_mdp(path) -> TabularMdp:
    """Read an MDP from a JSON file. Raises OSError / MdpValidationError."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MdpValidationError(f"{path}: invalid JSON ({exc})") from exc
    return TabularMdp.from_dict(data)


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=2) + "\n")


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Tabular softmax policy; ``theta[s * num_actions + a]`` is the logit of (s, a)."""

    theta: np.ndarray
    num_states: int
    num_actions: int

    def __post_init__(self):
        theta = _frozen(self.theta).ravel()
        if theta.shape != (self.num_states * self.num_actions,):
            raise ValueError(
                f"theta: expected {self.num_states * self.num_actions} entries, got {theta.size}"
            )
        object.__setattr__(self, "theta", theta)
        logits = theta.reshape(self.num_states, self.num_actions)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = z / z.sum(axis=1, keepdims=True)
        probs.setflags(write=False)
        object.__setattr__(self, "_probs", probs)

    @classmethod
    def for_mdp(cls, mdp: TabularMdp, theta=None) -> "SoftmaxPolicy":
        if theta is None:
            theta = np.zeros(mdp.dim)
        return cls(np.asarray(theta, dtype=float), mdp.num_states, mdp.num_actions)

    @property
    def dim(self) -> int:
        return self.theta.size

    @property
    def probs(self) -> np.ndarray:
        """Action probabilities, shape (S, A)."""
        return self._probs

    def score(self, s: int, a: int) -> np.ndarray:
        return score_function(self, s, a)

    def scores(self) -> np.ndarray:
        """All score vectors stacked: ``out[s, a]`` is grad log pi(a|s), shape (S, A, d)."""
        return self._score_table

    @cached_property
    def _score_table(self) -> np.ndarray:
        S, A = self.num_states, self.num_actions
        out = np.zeros((S, A, S, A))
        for s in range(S):
            out[s, :, s, :] = np.eye(A) - self._probs[s][None, :]
        out = out.reshape(S, A, S * A)
        out.setflags(write=False)
        return out

    def with_theta(self, theta) -> "SoftmaxPolicy":
        return SoftmaxPolicy(np.asarray(theta, dtype=float), self.num_states, self.num_actions)


def score_function(policy: SoftmaxPolicy, s: int, a: int) -> np.ndarray:
    """grad_theta log pi_theta(a|s) for the tabular softmax."""
    S, A = policy.num_states, policy.num_actions
    if not (0 <= s < S):
        raise ValueError(f"state index {s} out of range [0, {S})")
    if not (0 <= a < A):
        raise ValueError(f"action index {a} out of range [0, {A})")
    out = np.zeros(S * A)
    block = -policy.probs[s].copy()
    block[a] += 1.0
    out[s * A:(s + 1) * A] = block
    return out


def measured_score_bound(policy: SoftmaxPolicy) -> float:
    """max over (s, a) of the score norm at this policy."""
    probs = policy.probs
    sq = (1.0 - probs) ** 2 + (np.sum(probs**2, axis=1, keepdims=True) - probs**2)
    return float(np.sqrt(sq.max()))


def policy_matrices(mdp: TabularMdp, policy: SoftmaxPolicy):
    """Return (P_pi, r_pi): state-to-state kernel and expected one-step reward."""
    pi = policy.probs
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r_pi = np.sum(pi * mdp.reward, axis=1)
    return P_pi, r_pi


def _solve(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.linalg.solve(M, b)
    res = np.max(np.abs(M @ x - b)) if b.size else 0.0
    if res > RESIDUAL_TOL * max(1.0, np.max(np.abs(b))):
        raise RuntimeError(f"linear solve residual {res:.3e} exceeds tolerance")
    return x


def value_function(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    P_pi, r_pi = policy_matrices(mdp, policy)
    return _solve(np.eye(mdp.num_states) - mdp.discount * P_pi, r_pi)


def q_function(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    V = value_function(mdp, policy)
    return mdp.reward + mdp.discount * mdp.transition @ V


def advantage(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    V = value_function(mdp, policy)
    Q = mdp.reward + mdp.discount * mdp.transition @ V
    return Q - V[:, None]


def occupancy_measures(mdp: TabularMdp, policy: SoftmaxPolicy):
    """Discounted state occupancy d and state-action occupancy nu (both sum to 1)."""
    P_pi, _ = policy_matrices(mdp, policy)
    gamma = mdp.discount
    d = (1.0 - gamma) * _solve(np.eye(mdp.num_states) - gamma * P_pi.T, mdp.initial_dist)
    nu = d[:, None] * policy.probs
    return d, nu


def objective(mdp: TabularMdp, policy: SoftmaxPolicy) -> float:
    return float(mdp.initial_dist @ value_function(mdp, policy))


def objective_from_occupancy(mdp: TabularMdp, policy: SoftmaxPolicy) -> float:
    _, nu = occupancy_measures(mdp, policy)
    return float(np.sum(nu * mdp.reward) / (1.0 - mdp.discount))


def exact_policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    _, nu = occupancy_measures(mdp, policy)
    A = advantage(mdp, policy)
    return np.einsum("sa,sad->d", nu * A, policy.scores()) / (1.0 - mdp.discount)


def exact_fisher(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    _, nu = occupancy_measures(mdp, policy)
    sc = policy.scores()
    F = np.einsum("sa,sad,sae->de", nu, sc, sc)
    return 0.5 * (F + F.T)


def optimal_policy(mdp: TabularMdp, max_iter: int = 10_000):
    """Policy iteration over deterministic policies.

    Returns (actions, V*) where ``actions[s]`` is the greedy optimal action.
    """
    S, gamma = mdp.num_states, mdp.discount
    actions = np.zeros(S, dtype=int)
    idx = np.arange(S)
    for _ in range(max_iter):
        P_pi = mdp.transition[idx, actions]
        r_pi = mdp.reward[idx, actions]
        V = _solve(np.eye(S) - gamma * P_pi, r_pi)
        Q = mdp.reward + gamma * mdp.transition @ V
        best = Q.max(axis=1)
        # keep the incumbent unless strictly improved, so ties cannot cycle
        improve = best > Q[idx, actions] + 1e-12
        if not improve.any():
            return actions, V
        actions = np.where(improve, Q.argmax(axis=1), actions)
    raise RuntimeError("policy iteration did not converge")


def optimal_objective(mdp: TabularMdp) -> float:
    """J* = sum_s rho(s) V*(s)."""
    _, V = optimal_policy(mdp)
    return float(mdp.initial_dist @ V)


def kl_to_optimal(mdp: TabularMdp, policy: SoftmaxPolicy) -> float:
    """E_{s ~ d^{pi*}} KL(pi*(.|s) || pi_theta(.|s)) for the deterministic optimal policy."""
    actions, _ = optimal_policy(mdp)
    S, gamma = mdp.num_states, mdp.discount
    P_star = mdp.transition[np.arange(S), actions]
    d_star = (1.0 - gamma) * _solve(np.eye(S) - gamma * P_star.T, mdp.initial_dist)
    kl = -np.log(policy.probs[np.arange(S), actions])
    return float(d_star @ kl)


@dataclass(frozen=True)
class SmoothnessConstants:
    G: float
    B: float
    L: float
    mu_F: float


def smoothness_constants(gamma: float, G: float = SQRT2, B: float = 1.0,
                         mu_F: float = 1e-3) -> SmoothnessConstants:
    """Score bounds plus the objective smoothness L = B/(1-g)^2 + 2G^2/(1-g)^3.

    The defaults are the tabular-softmax values; ``mu_F`` defaults to the
    Fisher ridge, since the unregularised softmax Fisher is singular.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma!r}")
    for name, v in (("G", G), ("B", B), ("mu_F", mu_F)):
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{name} must be positive and finite, got {v!r}")
    L = B / (1.0 - gamma) ** 2 + 2.0 * G**2 / (1.0 - gamma) ** 3
    return SmoothnessConstants(G=float(G), B=float(B), L=float(L), mu_F=float(mu_F))
