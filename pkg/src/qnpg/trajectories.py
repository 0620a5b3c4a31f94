"""Fixed-length trajectories and the truncated gradient / Fisher estimators.

The quantum trajectory superposition is emulated at the probability level:
``enumerate_trajectory_distribution`` lists every length-N trajectory with its
probability, ``exact_truncated_moments_dp`` gives the exact estimator means in
polynomial time, and the samplers draw from the same distribution
classically.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mdp import SoftmaxPolicy, TabularMdp

DEFAULT_ENUMERATION_CAP = 10**6


class EnumerationLimitError(RuntimeError):
    """Raised when full enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class Trajectory:
    steps: tuple  # ((s0, a0), ..., (s_{N-1}, a_{N-1}))

    def __post_init__(self):
        steps = tuple((int(s), int(a)) for s, a in self.steps)
        if not steps:
            raise ValueError("a trajectory needs at least one step")
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)

    @property
    def states(self) -> np.ndarray:
        return np.array([s for s, _ in self.steps], dtype=int)

    @property
    def actions(self) -> np.ndarray:
        return np.array([a for _, a in self.steps], dtype=int)

    def validate(self, mdp: TabularMdp) -> None:
        for t, (s, a) in enumerate(self.steps):
            if not (0 <= s < mdp.num_states and 0 <= a < mdp.num_actions):
                raise ValueError(f"step {t}: ({s}, {a}) invalid for this MDP")


@dataclass(frozen=True)
class TrajectoryDistribution:
    entries: tuple  # ((Trajectory, probability), ...)
    truncation: int

    def total_probability(self) -> float:
        return float(sum(p for _, p in self.entries))

    def to_table(self) -> str:
        """One row per trajectory: ``s0,a0,...,s_{N-1},a_{N-1},probability``."""
        lines = []
        for traj, p in self.entries:
            idx = ",".join(f"{s},{a}" for s, a in traj.steps)
            lines.append(f"{idx},{float(p)!r}")
        return "\n".join(lines) + "\n"

    def write_table(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_table())


@dataclass(frozen=True, eq=False)
class EstimatorMoments:
    """Means (and trace variances when available) of g_hat and F_hat."""

    mean_g: np.ndarray
    mean_F: np.ndarray
    var_g: Optional[float]
    var_F: Optional[float]
    method: str  # "enumeration" | "dynamic_programming" | "monte_carlo"


def _cdf(probs: np.ndarray) -> np.ndarray:
    c = np.cumsum(probs, axis=-1)
    # exact 1.0 at the end (and over trailing zero-mass entries)
    return c / c[..., -1:]


def _cdf_draw(cdf: np.ndarray, u) -> np.ndarray:
    # first index with cdf > u, for u in [0, 1)
    return (u[..., None] >= cdf).sum(axis=-1)


def sample_trajectory(mdp: TabularMdp, policy: SoftmaxPolicy, N: int,
                      rng: np.random.Generator) -> Trajectory:
    """Roll out N state-action pairs: s0 ~ rho, a_t ~ pi(.|s_t), s_{t+1} ~ P(.|s_t, a_t)."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    states, actions = sample_trajectories(mdp, policy, N, 1, rng)
    return Trajectory(tuple(zip(states[0].tolist(), actions[0].tolist())))


def sample_trajectories(mdp: TabularMdp, policy: SoftmaxPolicy, N: int, size: int,
                        rng: np.random.Generator):
    """Vectorised rollouts; returns integer arrays (states, actions) of shape (size, N).

    Consumes exactly ``size * 2N`` uniforms: column 0 draws s0, column 2t+1 the
    action at step t and column 2t+2 the next state.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    u = rng.random((size, 2 * N))
    rho_cdf = _cdf(mdp.initial_dist)
    pi_cdf = _cdf(policy.probs)
    P_cdf = _cdf(mdp.transition)
    if size == 1:
        return _rollout_scalar(rho_cdf, pi_cdf, P_cdf, N, u[0].tolist())
    states = np.empty((size, N), dtype=int)
    actions = np.empty((size, N), dtype=int)
    s = _cdf_draw(rho_cdf, u[:, 0])
    for t in range(N):
        a = _cdf_draw(pi_cdf[s], u[:, 2 * t + 1])
        states[:, t] = s
        actions[:, t] = a
        if t < N - 1:
            s = _cdf_draw(P_cdf[s, a], u[:, 2 * t + 2])
    return states, actions


def _rollout_scalar(rho_cdf, pi_cdf, P_cdf, N, u):
    # same draws as the vectorised path, without per-step array overhead
    rho_c, pi_c, P_c = rho_cdf.tolist(), pi_cdf.tolist(), P_cdf.tolist()
    states, actions = [0] * N, [0] * N
    s = bisect.bisect_right(rho_c, u[0])
    for t in range(N):
        a = bisect.bisect_right(pi_c[s], u[2 * t + 1])
        states[t] = s
        actions[t] = a
        if t < N - 1:
            s = bisect.bisect_right(P_c[s][a], u[2 * t + 2])
    return np.array([states]), np.array([actions])


def trajectory_probability(mdp: TabularMdp, policy: SoftmaxPolicy, trajectory: Trajectory) -> float:
    """rho(s0) * prod_t pi(a_t|s_t) P(s_{t+1}|s_t,a_t) * pi(a_{N-1}|s_{N-1})."""
    states, actions = trajectory.states, trajectory.actions
    pi = policy.probs
    p = mdp.initial_dist[states[0]]
    for t in range(len(states)):
        p *= pi[states[t], actions[t]]
        if t < len(states) - 1:
            p *= mdp.transition[states[t], actions[t], states[t + 1]]
    return float(p)


def enumerate_trajectory_distribution(mdp: TabularMdp, policy: SoftmaxPolicy, N: int,
                                      cap: int = DEFAULT_ENUMERATION_CAP) -> TrajectoryDistribution:
    """Every length-N trajectory with nonzero probability."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    count = (mdp.num_states * mdp.num_actions) ** N
    if count > cap:
        raise EnumerationLimitError(
            f"enumeration needs {count} trajectory skeletons, cap is {cap}"
        )
    pi, P = policy.probs, mdp.transition
    frontier = [((), float(p), s) for s, p in enumerate(mdp.initial_dist) if p > 0]
    for t in range(N):
        nxt = []
        for steps, p, s in frontier:
            for a in range(mdp.num_actions):
                pa = p * pi[s, a]
                if pa == 0.0:
                    continue
                path = steps + ((s, a),)
                if t == N - 1:
                    nxt.append((path, pa, -1))
                    continue
                for s2 in range(mdp.num_states):
                    ps = pa * P[s, a, s2]
                    if ps > 0.0:
                        nxt.append((path, ps, s2))
        frontier = nxt
    entries = tuple((Trajectory(steps), p) for steps, p, _ in frontier)
    return TrajectoryDistribution(entries=entries, truncation=N)


def g_hat(trajectory: Trajectory, policy: SoftmaxPolicy, mdp: TabularMdp,
          gamma: Optional[float] = None) -> np.ndarray:
    """sum_n (sum_{t<=n} score_t) gamma^n r(s_n, a_n)."""
    s, a = trajectory.states, trajectory.actions
    return g_hat_batch(s[None], a[None], policy, mdp, gamma)[0]


def f_hat(trajectory: Trajectory, policy: SoftmaxPolicy, mdp: TabularMdp,
          gamma: Optional[float] = None) -> np.ndarray:
    """(1 - gamma) sum_n gamma^n score_n score_n^T."""
    s, a = trajectory.states, trajectory.actions
    return f_hat_batch(s[None], a[None], policy, mdp, gamma)[0]


def g_hat_batch(states, actions, policy, mdp, gamma=None) -> np.ndarray:
    """g_hat for a batch of equal-length trajectories, shape (B, d)."""
    gamma = mdp.discount if gamma is None else gamma
    scores = policy.scores()[states, actions]  # (B, N, d)
    cum = np.cumsum(scores, axis=1)
    w = gamma ** np.arange(states.shape[1]) * mdp.reward[states, actions]  # (B, N)
    return np.einsum("bn,bnd->bd", w, cum)


def f_hat_batch(states, actions, policy, mdp, gamma=None) -> np.ndarray:
    """F_hat for a batch of equal-length trajectories, shape (B, d, d)."""
    gamma = mdp.discount if gamma is None else gamma
    scores = policy.scores()[states, actions]
    w = (1.0 - gamma) * gamma ** np.arange(states.shape[1])
    return np.einsum("n,bnd,bne->bde", w, scores, scores)


def exact_truncated_moments_dp(mdp: TabularMdp, policy: SoftmaxPolicy, N: int) -> EstimatorMoments:
    """Exact E[g_hat] and E[F_hat] by a forward recursion over step distributions.

    ``c[s]`` carries E[1{s_n = s} * sum_{t<n} score_t], so the cross terms of
    g_hat are accounted for without enumerating paths.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    gamma = mdp.discount
    pi, P, r = policy.probs, mdp.transition, mdp.reward
    sc = policy.scores()  # (S, A, d)
    outer = np.einsum("sad,sae->sade", sc, sc)
    p = mdp.initial_dist.copy()
    c = np.zeros((mdp.num_states, policy.dim))
    mean_g = np.zeros(policy.dim)
    mean_F = np.zeros((policy.dim, policy.dim))
    for n in range(N):
        # joint[s, a] = Pr(s_n = s, a_n = a); acc[s, a] = E[1{s,a} * sum_{t<=n} score_t]
        joint = p[:, None] * pi
        acc = c[:, None, :] * pi[:, :, None] + joint[:, :, None] * sc
        mean_g += gamma**n * np.einsum("sa,sad->d", r, acc)
        mean_F += (1.0 - gamma) * gamma**n * np.einsum("sa,sade->de", joint, outer)
        if n < N - 1:
            p = np.einsum("sa,sat->t", joint, P)
            c = np.einsum("sad,sat->td", acc, P)
    return EstimatorMoments(mean_g, 0.5 * (mean_F + mean_F.T), None, None, "dynamic_programming")


def enumeration_moments(mdp: TabularMdp, policy: SoftmaxPolicy, N: int,
                        cap: int = DEFAULT_ENUMERATION_CAP) -> EstimatorMoments:
    """Exact means and trace variances by summing over the enumerated distribution."""
    dist = enumerate_trajectory_distribution(mdp, policy, N, cap)
    states = np.array([t.states for t, _ in dist.entries])
    actions = np.array([t.actions for t, _ in dist.entries])
    probs = np.array([p for _, p in dist.entries])
    g = g_hat_batch(states, actions, policy, mdp)
    F = f_hat_batch(states, actions, policy, mdp).reshape(len(probs), -1)
    mean_g = probs @ g
    mean_F = probs @ F
    var_g = float(probs @ np.sum((g - mean_g) ** 2, axis=1))
    var_F = float(probs @ np.sum((F - mean_F) ** 2, axis=1))
    d = policy.dim
    return EstimatorMoments(mean_g, mean_F.reshape(d, d), var_g, var_F, "enumeration")


def monte_carlo_moments(mdp: TabularMdp, policy: SoftmaxPolicy, N: int, num_samples: int,
                        rng: np.random.Generator, chunk: int = 10_000) -> EstimatorMoments:
    """Sample means and unbiased trace covariances of g_hat and vec(F_hat)."""
    if num_samples < 2:
        raise ValueError("num_samples must be >= 2")
    d = policy.dim
    # shifted sums (by the first sample) keep the variance computation stable
    sum_g = np.zeros(d)
    sq_g = 0.0
    sum_F = np.zeros(d * d)
    sq_F = 0.0
    shift_g = shift_F = None
    done = 0
    while done < num_samples:
        b = min(chunk, num_samples - done)
        s, a = sample_trajectories(mdp, policy, N, b, rng)
        g = g_hat_batch(s, a, policy, mdp)
        F = f_hat_batch(s, a, policy, mdp).reshape(b, -1)
        if shift_g is None:
            shift_g, shift_F = g[0].copy(), F[0].copy()
        g -= shift_g
        F -= shift_F
        sum_g += g.sum(axis=0)
        sq_g += float(np.sum(g**2))
        sum_F += F.sum(axis=0)
        sq_F += float(np.sum(F**2))
        done += b
    n = num_samples
    mean_g = sum_g / n
    mean_F = sum_F / n
    var_g = max(0.0, (sq_g - n * float(mean_g @ mean_g)) / (n - 1))
    var_F = max(0.0, (sq_F - n * float(mean_F @ mean_F)) / (n - 1))
    return EstimatorMoments(mean_g + shift_g, (mean_F + shift_F).reshape(d, d),
                            var_g, var_F, "monte_carlo")


def sample_geometric_horizons(gamma: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """T ~ Geometric(1 - gamma) on {1, 2, ...}, mean 1 / (1 - gamma)."""
    return rng.geometric(1.0 - gamma, size=size)


def _ragged_rollouts(mdp, policy, horizons, rng):
    """Rollouts of per-sample length ``horizons``; returns (states, actions, mask)."""
    size = horizons.size
    T_max = int(horizons.max())
    states, actions = sample_trajectories(mdp, policy, T_max, size, rng)
    mask = np.arange(T_max)[None, :] < horizons[:, None]
    return states, actions, mask


def classical_pg_estimate(mdp: TabularMdp, policy: SoftmaxPolicy, rng: np.random.Generator):
    """Geometric-horizon baseline: returns (estimate, T) with T the step cost."""
    T = int(sample_geometric_horizons(mdp.discount, 1, rng)[0])
    traj = sample_trajectory(mdp, policy, T, rng)
    return g_hat(traj, policy, mdp), T


def classical_pg_batch(mdp: TabularMdp, policy: SoftmaxPolicy, size: int,
                       rng: np.random.Generator):
    """``size`` geometric-horizon gradient estimates: returns (estimates (B, d), total steps)."""
    T = sample_geometric_horizons(mdp.discount, size, rng)
    states, actions, mask = _ragged_rollouts(mdp, policy, T, rng)
    scores = policy.scores()[states, actions] * mask[:, :, None]
    cum = np.cumsum(scores, axis=1)
    w = mdp.discount ** np.arange(states.shape[1]) * mdp.reward[states, actions] * mask
    return np.einsum("bn,bnd->bd", w, cum), int(T.sum())


def classical_fisher_batch(mdp: TabularMdp, policy: SoftmaxPolicy, size: int,
                           rng: np.random.Generator):
    """``size`` unbiased Fisher samples score(s_{T-1}, a_{T-1})^{(x)2} with T geometric.

    The last pair of a Geometric(1 - gamma) rollout is distributed as nu. Returns
    (mean estimate (d, d), total steps).
    """
    T = sample_geometric_horizons(mdp.discount, size, rng)
    states, actions, _ = _ragged_rollouts(mdp, policy, T, rng)
    last = T - 1
    rows = np.arange(size)
    sc = policy.scores()[states[rows, last], actions[rows, last]]
    return sc.T @ sc / size, int(T.sum())
