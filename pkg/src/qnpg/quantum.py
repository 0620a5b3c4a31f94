"""Contract-level simulation of the quantum mean-estimation stack.

Amplitude estimation is not run here.  ``qme_simulate`` returns the exact mean
perturbed inside the promised error ball (or a classical sample on the failure
branch) and charges the promised number of oracle queries to a
``QueryLedger``.  ``qme_plus`` and ``qvariance_reduce`` are then implemented
step for step on top of it, so their statistics are genuine consequences of
that contract.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .mdp import SQRT2, SoftmaxPolicy, TabularMdp, measured_score_bound
from .trajectories import (
    EstimatorMoments,
    exact_truncated_moments_dp,
    f_hat_batch,
    g_hat_batch,
    sample_trajectories,
)

NOISE_KINDS = ("zero_mean_gaussian", "biased_per_level")


@dataclass(frozen=True)
class OracleCost:
    """Oracle calls behind one quantum query (or one classical rollout)."""

    u_rho: int = 0
    u_p: int = 0
    pi: int = 0

    def __post_init__(self):
        if min(self.u_rho, self.u_p, self.pi) < 0:
            raise ValueError("oracle counts must be non-negative")

    def __add__(self, other: "OracleCost") -> "OracleCost":
        return OracleCost(self.u_rho + other.u_rho, self.u_p + other.u_p, self.pi + other.pi)

    def times(self, n: int) -> "OracleCost":
        return OracleCost(self.u_rho * n, self.u_p * n, self.pi * n)


def trajectory_query_cost(N: int) -> OracleCost:
    """One preparation of the length-N trajectory superposition: 1 + 2N calls."""
    return OracleCost(u_rho=1, u_p=N, pi=N)


@dataclass
class QueryLedger:
    """Running oracle-query totals; the sample-complexity meter of a run.

    Not thread safe: one ledger per run.
    """

    u_rho: int = 0
    u_p: int = 0
    pi: int = 0
    u_g_queries: int = 0
    u_f_queries: int = 0
    other_queries: int = 0
    classical_samples: int = 0
    classical_steps: int = 0
    # (kind, per-query cost) -> number of quantum queries, for recomputation
    _quantum: Counter = field(default_factory=Counter, repr=False)

    @property
    def totals(self) -> OracleCost:
        return OracleCost(self.u_rho, self.u_p, self.pi)

    def charge_quantum(self, kind: str, count: int, cost: OracleCost) -> None:
        if count < 0:
            raise ValueError("query count must be non-negative")
        if kind == "g":
            self.u_g_queries += count
        elif kind == "f":
            self.u_f_queries += count
        else:
            self.other_queries += count
        self.u_rho += cost.u_rho * count
        self.u_p += cost.u_p * count
        self.pi += cost.pi * count
        self._quantum[(kind, cost)] += count

    def charge_classical(self, length: int, samples: int = 1) -> None:
        """``samples`` rollouts with ``length`` transition/policy steps in total."""
        self.classical_samples += samples
        self.classical_steps += length
        self.u_rho += samples
        self.u_p += length
        self.pi += length

    def reconstruct(self) -> OracleCost:
        """Recompute the totals from per-kind query counts and classical lengths."""
        total = OracleCost(self.classical_samples, self.classical_steps, self.classical_steps)
        for (_, cost), n in self._quantum.items():
            total = total + cost.times(n)
        return total

    def quantum_queries(self) -> int:
        return self.u_g_queries + self.u_f_queries + self.other_queries

    def snapshot(self, run_id: str = "", k: int = -1, h: int = -1) -> dict:
        return {
            "run_id": run_id,
            "k": k,
            "h": h,
            "u_rho": self.u_rho,
            "u_p": self.u_p,
            "pi": self.pi,
            "u_g_queries": self.u_g_queries,
            "u_f_queries": self.u_f_queries,
            "classical_samples": self.classical_samples,
            "classical_steps": self.classical_steps,
        }


@dataclass(frozen=True)
class NoiseModel:
    """How the simulated estimator errs inside its accuracy ball.

    ``biased_per_level`` adds a fixed-direction offset of magnitude
    ``bias_coefficient * accuracy`` on top of the (shrunk) Gaussian error.
    """

    kind: str = "zero_mean_gaussian"
    bias_coefficient: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not math.isfinite(self.bias_coefficient):
            raise ValueError("bias_coefficient must be finite")
        if abs(self.bias_coefficient) > 1.0:
            # the error must stay inside the accuracy ball
            raise ValueError("|bias_coefficient| must not exceed 1")


@dataclass(frozen=True, eq=False)
class RandomVariableHandle:
    """A d-dimensional random variable with Var <= L^2, accessible both ways.

    ``classical_sampler(rng)`` returns ``(sample, rollout_length)``.  ``spread``
    is an instance-level bound on the standard deviation (defaults to L); the
    simulated quantum error never exceeds it, so a constant variable is
    estimated exactly.
    """

    dimension: int
    variance_bound_L: float
    exact_mean_provider: Callable[[], np.ndarray]
    classical_sampler: Callable[[np.random.Generator], tuple]
    per_quantum_query_cost: OracleCost
    kind: str = "generic"
    spread: Optional[float] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if not self.variance_bound_L >= 0:
            raise ValueError("variance_bound_L must be >= 0")
        object.__setattr__(self, "_mean", None)

    def exact_mean(self) -> np.ndarray:
        if self._mean is None:
            m = np.asarray(self.exact_mean_provider(), dtype=float).ravel()
            if m.shape != (self.dimension,):
                raise ValueError(f"mean has shape {m.shape}, expected ({self.dimension},)")
            m.setflags(write=False)
            object.__setattr__(self, "_mean", m)
        return self._mean

    def classical_sample(self, rng: np.random.Generator, ledger: QueryLedger) -> np.ndarray:
        x, length = self.classical_sampler(rng)
        ledger.charge_classical(length)
        return np.asarray(x, dtype=float).ravel()

    @property
    def noise_scale(self) -> float:
        return self.variance_bound_L if self.spread is None else self.spread


def qme_query_count(L: float, dimension: int, accuracy: float, failure_prob: float,
                    c_qme: float = 1.0) -> int:
    """ceil(c * L * sqrt(d) * ln(1/delta) / accuracy)."""
    return int(math.ceil(c_qme * L * math.sqrt(dimension) * math.log(1.0 / failure_prob) / accuracy))


def _simulated_error(x: RandomVariableHandle, accuracy: float, noise: NoiseModel,
                     rng: np.random.Generator) -> np.ndarray:
    d = x.dimension
    z = rng.standard_normal(d)
    c = noise.bias_coefficient if noise.kind == "biased_per_level" else 0.0
    radius = (1.0 - abs(c)) * accuracy
    e = z * (min(radius, x.noise_scale) / math.sqrt(d))
    norm = float(np.linalg.norm(e))
    if norm > radius:
        e *= radius / norm
    if c:
        e += c * accuracy / math.sqrt(d)
    return e


def qme_simulate(x: RandomVariableHandle, accuracy: float, failure_prob: float,
                 noise: NoiseModel, ledger: QueryLedger, rng: np.random.Generator,
                 c_qme: float = 1.0) -> np.ndarray:
    """Simulated bounded-error quantum mean estimate of ``x``.

    With probability 1 - failure_prob returns mu + e, ||e|| <= accuracy; otherwise
    one classical sample.  Charges ``qme_query_count`` quantum queries.
    """
    if not accuracy > 0:
        raise ValueError(f"accuracy must be positive, got {accuracy!r}")
    if accuracy > x.variance_bound_L:
        raise ValueError(f"accuracy {accuracy!r} exceeds the variance bound L={x.variance_bound_L!r}")
    if not (0.0 < failure_prob < 1.0):
        raise ValueError(f"failure_prob must lie in (0, 1), got {failure_prob!r}")
    n = qme_query_count(x.variance_bound_L, x.dimension, accuracy, failure_prob, c_qme)
    ledger.charge_quantum(x.kind, n, x.per_quantum_query_cost)
    u = rng.random()
    e = _simulated_error(x, accuracy, noise, rng)
    if u < failure_prob:
        return x.classical_sample(rng, ledger)
    return x.exact_mean() + e


def qme_plus_parameters(target_rms: float, L: float):
    """(delta, D) = (s^6 / (4L)^6, s/4 + 16 L^3 / s^2)."""
    delta = target_rms**6 / (4.0 * L) ** 6
    D = target_rms / 4.0 + 16.0 * L**3 / target_rms**2
    return delta, D


def qme_plus(x: RandomVariableHandle, target_rms: float, noise: NoiseModel,
             ledger: QueryLedger, rng: np.random.Generator, c_qme: float = 1.0) -> np.ndarray:
    """Mean estimate with E||out - mu||^2 <= target_rms^2 (robustified by a distance gate)."""
    L = x.variance_bound_L
    if not target_rms > 0:
        raise ValueError(f"target_rms must be positive, got {target_rms!r}")
    if target_rms > L:
        raise ValueError(f"target_rms {target_rms!r} exceeds the variance bound L={L!r}")
    delta, D = qme_plus_parameters(target_rms, L)
    x1 = qme_simulate(x, target_rms / 4.0, delta, noise, ledger, rng, c_qme)
    x2 = x.classical_sample(rng, ledger)
    if np.linalg.norm(x1 - x2) <= D:
        return x1
    return x.classical_sample(rng, ledger)


def level_target(level: int, sigma: float) -> float:
    """Target rms of level ``level``: 2^{-3 level / 4} * sigma / 10."""
    return 2.0 ** (-0.75 * level) * sigma / 10.0


def qvariance_reduce(x: RandomVariableHandle, target_variance: float, noise: NoiseModel,
                     ledger: QueryLedger, rng: np.random.Generator, c_qme: float = 1.0,
                     return_level: bool = False):
    """Unbiased multilevel estimate of E[x] with variance at most ``target_variance``.

    The level j ~ Geom(1/2) on {1, 2, ...}; the correction 2^j (mu_j - mu_{j-1})
    telescopes away the per-level bias in expectation.
    """
    if not target_variance > 0:
        raise ValueError(f"target_variance must be positive, got {target_variance!r}")
    sigma = math.sqrt(target_variance)
    if sigma > x.variance_bound_L:
        raise ValueError(f"sqrt(target_variance) {sigma!r} exceeds L={x.variance_bound_L!r}")
    mu0 = qme_plus(x, level_target(0, sigma), noise, ledger, rng, c_qme)
    j = int(rng.geometric(0.5))
    mu_j = qme_plus(x, level_target(j, sigma), noise, ledger, rng, c_qme)
    mu_prev = qme_plus(x, level_target(j - 1, sigma), noise, ledger, rng, c_qme)
    out = mu0 + 2.0**j * (mu_j - mu_prev)
    if return_level:
        return out, j
    return out


def qme_plus_query_count(L: float, dimension: int, target_rms: float, c_qme: float = 1.0) -> int:
    """Quantum queries charged by one ``qme_plus`` call."""
    # ln(1/delta) computed directly so tiny targets cannot underflow delta
    log_inv_delta = 6.0 * math.log(4.0 * L / target_rms)
    return int(math.ceil(c_qme * L * math.sqrt(dimension) * log_inv_delta / (target_rms / 4.0)))


def expected_qvr_queries(L: float, dimension: int, target_variance: float,
                         c_qme: float = 1.0, rtol: float = 1e-12) -> float:
    """Expected quantum queries of one ``qvariance_reduce`` call (series over j)."""
    sigma = math.sqrt(target_variance)

    def q(level):
        return qme_plus_query_count(L, dimension, level_target(level, sigma), c_qme)

    total = float(q(0))
    j = 1
    while True:
        term = 0.5**j * (q(j) + q(j - 1))
        total += term
        # terms decay like 2^{-j/4}: stop once the geometric tail is negligible
        if term < rtol * total * (1 - 2 ** -0.25) and j > 8:
            break
        j += 1
    return total


def make_g_handle(mdp: TabularMdp, policy: SoftmaxPolicy, N: int,
                  moments_source: Optional[EstimatorMoments] = None,
                  G: float = SQRT2) -> RandomVariableHandle:
    """Handle on g_hat(tau_N | theta); L = sqrt(d) G / (1 - gamma)^2."""
    d, gamma = policy.dim, mdp.discount
    moments = moments_source

    def mean():
        nonlocal moments
        if moments is None:
            moments = exact_truncated_moments_dp(mdp, policy, N)
        return moments.mean_g

    def sampler(rng):
        s, a = sample_trajectories(mdp, policy, N, 1, rng)
        return g_hat_batch(s, a, policy, mdp)[0], N

    spread = math.sqrt(d) * measured_score_bound(policy) / (1.0 - gamma) ** 2
    return RandomVariableHandle(
        dimension=d,
        variance_bound_L=math.sqrt(d) * G / (1.0 - gamma) ** 2,
        exact_mean_provider=mean,
        classical_sampler=sampler,
        per_quantum_query_cost=trajectory_query_cost(N),
        kind="g",
        spread=spread,
    )


def make_f_handle(mdp: TabularMdp, policy: SoftmaxPolicy, N: int,
                  moments_source: Optional[EstimatorMoments] = None,
                  G: float = SQRT2) -> RandomVariableHandle:
    """Handle on vec(F_hat(tau_N | theta)) (dimension d^2); L = sqrt(d) G^2."""
    d = policy.dim
    moments = moments_source

    def mean():
        nonlocal moments
        if moments is None:
            moments = exact_truncated_moments_dp(mdp, policy, N)
        return moments.mean_F.ravel()

    def sampler(rng):
        s, a = sample_trajectories(mdp, policy, N, 1, rng)
        return f_hat_batch(s, a, policy, mdp)[0].ravel(), N

    spread = math.sqrt(d) * measured_score_bound(policy) ** 2
    return RandomVariableHandle(
        dimension=d * d,
        variance_bound_L=math.sqrt(d) * G**2,
        exact_mean_provider=mean,
        classical_sampler=sampler,
        per_quantum_query_cost=trajectory_query_cost(N),
        kind="f",
        spread=spread,
    )
