"""Two-loop quantum natural policy gradient, its classical baseline, and the
closed-form constants (truncation bias, inner-loop residuals, step sizes,
epsilon-driven schedule)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .mdp import (
    SmoothnessConstants,
    SoftmaxPolicy,
    TabularMdp,
    exact_fisher,
    exact_policy_gradient,
    objective,
    smoothness_constants,
)
from .quantum import NoiseModel, QueryLedger, make_f_handle, make_g_handle, qvariance_reduce
from .trajectories import classical_fisher_batch, classical_pg_batch, exact_truncated_moments_dp

DIVERGENCE_LIMIT = 1e6


class NumericalDivergenceError(ArithmeticError):
    """The inner iterate blew up (usually alpha too large for the Fisher estimate)."""


# -- closed-form constants ---------------------------------------------------

def bias_bounds(G: float, gamma: float, N: int):
    """Truncation-bias bounds (delta_g, delta_F) for level N."""
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma!r}")
    if N < 1 or int(N) != N:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    if not G > 0:
        raise ValueError(f"G must be positive, got {G!r}")
    gN = gamma**N
    delta_g = G * ((N + 1) / (1.0 - gamma) + gamma / (1.0 - gamma) ** 2) * gN
    delta_F = G**2 * gN
    return delta_g, delta_F


@dataclass(frozen=True)
class BoundsReport:
    delta_g: float
    delta_F: float
    R0: float = 0.0
    R1: float = 0.0
    C0: float = 0.0
    C1: float = 0.0

    def to_record(self) -> dict:
        return asdict(self)


def residual_constants(*, mu_F: float, G: float, gamma: float, alpha: float,
                     sigma2_g: float, sigma2_F: float, delta_g: float, delta_F: float,
                     omega_dist_sq: Optional[float] = None) -> BoundsReport:
    """Inner-loop residual constants R0, R1, C0, C1.

    ``omega_dist_sq`` is E||omega_0 - omega*||^2 (only C1 uses it); by default
    the bound (G / (mu_F (1 - gamma)^2))^2 for omega_0 = 0.
    """
    if not mu_F > 0:
        raise ValueError(f"mu_F must be positive, got {mu_F!r}")
    kappa = G**2 / (mu_F**2 * (1.0 - gamma) ** 4)
    dg2, dF2 = delta_g**2, delta_F**2
    R0 = 6.0 / mu_F * (kappa * (sigma2_F + dF2) + (sigma2_g + dg2))
    R1 = 4.0 / mu_F**2 * (2.0 * dF2 * kappa + dg2)
    C0 = R1 + alpha * R0
    if omega_dist_sq is None:
        omega_dist_sq = (G / (mu_F * (1.0 - gamma) ** 2)) ** 2
    C1 = 6.0 / mu_F * (alpha + 1.0 / mu_F) * (
        dF2 * (omega_dist_sq + alpha * R0 + R1) + kappa * dF2 + dg2
    )
    return BoundsReport(delta_g, delta_F, R0, R1, C0, C1)


def step_sizes(constants: SmoothnessConstants):
    """(eta, alpha_max) = (mu^2 / (4 G^2 L), mu / (56 G^4))."""
    G, mu = constants.G, constants.mu_F
    return mu**2 / (4.0 * G**2 * constants.L), mu / (56.0 * G**4)


def min_truncation(G: float, gamma: float, mu_F: float) -> int:
    """Smallest N >= 1 with G^2 gamma^N <= mu_F / 8."""
    N = max(1, math.ceil(math.log(8.0 * G**2 / mu_F) / math.log(1.0 / gamma)))
    while N > 1 and G**2 * gamma ** (N - 1) <= mu_F / 8.0:
        N -= 1
    while G**2 * gamma**N > mu_F / 8.0:
        N += 1
    return N


def _ceil(x: float) -> int:
    # tolerate representation error, e.g. 1 / 0.1
    return int(math.ceil(x - 1e-9))


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class ScheduleConstants:
    """Multipliers of the order-only schedule; ``eta``/``alpha`` override the
    worst-case step sizes when set."""

    c_K: float = 1.0
    c_H: float = 1.0
    c_N: float = 1.0
    c_g: float = 1.0
    c_F: float = 1.0
    eta: Optional[float] = None
    alpha: Optional[float] = None


@dataclass(frozen=True, eq=False)
class RunConfig:
    K: int
    H: int
    N: int
    eta: float
    alpha: float
    sigma2_g: float
    sigma2_F: float
    constants: SmoothnessConstants
    lambda_reg: float = 1e-3
    omega0: Optional[np.ndarray] = None
    theta0: Optional[np.ndarray] = None
    seed: int = 0
    c_qme: float = 1.0
    record_inner: bool = False

    def __post_init__(self):
        for name in ("K", "H", "N"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        for name in ("eta", "alpha", "sigma2_g", "sigma2_F", "c_qme"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if not self.lambda_reg >= 0:
            raise ValueError(f"lambda_reg must be >= 0, got {self.lambda_reg!r}")
        for name in ("omega0", "theta0"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float).ravel()
                v.setflags(write=False)
                object.__setattr__(self, name, v)

    def initial_theta(self, d: int) -> np.ndarray:
        return np.zeros(d) if self.theta0 is None else self._check(self.theta0, d, "theta0")

    def initial_omega(self, d: int) -> np.ndarray:
        return np.zeros(d) if self.omega0 is None else self._check(self.omega0, d, "omega0")

    @staticmethod
    def _check(v, d, name):
        if v.shape != (d,):
            raise ValueError(f"{name} has {v.size} entries, expected {d}")
        return v.copy()

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_record(self) -> dict:
        return {
            "K": self.K, "H": self.H, "N": self.N, "eta": self.eta, "alpha": self.alpha,
            "sigma2_g": self.sigma2_g, "sigma2_F": self.sigma2_F, "lambda_reg": self.lambda_reg,
            "seed": self.seed, "c_qme": self.c_qme, "G": self.constants.G,
            "B": self.constants.B, "mu_F": self.constants.mu_F, "L": self.constants.L,
        }


def schedule_from_epsilon(epsilon: float, gamma: float,
                          constants: Optional[SmoothnessConstants] = None,
                          schedule_constants: ScheduleConstants = ScheduleConstants(),
                          **config_kwargs) -> RunConfig:
    """Run parameters for target accuracy epsilon.

    K ~ 1/eps, H ~ ln(1/eps), N ~ ln(1/eps)/ln(1/gamma) (never below the level
    where G^2 gamma^N <= mu_F/8), sigma_g^2 ~ eps, sigma_F^2 ~ (1-gamma)^4 eps.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if constants is None:
        constants = smoothness_constants(gamma, mu_F=config_kwargs.get("lambda_reg", 1e-3))
    sc = schedule_constants
    log_inv = math.log(1.0 / epsilon)
    K = max(1, _ceil(sc.c_K / epsilon))
    H = max(1, _ceil(sc.c_H * log_inv))
    N = max(_ceil(sc.c_N * log_inv / math.log(1.0 / gamma)),
            min_truncation(constants.G, gamma, constants.mu_F))
    eta, alpha = step_sizes(constants)
    if sc.eta is not None:
        eta = sc.eta
    if sc.alpha is not None:
        alpha = sc.alpha
    return RunConfig(
        K=K, H=H, N=N, eta=eta, alpha=alpha,
        sigma2_g=sc.c_g * epsilon,
        sigma2_F=sc.c_F * (1.0 - gamma) ** 4 * epsilon,
        constants=constants,
        **config_kwargs,
    )


# -- the algorithm -----------------------------------------------------------

@dataclass(frozen=True)
class InnerDiagnostics:
    grad_norms: tuple  # ||F~ omega_h - g~||, one per inner step
    omegas: tuple = ()  # iterates omega_1..omega_H when recorded


@dataclass(frozen=True, eq=False)
class IterationRecord:
    k: int
    theta: np.ndarray
    omega: np.ndarray
    J: float
    ledger: dict
    inner: Optional[InnerDiagnostics] = None


@dataclass(frozen=True, eq=False)
class RunHistory:
    records: tuple
    final_theta: np.ndarray
    final_J: float
    algorithm: str
    config: RunConfig

    def J_values(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    def to_records(self, run_id: str) -> list:
        """One flat dict per outer iteration."""
        out = []
        for r in self.records:
            rec = {"run_id": run_id, "k": r.k, "J": r.J,
                   "omega_norm": float(np.linalg.norm(r.omega))}
            rec.update({k: v for k, v in r.ledger.items() if k not in ("run_id", "k", "h")})
            out.append(rec)
        return out


def _check_omega(omega, h):
    if not np.all(np.isfinite(omega)) or np.linalg.norm(omega) > DIVERGENCE_LIMIT:
        raise NumericalDivergenceError(f"inner iterate diverged at h={h}")


def regularized_target(mdp: TabularMdp, policy: SoftmaxPolicy, lambda_reg: float):
    """(F + lambda I, grad J, omega*_reg) from the exact solvers."""
    F = exact_fisher(mdp, policy) + lambda_reg * np.eye(policy.dim)
    g = exact_policy_gradient(mdp, policy)
    return F, g, np.linalg.solve(F, g)


def inner_loop(mdp: TabularMdp, policy: SoftmaxPolicy, config: RunConfig,
               noise: NoiseModel, ledger: QueryLedger, rng: np.random.Generator,
               exact: bool = False):
    """H steps of omega <- omega - alpha (F~ omega - g~).

    With ``exact=True`` the estimates are replaced by the exact gradient and
    Fisher (no queries are charged); used for contraction checks.
    """
    d = policy.dim
    omega = config.initial_omega(d)
    ridge = config.lambda_reg * np.eye(d)
    if exact:
        F_exact, g_exact, _ = regularized_target(mdp, policy, config.lambda_reg)
    else:
        moments = exact_truncated_moments_dp(mdp, policy, config.N)
        g_handle = make_g_handle(mdp, policy, config.N, moments, G=config.constants.G)
        f_handle = make_f_handle(mdp, policy, config.N, moments, G=config.constants.G)
    grad_norms, omegas = [], []
    for h in range(config.H):
        if exact:
            F_t, g_t = F_exact, g_exact
        else:
            g_t = qvariance_reduce(g_handle, config.sigma2_g, noise, ledger, rng, config.c_qme)
            F_t = qvariance_reduce(f_handle, config.sigma2_F, noise, ledger, rng,
                                   config.c_qme).reshape(d, d)
            F_t = 0.5 * (F_t + F_t.T) + ridge
        grad = F_t @ omega - g_t
        omega = omega - config.alpha * grad
        _check_omega(omega, h)
        grad_norms.append(float(np.linalg.norm(grad)))
        if config.record_inner:
            omegas.append(omega.copy())
    return omega, InnerDiagnostics(tuple(grad_norms), tuple(omegas))


def outer_step(theta: np.ndarray, omega: np.ndarray, eta: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if theta.shape != omega.shape:
        raise ValueError(f"theta {theta.shape} and omega {omega.shape} differ in shape")
    return theta + eta * omega


def run_qnpg(mdp: TabularMdp, config: RunConfig, noise: NoiseModel = NoiseModel(),
             rng: Optional[np.random.Generator] = None, run_id: str = "") -> RunHistory:
    """K outer natural-gradient steps, each preceded by a quantum mini-batch inner loop."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    ledger = QueryLedger()
    theta = config.initial_theta(mdp.dim)
    records = []
    for k in range(config.K):
        policy = SoftmaxPolicy.for_mdp(mdp, theta)
        J = objective(mdp, policy)
        omega, diag = inner_loop(mdp, policy, config, noise, ledger, rng)
        records.append(IterationRecord(k, theta.copy(), omega, J,
                                       ledger.snapshot(run_id, k, config.H - 1),
                                       diag if config.record_inner else None))
        theta = outer_step(theta, omega, config.eta)
    final_J = objective(mdp, SoftmaxPolicy.for_mdp(mdp, theta))
    return RunHistory(tuple(records), theta, final_J, "qnpg", config)


def classical_batch_sizes(mdp: TabularMdp, config: RunConfig):
    """Mini-batch sizes ceil(V / v) with V the variance bounds d G^2/(1-g)^4 and d G^4."""
    d, gamma, G = mdp.dim, mdp.discount, config.constants.G
    V_g = d * G**2 / (1.0 - gamma) ** 4
    V_F = d * G**4
    return _ceil(V_g / config.sigma2_g), _ceil(V_F / config.sigma2_F)


def run_classical_npg(mdp: TabularMdp, config: RunConfig,
                      rng: Optional[np.random.Generator] = None, run_id: str = "") -> RunHistory:
    """Same two-loop structure, with geometric-horizon mini-batch averages."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    ledger = QueryLedger()
    d = mdp.dim
    batch_g, batch_F = classical_batch_sizes(mdp, config)
    ridge = config.lambda_reg * np.eye(d)
    theta = config.initial_theta(d)
    records = []
    for k in range(config.K):
        policy = SoftmaxPolicy.for_mdp(mdp, theta)
        J = objective(mdp, policy)
        omega = config.initial_omega(d)
        norms = []
        for h in range(config.H):
            gs, steps_g = classical_pg_batch(mdp, policy, batch_g, rng)
            ledger.charge_classical(steps_g, samples=batch_g)
            F_t, steps_F = classical_fisher_batch(mdp, policy, batch_F, rng)
            ledger.charge_classical(steps_F, samples=batch_F)
            grad = (F_t + ridge) @ omega - gs.mean(axis=0)
            omega = omega - config.alpha * grad
            _check_omega(omega, h)
            norms.append(float(np.linalg.norm(grad)))
        records.append(IterationRecord(k, theta.copy(), omega, J,
                                       ledger.snapshot(run_id, k, config.H - 1),
                                       InnerDiagnostics(tuple(norms)) if config.record_inner else None))
        theta = outer_step(theta, omega, config.eta)
    final_J = objective(mdp, SoftmaxPolicy.for_mdp(mdp, theta))
    return RunHistory(tuple(records), theta, final_J, "classical", config)

