"""Experiment specs, the per-mode runners and the result-file report."""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .mdp import (
    SoftmaxPolicy,
    TabularMdp,
    exact_fisher,
    exact_policy_gradient,
    load_mdp,
    measured_score_bound,
    optimal_objective,
    smoothness_constants,
)
from .npg import (
    RunConfig,
    ScheduleConstants,
    bias_bounds,
    run_classical_npg,
    run_qnpg,
    schedule_from_epsilon,
)
from .quantum import (
    NoiseModel,
    QueryLedger,
    expected_qvr_queries,
    make_g_handle,
    qvariance_reduce,
)
from .trajectories import exact_truncated_moments_dp, monte_carlo_moments

SCHEMA_VERSION = 1
MODES = ("qnpg", "classical", "bias_sweep", "variance_check", "slope_study", "qvr_stats")
ALGORITHMS = ("qnpg", "classical")
# RunConfig fields an experiment may override after the schedule is built
OVERRIDABLE = ("K", "H", "N", "eta", "alpha", "sigma2_g", "sigma2_F", "lambda_reg",
               "omega0", "theta0", "c_qme")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str
    mdp_path: str
    seeds: tuple
    output_path: str
    epsilon_list: tuple = ()
    overrides: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)  # ScheduleConstants fields
    noise: dict = field(default_factory=dict)  # NoiseModel fields
    algorithm: str = "qnpg"  # slope_study only
    n_list: tuple = (5, 10, 20, 40)
    num_samples: int = 10_000
    sigma_list: tuple = (0.4, 0.2, 0.1, 0.05)
    run_id: str = ""
    append: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise SpecError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.algorithm not in ALGORITHMS:
            raise SpecError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.seeds:
            raise SpecError("seeds must be nonempty")
        if any(int(s) != s for s in self.seeds):
            raise SpecError(f"seeds must be integers, got {list(self.seeds)}")
        needs_eps = self.mode in ("qnpg", "classical", "slope_study")
        if needs_eps and not self.epsilon_list:
            raise SpecError(f"epsilon_list must be nonempty for mode {self.mode}")
        for eps in self.epsilon_list:
            if not (0.0 < eps < 1.0):
                raise SpecError(f"epsilon values must lie in (0, 1), got {eps!r}")
        bad = set(self.overrides) - set(OVERRIDABLE)
        if bad:
            raise SpecError(f"unknown override keys {sorted(bad)}; allowed: {list(OVERRIDABLE)}")
        bad = set(self.schedule) - {f.name for f in fields(ScheduleConstants)}
        if bad:
            raise SpecError(f"unknown schedule keys {sorted(bad)}")
        bad = set(self.noise) - {f.name for f in fields(NoiseModel)}
        if bad:
            raise SpecError(f"unknown noise keys {sorted(bad)}")
        if any(int(n) != n or n < 1 for n in self.n_list):
            raise SpecError(f"n_list must hold positive integers, got {list(self.n_list)}")
        if any(not s > 0 for s in self.sigma_list):
            raise SpecError(f"sigma_list must be positive, got {list(self.sigma_list)}")
        if self.num_samples < 2:
            raise SpecError(f"num_samples must be >= 2, got {self.num_samples}")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "ExperimentSpec":
        if not isinstance(d, dict):
            raise SpecError("experiment spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown spec keys {sorted(unknown)}")
        missing = {"mode", "mdp_path", "seeds", "output_path"} - set(d)
        if missing:
            raise SpecError(f"missing spec keys {sorted(missing)}")
        d = dict(d)
        for key in ("seeds", "epsilon_list", "n_list", "sigma_list"):
            if key in d:
                if not isinstance(d[key], list):
                    raise SpecError(f"{key} must be a list")
                d[key] = tuple(d[key])
        if base_dir is not None:
            for key in ("mdp_path", "output_path"):
                d[key] = str(Path(base_dir) / d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, base_dir=path.parent)


# -- per-seed jobs ----------------------------------------------------------

def build_config(mdp: TabularMdp, spec: ExperimentSpec, epsilon: float, seed: int) -> RunConfig:
    constants = smoothness_constants(mdp.discount, mu_F=spec.overrides.get("lambda_reg", 1e-3))
    config = schedule_from_epsilon(epsilon, mdp.discount, constants,
                                   ScheduleConstants(**spec.schedule), seed=seed)
    return config.replace(**spec.overrides) if spec.overrides else config


def _run_records(mdp, spec, seed, algorithm):
    out = []
    J_star = optimal_objective(mdp)
    noise = NoiseModel(**spec.noise)
    for eps in spec.epsilon_list:
        config = build_config(mdp, spec, eps, seed)
        run_id = f"{spec.run_id or spec.mode}:{algorithm}:eps={eps:g}:seed={seed}"
        t0 = time.perf_counter()
        if algorithm == "qnpg":
            history = run_qnpg(mdp, config, noise, run_id=run_id)
        else:
            history = run_classical_npg(mdp, config, run_id=run_id)
        wall = time.perf_counter() - t0
        for rec in history.to_records(run_id):
            out.append({"record_type": "iteration", **rec})
        last = history.records[-1].ledger
        out.append({
            "record_type": "run", "run_id": run_id, "mode": spec.mode, "algorithm": algorithm,
            "epsilon": eps, "seed": seed, "final_J": history.final_J, "J_star": J_star,
            "gap": J_star - history.final_J,
            **{k: last[k] for k in ("u_rho", "u_p", "pi", "u_g_queries", "u_f_queries",
                                   "classical_samples", "classical_steps")},
            "config": config.to_record(),
            "_wall": wall,  # stripped before writing; summary line only
        })
    return out


def _theta_for(mdp, spec, seed):
    if "theta0" in spec.overrides:
        theta = np.asarray(spec.overrides["theta0"], dtype=float)
        if theta.shape != (mdp.dim,):
            raise SpecError(f"theta0 has {theta.size} entries, expected {mdp.dim}")
        return theta
    return np.random.default_rng(seed).uniform(-1.0, 1.0, mdp.dim)


def _bias_records(mdp, spec, seed):
    policy = SoftmaxPolicy.for_mdp(mdp, _theta_for(mdp, spec, seed))
    g = exact_policy_gradient(mdp, policy)
    F = exact_fisher(mdp, policy)
    G = max(measured_score_bound(policy), 1e-12)
    out = []
    for N in spec.n_list:
        m = exact_truncated_moments_dp(mdp, policy, N)
        bias_g = float(np.linalg.norm(m.mean_g - g))
        bias_F = float(np.linalg.norm(m.mean_F - F, 2))
        dg, dF = bias_bounds(G, mdp.discount, N)
        out.append({"record_type": "bias", "seed": seed, "N": N, "G": G,
                    "bias_g": bias_g, "delta_g": dg, "bias_F": bias_F, "delta_F": dF,
                    "within_bounds": bias_g <= dg and bias_F <= dF})
    return out


def _variance_records(mdp, spec, seed):
    rng = np.random.default_rng(seed)
    policy = SoftmaxPolicy.for_mdp(mdp, _theta_for(mdp, spec, seed))
    G = smoothness_constants(mdp.discount).G
    d, gamma = mdp.dim, mdp.discount
    bound_g = d * G**2 / (1.0 - gamma) ** 4
    bound_F = d * G**4
    out = []
    for N in spec.n_list:
        m = monte_carlo_moments(mdp, policy, N, spec.num_samples, rng)
        var_g, var_F = float(m.var_g), float(m.var_F)
        out.append({"record_type": "variance", "seed": seed, "N": N,
                    "num_samples": spec.num_samples, "var_g": var_g, "bound_g": bound_g,
                    "var_F": var_F, "bound_F": bound_F,
                    "within_bounds": var_g <= bound_g and var_F <= bound_F})
    return out


def _qvr_records(mdp, spec, seed):
    rng = np.random.default_rng(seed)
    noise = NoiseModel(**spec.noise)
    policy = SoftmaxPolicy.for_mdp(mdp, _theta_for(mdp, spec, seed))
    N = int(spec.overrides.get("N", 10))
    c_qme = float(spec.overrides.get("c_qme", 1.0))
    handle = make_g_handle(mdp, policy, N)
    mean = handle.exact_mean()
    out = []
    for sigma in spec.sigma_list:
        ledger = QueryLedger()
        xs = np.array([qvariance_reduce(handle, sigma**2, noise, ledger, rng, c_qme)
                       for _ in range(spec.num_samples)])
        se = xs.std(axis=0, ddof=1) / math.sqrt(len(xs))
        z = np.abs(xs.mean(axis=0) - mean) / np.where(se > 0, se, np.inf)
        out.append({
            "record_type": "qvr", "seed": seed, "N": N, "sigma": sigma,
            "num_samples": spec.num_samples,
            "trace_var": float(xs.var(axis=0, ddof=1).sum()), "target_var": sigma**2,
            "max_z": float(z.max()),
            "mean_queries": ledger.u_g_queries / spec.num_samples,
            "expected_queries": expected_qvr_queries(handle.variance_bound_L, handle.dimension,
                                                     sigma**2, c_qme),
            "mean_u_p": ledger.u_p / spec.num_samples,
        })
    return out


def run_seed(mdp: TabularMdp, spec: ExperimentSpec, seed: int) -> list:
    """All records for one seed, in a deterministic order."""
    if spec.mode in ("qnpg", "classical"):
        recs = _run_records(mdp, spec, seed, spec.mode)
    elif spec.mode == "slope_study":
        recs = _run_records(mdp, spec, seed, spec.algorithm)
    elif spec.mode == "bias_sweep":
        recs = _bias_records(mdp, spec, seed)
    elif spec.mode == "variance_check":
        recs = _variance_records(mdp, spec, seed)
    else:
        recs = _qvr_records(mdp, spec, seed)
    for r in recs:
        r.setdefault("mode", spec.mode)
    return recs


def _job(args):
    mdp_dict, spec, seed = args
    return run_seed(TabularMdp.from_dict(mdp_dict), spec, seed)


def worker_count() -> int:
    raw = os.environ.get("QNPG_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise SpecError(f"QNPG_WORKERS must be an integer, got {raw!r}") from None
    return max(1, n)


def _summary_line(rec: dict) -> str:
    if rec["record_type"] == "run":
        return (f"{rec['run_id']}  gap={rec['gap']:.4g}  u_p={rec['u_p']}  "
                f"wall={rec['_wall']:.2f}s")
    keys = [k for k in ("N", "sigma") if k in rec]
    tag = " ".join(f"{k}={rec[k]}" for k in keys)
    ok = rec.get("within_bounds")
    return f"{rec['record_type']} seed={rec['seed']} {tag}" + ("" if ok is None else f" ok={ok}")


def execute(spec: ExperimentSpec, mdp: Optional[TabularMdp] = None, echo=print) -> list:
    """Run every seed, write the records through a single writer, return them."""
    if mdp is None:
        mdp = load_mdp(spec.mdp_path)
    workers = min(worker_count(), len(spec.seeds))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_job, [(mdp.to_dict(), spec, s) for s in spec.seeds]))
    else:
        chunks = [run_seed(mdp, spec, s) for s in spec.seeds]
    out_path = Path(spec.output_path)
    if out_path.parent and not out_path.parent.exists():
        out_path.parent.mkdir(parents=True)
    written = []
    with open(out_path, "a" if spec.append else "w") as fh:
        for chunk in chunks:
            for rec in chunk:
                if rec["record_type"] != "iteration":
                    echo(_summary_line(rec))
                rec = {"schema_version": SCHEMA_VERSION,
                       **{k: v for k, v in rec.items() if not k.startswith("_")}}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                written.append(rec)
    return written


# -- reporting --------------------------------------------------------------

class ReportError(ValueError):
    pass


def read_records(path) -> list:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReportError(f"{path}: line {lineno}: not valid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "record_type" not in rec:
                raise ReportError(f"{path}: line {lineno}: missing record_type")
            if rec.get("schema_version") != SCHEMA_VERSION:
                raise ReportError(f"{path}: line {lineno}: unsupported schema_version "
                                  f"{rec.get('schema_version')!r}")
            records.append(rec)
    return records


def loglog_slope(inv_eps, cost):
    """OLS slope of log(cost) on log(1/eps) with its standard error."""
    x = np.log(np.asarray(inv_eps, dtype=float))
    y = np.log(np.asarray(cost, dtype=float))
    n = len(x)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if n < 2 or sxx == 0.0:
        return math.nan, math.nan
    slope = float(xc @ (y - y.mean())) / sxx
    if n < 3:
        return slope, math.nan
    resid = y - y.mean() - slope * xc
    return slope, math.sqrt(float(resid @ resid) / (n - 2) / sxx)


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else math.nan
    return float(v.mean()), float(se)


def summarize(records: list) -> dict:
    """Per-(algorithm, epsilon) aggregates of the run records plus log-log slopes."""
    runs = [r for r in records if r["record_type"] == "run"]
    rows, slopes = [], {}
    for alg in sorted({r["algorithm"] for r in runs}):
        sub = [r for r in runs if r["algorithm"] == alg]
        for eps in sorted({r["epsilon"] for r in sub}, reverse=True):
            grp = [r for r in sub if r["epsilon"] == eps]
            gap, gap_se = _mean_se([r["gap"] for r in grp])
            up, up_se = _mean_se([r["u_p"] for r in grp])
            rows.append({"algorithm": alg, "epsilon": eps, "n": len(grp), "gap": gap,
                         "gap_se": gap_se, "u_p": up, "u_p_se": up_se})
        if len({r["epsilon"] for r in sub}) >= 2:
            slope, se = loglog_slope([1.0 / r["epsilon"] for r in sub], [r["u_p"] for r in sub])
            slopes[alg] = (slope, se)
    return {"rows": rows, "slopes": slopes,
            "other": [r for r in records if r["record_type"] not in ("run", "iteration")]}


def format_report(summary: dict) -> str:
    lines = []
    if summary["rows"]:
        lines.append(f"{'algorithm':<10} {'epsilon':>8} {'n':>3} {'gap':>10} {'gap_se':>9} "
                     f"{'u_p':>12} {'u_p_se':>10}")
        for r in summary["rows"]:
            lines.append(f"{r['algorithm']:<10} {r['epsilon']:>8g} {r['n']:>3} {r['gap']:>10.4g} "
                         f"{r['gap_se']:>9.3g} {r['u_p']:>12.5g} {r['u_p_se']:>10.3g}")
        algs = sorted({r["algorithm"] for r in summary["rows"]})
        for alg in algs:
            if alg in summary["slopes"]:
                s, se = summary["slopes"][alg]
                ci = "n/a" if math.isnan(se) else f"[{s - 1.96 * se:.3f}, {s + 1.96 * se:.3f}]"
                lines.append(f"slope {alg}: u_p ~ (1/eps)^{s:.3f}  95% CI {ci}")
            else:
                lines.append(f"slope {alg}: omitted (needs at least two distinct epsilon values)")
    other = summary["other"]
    if other:
        cols = [k for k in other[0] if k not in ("schema_version", "record_type", "mode")]
        lines.append(" ".join(f"{c:>12}" for c in cols))
        for r in other:
            lines.append(" ".join(
                f"{r.get(c):>12.4g}" if isinstance(r.get(c), float) else f"{str(r.get(c)):>12}"
                for c in cols))
    if not lines:
        lines.append("no records")
    return "\n".join(lines)
