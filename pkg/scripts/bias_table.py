"""Exact truncation bias against its closed-form bound for a sweep of N."""

import argparse

import numpy as np

from qnpg.mdp import (SoftmaxPolicy, exact_fisher, exact_policy_gradient, load_mdp,
                      measured_score_bound)
from qnpg.npg import bias_bounds
from qnpg.trajectories import exact_truncated_moments_dp

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mdp", default="data/random3.json")
    ap.add_argument("--N", type=int, nargs="+", default=[5, 10, 20, 40])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    m = load_mdp(args.mdp)
    p = SoftmaxPolicy.for_mdp(m, np.random.default_rng(args.seed).uniform(-1, 1, m.dim))
    g, F, G = exact_policy_gradient(m, p), exact_fisher(m, p), measured_score_bound(p)
    print(f"{'N':>4} {'|bias g|':>11} {'bound':>11} {'|bias F|':>11} {'bound':>11}")
    for N in args.N:
        mom = exact_truncated_moments_dp(m, p, N)
        dg, dF = bias_bounds(G, m.discount, N)
        print(f"{N:>4} {np.linalg.norm(mom.mean_g - g):11.3e} {dg:11.3e} "
              f"{np.linalg.norm(mom.mean_F - F, 2):11.3e} {dF:11.3e}")
