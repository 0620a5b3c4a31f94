"""Cost-vs-accuracy study: QNPG and classical NPG on one MDP, then a log-log fit.

    python3 scripts/slope_study.py --mdp data/bandit.json --eps 0.2 0.1 0.05 --H 3
"""

import argparse
from pathlib import Path

from qnpg.experiments import ExperimentSpec, execute, format_report, summarize

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mdp", default="data/bandit.json")
    ap.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--H", type=int, default=None, help="pin the inner-loop length")
    ap.add_argument("--eta", type=float, default=5.0)
    ap.add_argument("--alpha", type=float, default=1.0 / (2.0 + 1e-3))
    ap.add_argument("--out", default="results/slope.jsonl")
    args = ap.parse_args()

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    overrides = {} if args.H is None else {"H": args.H}
    records = []
    for i, algorithm in enumerate(("qnpg", "classical")):
        spec = ExperimentSpec(
            mode="slope_study", algorithm=algorithm, mdp_path=args.mdp,
            seeds=tuple(range(args.seeds)), epsilon_list=tuple(args.eps),
            overrides=overrides, schedule={"eta": args.eta, "alpha": args.alpha},
            output_path=args.out, append=i > 0,
        )
        records += execute(spec, echo=lambda *_: None)
    print(format_report(summarize(records)))
