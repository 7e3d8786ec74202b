"""Run the bundled simulation studies and print a compact summary.

    python3 scripts/run_experiments.py fig3 fig4 fig6 table2 --out results/

Each scenario writes ``<name>_summary.json`` and ``<name>_replicates.csv``
(columns replicate, estimator, parameter, estimate) to ``--out``.
"""

import argparse
import logging
import time
import warnings
from dataclasses import replace
from pathlib import Path

from spatialci.experiments import load_scenario, run_scenario

GROUPS = {
    "fig3": ["fig3_random40", "fig3_random80"],
    "fig4": ["fig4_fixed", "fig4_clustered"],
    "fig6": ["fig6_low", "fig6_mid", "fig6_high"],
    "table2": ["table2_toy_plume"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("groups", nargs="*", help=f"any of {', '.join(GROUPS)} (default all)")
    ap.add_argument("--out", default="results")
    ap.add_argument("--replicates", type=int)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    bad = set(args.groups) - set(GROUPS)
    if bad:
        ap.error(f"unknown groups {sorted(bad)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    warnings.simplefilter("ignore")
    logging.disable(logging.WARNING)

    for g in args.groups or list(GROUPS):
        for name in GROUPS[g]:
            sc = load_scenario(name)
            if args.replicates:
                sc = replace(sc, replicates=args.replicates)
            if args.seed is not None:
                sc = replace(sc, seed=args.seed)
            t0 = time.time()
            s = run_scenario(sc, out / f"{name}_replicates.csv")
            s.save(out / f"{name}_summary.json")
            print(f"{name}  ({sc.replicates} replicates, {time.time() - t0:.0f} s)")
            for est in s.estimates:
                for p in s.param_names:
                    r = s.stats(est, p)
                    unit = "%" if r["relative"] else ""
                    print(f"  {est:<11} {p:<11} mean {r['mean']:10.4g}  sd {r['sd']:9.4g}  "
                          f"median bias {r['median_bias']:8.3f}{unit}  MAD {r['mad']:7.3f}{unit}")
            if s.rounds:
                d = s.to_dict()["reweighting"]["rounds_histogram"]
                print(f"  reweighting rounds: {d}")


if __name__ == "__main__":
    main()
