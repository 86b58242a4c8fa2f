"""Fit GEV and kernel densities to a latency CSV and resample.

    python scripts/fit_latency.py results/scenarios/A.csv --draws 100000
"""
import argparse
import json

import numpy as np

from invchain.bench import fit_gev, fit_kernel, monte_carlo, read_csv, summarize


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("csv")
    ap.add_argument("--draws", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    lat = np.array([s.latency_s for s in read_csv(args.csv)])
    out = {"observed": summarize(lat).to_dict()}
    for fit in (fit_gev(lat), fit_kernel(lat)):
        synth = monte_carlo(fit, args.draws, args.seed)
        out[fit.family] = {"fit": fit.to_dict(), "monte_carlo": summarize(synth).to_dict()}
    better = max(("GEV", "Kernel"), key=lambda f: out[f]["fit"]["loglik"])
    out["higher_loglik"] = better
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
