"""Confirmation latency under the PoA and PoW minting policies.

Submits transactions at uniformly random instants and records how long
each waits for its block. Writes one CSV per policy.
"""
import argparse
import csv
import random
import statistics
from pathlib import Path

from invchain.chain import Chain, PoA, PoW, mined_latencies
from invchain.chainsvc import ensure_contract

TOKEN = "bench"


def measure(policy, n: int, seed: int) -> list[float]:
    chain = Chain(policy, seed=seed, credential=TOKEN)
    contract = ensure_contract(chain)
    rng = random.Random(seed)
    hashes, t = [], chain.now
    for _ in range(n):
        t += rng.uniform(0, 15_000)
        chain.advance_to(t)
        hashes.append(chain.set_data(contract, "inventory", "hash", TOKEN))
    chain.advance_to(t + 100_000)
    return [x / 1000 for x in mined_latencies(chain, hashes)]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/chain"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, policy in (("poa", PoA()), ("pow", PoW())):
        lat = measure(policy, args.n, args.seed)
        with open(args.out / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tx_index", "latency_s"])
            w.writerows(enumerate(lat))
        print(f"{name}: n={len(lat)} mean {statistics.fmean(lat):.2f} s, "
              f"min {min(lat):.2f} s, max {max(lat):.2f} s")


if __name__ == "__main__":
    main()
