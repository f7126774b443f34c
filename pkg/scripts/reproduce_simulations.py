"""Run both simulation scenarios and print per-segment averages.

    python scripts/reproduce_simulations.py [--runs 900] [--threads 8] [--out results]

Writes the same CSV/JSON pair as ``etrack simulate`` for each scenario and
prints mean GW / kinematic ANEES / extent ANEES per segment and estimator,
plus the share of steps on which M3 tracks at least as well as M2.
"""
import argparse
from pathlib import Path

import numpy as np

from etrack import cli
from etrack.simharness import segment_bounds

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=900)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    for name in ("scenario1", "scenario2"):
        cli.main(
            ["simulate", "--scenario", str(CONFIGS / f"{name}.toml"), "--runs", str(args.runs),
             "--out", args.out] + (["--threads", str(args.threads)] if args.threads else [])
        )
        _, _, rows = cli.read_csv(Path(args.out) / f"{name}.csv")
        cfg = cli.load_scenario(CONFIGS / f"{name}.toml")
        names = sorted({r[1] for r in rows})
        table = {n: np.array([[float(v) for v in r[2:5]] for r in rows if r[1] == n]) for n in names}
        print(f"\n{name}: segment means (GW, ANEES_x, ANEES_X)")
        for start, stop, rate in segment_bounds(cfg):
            if stop - start < 3:
                continue
            cells = "  ".join(
                f"{n} {m[0]:6.2f} {m[1]:6.2f} {m[2]:5.2f}"
                for n, m in ((n, table[n][start:stop].mean(axis=0)) for n in names)
            )
            print(f"  k {start:3d}-{stop - 1:3d} rate {np.degrees(rate):5.1f}  {cells}")
        if {"M2", "M3"} <= set(names):
            share = np.mean(table["M3"][:, 0] <= table["M2"][:, 0])
            gain = np.max(1 - table["M3"][:, 0] / table["M2"][:, 0])
            print(f"  M3 GW <= M2 GW on {share:.0%} of steps; peak M3 gain over M2 {gain:.1%}")


if __name__ == "__main__":
    main()
