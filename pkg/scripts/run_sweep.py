"""Run the Monte Carlo sweep from a scenario JSON and write the CSV outputs."""
import argparse
import sys
import time

from leonav import harness

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/sweep.json")
    ap.add_argument("--out", default="out/sweep")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    cfg = harness.ScenarioConfig.load(args.config)
    t = time.perf_counter()
    res = harness.run_sweep(cfg, threads=args.threads,
                            progress=lambda d, n: print(f"\r{d}/{n}", end="", file=sys.stderr))
    print(file=sys.stderr)
    harness.write_sweep(res, args.out)
    for row in res.table.rows:
        if row.epoch == "aggregate":
            print(f"{row.mode:20s} n={row.n_sats:2d} pos={row.pos_rmse_m:8.3f} bound={row.pos_bound_m:8.3f}")
    print(f"{time.perf_counter() - t:.1f} s, violations={len(res.table.violations())}")
