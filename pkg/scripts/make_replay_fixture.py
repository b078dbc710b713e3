"""Generate a self-consistent hardware-style replay fixture (GPS, IMU, ridges, TLE)."""
import argparse

from leonav import harness

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/fixture")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    print(harness.make_replay_fixture(args.out, seed=args.seed))
