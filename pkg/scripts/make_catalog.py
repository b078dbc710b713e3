"""Write the synthetic Walker TLE catalog used when no archived catalog is supplied."""
import argparse
from pathlib import Path

from leonav import tle
from leonav.frames import utc_seconds

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epoch", default="2026-01-30T12:00:00Z")
    ap.add_argument("--out", default="data/synthetic.tle")
    args = ap.parse_args()
    recs = tle.synthetic_catalog(utc_seconds(args.epoch))
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(tle.format_catalog(recs))
    print(f"wrote {len(recs)} records to {path}")
