"""Command-line entry point: ``leonav <subcommand> ...``.

Exit codes: 0 success, 1 a requested check failed, 2 configuration error,
3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, frames, harness, tle
from .errors import ConfigError, DataError, LeoNavError
from .fusion import FusionMode
from .propagate import GPS_MASK_DEG, LEO_MASK_DEG, visible_satellites

log = logging.getLogger("leonav")


def _global_flags(parser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="scenario JSON file")
    parser.add_argument("--seed", type=int, default=d, help="master seed (u64), overrides the config")
    parser.add_argument("--out", default=d if suppress else "out", help="output directory")
    parser.add_argument("--threads", type=int, default=d if suppress else 1, help="worker processes")
    parser.add_argument("-v", "--verbose", action="store_true", default=d if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leonav", description="LEO-aided 9D navigation simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    cat = sub.add_parser("catalog", help="TLE catalog tools", parents=[common])
    cat_sub = cat.add_subparsers(dest="catalog_command", required=True)
    v = cat_sub.add_parser("validate", help="parse a TLE file and report problems", parents=[common])
    v.add_argument("file")
    v.add_argument("--lenient", action="store_true", help="skip bad records instead of failing")
    s = cat_sub.add_parser("synth", help="write the synthetic Walker catalog", parents=[common])
    s.add_argument("--epoch", default=harness.ScenarioConfig.start)
    s.add_argument("--file", default=None, help="output TLE path (default <out>/catalog.tle)")

    vis = sub.add_parser("visibility", help="satellites above the masks over a window", parents=[common])
    vis.add_argument("--tle", default=None, help="TLE file (default: synthetic catalog)")
    _user_flags(vis)
    vis.add_argument("--start", default=None)
    vis.add_argument("--duration", type=float, default=0.0)
    vis.add_argument("--step", type=float, default=10.0)
    vis.add_argument("--mask-gps", type=float, default=None, help="deg")
    vis.add_argument("--mask-leo", type=float, default=None, help="deg")

    sim = sub.add_parser("simulate", help="one Monte Carlo run for one mode", parents=[common])
    sim.add_argument("--mode", default=FusionMode.LEO_ALPHA_IMU.value, choices=[m.value for m in FusionMode])
    sim.add_argument("--n-leo", type=int, default=None)
    sim.add_argument("--run", type=int, default=0)

    a = sub.add_parser("associate", help="match a ridge CSV to a satellite", parents=[common])
    a.add_argument("--ridge", required=True)
    a.add_argument("--tle", required=True)
    _user_flags(a)
    a.add_argument("--t0", required=True, help="UTC instant (ISO 8601) that ridge times count from")
    a.add_argument("--fc", type=float, default=None, help="carrier frequency, Hz")
    a.add_argument("--f-ref", type=float, default=0.0, help="ridge reference frequency, Hz")

    r = sub.add_parser("replay", help="fuse logged GPS / IMU / ridge files", parents=[common])
    r.add_argument("--gps", default=None)
    r.add_argument("--imu", default=None)
    r.add_argument("--ridge", action="append", default=[])
    r.add_argument("--tle", default=None)
    r.add_argument("--fixture", default=None, help="fixture directory (fills in all inputs)")

    b = sub.add_parser("pcrb", help="posterior bound curves", parents=[common])
    b.add_argument("--mode", action="append", choices=[m.value for m in FusionMode])
    b.add_argument("--n-leo", type=int, action="append")

    sw = sub.add_parser("sweep", help="Monte Carlo RMSE vs number of LEO satellites", parents=[common])
    sw.add_argument("--runs", type=int, default=None, help="override n_runs")
    sw.add_argument("--check-bounds", action="store_true", help="exit 1 if any RMSE falls below 0.9 x PCRB")
    return p


def _user_flags(p):
    p.add_argument("--lat", type=float, default=None, help="deg")
    p.add_argument("--lon", type=float, default=None, help="deg")
    p.add_argument("--alt", type=float, default=None, help="m")


def _config(args) -> harness.ScenarioConfig:
    cfg = harness.ScenarioConfig.load(args.config) if args.config else harness.ScenarioConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _user(args, cfg) -> frames.GeodeticPosition:
    if args.lat is None and args.lon is None and args.alt is None:
        return cfg.user
    if None in (args.lat, args.lon, args.alt):
        raise ConfigError("--lat, --lon and --alt must be given together")
    return frames.GeodeticPosition.from_degrees(args.lat, args.lon, args.alt)


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------


def cmd_catalog(args, out):
    if args.catalog_command == "synth":
        cat = tle.synthetic_catalog(frames.utc_seconds(args.epoch))
        path = Path(args.file) if args.file else Path(args.out) / "catalog.tle"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(tle.format_catalog(cat.records))
        print(f"wrote {len(cat)} records to {path}", file=out)
        return 0
    cat = tle.parse_tle_file(_read_text(args.file), strict=not args.lenient)
    counts = {c: 0 for c in tle.Constellation}
    for rec in cat:
        counts[rec.constellation] += 1
    print(f"records={len(cat)} starlink={counts[tle.Constellation.STARLINK]} "
          f"navstar={counts[tle.Constellation.NAVSTAR]} other={counts[tle.Constellation.OTHER]} "
          f"skipped={cat.skipped}", file=out)
    return 0


def cmd_visibility(args, out):
    cfg = _config(args)
    user = _user(args, cfg)
    cat = tle.parse_tle_file(_read_text(args.tle), strict=False) if args.tle else harness.load_catalog(cfg)
    t0 = frames.utc_seconds(args.start) if args.start else cfg.t0
    mask_gps = math.radians(args.mask_gps if args.mask_gps is not None else GPS_MASK_DEG)
    mask_leo = math.radians(args.mask_leo if args.mask_leo is not None else LEO_MASK_DEG)
    if args.step <= 0 or args.duration < 0:
        raise ConfigError("step must be positive and duration non-negative")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "constellation", "norad_id", "elevation_deg"])
    for t in t0 + np.arange(0.0, args.duration + 1e-9, args.step):
        rep = visible_satellites(cat, user, float(t), mask_gps, mask_leo)
        for name, items in (("starlink", rep.visible_starlink), ("navstar", rep.visible_navstar)):
            for sat_id, el in items:
                w.writerow([f"{t - t0:.3f}", name, sat_id, f"{math.degrees(el):.4f}"])
    return 0


def cmd_simulate(args, out):
    cfg = _config(args)
    mode = FusionMode(args.mode)
    n = args.n_leo if args.n_leo is not None else max(cfg.n_leo)
    sc, res = harness.simulate(cfg, mode, n, args.run)
    outdir = Path(args.out)
    tag = f"{mode.value.replace('+', '_')}_n{n:02d}_run{args.run}"
    harness.write_trajectory(outdir / f"trajectory_{tag}.csv", res.result, cfg.t0)
    rmse = harness.rmse_from_squared(res.result.times - cfg.t0, res.sq[None])
    print(f"mode={mode.value} n_leo={n if mode.uses_leo else 0} run={args.run} "
          f"pos_rmse_m={rmse.aggregate[0]:.4f} vel_rmse_mps={rmse.aggregate[1]:.4f} "
          f"att_rmse_rad={rmse.aggregate[2]:.6f} gated={res.gated}", file=out)
    return 0


def cmd_associate(args, out):
    cfg = _config(args)
    user = _user(args, cfg)
    cat = tle.parse_tle_file(_read_text(args.tle), strict=False)
    carrier = cfg.carrier if args.fc is None else replace(cfg.carrier, f_c=args.fc)
    cfg = replace(cfg, start=args.t0, carrier_hz=carrier.f_c, f_ref=args.f_ref)
    assoc, _ = harness.associate_ridges([args.ridge], cat, cfg, user)
    _, res, status = assoc[0]
    if res is None:
        raise DataError(f"{args.ridge}: {status}")
    csv.writer(out, lineterminator="\n").writerow(
        [res.sat_id, f"{res.residual_alpha:.6f}", f"{res.residual_doppler:.6f}", str(res.accepted).lower()])
    return 0


def cmd_replay(args, out):
    if args.fixture:
        fx = harness.fixture_paths(args.fixture)
        cfg = harness.ScenarioConfig.load(args.config or fx["config"])
        gps, imu, ridges, tle_path = fx["gps"], fx["imu"], fx["ridges"], fx["tle"]
    else:
        cfg = _config(args)
        gps, imu, ridges, tle_path = args.gps, args.imu, args.ridge, args.tle
        if imu is None or tle_path is None:
            raise ConfigError("replay needs --imu and --tle (or --fixture)")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    res = harness.replay_hardware(gps, imu, ridges, tle_path, cfg)
    harness.write_replay(res, args.out)
    print(f"alpha updates: {len(res.alpha_measurements)} of {len(ridges)} ridges; reference: {res.reference_source}",
          file=out)
    for mode in res.results:
        print(f"{mode.value}: pos_rmse_m={res.rmse(mode):.3f} max_pos_err_m={res.pos_error[mode].max():.3f}", file=out)
    return 0


def cmd_pcrb(args, out):
    cfg = _config(args)
    modes = tuple(FusionMode(m) for m in args.mode) if args.mode else cfg.modes
    ns = tuple(args.n_leo) if args.n_leo else cfg.n_leo
    cfg = replace(cfg, modes=modes, n_leo=ns)
    sc = harness.Scenario.build(cfg)
    items = []
    for mode in modes:
        for n in sorted(set(ns)):
            b = harness.run_bound(sc, mode, n if mode.uses_leo else next(iter(sc.tables)))
            items.append((mode, n, b))
            pos, vel, att = b.aggregate()
            print(f"{mode.value} n={n}: pos {pos:.4f} m  vel {vel:.4f} m/s  att {att:.6f} rad", file=out)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    harness.write_bounds(Path(args.out) / "bounds.csv", items, cfg.t0)
    return 0


def cmd_sweep(args, out):
    cfg = _config(args)
    if args.runs is not None:
        cfg = replace(cfg, n_runs=args.runs)
    res = harness.run_sweep(cfg, threads=max(1, args.threads))
    harness.write_sweep(res, args.out)
    print("mode,n_sats,pos_rmse_m,pos_bound_m,vel_rmse_mps,att_rmse_rad,bound_ok", file=out)
    for r in res.table.rows:
        if r.epoch == "aggregate":
            print(f"{r.mode},{r.n_sats},{r.pos_rmse_m:.4f},{r.pos_bound_m:.4f},{r.vel_rmse_mps:.4f},"
                  f"{r.att_rmse_rad:.6f},{int(r.bound_ok)}", file=out)
    bad = res.table.violations()
    if args.check_bounds and bad:
        print(f"{len(bad)} aggregate rows below {harness.BOUND_SLACK} x PCRB", file=sys.stderr)
        return 1
    return 0


COMMANDS = {"catalog": cmd_catalog, "visibility": cmd_visibility, "simulate": cmd_simulate,
            "associate": cmd_associate, "replay": cmd_replay, "pcrb": cmd_pcrb, "sweep": cmd_sweep}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except LeoNavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
