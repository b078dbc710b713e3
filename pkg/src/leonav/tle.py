"""Two-line element catalogs: parsing, checksums, serialization.

Also builds synthetic Walker-style catalogs used as stand-ins for the
archived Starlink/Navstar snapshots in tests and the default scenario.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

from . import frames
from .errors import ChecksumMismatch, DuplicateNoradId, MalformedField, TruncatedRecord

log = logging.getLogger(__name__)

MU_EARTH = 3.986004418e14  # m^3/s^2
TWO_PI = 2.0 * math.pi


class Constellation(enum.Enum):
    STARLINK = "Starlink"
    NAVSTAR = "Navstar"
    OTHER = "Other"

    @classmethod
    def from_name(cls, name: str) -> "Constellation":
        up = name.strip().upper()
        if up.startswith("STARLINK"):
            return cls.STARLINK
        if up.startswith("NAVSTAR") or up.startswith("GPS"):
            return cls.NAVSTAR
        return cls.OTHER


@dataclass(frozen=True)
class TleRecord:
    name: str
    norad_id: int
    epoch: float  # UTC s since J2000
    inclination: float  # rad
    raan: float
    eccentricity: float
    arg_perigee: float
    mean_anomaly: float
    mean_motion: float  # rev/day
    bstar: float  # 1/earth radii
    constellation: Constellation = Constellation.OTHER
    # columns not used by the propagator, kept for faithful re-serialization
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise ValueError(f"eccentricity out of range: {self.eccentricity}")
        if not self.mean_motion > 0.0:
            raise ValueError("mean motion must be positive")

    @property
    def mean_motion_rad_s(self) -> float:
        return self.mean_motion * TWO_PI / 86400.0

    @property
    def semi_major_axis(self) -> float:
        return (MU_EARTH / self.mean_motion_rad_s**2) ** (1.0 / 3.0)


@dataclass
class TleCatalog:
    records: list[TleRecord] = field(default_factory=list)
    source_date: datetime | None = None
    skipped: int = 0

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, norad_id: int) -> TleRecord:
        for rec in self.records:
            if rec.norad_id == norad_id:
                return rec
        raise KeyError(norad_id)


def checksum(line: str) -> int:
    if len(line) not in (68, 69):
        raise ValueError(f"TLE line must be 68 or 69 characters, got {len(line)}")
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += int(ch)
        elif ch == "-":
            total += 1
    return total % 10


# ---------------------------------------------------------------------------
# fixed-width field helpers; columns are 1-based inclusive like the format doc


def _field(line, lo, hi, line_no, conv):
    text = line[lo - 1:hi]
    try:
        return conv(text)
    except ValueError:
        raise MalformedField(line_no, (lo, hi), text) from None


def _implied_decimal(text: str) -> float:
    """Parse ' 12345-4' style fields: sign, 5-digit mantissa, signed exponent."""
    s = text.strip()
    if not s:
        return 0.0
    sign = -1.0 if s[0] == "-" else 1.0
    s = s.lstrip("+-")
    mant, exp = s[:-2], s[-2:]
    if not mant.isdigit() or exp[0] not in "+-" or not exp[1].isdigit():
        raise ValueError(text)
    return sign * float("0." + mant) * 10.0 ** int(exp)


def _implied_fraction(text: str) -> float:
    if not text.strip().isdigit():
        raise ValueError(text)
    return float("0." + text.strip())


def _format_implied_decimal(value: float) -> str:
    if value == 0.0:
        return " 00000+0"
    sign = "-" if value < 0 else " "
    exp = math.floor(math.log10(abs(value))) + 1
    mant = round(abs(value) / 10.0**exp * 1e5)
    if mant >= 100000:
        mant //= 10
        exp += 1
    return f"{sign}{mant:05d}{'-' if exp < 0 else '+'}{abs(exp):d}"


def _format_ndot(value: float) -> str:
    sign = "-" if value < 0 else " "
    digits = f"{abs(value):.8f}"
    if digits.startswith("0"):
        digits = digits[1:]
    return f"{sign}{digits}"


def _epoch_from_fields(year2: int, day: float) -> float:
    year = 2000 + year2 if year2 < 57 else 1900 + year2
    start = datetime(year, 1, 1, tzinfo=timezone.utc)
    return frames.utc_seconds(start) + (day - 1.0) * 86400.0


def _epoch_to_fields(epoch: float) -> tuple[int, float]:
    when = frames.to_datetime(epoch)
    start = frames.utc_seconds(datetime(when.year, 1, 1, tzinfo=timezone.utc))
    # guard against rounding across the new year
    if epoch < start:
        start = frames.utc_seconds(datetime(when.year - 1, 1, 1, tzinfo=timezone.utc))
        when = when - timedelta(days=1)
    return when.year % 100, (epoch - start) / 86400.0 + 1.0


def _parse_record(name, l1, l2, n1, n2) -> TleRecord:
    for line, no, tag in ((l1, n1, "1"), (l2, n2, "2")):
        if len(line) != 69:
            raise TruncatedRecord(f"line {no}: expected 69 characters, got {len(line)}")
        if line[0] != tag:
            raise MalformedField(no, (1, 1), line[0])
        expected = checksum(line)
        found = _field(line, 69, 69, no, int)
        if expected != found:
            raise ChecksumMismatch(no, expected, found)

    norad1 = _field(l1, 3, 7, n1, int)
    norad2 = _field(l2, 3, 7, n2, int)
    if norad1 != norad2:
        raise MalformedField(n2, (3, 7), l2[2:7])
    year2 = _field(l1, 19, 20, n1, int)
    day = _field(l1, 21, 32, n1, float)
    _field(l1, 34, 43, n1, float)
    _field(l1, 45, 52, n1, _implied_decimal)
    bstar = _field(l1, 54, 61, n1, _implied_decimal)

    deg = lambda s: math.radians(float(s))  # noqa: E731
    inc = _field(l2, 9, 16, n2, deg)
    raan = _field(l2, 18, 25, n2, deg)
    ecc = _field(l2, 27, 33, n2, _implied_fraction)
    argp = _field(l2, 35, 42, n2, deg)
    ma = _field(l2, 44, 51, n2, deg)
    mm = _field(l2, 53, 63, n2, float)
    if mm <= 0.0:
        raise MalformedField(n2, (53, 63), l2[52:63])

    name = name.strip() if name else f"SAT-{norad1}"
    if name.startswith("0 "):
        name = name[2:]
    extras = {
        "classification": l1[7],
        "intl_designator": l1[9:17],
        "epoch_text": l1[18:32],
        "ndot_text": l1[33:43],
        "nddot_text": l1[44:52],
        "bstar_text": l1[53:61],
        "ephemeris_type": l1[62],
        "element_number": l1[64:68],
        "rev_number": l2[63:68],
        "angle_text": (l2[8:16], l2[17:25], l2[34:42], l2[43:51]),
        "mm_text": l2[52:63],
    }
    return TleRecord(
        name=name,
        norad_id=norad1,
        epoch=_epoch_from_fields(year2, day),
        inclination=inc % TWO_PI,
        raan=raan % TWO_PI,
        eccentricity=ecc,
        arg_perigee=argp % TWO_PI,
        mean_anomaly=ma % TWO_PI,
        mean_motion=mm,
        bstar=bstar,
        constellation=Constellation.from_name(name),
        extras=extras,
    )


def parse_tle_file(text: str | bytes, strict: bool = True) -> TleCatalog:
    """Parse 2-line or 3-line grouped TLE text.

    In strict mode the first bad record raises; otherwise bad records are
    skipped and counted in ``catalog.skipped``.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    lines = [(i + 1, ln.rstrip("\r\n").rstrip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln.strip()]

    catalog = TleCatalog()
    seen: set[int] = set()
    k = 0
    while k < len(lines):
        name = None
        no, line = lines[k]
        nxt = lines[k + 1][1] if k + 1 < len(lines) else ""
        if not (line.startswith("1 ") and nxt.startswith("2 ")):
            name, k = line, k + 1
        try:
            if k + 1 >= len(lines):
                k = len(lines)
                raise TruncatedRecord(f"record starting at line {no} is incomplete")
            (n1, l1), (n2, l2) = lines[k], lines[k + 1]
            if not l2.startswith("2 "):
                k += 1
                raise TruncatedRecord(f"line {n2}: expected element line 2")
            k += 2
            rec = _parse_record(name, l1, l2, n1, n2)
            if rec.norad_id in seen:
                raise DuplicateNoradId(f"NORAD id {rec.norad_id} appears twice (line {n1})")
        except (TruncatedRecord, MalformedField, ChecksumMismatch, DuplicateNoradId) as exc:
            if strict:
                raise
            log.warning("skipping TLE record: %s", exc)
            catalog.skipped += 1
            continue
        seen.add(rec.norad_id)
        catalog.records.append(rec)
    if catalog.records:
        newest = max(r.epoch for r in catalog.records)
        catalog.source_date = frames.to_datetime(newest).replace(hour=0, minute=0, second=0, microsecond=0)
    return catalog


def filter_constellation(cat: TleCatalog, c: Constellation) -> TleCatalog:
    return TleCatalog([r for r in cat.records if r.constellation is c], cat.source_date)


# ---------------------------------------------------------------------------
# serialization


def _with_checksum(body: str) -> str:
    body = body.ljust(68)[:68]
    return body + str(checksum(body))


def _keep(extras, key, value, parse, fmt):
    """Prefer the original column text when it still encodes ``value``."""
    text = extras.get(key)
    if text is not None:
        try:
            if parse(text) == value or abs(parse(text) - value) < 1e-12 * max(1.0, abs(value)):
                return text
        except ValueError:
            pass
    return fmt(value)


def format_tle(rec: TleRecord) -> tuple[str, str, str]:
    """Re-serialize to (name, line1, line2) fixed-width columns."""
    ex = rec.extras
    year2, day = _epoch_to_fields(rec.epoch)
    epoch_text = ex.get("epoch_text")
    if epoch_text is None or abs(_epoch_from_fields(int(epoch_text[:2]), float(epoch_text[2:])) - rec.epoch) > 5e-4:
        epoch_text = f"{year2:02d}{day:012.8f}"
    bstar_text = _keep(ex, "bstar_text", rec.bstar, _implied_decimal, _format_implied_decimal)
    line1 = _with_checksum(
        f"1 {rec.norad_id:05d}{ex.get('classification', 'U')} {ex.get('intl_designator', '        '):8s} "
        f"{epoch_text} {ex.get('ndot_text', _format_ndot(0.0))} {ex.get('nddot_text', ' 00000+0')} "
        f"{bstar_text} {ex.get('ephemeris_type', '0')} {ex.get('element_number', '  99'):>4s}"
    )

    angles = (rec.inclination, rec.raan, rec.arg_perigee, rec.mean_anomaly)
    old = ex.get("angle_text", (None,) * 4)
    fmt_angle = lambda v: f"{math.degrees(v):8.4f}"  # noqa: E731
    angle_text = []
    for value, text in zip(angles, old):
        if text is not None and abs(math.radians(float(text)) % TWO_PI - value) < 1e-9:
            angle_text.append(text)
        else:
            angle_text.append(fmt_angle(value))
    ecc_text = f"{round(rec.eccentricity * 1e7):07d}"
    mm_text = ex.get("mm_text")
    if mm_text is None or abs(float(mm_text) - rec.mean_motion) > 5e-9:
        mm_text = f"{rec.mean_motion:11.8f}"
    line2 = _with_checksum(
        f"2 {rec.norad_id:05d} {angle_text[0]} {angle_text[1]} {ecc_text} "
        f"{angle_text[2]} {angle_text[3]} {mm_text}{ex.get('rev_number', '    0'):>5s}"
    )
    return rec.name, line1, line2


def format_catalog(records) -> str:
    out = []
    for rec in records:
        out.extend(format_tle(rec))
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# synthetic constellations

# (inclination deg, altitude km, planes, sats per plane)
STARLINK_SHELLS = [
    (53.0, 550.0, 72, 22),
    (53.2, 540.0, 72, 22),
    (70.0, 570.0, 36, 20),
    (97.6, 560.0, 6, 58),
    (43.0, 530.0, 48, 48),
    (53.0, 525.0, 48, 40),
]
NAVSTAR_SHELL = (55.0, 20180.0, 6, 5)


def walker_records(shell, start_id: int, prefix: str, epoch: float, phasing: int = 1,
                   raan0: float = 0.0, ecc: float = 0.0001) -> list[TleRecord]:
    inc_deg, alt_km, planes, per_plane = shell
    a = frames.WGS84_A + alt_km * 1e3
    n_rev_day = math.sqrt(MU_EARTH / a**3) * 86400.0 / TWO_PI
    total = planes * per_plane
    recs = []
    for p in range(planes):
        for s in range(per_plane):
            k = p * per_plane + s
            nid = start_id + k
            raan = raan0 + TWO_PI * p / planes
            ma = TWO_PI * s / per_plane + TWO_PI * phasing * p / total
            recs.append(TleRecord(
                name=f"{prefix}-{nid}",
                norad_id=nid,
                epoch=epoch,
                inclination=math.radians(inc_deg),
                raan=raan % TWO_PI,
                eccentricity=ecc,
                arg_perigee=0.0,
                mean_anomaly=ma % TWO_PI,
                mean_motion=round(n_rev_day, 8),
                bstar=0.0,
                constellation=Constellation.from_name(prefix),
                extras={"intl_designator": "24001A  "},
            ))
    return recs


def synthetic_catalog(epoch: float, shells=None, include_navstar: bool = True) -> TleCatalog:
    """Walker-delta stand-in for a full Starlink + Navstar snapshot.

    Records are round-tripped through the text format so every angle and
    mean motion carries the precision a real catalog file would.
    """
    shells = STARLINK_SHELLS if shells is None else shells
    recs: list[TleRecord] = []
    next_id = 44000
    for i, shell in enumerate(shells):
        recs += walker_records(shell, next_id, "STARLINK", epoch, phasing=1 + i, raan0=math.radians(7.0 * i))
        next_id += shell[2] * shell[3] + 100
    if include_navstar:
        recs += walker_records(NAVSTAR_SHELL, 24000, "NAVSTAR", epoch, phasing=1,
                               raan0=math.radians(17.0), ecc=0.005)
    return parse_tle_file(format_catalog(recs))


def with_elements(rec: TleRecord, **changes) -> TleRecord:
    """Copy with new element values; stale column text is dropped from extras."""
    extras = {k: v for k, v in rec.extras.items() if k not in ("angle_text", "mm_text", "bstar_text", "epoch_text")}
    return replace(rec, extras=extras, **changes)
