import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leonav import frames, propagate, tle
from leonav.errors import DecayedOrbit, StaleElements
from leonav.frames import GeodeticPosition
from leonav.propagate import SatStateEcef
from leonav.tle import MU_EARTH, Constellation, TleRecord

EPOCH = frames.utc_seconds("2026-01-30T12:00:00Z")
ROCHESTER = GeodeticPosition.from_degrees(43.0848638, -77.6786127, 170.0)


def circular(alt=550e3, inc=0.0, ecc=0.0, norad=1, **kw):
    a = frames.WGS84_A + alt
    n = math.sqrt(MU_EARTH / a**3) * 86400.0 / (2 * math.pi)
    return TleRecord("STARLINK-T", norad, EPOCH, inc, 0.0, ecc, 0.0, 0.0, n, 0.0, Constellation.STARLINK, **kw)


@pytest.fixture(scope="module")
def catalog():
    return tle.synthetic_catalog(EPOCH)


def test_circular_equatorial_radius():
    rec = circular()
    period = 86400.0 / rec.mean_motion
    for t in EPOCH + np.linspace(0.0, period, 13):
        s = propagate.propagate(rec, t)
        assert np.linalg.norm(s.r_S) == pytest.approx(6928137.0, abs=1.0)
        assert 6.3e6 < np.linalg.norm(s.r_S)
        assert 0 < np.linalg.norm(s.v_S) < 1.2e4


def test_acceleration_points_inward(catalog):
    prop = propagate.SimplifiedPropagator(catalog.records[::97])
    r, _, a = prop.states(EPOCH + 1234.0)
    assert np.all(np.einsum("ij,ij->i", r, a) < 0)


@pytest.mark.parametrize("idx", [0, 500, 4000, 8480])
def test_velocity_matches_central_difference(catalog, idx):
    rec = catalog.records[idx]
    t, h = EPOCH + 3600.0, 0.1
    s = propagate.propagate(rec, t)
    lo, hi = propagate.propagate(rec, t - h), propagate.propagate(rec, t + h)
    step = (t + h) - (t - h)  # as represented at t ~ 8e8 s
    np.testing.assert_allclose(s.v_S, (hi.r_S - lo.r_S) / step, atol=1e-3)
    np.testing.assert_allclose(s.a_S, (hi.v_S - lo.v_S) / step, atol=1e-3)


def test_two_body_field_and_energy_with_j2_off():
    rec = circular(alt=700e3, inc=math.radians(60), ecc=0.02)
    period = 86400.0 / rec.mean_motion
    t = EPOCH + np.linspace(0.0, period, 50)
    r, v, a = propagate.propagate_inertial(rec, t, j2=False)
    rn = np.linalg.norm(r, axis=-1)
    np.testing.assert_allclose(a, -MU_EARTH * r / rn[:, None] ** 3, rtol=1e-9)
    energy = 0.5 * np.sum(v * v, axis=-1) - MU_EARTH / rn
    assert np.ptp(energy) / abs(energy.mean()) < 1e-9


def test_j2_precesses_node():
    rec = circular(inc=math.radians(53))
    el_on = propagate.ElementArrays.from_records([rec], j2=True)
    el_off = propagate.ElementArrays.from_records([rec], j2=False)
    # prograde orbit: node regresses westward under J2
    assert el_on.raan_rate[0] < 0 and el_off.raan_rate[0] == 0


@settings(max_examples=200, deadline=None)
@given(st.floats(-10.0, 10.0), st.floats(0.0, 0.99))
def test_kepler_solution(M, e):
    E = float(propagate.solve_kepler(np.array([M]), e)[0])
    assert E - e * math.sin(E) == pytest.approx(M, abs=1e-10)


def test_kepler_high_eccentricity_vectorized():
    M = np.linspace(-math.pi, math.pi, 101)
    E = propagate.solve_kepler(M, 0.999)
    np.testing.assert_allclose(E - 0.999 * np.sin(E), M, atol=1e-10)


def test_stale_and_decayed():
    rec = circular()
    propagate.propagate(rec, EPOCH + 6.9 * 86400)
    with pytest.raises(StaleElements):
        propagate.propagate(rec, EPOCH + 7.1 * 86400)
    with pytest.raises(StaleElements):
        propagate.propagate(rec, EPOCH - 8 * 86400)
    with pytest.raises(DecayedOrbit):
        propagate.propagate(circular(alt=80e3), EPOCH)
    with pytest.raises(DecayedOrbit):
        propagate.propagate(circular(alt=400e3, ecc=0.05), EPOCH)


def test_elevation_geometry():
    frame = frames.enu_frame_at(ROCHESTER)
    user = frame.origin_ecef
    up, east = frame.R[:, 2], frame.R[:, 0]

    def state(r):
        return SatStateEcef(1, 0.0, r, np.zeros(3), np.zeros(3))

    assert propagate.elevation(state(user + 550e3 * up), user, frame) == pytest.approx(math.pi / 2)
    assert propagate.elevation(state(user + 1e6 * east), user, frame) == pytest.approx(0.0, abs=1e-12)
    assert propagate.elevation(state(-user * 2), user, frame) < 0
    los = 3e5 * east + 4e5 * up
    e1 = propagate.elevation(state(user + los), user, frame)
    e2 = propagate.elevation(state(user + 7.5 * los), user, frame)
    assert e1 == pytest.approx(e2, abs=1e-14)
    assert e1 == pytest.approx(math.atan2(4, 3), abs=1e-12)


def test_visibility_rochester(catalog):
    t = frames.utc_seconds("2026-01-30T15:00:00Z")
    rep = propagate.visible_satellites(catalog, ROCHESTER, t)
    assert len(rep.visible_starlink) >= 47
    assert len(rep.visible_navstar) >= 4
    for lst, mask in ((rep.visible_starlink, 28.0), (rep.visible_navstar, 10.0)):
        el = [e for _, e in lst]
        assert el == sorted(el, reverse=True)
        assert min(el) >= math.radians(mask)


def test_visibility_over_window(catalog):
    t0 = frames.utc_seconds("2026-01-30T15:00:00Z")
    for t in t0 + np.arange(0.0, 20.5, 1.0):
        assert len(propagate.visible_satellites(catalog, ROCHESTER, t).visible_starlink) >= 4


def test_visibility_mask_monotone(catalog):
    t = frames.utc_seconds("2026-01-30T15:00:00Z")
    sets = []
    for deg in (0.0, 10.0, 28.0, 60.0):
        rep = propagate.visible_satellites(catalog, ROCHESTER, t, math.radians(deg), math.radians(deg))
        sets.append({i for i, _ in rep.visible_starlink + rep.visible_navstar})
    for lo, hi in zip(sets, sets[1:]):
        assert hi <= lo
    rep = propagate.visible_satellites(catalog, ROCHESTER, t, math.pi / 2, math.pi / 2)
    assert rep.visible_starlink == [] and rep.visible_navstar == []


def test_visibility_skips_bad_records(catalog):
    t = frames.utc_seconds("2026-01-30T15:00:00Z")
    recs = list(catalog.records[:50]) + [tle.with_elements(catalog.records[60], epoch=EPOCH - 30 * 86400)]
    rep = propagate.visible_satellites(tle.TleCatalog(recs), ROCHESTER, t)
    assert rep.errors == [(catalog.records[60].norad_id, "stale")]


def test_ephemeris_cache_matches_direct(catalog):
    recs = catalog.records[:40]
    times = EPOCH + np.arange(0.0, 3.0, 0.5)
    eph = propagate.SatelliteEphemeris(recs, times)
    ids = [recs[3].norad_id, recs[17].norad_id]
    for t in (times[2], EPOCH + 0.25):
        r, v, a = eph.states(ids, t)
        for k, i in enumerate(ids):
            s = propagate.propagate(catalog.by_id(i), t)
            np.testing.assert_allclose(r[k], s.r_S, atol=1e-6)
            np.testing.assert_allclose(v[k], s.v_S, atol=1e-9)
            np.testing.assert_allclose(a[k], s.a_S, atol=1e-9)
