import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leonav import frames, inertial, observables, propagate, tle
from leonav.errors import ZeroRange
from leonav.observables import BeaconCarrier, Measurement, MeasurementConfig, MeasurementKind as K
from leonav.propagate import SatStateEcef

T0 = frames.utc_seconds("2026-01-30T15:00:00Z")
USER = frames.GeodeticPosition.from_degrees(43.0848638, -77.6786127, 170.0)
vec3 = st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=3).map(np.array)


def sat(r, v=(0, 0, 0), a=(0, 0, 0), i=1):
    return SatStateEcef(i, 0.0, np.asarray(r, float), np.asarray(v, float), np.asarray(a, float))


@pytest.fixture(scope="module")
def scene():
    cat = tle.synthetic_catalog(T0 - 3 * 3600)
    frame = frames.enu_frame_at(USER)
    rep = propagate.visible_satellites(cat, USER, T0)
    gps = sorted(i for i, _ in rep.visible_navstar)
    leo = sorted(i for i, _ in rep.visible_starlink[:8])
    truth = inertial.static_trajectory(5.0, 10.0, t0=T0)
    eph = propagate.SatelliteEphemeris([cat.by_id(i) for i in gps + leo], [s.t for s in truth])
    return frame, truth, eph, gps, leo


def test_straight_line_pass_closed_form():
    # constant-velocity satellite passing a static user at miss distance d
    d, v = 500e3, 7500.0
    for t in np.linspace(-60, 60, 13):
        g = observables.geometry(sat([d, v * t, 0.0], [0.0, v, 0.0]), np.zeros(3), np.zeros(3))
        rho = math.hypot(d, v * t)
        assert g.rho == pytest.approx(rho)
        assert g.rho_dot == pytest.approx(v * v * t / rho, abs=1e-9)
        assert g.rho_ddot == pytest.approx(v * v * d * d / rho**3, rel=1e-9)


def test_zero_relative_velocity():
    a = np.array([3.0, -1.0, 2.0])
    g = observables.geometry(sat([7e6, 0, 0], [10, 20, 30], a), np.array([1e3, 0, 0]), np.array([10.0, 20, 30]))
    assert g.rho_dot == 0.0
    assert g.rho_ddot == pytest.approx(a[0])


def test_radial_velocity_has_no_geometric_term():
    g = observables.geometry(sat([7e6, 0, 0], [250.0, 0, 0]), np.zeros(3), np.zeros(3))
    assert g.rho_ddot == pytest.approx(0.0, abs=1e-12)


def test_zero_range():
    with pytest.raises(ZeroRange):
        observables.geometry(sat([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]), np.zeros(3))


@settings(max_examples=100)
@given(vec3, vec3)
def test_geometry_invariants(r, v):
    r = r + np.array([2e4, 0.0, 0.0])
    g = observables.geometry(sat(r, v), np.zeros(3), np.zeros(3))
    assert np.linalg.norm(g.u) == pytest.approx(1.0, abs=1e-12)
    assert g.rho > 0
    assert g.rho_dot == pytest.approx(float(g.u @ g.v_rel), abs=1e-9)


def test_doppler_rate_arithmetic():
    g = observables.GeometryObservables(1.0, np.array([1.0, 0, 0]), np.zeros(3), 0.0, 100.0)
    assert observables.doppler_rate(g, BeaconCarrier(11.7e9)) == pytest.approx(-3902.70, abs=0.01)
    g0 = observables.GeometryObservables(1.0, np.array([1.0, 0, 0]), np.zeros(3), 0.0, 0.0)
    assert observables.doppler_rate(g0) == 0.0
    a1 = observables.doppler_rate(g, BeaconCarrier(11e9))
    a2 = observables.doppler_rate(g, BeaconCarrier(22e9))
    assert a2 == pytest.approx(2 * a1, rel=1e-15)


def test_overhead_pass_sign(scene):
    frame, truth, eph, _, leo = scene
    r_u = frame.origin_ecef
    best = max(leo, key=lambda i: propagate.elevation(eph.state(i, T0), r_u, frame))
    ts = T0 + np.arange(-600.0, 600.0, 2.0)
    rd = np.array([observables.geometry(eph.state(best, t), r_u, np.zeros(3)).rho_dot for t in ts])
    k = int(np.argmin(np.abs(rd)))
    g = observables.geometry(eph.state(best, ts[k]), r_u, np.zeros(3))
    assert g.rho_ddot > 0
    assert observables.doppler_rate(g) < 0


def test_rho_dot_matches_central_difference(scene):
    frame, _, eph, _, leo = scene
    # h = 0.01 keeps the rho''' h^2 / 6 truncation near 1e-5 m/s on a LEO pass
    r_u, h = frame.origin_ecef, 0.01
    for i in leo[:4]:
        for t in T0 + np.array([0.0, 3.3, 7.7]):
            g = observables.geometry(eph.state(i, t), r_u, np.zeros(3))
            # t ~ 8e8 s: divide by the step actually represented in floating point
            tm, tp = t - h, t + h
            rho = [np.linalg.norm(eph.state(i, s).r_S - r_u) for s in (tm, tp)]
            assert g.rho_dot == pytest.approx((rho[1] - rho[0]) / (tp - tm), abs=1e-4)


def test_pseudorange_and_ofdm():
    r_u = np.array([6.37e6, 1e3, 2e3])
    s1, s2 = sat([2e7, 1e7, 5e6], i=1), sat([1e7, -2e7, 1e7], i=2)
    rng = np.linalg.norm(s1.r_S - r_u)
    assert observables.gps_pseudorange(s1, r_u) == pytest.approx(rng, rel=1e-15)
    assert observables.gps_pseudorange(s1, r_u, 123.4) - observables.gps_pseudorange(s1, r_u) == pytest.approx(123.4)
    assert observables.geometry(s1, r_u, np.zeros(3)).rho == pytest.approx(rng, rel=1e-15)
    assert observables.ofdm_diff_range(s1, s1, r_u) == 0.0
    assert observables.ofdm_diff_range(s1, s2, r_u) == -observables.ofdm_diff_range(s2, s1, r_u)
    b = 77.0
    d_biased = (observables.gps_pseudorange(s1, r_u, b) - observables.gps_pseudorange(s2, r_u, b))
    assert d_biased == pytest.approx(observables.ofdm_diff_range(s1, s2, r_u), abs=1e-7)


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement(K.GPS_PSEUDORANGE, 0.0, 1, 1.0, 0.0)
    with pytest.raises(ValueError):
        Measurement(K.OFDM_DIFF_RANGE, 0.0, 1, 1.0, 1.0)
    with pytest.raises(ValueError):
        Measurement(K.GPS_PSEUDORANGE, 0.0, 1, 1.0, 1.0, ref_sat_id=2)


def test_zero_noise_equals_models(scene):
    frame, truth, eph, gps, leo = scene
    cfg = MeasurementConfig(noise_scale=0.0)
    meas = observables.simulate_measurements(truth, frame, eph, gps, leo, cfg, seed=1)
    r_u = frame.origin_ecef
    kinds = {m.kind for m in meas}
    assert kinds == {K.GPS_PSEUDORANGE, K.LEO_DOPPLER_RATE, K.OFDM_DIFF_RANGE}
    for m in meas:
        s = eph.state(m.sat_id, m.t)
        if m.kind is K.GPS_PSEUDORANGE:
            assert m.value == pytest.approx(observables.gps_pseudorange(s, r_u), abs=1e-6)
        elif m.kind is K.LEO_DOPPLER_RATE:
            assert m.value == pytest.approx(observables.doppler_rate(observables.geometry(s, r_u, np.zeros(3))),
                                            abs=1e-9)
        else:
            ref = eph.state(m.ref_sat_id, m.t)
            assert m.value == pytest.approx(observables.ofdm_diff_range(s, ref, r_u), abs=1e-6)


def test_rates_and_reference(scene):
    frame, truth, eph, gps, leo = scene
    meas = observables.simulate_measurements(truth, frame, eph, gps, leo, seed=1)
    alpha_t = sorted({m.t - T0 for m in meas if m.kind is K.LEO_DOPPLER_RATE})
    assert alpha_t == pytest.approx([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    gps_t = {round(m.t - T0, 6) for m in meas if m.kind is K.GPS_PSEUDORANGE}
    assert len(gps_t) == 51
    r_u = frame.origin_ecef
    for m in meas:
        if m.kind is K.OFDM_DIFF_RANGE:
            el = {i: propagate.elevation(eph.state(i, m.t), r_u, frame) for i in leo}
            assert m.ref_sat_id == max(el, key=el.get)
            assert m.sat_id != m.ref_sat_id


def test_determinism_and_sorting(scene):
    frame, truth, eph, gps, leo = scene
    a = observables.simulate_measurements(truth, frame, eph, gps, leo, seed=(5, 2))
    b = observables.simulate_measurements(truth, frame, eph, gps, leo, seed=(5, 2))
    c = observables.simulate_measurements(truth, frame, eph, gps, leo, seed=(5, 3))
    assert repr(a) == repr(b)
    assert [m.value for m in a] != [m.value for m in c]
    keys = [m.sort_key() for m in a]
    assert keys == sorted(keys)


def test_noise_std():
    z = observables.noise_stream(99, K.LEO_DOPPLER_RATE, 4, 10_000)
    assert abs(1.5 * z.std() - 1.5) < 0.05 * 1.5
    assert abs(z.mean()) < 0.05


def test_few_visible_warns(scene):
    frame, truth, eph, gps, leo = scene
    meas = observables.simulate_measurements(truth, frame, eph, gps[:3], leo[:2], seed=0)
    assert any("GPS" in w for w in meas.warnings)
    assert any("LEO" in w for w in meas.warnings)
