import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from leonav import frames, propagate, spectral, tle
from leonav.errors import DegenerateTimes, NeverVisible, NoRidge, NyquistViolation
from leonav.observables import BeaconCarrier
from leonav.spectral import RidgeTrace, Signature

T0 = frames.utc_seconds("2026-01-30T15:00:00Z")
USER = frames.GeodeticPosition.from_degrees(43.0848638, -77.6786127, 170.0)


@pytest.fixture(scope="module")
def catalog():
    return tle.synthetic_catalog(T0 - 3 * 3600)


def test_two_point_rate_is_exact():
    alpha, sigma = spectral.estimate_doppler_rate(RidgeTrace([0.0, 1.0], [100.0, 350.0]))
    assert alpha == 250.0
    assert math.isnan(sigma)
    tr = RidgeTrace([0.3, 1.7], [11.1, -42.9], f_ref=5.5)
    expect = ((-42.9 - 5.5) - (11.1 - 5.5)) / (1.7 - 0.3)
    assert spectral.estimate_doppler_rate(tr)[0] == expect


def test_constant_trace_rate_zero():
    alpha, sigma = spectral.estimate_doppler_rate(RidgeTrace(np.arange(10.0), np.full(10, 1234.5)))
    assert alpha == pytest.approx(0.0, abs=1e-12)
    assert sigma == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=100)
@given(st.floats(-1e4, 1e4), st.floats(-1e3, 1e3), st.floats(-500, 500), st.integers(0, 2**31))
def test_rate_offset_and_shift_invariance(offset, shift, slope, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 20, 12)) + np.arange(12) * 1e-3
    f = slope * t + rng.normal(0, 5, 12)
    base = spectral.estimate_doppler_rate(RidgeTrace(t, f))[0]
    assert spectral.estimate_doppler_rate(RidgeTrace(t, f + offset))[0] == pytest.approx(base, abs=1e-6)
    assert spectral.estimate_doppler_rate(RidgeTrace(t + shift, f))[0] == pytest.approx(base, abs=1e-6)


def test_degenerate_and_unsorted_times():
    with pytest.raises(DegenerateTimes):
        RidgeTrace([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        RidgeTrace([0.0, 2.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        spectral.estimate_doppler_rate(RidgeTrace([1.0], [1.0]))


def test_parseval_per_slice():
    fs, n = 8000.0, 1024
    spec, x = spectral.synthesize_tone(lambda t: 300.0 + 200.0 * t, 2.0, fs, snr_db=5.0, seed=3,
                                       return_samples=True)
    w = signal.get_window("hann", n)
    hop = n // 2
    direct = [np.sum(w**2 * np.abs(x[k * hop:k * hop + n]) ** 2) / np.sum(w**2) for k in range(len(spec.t_axis))]
    np.testing.assert_allclose(spec.linear.sum(axis=1), direct, rtol=1e-9)
    # noiseless unit tone: one unit of power per slice
    clean = spectral.synthesize_beacon(0.0, 250.0, 1.0, fs)
    np.testing.assert_allclose(clean.linear.sum(axis=1), 1.0, rtol=1e-9)


def test_constant_tone_ridge():
    fs, f0 = 8000.0, 437.0
    spec = spectral.synthesize_beacon(0.0, f0, 2.0, fs)
    k = np.argmax(spec.power, axis=1)
    nearest = np.argmin(np.abs(spec.f_axis - f0))
    assert np.all(k == nearest)
    tr = spectral.extract_ridge(spec)
    assert len(tr) == len(spec.t_axis)
    assert np.ptp(tr.f) < spec.bin_width / 10


def test_chirp_ridge_slope():
    fs = 8000.0
    spec = spectral.synthesize_beacon(500.0, -600.0, 2.0, fs)
    tr = spectral.extract_ridge(spec, f_ref=1e3)
    alpha, _ = spectral.estimate_doppler_rate(tr)
    assert alpha == pytest.approx(500.0, rel=0.02)
    # the chirp definition: 2 s at 500 Hz/s spans 1000 Hz
    assert alpha * 2.0 == pytest.approx(1000.0, rel=0.02)
    np.testing.assert_allclose(tr.doppler, -600.0 + 500.0 * tr.t, atol=spec.bin_width / 2)


def test_nyquist_violation():
    with pytest.raises(NyquistViolation):
        spectral.synthesize_beacon(1000.0, 3500.0, 1.0, 8000.0)


def test_noise_only_raises_no_ridge():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = (rng.standard_normal(40000) + 1j * rng.standard_normal(40000)) / math.sqrt(2)
        with pytest.raises(NoRidge):
            spectral.extract_ridge(spectral.spectrogram(x, 8000.0))


def test_ridge_csv_round_trip(tmp_path):
    tr = RidgeTrace([0.0, 0.5, 1.0], [10.25, 20.5, 30.75], f_ref=2.0)
    spectral.write_ridge_csv(tmp_path / "r.csv", tr)
    back = spectral.read_ridge_csv(tmp_path / "r.csv", f_ref=2.0)
    np.testing.assert_array_equal(back.t, tr.t)
    np.testing.assert_array_equal(back.f, tr.f)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        spectral.read_ridge_csv(tmp_path / "bad.csv")


def line_signature(sat_id, f0, alpha, t=np.arange(0.0, 21.0)):
    return Signature(sat_id, t, f0 + alpha * t, np.full_like(t, alpha))


def test_associate_single_generator():
    cand = line_signature(7, -2000.0, -80.0)
    t = np.linspace(2.0, 6.0, 9)
    tr = RidgeTrace(t, -2000.0 - 80.0 * t + 350.0, f_ref=350.0)
    res = spectral.associate(tr, [cand])
    assert res.sat_id == 7
    assert res.residual_alpha == pytest.approx(0.0, abs=1e-9)
    assert res.residual_doppler == pytest.approx(0.0, abs=1e-9)
    assert res.accepted


def test_associate_rejects_far_alpha():
    cand = line_signature(3, 0.0, -80.0)
    t = np.linspace(0.0, 4.0, 9)
    res = spectral.associate(RidgeTrace(t, -60.0 * t), [cand])
    assert res.residual_alpha == pytest.approx(20.0)
    assert not res.accepted


def test_associate_order_invariant_and_tiebreak():
    cands = [line_signature(i, 100.0 * i, -10.0 * i) for i in range(1, 11)]
    t = np.linspace(1.0, 5.0, 9)
    tr = RidgeTrace(t, 400.0 - 40.0 * t + 3.0)
    picks = set()
    rnd = random.Random(0)
    for _ in range(10):
        rnd.shuffle(cands)
        picks.add(spectral.associate(tr, cands).sat_id)
    assert picks == {4}
    twins = [line_signature(9, 0.0, -40.0), line_signature(5, 0.0, -40.0)]
    assert spectral.associate(tr, twins).sat_id == 5
    assert spectral.associate(tr, twins[::-1]).sat_id == 5
    with pytest.raises(ValueError):
        spectral.associate(tr, [])


def _visible(catalog, t):
    rep = propagate.visible_satellites(catalog, USER, t)
    return [catalog.by_id(i) for i, _ in rep.visible_starlink]


def test_signature_zero_crossing_at_closest_approach(catalog):
    frame = frames.enu_frame_at(USER)
    found = 0
    for rec in _visible(catalog, T0)[:15]:
        sig = spectral.predict_signature(rec, USER, (T0 - 400.0, T0 + 400.0), step=0.5)
        if not (sig.f_d.min() < 0 < sig.f_d.max()):
            continue
        found += 1
        r, _, _ = (c[:, 0] for c in propagate.SimplifiedPropagator([rec]).states(sig.t))
        rng = np.linalg.norm(r - frame.origin_ecef, axis=-1)
        k = int(np.argmin(rng))
        cross = int(np.nonzero(np.diff(np.sign(sig.f_d)))[0][0])
        assert abs(cross - k) <= 1
    assert found >= 3


def test_signature_alpha_is_derivative_of_doppler(catalog):
    for rec in _visible(catalog, T0)[:5]:
        sig = spectral.predict_signature(rec, USER, (T0 - 60.0, T0 + 60.0), step=0.1)
        d = np.gradient(sig.f_d, sig.t)[5:-5]
        a = sig.alpha[5:-5]
        assert np.all(np.abs(d - a) <= 0.01 * np.abs(a) + 1e-6)


def test_signature_receding_sign(catalog):
    frame = frames.enu_frame_at(USER)
    checked = 0
    for rec in _visible(catalog, T0):
        sig = spectral.predict_signature(rec, USER, (T0, T0 + 20.0))
        r, v, _ = (c[:, 0] for c in propagate.SimplifiedPropagator([rec]).states(sig.t))
        los = r - frame.origin_ecef
        rho_dot = np.einsum("ij,ij->i", los, v) / np.linalg.norm(los, axis=-1)
        if np.all(rho_dot > 0):
            assert np.all(sig.f_d < 0)
            checked += 1
    assert checked >= 5


def test_signature_never_visible(catalog):
    frame = frames.enu_frame_at(USER)
    prop = propagate.SimplifiedPropagator(catalog.records)
    r, _, _ = prop.states(T0)
    el = propagate.elevations(r, frame.origin_ecef, frame)
    rec = catalog.records[int(np.argmin(el))]
    with pytest.raises(NeverVisible):
        spectral.predict_signature(rec, USER, (T0, T0 + 20.0))


def test_signature_carrier_scaling(catalog):
    rec = _visible(catalog, T0)[0]
    a = spectral.predict_signature(rec, USER, (T0, T0 + 10.0), BeaconCarrier(11e9))
    b = spectral.predict_signature(rec, USER, (T0, T0 + 10.0), BeaconCarrier(12e9))
    np.testing.assert_allclose(b.alpha * 11, a.alpha * 12, rtol=1e-12)
