import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitspeed.imu import (
    CalibrationParams, EmptyFile, MalformedRow, NonMonotonicTime, Session, SingularCalibration,
    TooShort, apply_calibration, check_ranges, parse_session, read_manifest, trim_session,
    write_manifest, write_session, ManifestEntry,
)


def make_session(n=2295, rate=51.0, seed=0, speed=3.0):
    rng = np.random.default_rng(seed)
    data = np.hstack([rng.uniform(-1.5, 1.5, (n, 3)), rng.uniform(-500, 500, (n, 3))])
    return Session("P01", speed, rate, np.arange(n) / rate, data)


def test_parse_45s_session(tmp_path):
    s = make_session()
    path = tmp_path / "P01_3.0mph.csv"
    write_session(s, path)
    got = parse_session(path, "P01", 3.0)
    assert len(got) == 2295
    assert got.duration_s == pytest.approx(45.0)
    assert got.speed_mph == 3.0
    np.testing.assert_array_equal(got.data, s.data)


def test_round_trip_is_bit_identical(tmp_path):
    s = make_session(n=300, seed=3)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_session(s, a)
    first = parse_session(a, "P01", 3.0)
    write_session(first, b)
    second = parse_session(b, "P01", 3.0)
    assert a.read_bytes() == b.read_bytes()
    np.testing.assert_array_equal(first.t, second.t)
    np.testing.assert_array_equal(first.data, second.data)


def test_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(EmptyFile):
        parse_session(p, "P01", 3.0)
    p.write_text("t,ax,ay,az,gx,gy,gz\n")
    with pytest.raises(EmptyFile):
        parse_session(p, "P01", 3.0)


def test_nan_cell_reports_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,ax,ay,az,gx,gy,gz\n0,0,0,1,0,0,0\n0.02,nan,0,1,0,0,0\n")
    with pytest.raises(MalformedRow) as exc:
        parse_session(p, "P01", 3.0)
    assert exc.value.line == 3


def test_non_numeric_and_short_rows(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,ax,ay,az,gx,gy,gz\n0,0,0,1,0,0,x\n")
    with pytest.raises(MalformedRow, match=":2:"):
        parse_session(p, "P01", 3.0)
    p.write_text("t,ax,ay,az,gx,gy,gz\n0,0,0,1,0,0\n")
    with pytest.raises(MalformedRow):
        parse_session(p, "P01", 3.0)


def test_non_monotonic_time(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,ax,ay,az,gx,gy,gz\n0.1,0,0,1,0,0,0\n0.1,0,0,1,0,0,0\n")
    with pytest.raises(NonMonotonicTime):
        parse_session(p, "P01", 3.0)


def test_session_rejects_nonpositive_speed():
    with pytest.raises(ValueError):
        Session("P", 0.0, 51.0, np.arange(3) / 51, np.zeros((3, 6)))


def test_identity_calibration():
    s = make_session(n=50)
    out = apply_calibration(s, CalibrationParams())
    np.testing.assert_array_equal(out.data, s.data)
    np.testing.assert_array_equal(out.t, s.t)


def _one_sample(a, g=(0.0, 0.0, 0.0)):
    return Session("P", 3.0, 51.0, np.array([0.0]), np.array([[*a, *g]], dtype=float))


def test_calibration_offset():
    s = _one_sample((0.5, 0.0, 1.0))
    out = apply_calibration(s, CalibrationParams(accel_offset=[0.1, 0, 0]))
    np.testing.assert_allclose(out.accel[0], [0.4, 0.0, 1.0], atol=1e-15)


def test_calibration_scale():
    s = _one_sample((0.5, 0.0, 1.0))
    out = apply_calibration(s, CalibrationParams(accel_matrix=2 * np.eye(3)))
    np.testing.assert_array_equal(out.accel[0], [1.0, 0.0, 2.0])


def test_calibration_gyro_and_singular():
    s = _one_sample((0, 0, 1), (10.0, 20.0, 30.0))
    out = apply_calibration(s, CalibrationParams(gyro_offset=[10, 0, 0], gyro_matrix=np.diag([1, 2, 3])))
    np.testing.assert_array_equal(out.gyro[0], [0.0, 40.0, 90.0])
    with pytest.raises(SingularCalibration):
        apply_calibration(s, CalibrationParams(accel_matrix=np.zeros((3, 3))))


def test_trim_45s_to_40s():
    s = make_session(n=2295)
    out = trim_session(s, 2.5)
    # floor(2.5 * 51) = 127 removed from the front, clipped to 40 s x 51 Hz
    assert len(out) == 2040
    np.testing.assert_array_equal(out.data, s.data[127:127 + 2040])
    np.testing.assert_allclose(out.t, np.arange(2040) / 51.0)


def test_trim_zero_is_identity():
    s = make_session(n=100)
    out = trim_session(s, 0)
    np.testing.assert_array_equal(out.data, s.data)
    np.testing.assert_array_equal(out.t, s.t)


def test_trim_too_short():
    with pytest.raises(TooShort):
        trim_session(make_session(n=200), 2.5)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(300, 3000), trim=st.floats(0.0, 2.9), rate=st.sampled_from([25.0, 50.0, 51.0, 100.0]))
def test_trim_duration_property(n, trim, rate):
    s = make_session(n=n, rate=rate)
    if s.duration_s <= 2 * trim:
        return
    out = trim_session(s, trim)
    assert abs(out.duration_s - (s.duration_s - 2 * trim)) <= 1.0 / rate + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), trim=st.floats(0.0, 2.5))
def test_calibrate_and_trim_commute(seed, trim):
    rng = np.random.default_rng(seed)
    s = make_session(n=400, seed=seed)
    calib = CalibrationParams(rng.normal(size=3), np.eye(3) + 0.1 * rng.normal(size=(3, 3)),
                              rng.normal(size=3), np.eye(3) + 0.1 * rng.normal(size=(3, 3)))
    a = trim_session(apply_calibration(s, calib), trim)
    b = apply_calibration(trim_session(s, trim), calib)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(a.t, b.t)


def test_check_ranges():
    s = make_session(n=10)
    check_ranges(s)
    bad = Session("P", 3.0, 51.0, s.t, s.data * np.array([2, 1, 1, 1, 1, 1]))
    with pytest.raises(ValueError, match="acceleration"):
        check_ranges(bad)


def test_samples_view():
    s = make_session(n=3)
    first = next(iter(s.samples))
    assert first.t == 0.0 and first.gz == s.data[0, 5]
    assert all(math.isfinite(v) for v in first)


def test_manifest_round_trip(tmp_path):
    entries = [ManifestEntry(tmp_path / "P01_3.0mph.csv", 3.0, "P01"),
               ManifestEntry(tmp_path / "sub" / "P02_3.5mph.csv", 3.5, "P02")]
    write_manifest(entries, tmp_path / "manifest.csv")
    assert "sub/P02_3.5mph.csv" in (tmp_path / "manifest.csv").read_text()
    assert read_manifest(tmp_path / "manifest.csv") == entries
