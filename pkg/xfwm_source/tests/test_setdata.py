import os
import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest

from errors import CalibrationError, DataError, DegenerateInputError, IncompatibleScansError, MeshMismatchError
from fiber_model import load_fiber_profile
from jointspectrum import BandwidthKind, JointSpectrum, SpectrumKind, bandwidth_convert
from phasematch import PumpSpec, solve_contour
from setdata import (
    OVERLAP_NOTE,
    SetRow,
    SetScan,
    apply_calibration,
    calibrate_scan,
    count_features,
    inhomogeneity_report,
    load_set_scan,
    overlap,
    overlap_report,
    simulate_jsi,
    simulate_set_scan,
    subtract_background,
    to_common_mesh,
    write_set_scan,
)


def _pump(sigma_nm):
    return PumpSpec(1000e-9, bandwidth_convert(sigma_nm, BandwidthKind.SIGMA_FIELD_NM, 1000e-9))


@pytest.fixture(scope="module")
def fiber15():
    return load_fiber_profile("pm980xp").with_length(0.15)


@pytest.fixture(scope="module")
def center(fiber15):
    point = solve_contour(fiber15, [1000e-9])[0]
    return point.signal_wavelength * 1e9, point.idler_wavelength * 1e9


@pytest.fixture(scope="module")
def axes(center):
    s0, i0 = center
    return np.round(s0, 2) + np.arange(-200, 201) * 0.02, np.round(i0, 1) + np.arange(-48, 49) * 0.25


def _gaussian(signal_axis, idler_axis, s0, i0, width=1.0, label=""):
    s, i = np.meshgrid(signal_axis, idler_axis, indexing="ij")
    values = np.exp(-((s - s0) ** 2 + (i - i0) ** 2 + (s - s0) * (i - i0)) / (2 * width**2))
    return JointSpectrum(signal_axis, idler_axis, values, kind=SpectrumKind.INTENSITY, unit="nm", label=label)


def _rows(n, measured=True):
    lam = np.linspace(800, 820, 41)
    return tuple(SetRow(1300 + k, 1300 + k if measured else None, lam, np.exp(-(lam - 810 - 0.1 * k) ** 2))
                 for k in range(n))


def test_scan_needs_eight_rows():
    with pytest.raises(DataError):
        SetScan(_rows(7))
    assert len(SetScan(_rows(8)).rows) == 8


def test_row_validation():
    with pytest.raises(DataError):
        SetRow(1300, 1300, np.arange(5.0), np.arange(4.0))
    with pytest.raises(DataError):
        SetRow(1300, float("inf"), np.arange(5.0), np.arange(5.0))
    assert SetRow(1300, float("nan"), np.arange(5.0), np.arange(5.0)).seed_measured_nm is None


def test_scan_directory_round_trip(tmp_path, fiber15, axes):
    signal_axis, idler_axis = axes
    scan = simulate_set_scan(fiber15, _pump(2.0), idler_axis[::8], signal_axis[::10], fiber_id="fiberA")
    write_set_scan(scan, tmp_path / "fiberA")
    assert (tmp_path / "fiberA" / "manifest.json").exists()
    back = load_set_scan(tmp_path / "fiberA")
    assert back.fiber_id == "fiberA"
    assert back.length_m == pytest.approx(0.15)
    assert len(back.rows) == len(scan.rows)
    np.testing.assert_allclose(back.rows[3].signal_power, scan.rows[3].signal_power, rtol=1e-8, atol=1e-12)


def test_manifest_without_rows(tmp_path):
    (tmp_path / "manifest.json").write_text('{"fiber_id": "x"}', encoding="utf-8")
    with pytest.raises(DataError):
        load_set_scan(tmp_path)


def test_calibration_recovers_drifted_idler_axis(fiber15, axes):
    signal_axis, setpoints = axes
    pump = _pump(2.0)
    scan = simulate_set_scan(fiber15, pump, setpoints, signal_axis, drift_nm=0.3)
    js = calibrate_scan(scan)
    np.testing.assert_allclose(js.idler_axis, setpoints + 0.3, rtol=0, atol=1e-9)
    truth = simulate_jsi(fiber15, pump, signal_axis, setpoints + 0.3)
    np.testing.assert_allclose(js.values, truth.values, rtol=1e-9, atol=1e-12)
    assert js.unit == "nm" and js.flat_phase


def test_missing_measurements_are_listed():
    rows = list(_rows(9))
    rows[2] = SetRow(rows[2].seed_setpoint_nm, None, rows[2].signal_wavelength_nm, rows[2].signal_power)
    rows[5] = SetRow(rows[5].seed_setpoint_nm, None, rows[5].signal_wavelength_nm, rows[5].signal_power)
    with pytest.raises(CalibrationError) as err:
        calibrate_scan(SetScan(tuple(rows)))
    assert err.value.setpoints == [1302.0, 1305.0]


def test_calibration_is_idempotent(fiber15, axes):
    signal_axis, setpoints = axes
    scan = simulate_set_scan(fiber15, _pump(2.0), setpoints, signal_axis, jitter_nm=0.05, seed=4)
    once = calibrate_scan(scan)
    twice = calibrate_scan(apply_calibration(scan))
    np.testing.assert_array_equal(once.idler_axis, twice.idler_axis)
    np.testing.assert_array_equal(once.values, twice.values)
    assert np.all(np.diff(once.idler_axis) > 0)


def test_duplicate_seed_wavelengths_are_averaged():
    rows = list(_rows(10))
    rows[4] = SetRow(1304, rows[3].seed_measured_nm, rows[4].signal_wavelength_nm, rows[4].signal_power)
    cal = apply_calibration(SetScan(tuple(rows)))
    assert len(cal.rows) == 9
    merged = cal.rows[3]
    np.testing.assert_allclose(merged.signal_power, 0.5 * (rows[3].signal_power + rows[4].signal_power))


def test_background_subtraction(fiber15, axes):
    signal_axis, setpoints = axes
    pump = _pump(2.0)
    clean = calibrate_scan(simulate_set_scan(fiber15, pump, setpoints, signal_axis))
    floored = calibrate_scan(simulate_set_scan(fiber15, pump, setpoints, signal_axis, background=0.05))
    cleaned = subtract_background(floored)
    assert cleaned.values.min() >= 0
    np.testing.assert_allclose(cleaned.values, clean.values, atol=1e-3)


def test_common_mesh_is_identity_on_shared_nodes():
    s = 800 + 0.25 * np.arange(41)
    i = 1300 + 0.25 * np.arange(61)
    js = _gaussian(s, i, 805, 1307.5)
    (meshed,), mesh = to_common_mesh([js], 0.25)
    np.testing.assert_array_equal(mesh.signal_axis, s)
    np.testing.assert_allclose(meshed.values, js.values / js.integral(), rtol=1e-12, atol=1e-12)
    assert meshed.integral() == pytest.approx(1.0, abs=1e-9)


def test_common_mesh_from_shifted_grids():
    a = _gaussian(800 + 0.02 * np.arange(501), 1300 + 0.02 * np.arange(501), 805, 1305, label="a")
    # b sits half a step off the nodes of a
    b = _gaussian(800.01 + 0.02 * np.arange(501), 1300.01 + 0.02 * np.arange(501), 805, 1305, label="b")
    (ma, mb), mesh = to_common_mesh([a, b], 0.02)
    assert mesh.signal_axis[0] == pytest.approx(800.01)
    assert mesh.signal_axis[-1] <= 810.0 + 1e-9
    np.testing.assert_allclose(ma.values, mb.values, rtol=0, atol=1e-3 * ma.values.max())
    for m in (ma, mb):
        assert m.integral() == pytest.approx(1.0, abs=1e-9)
    assert overlap(ma, mb) == pytest.approx(1.0, abs=1e-4)


def test_disjoint_supports():
    a = _gaussian(800 + 0.1 * np.arange(20), 1300 + 0.1 * np.arange(20), 801, 1301)
    b = _gaussian(810 + 0.1 * np.arange(20), 1300 + 0.1 * np.arange(20), 811, 1301)
    with pytest.raises(IncompatibleScansError):
        to_common_mesh([a, b], 0.1)


def test_overlap_properties():
    s = 800 + 0.05 * np.arange(161)
    i = 1300 + 0.05 * np.arange(161)
    a = _gaussian(s, i, 804, 1304)
    b = _gaussian(s, i, 804.5, 1303.8, width=1.2)
    assert overlap(a, a) == pytest.approx(1.0, abs=1e-9)
    assert overlap(a, b) == pytest.approx(overlap(b, a), abs=1e-12)
    assert 0.0 <= overlap(a, b) < 1.0
    with pytest.raises(MeshMismatchError):
        overlap(a, _gaussian(s + 0.01, i, 804, 1304))
    with pytest.raises(DegenerateInputError):
        overlap(a, a.with_values(np.zeros_like(a.values)))


def test_overlap_is_stable_under_mesh_refinement():
    s = 800 + 0.02 * np.arange(501)
    i = 1300 + 0.02 * np.arange(501)
    a = _gaussian(s, i, 804, 1304, label="a")
    b = _gaussian(s, i, 804.6, 1304.4, width=1.1, label="b")
    coarse = overlap(*to_common_mesh([a, b], 0.2)[0])
    fine = overlap(*to_common_mesh([a, b], 0.1)[0])
    assert abs(coarse - fine) < 0.01


def test_overlap_report_table():
    s = 800 + 0.1 * np.arange(81)
    i = 1300 + 0.1 * np.arange(81)
    spectra = [_gaussian(s, i, 804 + 0.2 * k, 1304, label=f"f{k}") for k in range(3)]
    report = overlap_report(spectra)
    assert report.labels == ("f0", "f1", "f2")
    np.testing.assert_allclose(np.diag(report.pairwise), 1.0, atol=1e-9)
    np.testing.assert_allclose(report.pairwise, report.pairwise.T, atol=1e-12)
    assert report.to_dict()["note"] == OVERLAP_NOTE
    assert "phase-blind" in report.to_table()


def test_count_features_on_blobs():
    s = np.arange(64.0)
    i = np.arange(64.0)
    one = _gaussian(s, i, 20, 20, width=3)
    two = one.with_values(one.values + _gaussian(s, i, 45, 45, width=3).values)
    assert count_features(one) == 1
    assert count_features(two) == 2
    assert count_features(one.with_values(np.zeros_like(one.values))) == 0


def test_perturbed_fibers_overlap_above_threshold(fiber15, axes):
    signal_axis, setpoints = axes
    pump = _pump(2.0)
    dn = fiber15.birefringence_dn
    spectra = []
    for k, (offset, drift) in enumerate(zip([-0.5e-6, -0.17e-6, 0.17e-6, 0.5e-6], [0.0, 0.05, -0.05, 0.1])):
        scan = simulate_set_scan(fiber15.with_birefringence(dn + offset), pump, setpoints, signal_axis,
                                 drift_nm=drift, fiber_id=f"fiber{k}")
        spectra.append(calibrate_scan(scan))
    report = inhomogeneity_report(spectra)
    assert report.features == (1, 1, 1, 1)
    assert not any(report.inhomogeneous)
    assert report.below_threshold == ()
    off = report.overlaps.pairwise[~np.eye(4, dtype=bool)]
    assert off.min() >= 0.85
    assert off.max() < 1.0


def test_two_segment_fiber_is_flagged():
    base = load_fiber_profile("pm980xp")
    pump = _pump(2.0)
    point = solve_contour(base.with_length(1.0), [1000e-9])[0]
    s0, i0 = np.round(point.signal_wavelength * 1e9, 2), np.round(point.idler_wavelength * 1e9, 1)
    signal_axis = s0 + np.arange(-150, 151) * 0.02
    idler_axis = i0 + np.arange(-100, 101) * 0.1
    segments = [base.with_length(0.5),
                base.with_length(0.5).with_birefringence(base.birefringence_dn + 2e-6)]
    spliced = simulate_jsi(segments, pump, signal_axis, idler_axis, label="spliced 1 m")
    uniform = simulate_jsi(base.with_length(0.45), pump, signal_axis, idler_axis, label="uniform 45 cm")
    assert count_features(spliced) >= 2
    assert count_features(uniform) == 1
    report = inhomogeneity_report([uniform, spliced])
    assert report.inhomogeneous == (False, True)
    assert report.labels == ("uniform 45 cm", "spliced 1 m")
