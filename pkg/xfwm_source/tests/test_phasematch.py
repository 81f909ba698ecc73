import os
import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import logging

import numpy as np
import pytest

from errors import ConfigError, DegenerateGradientError
from fiber_model import load_fiber_profile
from jointspectrum import SpectralGrid
from phasematch import (
    PumpSpec,
    contour_angle,
    contour_frame,
    level_set_angle,
    omega_to_wavelength,
    phase_mismatch,
    phasematching_function,
    phasematching_values,
    segmented_phasematching_function,
    solve_contour,
    wavelength_to_omega,
)


@pytest.fixture(scope="module")
def pm980():
    return load_fiber_profile("pm980xp")


@pytest.fixture(scope="module")
def operating_point(pm980):
    points = solve_contour(pm980, [1000e-9]).for_pump(1000e-9)
    assert len(points) == 1
    return points[0]


def test_wavelength_omega_inverse():
    lam = np.array([810e-9, 1000e-9, 1310e-9])
    np.testing.assert_allclose(omega_to_wavelength(wavelength_to_omega(lam)), lam, rtol=1e-15)


def test_operating_point_wavelengths(operating_point):
    assert operating_point.signal_wavelength == pytest.approx(810e-9, abs=20e-9)
    assert operating_point.idler_wavelength == pytest.approx(1310e-9, abs=20e-9)
    # regression values for the bundled Sellmeier profile
    assert operating_point.signal_wavelength == pytest.approx(810.97e-9, abs=0.1e-9)
    assert operating_point.idler_wavelength == pytest.approx(1303.93e-9, abs=0.1e-9)
    assert not operating_point.near_degenerate
    assert abs(operating_point.residual_mismatch) < 1e-6


def test_operating_point_conserves_energy(operating_point):
    p = operating_point
    assert 2 / p.pump_wavelength == pytest.approx(1 / p.signal_wavelength + 1 / p.idler_wavelength, rel=1e-12)


def test_mismatch_vanishes_at_root(pm980, operating_point):
    db = phase_mismatch(pm980, None, operating_point.signal_omega, operating_point.idler_omega)
    assert isinstance(db, float)
    assert abs(db) < 1e-4


def test_contour_is_continuous_and_monotone(pm980):
    pumps = np.arange(1000, 1101, 5) * 1e-9
    result = solve_contour(pm980, pumps)
    frame = contour_frame(result)
    assert len(frame) == len(pumps)
    assert result.unmatched == ()
    assert list(frame.columns[:4]) == ["pump_nm", "signal_nm", "idler_nm", "residual"]
    assert np.all(np.diff(frame["signal_nm"]) > 0)
    assert np.all(np.diff(frame["idler_nm"]) > 0)
    assert np.max(np.abs(np.diff(frame["signal_nm"]))) < 10
    assert np.all(np.abs(frame["residual"]) < 1e-6)


def test_unmatched_pump_is_reported(pm980, caplog):
    # the 1000 nm pump phase-matches near 810 nm, outside this band
    with caplog.at_level(logging.WARNING):
        result = solve_contour(pm980, [1000e-9], signal_band=(900e-9, 950e-9))
    assert len(result) == 0
    assert result.unmatched == pytest.approx((1000e-9,))
    assert caplog.records


def test_empty_pump_list(pm980):
    with pytest.raises(ConfigError):
        solve_contour(pm980, [])


def test_nonlinear_shift_is_additive(pm980, operating_point):
    pump = PumpSpec(1000e-9, 3e12, peak_power=150.0)
    ws, wi = operating_point.signal_omega, operating_point.idler_omega
    plain = phase_mismatch(pm980, pump, ws, wi)
    shifted = phase_mismatch(pm980, pump, ws, wi, include_nonlinear_shift=True)
    assert shifted - plain == pytest.approx(2.0 / 3.0 * pm980.gamma * 150.0, rel=1e-9)
    with pytest.raises(ConfigError):
        phase_mismatch(pm980, None, ws, wi, include_nonlinear_shift=True)


def test_nonlinear_shift_moves_the_contour(pm980):
    plain = solve_contour(pm980, [1000e-9])[0]
    shifted = solve_contour(pm980, [1000e-9], include_nonlinear_shift=True, peak_power=2000.0)[0]
    assert shifted.signal_wavelength != pytest.approx(plain.signal_wavelength, abs=1e-13)


def test_level_set_angle_on_linear_functions():
    assert level_set_angle(lambda s, i: -s + i, 0.0, 0.0, 1.0) == pytest.approx(45.0)
    assert level_set_angle(lambda s, i: s + i, 0.0, 0.0, 1.0) == pytest.approx(135.0)
    assert level_set_angle(lambda s, i: i, 0.0, 0.0, 1.0) == pytest.approx(0.0)
    with pytest.raises(DegenerateGradientError):
        level_set_angle(lambda s, i: 3.0, 0.0, 0.0, 1.0)


def test_contour_angle_in_factorable_window(pm980, operating_point):
    theta = contour_angle(pm980, operating_point)
    assert 0.0 < theta < 90.0
    finer = contour_angle(pm980, operating_point, step=5e10)
    assert finer == pytest.approx(theta, abs=0.05)


def test_contour_angle_in_wavelength_plane(pm980, operating_point):
    theta_f = contour_angle(pm980, operating_point)
    theta_l = contour_angle(pm980, operating_point, coordinates="wavelength")
    assert 0.0 < theta_l < 90.0
    assert theta_l != pytest.approx(theta_f, abs=1.0)
    with pytest.raises(ConfigError):
        contour_angle(pm980, operating_point, coordinates="polar")


def _grid_around(point, half=2e12, n=33):
    return SpectralGrid(np.linspace(point.signal_omega - half, point.signal_omega + half, n),
                        np.linspace(point.idler_omega - half, point.idler_omega + half, n))


def test_phasematching_peak_and_bound(pm980, operating_point):
    phi = phasematching_values(pm980, None, operating_point.signal_omega, operating_point.idler_omega)
    assert abs(phi) == pytest.approx(1.0, abs=1e-9)
    grid = _grid_around(operating_point)
    values = phasematching_function(pm980, None, grid)
    assert values.shape == (33, 33)
    assert np.all(np.abs(values) <= 1.0 + 1e-12)


def test_single_segment_matches_uniform_fiber(pm980, operating_point):
    grid = _grid_around(operating_point)
    np.testing.assert_allclose(segmented_phasematching_function([pm980], None, grid),
                               phasematching_function(pm980, None, grid), rtol=0, atol=1e-12)


def test_two_identical_halves_match_whole_fiber(pm980, operating_point):
    grid = _grid_around(operating_point, half=6e12)
    long_fiber = pm980.with_length(0.5)
    halves = [pm980.with_length(0.25), pm980.with_length(0.25)]
    np.testing.assert_allclose(segmented_phasematching_function(halves, None, grid),
                               phasematching_function(long_fiber, None, grid), rtol=0, atol=1e-9)


def test_segment_with_other_birefringence_shifts_the_ridge(pm980, operating_point):
    grid = _grid_around(operating_point, half=6e12, n=65)
    same = segmented_phasematching_function([pm980.with_length(0.5)] * 2, None, grid)
    split = segmented_phasematching_function(
        [pm980.with_length(0.5), pm980.with_length(0.5).with_birefringence(pm980.birefringence_dn + 2e-6)],
        None, grid)
    assert not np.allclose(same, split)
    assert np.all(np.abs(split) <= 1.0 + 1e-12)


def test_pump_spec_validation_and_power():
    with pytest.raises(ConfigError):
        PumpSpec(1000e-9, 0.0)
    pump = PumpSpec(1000e-9, 2e12, peak_power=10.0, rep_rate=80e6)
    assert pump.mean_power == pytest.approx(10.0 * np.sqrt(np.pi) / 2e12 * 80e6)
    assert PumpSpec(1000e-9, 2e12, average_power=0.07).mean_power == 0.07


def test_contour_angle_regression_values(pm980, operating_point):
    # frequency plane from the group indices; the wavelength plane stretches it
    assert contour_angle(pm980, operating_point) == pytest.approx(55.63, abs=0.2)
    assert contour_angle(pm980, operating_point, coordinates="wavelength") == pytest.approx(75.18, abs=0.2)


def test_zero_birefringence_matches_at_degeneracy(pm980):
    fiber = pm980.with_birefringence(0.0)
    wp = float(wavelength_to_omega(1000e-9))
    assert abs(phase_mismatch(fiber, None, wp, wp)) < 1e-9


def test_telecom_idler_for_longer_pump(pm980):
    points = solve_contour(pm980, [1110e-9]).for_pump(1110e-9)
    assert len(points) == 1
    assert points[0].idler_wavelength == pytest.approx(1550e-9, abs=25e-9)


def test_grid_values_match_scalar_evaluation(pm980, operating_point):
    grid = _grid_around(operating_point, half=8e12, n=48)
    values = phasematching_function(pm980, None, grid)
    rng = np.random.default_rng(11)
    for i, j in rng.integers(0, 48, size=(100, 2)):
        ws, wi = float(grid.signal_axis[i]), float(grid.idler_axis[j])
        x = 0.5 * phase_mismatch(pm980, None, ws, wi) * pm980.length
        expected = np.sinc(x / np.pi) * np.exp(1j * x)
        assert values[i, j] == pytest.approx(expected, abs=1e-12)


def _lobe_half_width(fiber, point):
    from scipy.optimize import brentq

    ws0, wi0 = point.signal_omega, point.idler_omega
    h = 1e11
    g = np.array([
        (phase_mismatch(fiber, None, ws0 + h, wi0) - phase_mismatch(fiber, None, ws0 - h, wi0)) / (2 * h),
        (phase_mismatch(fiber, None, ws0, wi0 + h) - phase_mismatch(fiber, None, ws0, wi0 - h)) / (2 * h),
    ])
    norm = float(np.hypot(*g))
    unit = g / norm

    def excess(t):
        return float(abs(phasematching_values(fiber, None, ws0 + t * unit[0], wi0 + t * unit[1]))) - 0.5

    return brentq(excess, 0.0, 0.9 * 2 * np.pi / (fiber.length * norm))


def test_doubling_length_halves_the_lobe(pm980, operating_point):
    short = _lobe_half_width(pm980.with_length(0.18), operating_point)
    long = _lobe_half_width(pm980.with_length(0.36), operating_point)
    assert long / short == pytest.approx(0.5, rel=0.02)


def test_angle_independent_of_length_and_scale(pm980, operating_point):
    theta = contour_angle(pm980, operating_point)
    assert contour_angle(pm980.with_length(0.5), operating_point) == pytest.approx(theta, abs=1e-9)

    def mismatch(ws, wi):
        return phase_mismatch(pm980, None, ws, wi)

    ws0, wi0 = operating_point.signal_omega, operating_point.idler_omega
    scaled = level_set_angle(lambda s, i: 7.5 * mismatch(s, i), ws0, wi0)
    assert scaled == pytest.approx(level_set_angle(mismatch, ws0, wi0), abs=1e-9)


def test_peak_power_ignored_without_nonlinear_term(pm980, operating_point):
    ws, wi = operating_point.signal_omega, operating_point.idler_omega
    quiet = phase_mismatch(pm980, PumpSpec(1000e-9, 3e12, peak_power=0.0), ws, wi)
    loud = phase_mismatch(pm980, PumpSpec(1000e-9, 3e12, peak_power=5000.0), ws, wi)
    assert loud == quiet
    plain = solve_contour(pm980, [1000e-9])[0]
    powered = solve_contour(pm980, [1000e-9], peak_power=5000.0)[0]
    assert powered.signal_wavelength == plain.signal_wavelength


def test_contour_has_no_jumps_at_fine_pump_steps(pm980):
    pumps = np.arange(1000, 1101) * 1e-9
    frame = contour_frame(solve_contour(pm980, pumps))
    assert len(frame) == len(pumps)
    assert np.max(np.abs(np.diff(frame["signal_nm"]))) < 5
