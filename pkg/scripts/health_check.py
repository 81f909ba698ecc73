#!/usr/bin/env python3
"""Health check script: solves the phase-matched pair of the bundled fiber profile.
Exits 0 on success, non-zero on failure. Prints summary output.

Exit status: 2 profile could not be loaded, 3 no phase matching, 4 pair outside
the expected band.

Usage: .venv312/bin/python scripts/health_check.py
"""
import os
import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'xfwm_source')))

SIGNAL_BAND_NM = (790.0, 830.0)
PUMP_NM = 1000.0

try:
    from fiber_model import load_fiber_profile
    from phasematch import contour_angle, solve_contour
    fiber = load_fiber_profile(os.getenv('XFWM_FIBER_PROFILE', 'pm980xp'))
except Exception as e:
    print('ERROR: could not load fiber profile:', e)
    sys.exit(2)

try:
    points = solve_contour(fiber, [PUMP_NM * 1e-9]).for_pump(PUMP_NM * 1e-9)
    if not points:
        print(f'ERROR: no phase-matched pair for a {PUMP_NM:g} nm pump')
        sys.exit(3)
    point = points[0]
    signal_nm = point.signal_wavelength * 1e9
    print(f'fiber: {fiber.name}  signal: {signal_nm:.2f} nm  idler: {point.idler_wavelength * 1e9:.2f} nm  '
          f'angle: {contour_angle(fiber, point):.1f} deg')
    if not SIGNAL_BAND_NM[0] <= signal_nm <= SIGNAL_BAND_NM[1]:
        print('ERROR: signal wavelength outside', SIGNAL_BAND_NM)
        sys.exit(4)
    print('Health check OK')
    sys.exit(0)
except Exception as e:
    print('ERROR solving phase matching:', e)
    sys.exit(3)
