#!/usr/bin/env python3
"""Generate simulated SET scan directories for demos.

Writes one scan per fiber under `data/set_sample/` by default: a reference fiber
and copies with perturbed birefringence, plus a two-segment fiber whose
birefringence jumps at the splice. Feed them to `xfwm overlap --scans ...`.

Usage:
    python scripts/generate_set_sample.py --length-cm 15 --drift-nm 0.2
"""
import argparse
import os
import sys
from pathlib import Path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'xfwm_source')))

import numpy as np

from fiber_model import load_fiber_profile
from jointspectrum import BandwidthKind, bandwidth_convert
from phasematch import PumpSpec, solve_contour
from setdata import simulate_set_scan, write_set_scan

OUT_DIR = Path("data/set_sample")
DN_OFFSETS = (-0.5e-6, -0.17e-6, 0.17e-6, 0.5e-6)


def get_args():
    p = argparse.ArgumentParser()
    p.add_argument("--fiber-profile", default=os.getenv("XFWM_FIBER_PROFILE", "pm980xp"))
    p.add_argument("--length-cm", type=float, default=15.0)
    p.add_argument("--pump-nm", type=float, default=1000.0)
    p.add_argument("--sigma-nm", type=float, default=2.0, help="Pump field sigma in nm")
    p.add_argument("--drift-nm", type=float, default=0.2, help="Seed laser offset from its setpoints")
    p.add_argument("--jitter-nm", type=float, default=0.02)
    p.add_argument("--noise", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=int(os.getenv("XFWM_SEED", "0")))
    p.add_argument("--out", default=str(OUT_DIR))
    return p.parse_args()


def main():
    args = get_args()
    out = Path(args.out)
    base = load_fiber_profile(args.fiber_profile).with_length(args.length_cm * 1e-2)
    pump_m = args.pump_nm * 1e-9
    pump = PumpSpec(pump_m, bandwidth_convert(args.sigma_nm, BandwidthKind.SIGMA_FIELD_NM, pump_m))
    point = solve_contour(base, [pump_m])[0]
    s0, i0 = round(point.signal_wavelength * 1e9, 2), round(point.idler_wavelength * 1e9, 1)
    signal_axis = s0 + np.arange(-200, 201) * 0.02
    setpoints = i0 + np.arange(-48, 49) * 0.25

    fibers = {"reference": base}
    for k, offset in enumerate(DN_OFFSETS):
        fibers[f"perturbed{k}"] = base.with_birefringence(base.birefringence_dn + offset)
    half = base.with_length(base.length / 2)
    fibers["spliced"] = [half, half.with_birefringence(base.birefringence_dn + 2e-6)]

    for k, (name, fiber) in enumerate(fibers.items()):
        scan = simulate_set_scan(fiber, pump, setpoints, signal_axis, drift_nm=args.drift_nm,
                                 jitter_nm=args.jitter_nm, noise=args.noise, seed=args.seed + k, fiber_id=name)
        write_set_scan(scan, out / name)
        print(f"Wrote scan -> {out / name} ({len(scan.rows)} rows)")


if __name__ == '__main__':
    main()
