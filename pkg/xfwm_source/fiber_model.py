# fiber_model.py
"""Effective indices and propagation constants of a polarization-maintaining
step-index fiber, plus birefringence recovery from crossed-polarizer fringes.

Wavelengths are SI metres everywhere in this module; profile files and fringe
CSVs carry micrometres / nanometres and are converted at the boundary.

The fundamental mode comes from the weakly guiding LP01 equation

    U J1(U) / J0(U) = W K1(W) / K0(W),   U = V sqrt(1 - b),  W = V sqrt(b)

solved for the normalized propagation parameter b by bisection. The slow axis
is the fast axis plus a constant index offset ``birefringence_dn``.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from numpy.typing import ArrayLike, NDArray
from scipy.constants import c as C_LIGHT
from scipy.interpolate import CubicSpline
from scipy.signal import find_peaks
from scipy.special import j0, j1, k0e, k1e

from errors import ConfigError, DataError, DomainError, InsufficientFringesError, ModeCutoffError

log = logging.getLogger(__name__)

MODEL_WINDOW = (0.4e-6, 2.0e-6)  # m

# Malitson fused silica, C in micrometres
SELLMEIER_B = (0.6961663, 0.4079426, 0.8974794)
SELLMEIER_C_UM = (0.0684043, 0.1162414, 9.896161)

LP11_CUTOFF = 2.404825557695773  # first zero of J0
_B_ITERATIONS = 42  # 2**-42 < 1e-12
_B_FLOOR = 1e-12

FRINGE_SMOOTHING = 5
MIN_FRINGE_PEAKS = 3
MIN_TRACE_SAMPLES = 16

PROFILE_KEYS = ("core_radius_um", "na", "dn", "gamma_per_w_km", "length_cm")
BUNDLED_PROFILE_DIR = Path(__file__).resolve().parent / "profiles"


class PolarizationAxis(str, Enum):
    SLOW = "slow"
    FAST = "fast"


class CladdingModel(str, Enum):
    FUSED_SILICA_SELLMEIER = "fused-silica-sellmeier"
    USER_TABLE = "user-table"


@dataclass(frozen=True)
class FiberSpec:
    """Fiber under study. Lengths in metres, gamma in 1/(W m)."""

    core_radius: float
    numerical_aperture: float
    birefringence_dn: float
    gamma: float
    length: float
    cladding_index_model: CladdingModel = CladdingModel.FUSED_SILICA_SELLMEIER
    # (wavelength_m, index) pairs, only read for the user-table model
    cladding_table: tuple[tuple[float, float], ...] | None = None
    name: str = "custom"

    def __post_init__(self):
        if not self.core_radius > 0:
            raise ConfigError(f"core_radius must be > 0, got {self.core_radius}")
        if not 0 < self.numerical_aperture < 1:
            raise ConfigError(f"numerical_aperture must be in (0, 1), got {self.numerical_aperture}")
        if not self.length > 0:
            raise ConfigError(f"length must be > 0, got {self.length}")
        if not self.birefringence_dn >= 0:
            raise ConfigError(f"birefringence_dn must be >= 0, got {self.birefringence_dn}")
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        object.__setattr__(self, "cladding_index_model", CladdingModel(self.cladding_index_model))
        if self.cladding_index_model is CladdingModel.USER_TABLE:
            table = np.asarray(self.cladding_table or (), dtype=float)
            if table.ndim != 2 or table.shape[0] < 4 or table.shape[1] != 2:
                raise ConfigError("user-table cladding model needs at least 4 (wavelength, index) rows")
            if np.any(np.diff(table[:, 0]) <= 0):
                raise ConfigError("cladding table wavelengths must be strictly increasing")
            object.__setattr__(self, "cladding_table", tuple(map(tuple, table.tolist())))

    @property
    def window(self) -> tuple[float, float]:
        lo, hi = MODEL_WINDOW
        if self.cladding_index_model is CladdingModel.USER_TABLE:
            lo = max(lo, self.cladding_table[0][0])
            hi = min(hi, self.cladding_table[-1][0])
        return lo, hi

    def with_length(self, length: float) -> FiberSpec:
        return replace(self, length=float(length))

    def with_birefringence(self, dn: float) -> FiberSpec:
        return replace(self, birefringence_dn=float(dn))


@dataclass(frozen=True)
class FringeTrace:
    wavelengths: NDArray  # m
    intensities: NDArray
    fiber_length: float  # m

    def __post_init__(self):
        lam = np.asarray(self.wavelengths, dtype=float)
        inten = np.asarray(self.intensities, dtype=float)
        if lam.ndim != 1 or lam.shape != inten.shape:
            raise DataError("wavelengths and intensities must be 1-D arrays of equal length")
        if lam.size < MIN_TRACE_SAMPLES:
            raise InsufficientFringesError(f"fringe trace needs >= {MIN_TRACE_SAMPLES} samples, got {lam.size}")
        if np.any(np.diff(lam) <= 0):
            raise DataError("fringe trace wavelengths must be strictly increasing")
        if not self.fiber_length > 0:
            raise ConfigError(f"fiber_length must be > 0, got {self.fiber_length}")
        object.__setattr__(self, "wavelengths", lam)
        object.__setattr__(self, "intensities", inten)


@dataclass(frozen=True)
class BirefringenceEstimate:
    dn: float
    uncertainty: float
    mean_spacing: float  # m
    center_wavelength: float  # m
    n_peaks: int


def _as_array(value: ArrayLike) -> tuple[NDArray, bool]:
    arr = np.asarray(value, dtype=float)
    return arr, arr.ndim == 0


def check_window(spec: FiberSpec, lam: NDArray):
    lo, hi = spec.window
    bad = ~((lam >= lo) & (lam <= hi))
    if np.any(bad):
        first = float(np.atleast_1d(lam)[np.atleast_1d(bad)][0])
        raise DomainError(
            f"wavelength {first * 1e9:.3f} nm outside model window "
            f"[{lo * 1e9:.0f}, {hi * 1e9:.0f}] nm"
        )


def _sellmeier_index(lam: NDArray) -> NDArray:
    lam2 = (lam * 1e6) ** 2
    n2 = np.ones_like(lam2)
    for b, c in zip(SELLMEIER_B, SELLMEIER_C_UM):
        n2 = n2 + b * lam2 / (lam2 - c * c)
    return np.sqrt(n2)


def _cladding(spec: FiberSpec, lam: NDArray) -> NDArray:
    if spec.cladding_index_model is CladdingModel.USER_TABLE:
        table = np.asarray(spec.cladding_table)
        return CubicSpline(table[:, 0], table[:, 1])(lam)
    return _sellmeier_index(lam)


def cladding_index(spec: FiberSpec, wavelength: ArrayLike):
    lam, scalar = _as_array(wavelength)
    check_window(spec, lam)
    n = _cladding(spec, lam)
    return float(n) if scalar else n


def core_index(spec: FiberSpec, wavelength: ArrayLike):
    """n_core**2 = n_clad**2 + NA**2."""
    lam, scalar = _as_array(wavelength)
    check_window(spec, lam)
    n = np.sqrt(_cladding(spec, lam) ** 2 + spec.numerical_aperture**2)
    return float(n) if scalar else n


def v_number(spec: FiberSpec, wavelength: ArrayLike):
    lam, scalar = _as_array(wavelength)
    v = 2 * np.pi * spec.core_radius * spec.numerical_aperture / lam
    return float(v) if scalar else v


def _lp01_mismatch(v: NDArray, b: NDArray) -> NDArray:
    # positive when b is below the root
    u = v * np.sqrt(1.0 - b)
    w = v * np.sqrt(b)
    return u * j1(u) / j0(u) - w * k1e(w) / k0e(w)


def _solve_b(v: NDArray) -> NDArray:
    v = np.asarray(v, dtype=float)
    # above the LP11 cutoff the J0 pole at U = 2.405 bounds b from below
    lo = np.where(v > LP11_CUTOFF, 1.0 - (LP11_CUTOFF / np.maximum(v, LP11_CUTOFF)) ** 2, 0.0)
    hi = np.ones_like(v)
    for _ in range(_B_ITERATIONS):
        mid = 0.5 * (lo + hi)
        below = _lp01_mismatch(v, mid) > 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def normalized_propagation_constant(spec: FiberSpec, wavelength: ArrayLike):
    """LP01 normalized propagation parameter b in (0, 1)."""
    lam, scalar = _as_array(wavelength)
    check_window(spec, lam)
    b = _solve_b(v_number(spec, lam))
    if np.any(~np.isfinite(b)) or np.any(b <= _B_FLOOR):
        raise ModeCutoffError(
            f"no guided LP01 mode for core radius {spec.core_radius * 1e6:.3f} um, "
            f"NA {spec.numerical_aperture} in the requested band"
        )
    return float(b) if scalar else b


def _effective_index(spec: FiberSpec, lam: NDArray, axis: PolarizationAxis) -> NDArray:
    n_clad = _cladding(spec, lam)
    b = normalized_propagation_constant(spec, lam)
    n_fast = np.sqrt(n_clad**2 + b * spec.numerical_aperture**2)
    if PolarizationAxis(axis) is PolarizationAxis.SLOW:
        return n_fast + spec.birefringence_dn
    return n_fast


def refractive_index(spec: FiberSpec, wavelength: ArrayLike, axis: PolarizationAxis):
    """Effective index of the fundamental mode on ``axis``.

    Accepts a scalar or an array of wavelengths (m); returns the same shape.
    """
    lam, scalar = _as_array(wavelength)
    check_window(spec, lam)
    n = _effective_index(spec, lam, axis)
    return float(n) if scalar else n


def propagation_constant(spec: FiberSpec, angular_frequency: ArrayLike, axis: PolarizationAxis):
    """beta = (omega / c) n(omega), rad/m."""
    omega, scalar = _as_array(angular_frequency)
    if np.any(omega <= 0):
        raise DomainError("angular frequency must be positive")
    lam = 2 * np.pi * C_LIGHT / omega
    check_window(spec, lam)
    beta = omega / C_LIGHT * _effective_index(spec, lam, axis)
    return float(beta) if scalar else beta


def group_index(spec: FiberSpec, wavelength: float, axis: PolarizationAxis, rel_step: float = 1e-4) -> float:
    """c * d(beta)/d(omega) by central difference with step ``rel_step * omega``."""
    omega = 2 * np.pi * C_LIGHT / float(wavelength)
    h = rel_step * omega
    beta = propagation_constant(spec, np.array([omega - h, omega + h]), axis)
    return float(C_LIGHT * (beta[1] - beta[0]) / (2 * h))


def beat_length(spec: FiberSpec, wavelength: float) -> float:
    if spec.birefringence_dn == 0:
        return float("inf")
    return float(wavelength) / spec.birefringence_dn


def birefringence_from_beat_length(beat_length_m: float, wavelength: float) -> float:
    if not beat_length_m > 0:
        raise DataError(f"beat length must be > 0, got {beat_length_m}")
    return float(wavelength) / beat_length_m


def synthesize_fringes(dn: float, fiber_length: float, wavelengths: ArrayLike,
                       visibility: float = 1.0, noise: float = 0.0, seed: int | None = None) -> FringeTrace:
    """Crossed-polarizer transmission of a birefringent fiber, cos**2(pi dn L / lambda)."""
    lam = np.asarray(wavelengths, dtype=float)
    phase = 2 * np.pi * dn * fiber_length / lam
    inten = 0.5 * (1.0 + visibility * np.cos(phase))
    if noise > 0:
        rng = np.random.default_rng(seed)
        inten = inten + rng.normal(0.0, noise, size=lam.shape)
    return FringeTrace(lam, inten, fiber_length)


def fringe_window(dn: float, fiber_length: float, center: float, periods: float = 6.0,
                  samples_per_period: int = 400) -> NDArray:
    """Wavelength samples covering ``periods`` fringe periods around ``center``."""
    period = center**2 / (dn * fiber_length)
    span = periods * period
    n = max(MIN_TRACE_SAMPLES, int(periods * samples_per_period))
    return np.linspace(center - span / 2, center + span / 2, n)


def birefringence_from_fringes(trace: FringeTrace) -> BirefringenceEstimate:
    """Delta n from the peak spacing of a fringe trace.

    Each gap between neighbouring peaks gives lambda_a lambda_b / (L (lambda_b - lambda_a)).
    Peaks of the cos**2 trace sit at lambda_m = dn L / m, so every gap returns dn exactly
    for a dispersionless dn; the textbook lambda0**2 / (L delta_lambda) agrees with it only
    to first order in delta_lambda / lambda0. The estimate is the mean over gaps and the
    uncertainty their standard deviation.
    """
    lam = trace.wavelengths
    kernel = np.ones(FRINGE_SMOOTHING) / FRINGE_SMOOTHING
    smooth = np.convolve(trace.intensities, kernel, mode="valid")
    offset = FRINGE_SMOOTHING // 2
    lam_s = lam[offset:offset + smooth.size]

    span = float(np.ptp(smooth))
    peaks, _ = find_peaks(smooth, prominence=0.25 * span if span > 0 else None)
    if peaks.size < MIN_FRINGE_PEAKS:
        raise InsufficientFringesError(
            f"found {peaks.size} fringe peaks, need at least {MIN_FRINGE_PEAKS}"
        )

    # parabolic sub-sample refinement
    refined = []
    for k in peaks:
        if 0 < k < smooth.size - 1:
            y0, y1, y2 = smooth[k - 1], smooth[k], smooth[k + 1]
            denom = y0 - 2 * y1 + y2
            delta = float(np.clip(0.5 * (y0 - y2) / denom, -1.0, 1.0)) if denom != 0 else 0.0
            step = 0.5 * (lam_s[k + 1] - lam_s[k - 1])
            refined.append(lam_s[k] + delta * step)
        else:
            refined.append(lam_s[k])
    peak_lam = np.asarray(refined)

    gaps = np.diff(peak_lam)
    per_gap = peak_lam[:-1] * peak_lam[1:] / (trace.fiber_length * gaps)
    dn = float(np.mean(per_gap))
    unc = float(np.std(per_gap, ddof=1)) if per_gap.size > 1 else 0.0
    center = 0.5 * (lam[0] + lam[-1])
    log.info("fringes: %d peaks, mean spacing %.4f nm, dn=%.4e +/- %.1e",
             peak_lam.size, np.mean(gaps) * 1e9, dn, unc)
    return BirefringenceEstimate(dn, unc, float(np.mean(gaps)), float(center), int(peak_lam.size))


def load_fringe_trace(path, fiber_length: float) -> FringeTrace:
    """Read a ``wavelength_nm,intensity`` CSV (header required)."""
    df = pd.read_csv(path)
    missing = {"wavelength_nm", "intensity"} - set(df.columns)
    if missing:
        raise ConfigError(f"{path}: missing columns {sorted(missing)}")
    df = df.sort_values("wavelength_nm")
    return FringeTrace(df["wavelength_nm"].to_numpy(float) * 1e-9,
                       df["intensity"].to_numpy(float), fiber_length)


def resolve_profile_path(name_or_path, profile_dir=None) -> Path:
    candidate = Path(name_or_path)
    if candidate.is_file():
        return candidate
    search = [d for d in (profile_dir, os.getenv("XFWM_PROFILE_DIR"), BUNDLED_PROFILE_DIR) if d]
    for d in search:
        p = Path(d) / f"{name_or_path}.env"
        if p.is_file():
            return p
    raise ConfigError(f"fiber profile {name_or_path!r} not found in {[str(d) for d in search]}",
                      flag="--fiber-profile")


def load_fiber_profile(name_or_path, profile_dir=None) -> FiberSpec:
    """Build a FiberSpec from a dotenv-style profile file."""
    path = resolve_profile_path(name_or_path, profile_dir)
    raw = dotenv_values(path)
    missing = [k for k in PROFILE_KEYS if raw.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"{path}: missing profile keys {missing}", flag="--fiber-profile")
    try:
        values = {k: float(raw[k]) for k in PROFILE_KEYS}
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric profile value ({exc})", flag="--fiber-profile") from exc

    model = CladdingModel(raw.get("cladding_model") or CladdingModel.FUSED_SILICA_SELLMEIER)
    table = None
    if model is CladdingModel.USER_TABLE:
        table_path = path.parent / (raw.get("cladding_table_csv") or "")
        if not table_path.is_file():
            raise ConfigError(f"{path}: cladding_table_csv {table_path} not found", flag="--fiber-profile")
        df = pd.read_csv(table_path).sort_values("wavelength_nm")
        table = tuple(zip(df["wavelength_nm"].to_numpy(float) * 1e-9, df["index"].to_numpy(float)))

    spec = FiberSpec(
        core_radius=values["core_radius_um"] * 1e-6,
        numerical_aperture=values["na"],
        birefringence_dn=values["dn"],
        gamma=values["gamma_per_w_km"] * 1e-3,
        length=values["length_cm"] * 1e-2,
        cladding_index_model=model,
        cladding_table=table,
        name=path.stem,
    )
    log.info("Loaded fiber profile %s from %s", spec.name, path)
    return spec
