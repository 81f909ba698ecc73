# phasematch.py
"""Cross-polarized FWM phase matching: pump on the slow axis, signal and idler
on the fast axis, with omega_p = (omega_s + omega_i) / 2 everywhere."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterator, Sequence

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy.constants import c as C_LIGHT

from errors import ConfigError, DegenerateGradientError
from fiber_model import FiberSpec, PolarizationAxis, check_window, propagation_constant

if TYPE_CHECKING:
    from jointspectrum import SpectralGrid

log = logging.getLogger(__name__)

SLOW = PolarizationAxis.SLOW
FAST = PolarizationAxis.FAST

SIGNAL_BAND = (700e-9, 990e-9)
SIGNAL_SCAN_STEP = 0.5e-9
ROOT_TOLERANCE = 1e-6  # rad/m
NEAR_DEGENERATE = 20e-9  # |lambda_s - lambda_p| below this is flagged
ANGLE_STEP = 1e11  # rad/s
_GRADIENT_FLOOR = 1e-20
_MAX_BISECTIONS = 200


def wavelength_to_omega(wavelength):
    return 2 * np.pi * C_LIGHT / np.asarray(wavelength, dtype=float)


def omega_to_wavelength(omega):
    return 2 * np.pi * C_LIGHT / np.asarray(omega, dtype=float)


@dataclass(frozen=True)
class PumpSpec:
    """Pump pulse: center wavelength (m), field half-width sigma_p (rad/s),
    peak power (W) and repetition rate (Hz)."""

    center_wavelength: float
    sigma_p: float
    peak_power: float = 0.0
    rep_rate: float = 80e6
    average_power: float | None = None

    def __post_init__(self):
        if not self.center_wavelength > 0:
            raise ConfigError(f"pump center wavelength must be > 0, got {self.center_wavelength}")
        if not self.sigma_p > 0:
            raise ConfigError(f"sigma_p must be > 0, got {self.sigma_p}", flag="--bandwidth")
        if not self.peak_power >= 0:
            raise ConfigError(f"peak power must be >= 0, got {self.peak_power}")
        if not self.rep_rate > 0:
            raise ConfigError(f"rep rate must be > 0, got {self.rep_rate}")

    @property
    def center_omega(self) -> float:
        return float(wavelength_to_omega(self.center_wavelength))

    @property
    def mean_power(self) -> float:
        """Average power; for a transform-limited Gaussian pulse the energy is
        peak_power * sqrt(pi) / sigma_p."""
        if self.average_power is not None:
            return float(self.average_power)
        return self.peak_power * np.sqrt(np.pi) / self.sigma_p * self.rep_rate


@dataclass(frozen=True)
class PhaseMatchPoint:
    pump_wavelength: float
    signal_wavelength: float
    idler_wavelength: float
    residual_mismatch: float
    near_degenerate: bool = False
    branch: str = "signal<pump"

    @property
    def signal_omega(self) -> float:
        return float(wavelength_to_omega(self.signal_wavelength))

    @property
    def idler_omega(self) -> float:
        return float(wavelength_to_omega(self.idler_wavelength))


@dataclass(frozen=True)
class ContourResult:
    """Phase-matched points of a pump scan; pumps without a root are kept in ``unmatched``."""

    points: tuple[PhaseMatchPoint, ...]
    unmatched: tuple[float, ...] = ()

    def __iter__(self) -> Iterator[PhaseMatchPoint]:
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i) -> PhaseMatchPoint:
        return self.points[i]

    def for_pump(self, pump_wavelength: float, branch: str | None = "signal<pump") -> list[PhaseMatchPoint]:
        return [p for p in self.points
                if np.isclose(p.pump_wavelength, pump_wavelength, rtol=0, atol=1e-15)
                and (branch is None or p.branch == branch)]


def _nonlinear_shift(fiber: FiberSpec, pump: PumpSpec | None, include: bool) -> float:
    if not include:
        return 0.0
    if pump is None:
        raise ConfigError("the nonlinear phase term needs a PumpSpec with a peak power")
    return 2.0 / 3.0 * fiber.gamma * pump.peak_power


def phase_mismatch(fiber: FiberSpec, pump: PumpSpec | None, omega_s: ArrayLike, omega_i: ArrayLike,
                   include_nonlinear_shift: bool = False):
    """2 beta_p(slow) - beta_s(fast) - beta_i(fast) [+ (2/3) gamma P], rad/m.

    ``omega_s`` and ``omega_i`` broadcast against each other.
    """
    ws = np.asarray(omega_s, dtype=float)
    wi = np.asarray(omega_i, dtype=float)
    wp = 0.5 * (ws + wi)
    db = (2 * propagation_constant(fiber, wp, SLOW)
          - propagation_constant(fiber, ws, FAST)
          - propagation_constant(fiber, wi, FAST))
    db = db + _nonlinear_shift(fiber, pump, include_nonlinear_shift)
    return float(db) if np.ndim(db) == 0 else db


def _beta_or_nan(fiber: FiberSpec, omega: NDArray, axis: PolarizationAxis) -> NDArray:
    lo, hi = fiber.window
    out = np.full(omega.shape, np.nan)
    with np.errstate(divide="ignore"):
        lam = np.where(omega > 0, 2 * np.pi * C_LIGHT / np.where(omega > 0, omega, 1.0), np.inf)
    ok = (lam >= lo) & (lam <= hi)
    if np.any(ok):
        out[ok] = propagation_constant(fiber, omega[ok], axis)
    return out


def solve_contour(fiber: FiberSpec, pump_wavelengths: ArrayLike, include_nonlinear_shift: bool = False,
                  peak_power: float = 0.0, signal_band: tuple[float, float] = SIGNAL_BAND,
                  scan_step: float = SIGNAL_SCAN_STEP) -> ContourResult:
    """Phase-matched signal/idler pairs for each pump wavelength (m).

    The signal band is scanned at ``scan_step`` for sign changes of the mismatch
    (idlers falling outside the model window are skipped), then every bracket is
    bisected until |mismatch| < ROOT_TOLERANCE.
    """
    pumps = np.atleast_1d(np.asarray(pump_wavelengths, dtype=float))
    if pumps.size == 0:
        raise ConfigError("no pump wavelengths given", flag="--pump-range")
    check_window(fiber, pumps)
    shift = 2.0 / 3.0 * fiber.gamma * peak_power if include_nonlinear_shift else 0.0

    lam_s = np.arange(signal_band[0], signal_band[1] + 0.5 * scan_step, scan_step)
    ws = wavelength_to_omega(lam_s)
    wp = wavelength_to_omega(pumps)
    wi = 2 * wp[:, None] - ws[None, :]

    beta_p = _beta_or_nan(fiber, wp, SLOW)
    beta_s = _beta_or_nan(fiber, ws, FAST)
    beta_i = _beta_or_nan(fiber, wi, FAST)
    scan = 2 * beta_p[:, None] - beta_s[None, :] - beta_i + shift

    left, right = scan[:, :-1], scan[:, 1:]
    with np.errstate(invalid="ignore"):
        crossing = np.isfinite(left) & np.isfinite(right) & (np.sign(left) * np.sign(right) < 0)
    p_idx, k_idx = np.nonzero(crossing)
    exact_p, exact_k = np.nonzero(scan == 0)

    roots_p = [exact_p]
    roots_w = [ws[exact_k]]
    roots_f = [np.zeros(exact_k.size)]
    if p_idx.size:
        w_root, f_root = _bisect_brackets(fiber, wp[p_idx], ws[k_idx], ws[k_idx + 1],
                                          left[p_idx, k_idx], shift)
        roots_p.append(p_idx)
        roots_w.append(w_root)
        roots_f.append(f_root)
    rp = np.concatenate(roots_p)
    rw = np.concatenate(roots_w)
    rf = np.concatenate(roots_f)

    points = []
    for p, w, f in sorted(zip(rp.tolist(), rw.tolist(), rf.tolist()), key=lambda t: (t[0], -t[1])):
        if abs(f) >= ROOT_TOLERANCE:
            log.warning("pump %.2f nm: bisection stopped at |dbeta|=%.2e", pumps[p] * 1e9, abs(f))
            continue
        lam_sig = float(omega_to_wavelength(w))
        lam_idl = float(omega_to_wavelength(2 * wp[p] - w))
        points.append(PhaseMatchPoint(
            pump_wavelength=float(pumps[p]),
            signal_wavelength=lam_sig,
            idler_wavelength=lam_idl,
            residual_mismatch=float(f),
            near_degenerate=abs(lam_sig - pumps[p]) < NEAR_DEGENERATE,
            branch="signal<pump" if lam_sig < pumps[p] else "signal>pump",
        ))

    matched = {pt.pump_wavelength for pt in points}
    unmatched = tuple(float(p) for p in pumps if float(p) not in matched)
    for p in unmatched:
        log.warning("no phase matching for pump %.2f nm in signal band %.0f-%.0f nm",
                    p * 1e9, signal_band[0] * 1e9, signal_band[1] * 1e9)
    log.info("contour: %d pumps, %d points, %d unmatched", pumps.size, len(points), len(unmatched))
    return ContourResult(tuple(points), unmatched)


def _bisect_brackets(fiber: FiberSpec, wp: NDArray, lo: NDArray, hi: NDArray, f_lo: NDArray,
                     shift: float) -> tuple[NDArray, NDArray]:
    lo = lo.copy()
    hi = hi.copy()
    f_lo = f_lo.copy()
    root = 0.5 * (lo + hi)
    resid = np.full(lo.shape, np.inf)
    active = np.ones(lo.shape, dtype=bool)
    beta_p = propagation_constant(fiber, wp, SLOW)
    for _ in range(_MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        f_mid = (2 * beta_p - propagation_constant(fiber, mid, FAST)
                 - propagation_constant(fiber, 2 * wp - mid, FAST) + shift)
        root = np.where(active, mid, root)
        resid = np.where(active, f_mid, resid)
        active &= np.abs(f_mid) >= ROOT_TOLERANCE
        if not active.any():
            break
        same = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, f_mid, f_lo)
        hi = np.where(same, hi, mid)
    return root, resid


def contour_frame(result: ContourResult) -> pd.DataFrame:
    """Contour as a table with wavelengths in nm."""
    rows = [
        {
            "pump_nm": p.pump_wavelength * 1e9,
            "signal_nm": p.signal_wavelength * 1e9,
            "idler_nm": p.idler_wavelength * 1e9,
            "residual": p.residual_mismatch,
            "near_degenerate": p.near_degenerate,
            "branch": p.branch,
        }
        for p in result
    ]
    cols = ["pump_nm", "signal_nm", "idler_nm", "residual", "near_degenerate", "branch"]
    return pd.DataFrame(rows, columns=cols)


def _sinc_phase(delta_beta: NDArray, length: float) -> NDArray:
    x = 0.5 * delta_beta * length
    return np.sinc(x / np.pi) * np.exp(1j * x)


def phasematching_values(fiber: FiberSpec | Sequence[FiberSpec], pump: PumpSpec | None,
                         omega_s: ArrayLike, omega_i: ArrayLike,
                         include_nonlinear_shift: bool = False) -> NDArray:
    """phi on broadcast (omega_s, omega_i) arrays.

    A sequence of fibers is treated as spliced segments; the result is the
    length-weighted coherent sum, each segment delayed by the phase mismatch
    accumulated before it.
    """
    segments = [fiber] if isinstance(fiber, FiberSpec) else list(fiber)
    if not segments:
        raise ConfigError("at least one fiber segment is required")
    if len(segments) == 1:
        db = phase_mismatch(segments[0], pump, omega_s, omega_i, include_nonlinear_shift)
        return _sinc_phase(np.asarray(db), segments[0].length)

    ws = np.asarray(omega_s, dtype=float)
    wi = np.asarray(omega_i, dtype=float)
    base = segments[0]
    base_db = np.asarray(phase_mismatch(base, pump, ws, wi, include_nonlinear_shift))
    pump_term = (ws + wi) / C_LIGHT  # d(dbeta)/d(dn) = 2 omega_p / c
    total = sum(s.length for s in segments)
    field = np.zeros(np.broadcast(ws, wi).shape, dtype=complex)
    accumulated = np.zeros(field.shape)
    for seg in segments:
        if _same_waveguide(seg, base):
            db = base_db + pump_term * (seg.birefringence_dn - base.birefringence_dn)
        else:
            db = np.asarray(phase_mismatch(seg, pump, ws, wi, include_nonlinear_shift))
        field += np.exp(1j * accumulated) * seg.length * _sinc_phase(db, seg.length)
        accumulated = accumulated + db * seg.length
    return field / total


def _same_waveguide(a: FiberSpec, b: FiberSpec) -> bool:
    return (a.core_radius == b.core_radius and a.numerical_aperture == b.numerical_aperture
            and a.gamma == b.gamma and a.cladding_index_model == b.cladding_index_model
            and a.cladding_table == b.cladding_table)


def phasematching_function(fiber: FiberSpec, pump: PumpSpec | None, grid: SpectralGrid,
                           include_nonlinear_shift: bool = False) -> NDArray:
    """sinc(dbeta L / 2) exp(i dbeta L / 2) on the grid, shape (n_s, n_i)."""
    return phasematching_values(fiber, pump, grid.signal_axis[:, None], grid.idler_axis[None, :],
                                include_nonlinear_shift)


def segmented_phasematching_function(segments: Sequence[FiberSpec], pump: PumpSpec | None,
                                     grid: SpectralGrid, include_nonlinear_shift: bool = False) -> NDArray:
    return phasematching_values(list(segments), pump, grid.signal_axis[:, None],
                                grid.idler_axis[None, :], include_nonlinear_shift)


def level_set_angle(mismatch: Callable[[float, float], float], omega_s: float, omega_i: float,
                    step: float = ANGLE_STEP) -> float:
    """Angle (deg, [0, 180)) of the zero level set of ``mismatch`` against the signal axis."""
    ds = (mismatch(omega_s + step, omega_i) - mismatch(omega_s - step, omega_i)) / (2 * step)
    di = (mismatch(omega_s, omega_i + step) - mismatch(omega_s, omega_i - step)) / (2 * step)
    if abs(ds) < _GRADIENT_FLOOR and abs(di) < _GRADIENT_FLOOR:
        raise DegenerateGradientError(
            f"mismatch gradient vanishes at ({omega_s:.6e}, {omega_i:.6e}) rad/s"
        )
    return float(np.degrees(np.arctan2(-ds, di)) % 180.0)


def contour_angle(fiber: FiberSpec, point: PhaseMatchPoint, step: float = ANGLE_STEP,
                  coordinates: str = "frequency") -> float:
    """Orientation of the dbeta = 0 contour through ``point`` relative to the signal axis.

    ``coordinates="wavelength"`` measures it in the (lambda_s, lambda_i) plane instead.
    """
    ws0, wi0 = point.signal_omega, point.idler_omega

    def mismatch(ws, wi):
        return phase_mismatch(fiber, None, ws, wi)

    if coordinates == "frequency":
        return level_set_angle(mismatch, ws0, wi0, step)
    if coordinates != "wavelength":
        raise ConfigError(f"unknown coordinates {coordinates!r}")
    # chain rule: d/d(lambda) = -(omega / lambda) d/d(omega)
    ds = (mismatch(ws0 + step, wi0) - mismatch(ws0 - step, wi0)) / (2 * step)
    di = (mismatch(ws0, wi0 + step) - mismatch(ws0, wi0 - step)) / (2 * step)
    ds_lam = -ds * ws0 / point.signal_wavelength
    di_lam = -di * wi0 / point.idler_wavelength
    return level_set_angle(lambda x, y: ds_lam * x + di_lam * y, 0.0, 0.0, 1.0)
