# jointspectrum.py
"""Joint spectral amplitude of the pair source, Schmidt analysis and the purity
landscape over fiber length and pump bandwidth.

Frequency axes are angular frequencies (rad/s). Spectra built from measured
SET scans carry wavelength axes (nm) instead; ``JointSpectrum.unit`` says which.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.typing import ArrayLike, NDArray
from scipy.constants import c as C_LIGHT

import artifacts
from errors import ConfigError, DataError, DegenerateInputError, GridError, PhotonSourceError
from fiber_model import FiberSpec
from phasematch import (
    PhaseMatchPoint,
    PumpSpec,
    omega_to_wavelength,
    phase_mismatch,
    phasematching_values,
    solve_contour,
    wavelength_to_omega,
)

log = logging.getLogger(__name__)

MIN_GRID_POINTS = 16
PUMP_COVERAGE_SIGMAS = 4.0
_UNIFORM_RTOL = 1e-6
_FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


class SpectrumKind(str, Enum):
    AMPLITUDE = "amplitude"
    INTENSITY = "intensity"


class BandwidthKind(str, Enum):
    FWHM_INTENSITY_NM = "fwhm_intensity_nm"
    SIGMA_FIELD_NM = "sigma_field_nm"


def _is_uniform(axis: NDArray) -> bool:
    steps = np.diff(axis)
    return bool(np.allclose(steps, steps[0], rtol=_UNIFORM_RTOL, atol=0))


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform signal / idler angular-frequency axes.

    ``clipped`` marks an auto grid that was cut back to the model window.
    """

    signal_axis: NDArray
    idler_axis: NDArray
    clipped: bool = False

    def __post_init__(self):
        for name in ("signal_axis", "idler_axis"):
            axis = np.asarray(getattr(self, name), dtype=float)
            if axis.ndim != 1 or axis.size < MIN_GRID_POINTS:
                raise GridError(f"{name} needs at least {MIN_GRID_POINTS} points")
            if np.any(np.diff(axis) <= 0):
                raise GridError(f"{name} must be strictly increasing")
            if not _is_uniform(axis):
                raise GridError(f"{name} must be uniform")
            object.__setattr__(self, name, axis)

    @classmethod
    def from_wavelength_spans(cls, signal_nm: tuple[float, float], idler_nm: tuple[float, float],
                              n_s: int = 256, n_i: int | None = None) -> SpectralGrid:
        """Grid uniform in frequency spanning the given wavelength windows."""
        n_i = n_s if n_i is None else n_i
        ws = np.sort(wavelength_to_omega(np.asarray(signal_nm, dtype=float) * 1e-9))
        wi = np.sort(wavelength_to_omega(np.asarray(idler_nm, dtype=float) * 1e-9))
        return cls(np.linspace(ws[0], ws[1], n_s), np.linspace(wi[0], wi[1], n_i))

    @property
    def n_s(self) -> int:
        return self.signal_axis.size

    @property
    def n_i(self) -> int:
        return self.idler_axis.size

    @property
    def d_signal(self) -> float:
        return float(self.signal_axis[1] - self.signal_axis[0])

    @property
    def d_idler(self) -> float:
        return float(self.idler_axis[1] - self.idler_axis[0])


@dataclass(frozen=True)
class JointSpectrum:
    """Amplitude (complex) or intensity (real, >= 0) on signal x idler axes."""

    signal_axis: NDArray
    idler_axis: NDArray
    values: NDArray
    kind: SpectrumKind = SpectrumKind.AMPLITUDE
    unit: str = "rad/s"
    flat_phase: bool = False
    label: str = ""

    def __post_init__(self):
        s = np.asarray(self.signal_axis, dtype=float)
        i = np.asarray(self.idler_axis, dtype=float)
        kind = SpectrumKind(self.kind)
        values = np.asarray(self.values)
        if values.shape != (s.size, i.size):
            raise GridError(f"values shape {values.shape} does not match axes ({s.size}, {i.size})")
        if np.any(np.diff(s) <= 0) or np.any(np.diff(i) <= 0):
            raise GridError("spectrum axes must be strictly increasing")
        if kind is SpectrumKind.INTENSITY:
            values = np.real(values).astype(float)
            if np.any(values < 0):
                raise DataError("intensity spectrum has negative entries")
        else:
            values = values.astype(complex)
        object.__setattr__(self, "signal_axis", s)
        object.__setattr__(self, "idler_axis", i)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", kind)

    @property
    def grid(self) -> SpectralGrid:
        if self.unit != "rad/s":
            raise GridError(f"spectrum axes are in {self.unit}, not rad/s")
        return SpectralGrid(self.signal_axis, self.idler_axis)

    @property
    def intensity(self) -> NDArray:
        if self.kind is SpectrumKind.INTENSITY:
            return self.values
        return np.abs(self.values) ** 2

    def cell_weights(self) -> NDArray:
        """Riemann cell areas; a scalar-valued array on uniform axes."""
        ws = _axis_weights(self.signal_axis)
        wi = _axis_weights(self.idler_axis)
        return ws[:, None] * wi[None, :]

    def integral(self) -> float:
        return float(np.sum(self.intensity * self.cell_weights()))

    def with_values(self, values, **changes) -> JointSpectrum:
        kwargs = dict(signal_axis=self.signal_axis, idler_axis=self.idler_axis, values=values,
                      kind=self.kind, unit=self.unit, flat_phase=self.flat_phase, label=self.label)
        kwargs.update(changes)
        return JointSpectrum(**kwargs)


def _axis_weights(axis: NDArray) -> NDArray:
    if axis.size < 2:
        return np.ones_like(axis)
    if _is_uniform(axis):
        return np.full(axis.size, axis[1] - axis[0])
    return np.gradient(axis)


@dataclass(frozen=True)
class SchmidtResult:
    singular_values: NDArray  # normalized, sum of squares 1
    weights: NDArray  # lambda_k
    schmidt_number: float
    purity: float
    upper_bound: bool = False

    def mode_count(self, threshold: float = 1e-10) -> int:
        return int(np.count_nonzero(self.weights > threshold))


@dataclass(frozen=True)
class GridPolicy:
    """Auto-grid rule: cover ``pump_sigmas`` pump widths and ``sinc_widths`` sinc
    main-lobe widths around the phase-matched point."""

    points: int = 256
    pump_sigmas: float = 6.0
    sinc_widths: float = 4.0

    def __post_init__(self):
        if self.points < MIN_GRID_POINTS:
            raise ConfigError(f"grid needs at least {MIN_GRID_POINTS} points per axis", flag="--grid")


@dataclass(frozen=True)
class GridAnchor:
    """Phase-matched center and mismatch gradient, shared by every sweep cell."""

    signal_omega: float
    idler_omega: float
    d_signal: float  # d(dbeta)/d(omega_s), s/m
    d_idler: float


@dataclass
class PuritySweep:
    lengths: NDArray  # m
    bandwidths: NDArray  # nm
    purity: NDArray  # (n_lengths, n_bandwidths), NaN where a cell failed
    bandwidth_kind: BandwidthKind = BandwidthKind.SIGMA_FIELD_NM
    failures: dict = field(default_factory=dict)
    clipped: NDArray | None = None  # True where the cell grid hit the model window

    def __post_init__(self):
        if self.clipped is None:
            self.clipped = np.zeros(self.purity.shape, dtype=bool)

    def argmax(self) -> tuple[float, float, float]:
        if np.all(np.isnan(self.purity)):
            raise DegenerateInputError("every sweep cell failed")
        i, j = np.unravel_index(np.nanargmax(self.purity), self.purity.shape)
        return float(self.lengths[i]), float(self.bandwidths[j]), float(self.purity[i, j])

    def to_frame(self) -> pd.DataFrame:
        """Matrix with lengths (cm) as rows and bandwidths (nm) as columns."""
        df = pd.DataFrame(self.purity,
                          index=pd.Index(np.round(self.lengths * 100, 9), name="length_cm"),
                          columns=[f"{b:.9g}" for b in self.bandwidths])
        df.columns.name = f"{self.bandwidth_kind.value}"
        return df

    def cells_frame(self) -> pd.DataFrame:
        """One row per cell: length_cm, bandwidth_nm, purity, clipped."""
        n_l, n_b = self.purity.shape
        return pd.DataFrame({
            "length_cm": np.repeat(np.round(self.lengths * 100, 9), n_b),
            "bandwidth_nm": np.tile(self.bandwidths, n_l),
            "purity": self.purity.ravel(),
            "clipped": self.clipped.ravel().astype(bool),
        })


def bandwidth_convert(value: float, kind: BandwidthKind | str, at_wavelength: float) -> float:
    """Pump width in nm (``kind``) at ``at_wavelength`` (m) to sigma_p in rad/s."""
    kind = BandwidthKind(kind)
    if not value > 0:
        raise ConfigError(f"bandwidth must be > 0, got {value}", flag="--bandwidth")
    sigma_nm = value if kind is BandwidthKind.SIGMA_FIELD_NM else value / _FWHM_PER_SIGMA
    return 2 * np.pi * C_LIGHT * sigma_nm * 1e-9 / at_wavelength**2


def sigma_to_bandwidth(sigma_p: float, kind: BandwidthKind | str, at_wavelength: float) -> float:
    """Inverse of bandwidth_convert, in nm."""
    kind = BandwidthKind(kind)
    sigma_nm = sigma_p * at_wavelength**2 / (2 * np.pi * C_LIGHT) * 1e9
    return sigma_nm if kind is BandwidthKind.SIGMA_FIELD_NM else sigma_nm * _FWHM_PER_SIGMA


def _pump_values(pump: PumpSpec, omega_s: NDArray, omega_i: NDArray) -> NDArray:
    detuning = omega_s + omega_i - 2 * pump.center_omega
    return np.exp(-detuning**2 / (4 * pump.sigma_p**2))


def pump_envelope(pump: PumpSpec, grid: SpectralGrid) -> JointSpectrum:
    """exp(-(omega_s + omega_i - 2 omega_p)**2 / (4 sigma_p**2)) on the grid."""
    two_wp = 2 * pump.center_omega
    lo = grid.signal_axis[0] + grid.idler_axis[0] - two_wp
    hi = grid.signal_axis[-1] + grid.idler_axis[-1] - two_wp
    reach = PUMP_COVERAGE_SIGMAS * pump.sigma_p
    if lo > -reach or hi < reach:
        raise GridError(
            f"grid covers omega_s + omega_i - 2 omega_p in [{lo:.3e}, {hi:.3e}] rad/s, "
            f"needs +/-{reach:.3e}"
        )
    values = _pump_values(pump, grid.signal_axis[:, None], grid.idler_axis[None, :])
    return JointSpectrum(grid.signal_axis, grid.idler_axis, values.astype(complex),
                         kind=SpectrumKind.AMPLITUDE, label="pump envelope")


def normalize(js: JointSpectrum) -> JointSpectrum:
    total = js.integral()
    if not total > 0:
        raise DegenerateInputError("cannot normalize an all-zero spectrum")
    if js.kind is SpectrumKind.INTENSITY:
        return js.with_values(js.values / total)
    return js.with_values(js.values / np.sqrt(total))


def jsa_values(fiber: FiberSpec | Sequence[FiberSpec], pump: PumpSpec, omega_s: ArrayLike,
               omega_i: ArrayLike, include_nonlinear_shift: bool = False,
               use_pump_envelope: bool = True) -> NDArray:
    """Unnormalized alpha * phi on broadcast frequency arrays."""
    ws = np.asarray(omega_s, dtype=float)
    wi = np.asarray(omega_i, dtype=float)
    phi = phasematching_values(fiber, pump, ws, wi, include_nonlinear_shift)
    if use_pump_envelope:
        return _pump_values(pump, ws, wi) * phi
    return phi


def build_jsa(fiber: FiberSpec | Sequence[FiberSpec], pump: PumpSpec, grid: SpectralGrid,
              include_nonlinear_shift: bool = False, use_pump_envelope: bool = True) -> JointSpectrum:
    """Pump envelope times phase-matching function, normalized to unit integral of |f|**2.

    ``fiber`` may be a list of spliced segments.
    """
    if use_pump_envelope:
        alpha = pump_envelope(pump, grid).values
    else:
        alpha = 1.0
    phi = phasematching_values(fiber, pump, grid.signal_axis[:, None], grid.idler_axis[None, :],
                               include_nonlinear_shift)
    js = JointSpectrum(grid.signal_axis, grid.idler_axis, alpha * phi, kind=SpectrumKind.AMPLITUDE,
                       label="model JSA")
    return normalize(js)


def to_intensity(js: JointSpectrum) -> JointSpectrum:
    if js.kind is SpectrumKind.INTENSITY:
        return js
    return js.with_values(np.abs(js.values) ** 2, kind=SpectrumKind.INTENSITY)


def schmidt_analyze(js: JointSpectrum) -> SchmidtResult:
    """Schmidt weights from the SVD of f * sqrt(d_omega_s d_omega_i)."""
    if js.kind is not SpectrumKind.AMPLITUDE:
        raise DataError("schmidt_analyze needs an amplitude; convert intensities with jsa_from_jsi")
    weighted = js.values * np.sqrt(js.cell_weights())
    if not np.any(np.abs(weighted) > 0):
        raise DegenerateInputError("joint spectrum is identically zero")
    s = np.linalg.svd(weighted, compute_uv=False)
    lam = s**2 / np.sum(s**2)
    purity = float(np.sum(lam**2))
    return SchmidtResult(
        singular_values=s / np.sqrt(np.sum(s**2)),
        weights=lam,
        schmidt_number=1.0 / purity,
        purity=purity,
        upper_bound=js.flat_phase,
    )


def jsa_from_jsi(js: JointSpectrum) -> JointSpectrum:
    """Flat-phase amplitude estimate sqrt(JSI); purities from it are upper bounds."""
    values = np.real(np.asarray(js.values)) if js.kind is SpectrumKind.INTENSITY else js.intensity
    if np.any(values < 0):
        raise DataError("JSI has negative entries; clamp or subtract background first")
    out = js.with_values(np.sqrt(values).astype(complex), kind=SpectrumKind.AMPLITUDE,
                         flat_phase=True, label=(js.label + " flat-phase estimate").strip())
    return normalize(out)


def marginal_spectra(js: JointSpectrum) -> tuple[NDArray, NDArray]:
    """Signal and idler marginal densities (integrated over the other axis)."""
    inten = js.intensity
    signal = np.sum(inten * _axis_weights(js.idler_axis)[None, :], axis=1)
    idler = np.sum(inten * _axis_weights(js.signal_axis)[:, None], axis=0)
    return signal, idler


def principal_axis_angle(js: JointSpectrum, level: float = 0.5) -> float:
    """Orientation (deg, [0, 180)) of the long axis of the JSI above ``level`` x peak,
    from intensity-weighted second moments, axes in the spectrum's own units."""
    inten = js.intensity
    mask = inten >= level * inten.max()
    s, i = np.meshgrid(js.signal_axis, js.idler_axis, indexing="ij")
    w = inten[mask]
    xs, xi = s[mask], i[mask]
    xs = xs - np.average(xs, weights=w)
    xi = xi - np.average(xi, weights=w)
    cov = np.array([
        [np.average(xs * xs, weights=w), np.average(xs * xi, weights=w)],
        [np.average(xs * xi, weights=w), np.average(xi * xi, weights=w)],
    ])
    evals, evecs = np.linalg.eigh(cov)
    v = evecs[:, np.argmax(evals)]
    return float(np.degrees(np.arctan2(v[1], v[0])) % 180.0)


def grid_anchor(fiber: FiberSpec, pump: PumpSpec, step: float = 1e11) -> GridAnchor:
    """Phase-matched pair for the pump center plus the local mismatch gradient."""
    result = solve_contour(fiber, [pump.center_wavelength])
    candidates = [p for p in result if not p.near_degenerate] or list(result)
    if not candidates:
        raise GridError(f"no phase matching for pump {pump.center_wavelength * 1e9:.2f} nm")
    point: PhaseMatchPoint = candidates[0]
    ws, wi = point.signal_omega, point.idler_omega
    ds = (phase_mismatch(fiber, None, ws + step, wi) - phase_mismatch(fiber, None, ws - step, wi)) / (2 * step)
    di = (phase_mismatch(fiber, None, ws, wi + step) - phase_mismatch(fiber, None, ws, wi - step)) / (2 * step)
    if abs(di - ds) < 1e-20:
        raise GridError("phase-matching contour parallel to the pump ridge; cannot size the grid")
    return GridAnchor(ws, wi, float(ds), float(di))


def auto_grid(fiber: FiberSpec, pump: PumpSpec, policy: GridPolicy = GridPolicy(),
              anchor: GridAnchor | None = None) -> SpectralGrid:
    """Grid around the phase-matched point wide enough for both factors of the JSA.

    Near the center dbeta ~ a ds + b di and the pump variable is u = ds + di; the
    box covering |u| <= pump_sigmas sigma_p and |dbeta| <= sinc_widths * 4 pi / L
    has half-widths (|b| U + V) / |b - a| (signal) and (|a| U + V) / |b - a| (idler).
    """
    anchor = anchor or grid_anchor(fiber, pump)
    a, b = anchor.d_signal, anchor.d_idler
    u = policy.pump_sigmas * pump.sigma_p
    v = policy.sinc_widths * 4 * np.pi / fiber.length
    half_s = (abs(b) * u + v) / abs(b - a)
    half_i = (abs(a) * u + v) / abs(b - a)

    lo, hi = fiber.window
    w_min, w_max = float(wavelength_to_omega(hi)), float(wavelength_to_omega(lo))
    s_lo, s_hi = anchor.signal_omega - half_s, anchor.signal_omega + half_s
    i_lo, i_hi = anchor.idler_omega - half_i, anchor.idler_omega + half_i
    bounds = (max(s_lo, w_min), min(s_hi, w_max), max(i_lo, w_min), min(i_hi, w_max))
    clipped = bounds != (s_lo, s_hi, i_lo, i_hi)
    if clipped:
        log.warning("auto grid clipped to the model window (L=%.3g cm, sigma_p=%.3e rad/s)",
                    fiber.length * 100, pump.sigma_p)
    s_lo, s_hi, i_lo, i_hi = bounds
    grid = SpectralGrid(np.linspace(s_lo, s_hi, policy.points), np.linspace(i_lo, i_hi, policy.points),
                        clipped=clipped)
    log.debug("auto grid: signal %.2f-%.2f nm, idler %.2f-%.2f nm, %d points",
              omega_to_wavelength(s_hi) * 1e9, omega_to_wavelength(s_lo) * 1e9,
              omega_to_wavelength(i_hi) * 1e9, omega_to_wavelength(i_lo) * 1e9, policy.points)
    return grid


def _sweep_cell(fiber: FiberSpec, pump: PumpSpec, length: float, bandwidth: float,
                kind: BandwidthKind, policy: GridPolicy, anchor: GridAnchor,
                include_nonlinear_shift: bool) -> tuple[float, bool, str | None]:
    try:
        cell_fiber = fiber.with_length(length)
        sigma_p = bandwidth_convert(bandwidth, kind, pump.center_wavelength)
        cell_pump = PumpSpec(pump.center_wavelength, sigma_p, pump.peak_power, pump.rep_rate)
        grid = auto_grid(cell_fiber, cell_pump, policy, anchor)
        jsa = build_jsa(cell_fiber, cell_pump, grid, include_nonlinear_shift)
        return schmidt_analyze(jsa).purity, grid.clipped, None
    except PhotonSourceError as exc:
        return float("nan"), False, f"{type(exc).__name__}: {exc}"


def purity_sweep(fiber: FiberSpec, pump: PumpSpec, lengths: ArrayLike, bandwidths: ArrayLike,
                 policy: GridPolicy = GridPolicy(points=128),
                 bandwidth_kind: BandwidthKind | str = BandwidthKind.SIGMA_FIELD_NM,
                 include_nonlinear_shift: bool = False, n_jobs: int = 1) -> PuritySweep:
    """Purity for every (length [m], bandwidth [nm]) pair; failed cells are NaN."""
    lengths = np.asarray(lengths, dtype=float).ravel()
    bandwidths = np.asarray(bandwidths, dtype=float).ravel()
    if lengths.size == 0:
        raise ConfigError("empty length axis", flag="--sweep-lengths")
    if bandwidths.size == 0:
        raise ConfigError("empty bandwidth axis", flag="--sweep-bandwidths")
    if np.any(lengths <= 0):
        raise ConfigError("sweep lengths must be > 0", flag="--sweep-lengths")
    kind = BandwidthKind(bandwidth_kind)
    anchor = grid_anchor(fiber, pump)

    cells = [(i, j) for i in range(lengths.size) for j in range(bandwidths.size)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_sweep_cell)(fiber, pump, lengths[i], bandwidths[j], kind, policy, anchor,
                             include_nonlinear_shift)
        for i, j in cells
    )
    purity = np.full((lengths.size, bandwidths.size), np.nan)
    clipped = np.zeros(purity.shape, dtype=bool)
    failures = {}
    for (i, j), (value, cut, err) in zip(cells, results):
        purity[i, j] = value
        clipped[i, j] = cut
        if err:
            failures[(float(lengths[i]), float(bandwidths[j]))] = err
            log.warning("sweep cell L=%.3g cm, bw=%.3g nm failed: %s", lengths[i] * 100, bandwidths[j], err)
    log.info("purity sweep: %d cells, %d failed, %d on clipped grids", len(cells), len(failures),
             int(clipped.sum()))
    return PuritySweep(lengths, bandwidths, purity, kind, failures, clipped)


def spectrum_frame(js: JointSpectrum) -> pd.DataFrame:
    """Long-form table: signal_nm, idler_nm, value (+ phase for amplitudes)."""
    if js.unit == "rad/s":
        s_nm = omega_to_wavelength(js.signal_axis) * 1e9
        i_nm = omega_to_wavelength(js.idler_axis) * 1e9
    else:
        s_nm, i_nm = js.signal_axis, js.idler_axis
    ss, ii = np.meshgrid(s_nm, i_nm, indexing="ij")
    data = {"signal_nm": ss.ravel(), "idler_nm": ii.ravel()}
    if js.kind is SpectrumKind.INTENSITY:
        data["value"] = js.values.ravel()
    else:
        data["value"] = np.abs(js.values).ravel()
        data["phase"] = np.angle(js.values).ravel()
    return pd.DataFrame(data)


def write_joint_spectrum(js: JointSpectrum, path) -> tuple[Path, Path]:
    """CSV payload plus a JSON header (``<stem>.json``) holding the exact axes."""
    path = Path(path)
    header = {
        "kind": js.kind.value,
        "unit": js.unit,
        "flat_phase": js.flat_phase,
        "label": js.label,
        "shape": list(js.values.shape),
        "signal_axis": js.signal_axis.tolist(),
        "idler_axis": js.idler_axis.tolist(),
        "payload": path.name,
    }
    csv_path = artifacts.write_csv(spectrum_frame(js), path)
    json_path = artifacts.write_json(header, path.with_suffix(".json"))
    return csv_path, json_path


def read_joint_spectrum(header_path) -> JointSpectrum:
    header_path = Path(header_path)
    header = json.loads(header_path.read_text(encoding="utf-8"))
    df = pd.read_csv(header_path.parent / header["payload"])
    shape = tuple(header["shape"])
    if len(df) != shape[0] * shape[1]:
        raise DataError(f"{header['payload']}: {len(df)} rows, header says {shape}")
    values = df["value"].to_numpy(float).reshape(shape)
    if header["kind"] == SpectrumKind.AMPLITUDE.value:
        values = values * np.exp(1j * df["phase"].to_numpy(float).reshape(shape))
    return JointSpectrum(np.asarray(header["signal_axis"]), np.asarray(header["idler_axis"]), values,
                         kind=header["kind"], unit=header["unit"], flat_phase=header["flat_phase"],
                         label=header.get("label", ""))
