# setdata.py
"""Stimulated-emission-tomography (SET) scans: ingest, idler-axis calibration,
common-mesh interpolation, flat-phase overlaps and inhomogeneity checks.

Scan directory layout::

    manifest.json   {"fiber_id": str, "length_m": float|null, "pump_nm": float|null,
                     "rows": [{"setpoint_nm": float, "measured_nm": float|null,
                               "trace": "row_000.csv"}, ...]}
    row_000.csv     wavelength_nm,power   (one OSA trace of the stimulated signal)

Spectra produced here use wavelength axes in nm and intensity values.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

import artifacts
from errors import (
    CalibrationError,
    DataError,
    DegenerateInputError,
    IncompatibleScansError,
    MeshMismatchError,
)
from fiber_model import FiberSpec
from jointspectrum import JointSpectrum, SpectrumKind, jsa_values
from phasematch import PumpSpec, wavelength_to_omega

log = logging.getLogger(__name__)

MIN_ROWS = 8
FEATURE_LEVEL = 0.2
OVERLAP_THRESHOLD = 0.85
BACKGROUND_QUANTILE = 0.1
OVERLAP_NOTE = "phase-blind upper bound (flat-phase JSA estimates)"


@dataclass(frozen=True)
class SetRow:
    seed_setpoint_nm: float
    seed_measured_nm: float | None
    signal_wavelength_nm: NDArray
    signal_power: NDArray

    def __post_init__(self):
        lam = np.asarray(self.signal_wavelength_nm, dtype=float).ravel()
        power = np.asarray(self.signal_power, dtype=float).ravel()
        if lam.size == 0 or lam.shape != power.shape:
            raise DataError(f"row {self.seed_setpoint_nm} nm: empty or ragged signal spectrum")
        measured = self.seed_measured_nm
        if measured is not None:
            measured = float(measured)
            if np.isnan(measured):
                measured = None
            elif not np.isfinite(measured):
                raise DataError(f"row {self.seed_setpoint_nm} nm: non-finite measured seed wavelength")
        order = np.argsort(lam, kind="stable")
        object.__setattr__(self, "seed_setpoint_nm", float(self.seed_setpoint_nm))
        object.__setattr__(self, "seed_measured_nm", measured)
        object.__setattr__(self, "signal_wavelength_nm", lam[order])
        object.__setattr__(self, "signal_power", power[order])


@dataclass(frozen=True)
class SetScan:
    rows: tuple[SetRow, ...]
    fiber_id: str = "unknown"
    length_m: float | None = None
    pump_nm: float | None = None

    def __post_init__(self):
        rows = tuple(self.rows)
        if len(rows) < MIN_ROWS:
            raise DataError(f"SET scan {self.fiber_id!r} has {len(rows)} rows, need >= {MIN_ROWS}")
        object.__setattr__(self, "rows", rows)

    @property
    def metadata(self) -> dict:
        return {"fiber_id": self.fiber_id, "length_m": self.length_m, "pump_nm": self.pump_nm}


@dataclass(frozen=True)
class CommonMesh:
    signal_axis: NDArray  # nm
    idler_axis: NDArray  # nm

    def __post_init__(self):
        for name in ("signal_axis", "idler_axis"):
            axis = np.asarray(getattr(self, name), dtype=float)
            steps = np.diff(axis)
            if axis.size < 2 or np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6):
                raise IncompatibleScansError(f"common mesh {name} must be uniform and increasing")
            object.__setattr__(self, name, axis)


@dataclass(frozen=True)
class OverlapReport:
    labels: tuple[str, ...]
    pairwise: NDArray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.pairwise, index=list(self.labels), columns=list(self.labels))

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "pairwise": self.pairwise.tolist(), "note": OVERLAP_NOTE}

    def to_table(self) -> str:
        return self.to_frame().to_string(float_format=lambda v: f"{v:.4f}") + f"\n({OVERLAP_NOTE})"


@dataclass(frozen=True)
class InhomogeneityReport:
    labels: tuple[str, ...]
    features: tuple[int, ...]
    inhomogeneous: tuple[bool, ...]
    overlaps: OverlapReport | None = None
    below_threshold: tuple[tuple[str, str, float], ...] = field(default_factory=tuple)
    threshold: float = OVERLAP_THRESHOLD

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "features": list(self.features),
            "inhomogeneous": list(self.inhomogeneous),
            "threshold": self.threshold,
            "below_threshold": [list(p) for p in self.below_threshold],
            "overlaps": self.overlaps.to_dict() if self.overlaps else None,
        }


def load_set_scan(directory) -> SetScan:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if "rows" not in manifest:
        raise DataError(f"{directory}/manifest.json has no 'rows'")
    rows = []
    for entry in manifest["rows"]:
        if "trace" not in entry or "setpoint_nm" not in entry:
            raise DataError(f"{directory}/manifest.json: row without 'trace' or 'setpoint_nm': {entry}")
        trace = pd.read_csv(directory / entry["trace"])
        missing = {"wavelength_nm", "power"} - set(trace.columns)
        if missing:
            raise DataError(f"{entry['trace']}: missing columns {sorted(missing)}")
        rows.append(SetRow(entry["setpoint_nm"], entry.get("measured_nm"),
                           trace["wavelength_nm"].to_numpy(float), trace["power"].to_numpy(float)))
    scan = SetScan(tuple(rows), manifest.get("fiber_id", directory.name), manifest.get("length_m"),
                   manifest.get("pump_nm"))
    log.info("Loaded SET scan %s: %d rows", scan.fiber_id, len(scan.rows))
    return scan


def write_set_scan(scan: SetScan, directory) -> Path:
    directory = Path(directory)
    entries = []
    for k, row in enumerate(scan.rows):
        name = f"row_{k:03d}.csv"
        artifacts.write_csv(pd.DataFrame({"wavelength_nm": row.signal_wavelength_nm,
                                          "power": row.signal_power}), directory / name)
        entries.append({"setpoint_nm": row.seed_setpoint_nm, "measured_nm": row.seed_measured_nm,
                        "trace": name})
    manifest = {**scan.metadata, "rows": entries}
    return artifacts.write_json(manifest, directory / "manifest.json")


def apply_calibration(scan: SetScan) -> SetScan:
    """Scan whose setpoints are the measured seed wavelengths, sorted, with
    rows sharing a measured wavelength averaged."""
    missing = [r.seed_setpoint_nm for r in scan.rows if r.seed_measured_nm is None]
    if missing:
        raise CalibrationError(
            f"{scan.fiber_id}: no measured seed wavelength for setpoints {missing}", setpoints=missing
        )
    measured = np.array([r.seed_measured_nm for r in scan.rows])
    order = np.argsort(measured, kind="stable")
    merged = []
    for value in np.unique(measured):
        group = [scan.rows[k] for k in order if measured[k] == value]
        axis = group[0].signal_wavelength_nm
        power = np.mean([np.interp(axis, r.signal_wavelength_nm, r.signal_power) for r in group], axis=0)
        merged.append(SetRow(value, value, axis, power))
    if len(merged) < len(scan.rows):
        log.info("%s: merged %d duplicate seed rows", scan.fiber_id, len(scan.rows) - len(merged))
    return SetScan(tuple(merged), scan.fiber_id, scan.length_m, scan.pump_nm)


def calibrate_scan(scan: SetScan) -> JointSpectrum:
    """Intensity JSI with the idler axis set to the measured seed wavelengths."""
    cal = apply_calibration(scan)
    signal_axis = cal.rows[0].signal_wavelength_nm
    columns = [np.interp(signal_axis, r.signal_wavelength_nm, r.signal_power) for r in cal.rows]
    values = np.stack(columns, axis=1)
    negative = int(np.count_nonzero(values < 0))
    if negative:
        log.warning("%s: clamped %d negative trace samples to zero", scan.fiber_id, negative)
        values = np.clip(values, 0.0, None)
    idler_axis = np.array([r.seed_measured_nm for r in cal.rows])
    return JointSpectrum(signal_axis, idler_axis, values, kind=SpectrumKind.INTENSITY, unit="nm",
                         flat_phase=True, label=scan.fiber_id)


def subtract_background(js: JointSpectrum, quantile: float = BACKGROUND_QUANTILE) -> JointSpectrum:
    """Remove a constant floor (median of the lowest decile), clamped at zero."""
    inten = js.intensity
    cut = np.quantile(inten, quantile)
    floor = float(np.median(inten[inten <= cut]))
    log.debug("%s: background floor %.4g", js.label, floor)
    return js.with_values(np.clip(inten - floor, 0.0, None), kind=SpectrumKind.INTENSITY)


def _uniform_axis(lo: float, hi: float, step: float) -> NDArray:
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    if n < 2:
        raise IncompatibleScansError(f"intersection [{lo:.4f}, {hi:.4f}] narrower than resolution {step}")
    return lo + step * np.arange(n)


def to_common_mesh(spectra: Sequence[JointSpectrum], resolution: float | tuple[float, float]
                   ) -> tuple[list[JointSpectrum], CommonMesh]:
    """Bilinear interpolation of every spectrum onto the intersection of their
    supports; each output is normalized to unit integrated intensity."""
    spectra = list(spectra)
    if not spectra:
        raise IncompatibleScansError("no spectra to mesh")
    units = {js.unit for js in spectra}
    if len(units) > 1:
        raise IncompatibleScansError(f"spectra mix axis units {sorted(units)}")
    res_s, res_i = (resolution, resolution) if np.isscalar(resolution) else resolution
    if not (res_s > 0 and res_i > 0):
        raise IncompatibleScansError("mesh resolution must be > 0")

    s_lo = max(js.signal_axis[0] for js in spectra)
    s_hi = min(js.signal_axis[-1] for js in spectra)
    i_lo = max(js.idler_axis[0] for js in spectra)
    i_hi = min(js.idler_axis[-1] for js in spectra)
    if s_hi <= s_lo or i_hi <= i_lo:
        raise IncompatibleScansError(
            f"scan supports do not intersect (signal {s_lo:.3f}-{s_hi:.3f}, idler {i_lo:.3f}-{i_hi:.3f})"
        )
    mesh = CommonMesh(_uniform_axis(s_lo, s_hi, res_s), _uniform_axis(i_lo, i_hi, res_i))
    ss, ii = np.meshgrid(mesh.signal_axis, mesh.idler_axis, indexing="ij")
    points = np.stack([ss.ravel(), ii.ravel()], axis=-1)

    out = []
    for js in spectra:
        interp = RegularGridInterpolator((js.signal_axis, js.idler_axis), js.intensity,
                                         method="linear", bounds_error=False, fill_value=None)
        values = np.clip(interp(points).reshape(ss.shape), 0.0, None)
        total = float(np.sum(values) * res_s * res_i)
        if not total > 0:
            raise DegenerateInputError(f"{js.label or 'spectrum'} is zero on the common mesh")
        out.append(JointSpectrum(mesh.signal_axis, mesh.idler_axis, values / total,
                                 kind=SpectrumKind.INTENSITY, unit=js.unit, flat_phase=True, label=js.label))
    log.info("common mesh: %d x %d nodes for %d spectra", ss.shape[0], ss.shape[1], len(out))
    return out, mesh


def _same_mesh(a: JointSpectrum, b: JointSpectrum) -> bool:
    return (a.unit == b.unit and a.signal_axis.shape == b.signal_axis.shape
            and a.idler_axis.shape == b.idler_axis.shape
            and np.allclose(a.signal_axis, b.signal_axis, rtol=1e-12, atol=0)
            and np.allclose(a.idler_axis, b.idler_axis, rtol=1e-12, atol=0))


def overlap(a: JointSpectrum, b: JointSpectrum) -> float:
    """Integral of sqrt(I_a) sqrt(I_b) with each sqrt(I) normalized to unit L2 norm."""
    if not _same_mesh(a, b):
        raise MeshMismatchError("overlap needs both spectra on the same mesh; use to_common_mesh")
    w = a.cell_weights()
    ia, ib = a.intensity, b.intensity
    na, nb = np.sum(ia * w), np.sum(ib * w)
    if not (na > 0 and nb > 0):
        raise DegenerateInputError("overlap of an all-zero spectrum")
    value = float(np.sum(np.sqrt(ia * ib) * w) / np.sqrt(na * nb))
    return min(1.0, max(0.0, value))


def overlap_report(spectra: Sequence[JointSpectrum], labels: Sequence[str] | None = None,
                   n_jobs: int = 1) -> OverlapReport:
    spectra = list(spectra)
    labels = tuple(labels or [js.label or f"scan{k}" for k, js in enumerate(spectra)])
    n = len(spectra)
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    values = Parallel(n_jobs=n_jobs)(delayed(overlap)(spectra[i], spectra[j]) for i, j in pairs)
    matrix = np.zeros((n, n))
    for (i, j), v in zip(pairs, values):
        matrix[i, j] = matrix[j, i] = v
    return OverlapReport(labels, matrix)


def count_features(js: JointSpectrum, level: float = FEATURE_LEVEL) -> int:
    """Connected regions (4-connectivity) of the JSI at or above ``level`` x peak."""
    inten = js.intensity
    peak = inten.max()
    if not peak > 0:
        return 0
    _, n = ndimage.label(inten >= level * peak)
    return int(n)


def _median_step(axis: NDArray) -> float:
    return float(np.median(np.diff(axis)))


def inhomogeneity_report(spectra: Sequence[JointSpectrum], threshold: float = OVERLAP_THRESHOLD,
                         feature_level: float = FEATURE_LEVEL, labels: Sequence[str] | None = None,
                         resolution: float | tuple[float, float] | None = None,
                         n_jobs: int = 1) -> InhomogeneityReport:
    """Feature count per spectrum and, for two or more, the pairwise overlap table."""
    spectra = list(spectra)
    labels = tuple(labels or [js.label or f"scan{k}" for k, js in enumerate(spectra)])
    features = tuple(count_features(js, feature_level) for js in spectra)
    flags = tuple(f > 1 for f in features)
    for label, f in zip(labels, features):
        log.info("%s: %d feature(s)%s", label, f, " -> inhomogeneous" if f > 1 else "")

    report = None
    below = ()
    if len(spectra) > 1:
        if all(_same_mesh(spectra[0], js) for js in spectra[1:]):
            meshed = spectra
        else:
            if resolution is None:
                resolution = (max(_median_step(js.signal_axis) for js in spectra),
                              max(_median_step(js.idler_axis) for js in spectra))
            meshed, _ = to_common_mesh(spectra, resolution)
        report = overlap_report(meshed, labels, n_jobs=n_jobs)
        below = tuple(
            (labels[i], labels[j], float(report.pairwise[i, j]))
            for i in range(len(spectra)) for j in range(i + 1, len(spectra))
            if report.pairwise[i, j] < threshold
        )
    return InhomogeneityReport(labels, features, flags, report, below, threshold)


def simulate_jsi(fiber: FiberSpec | Sequence[FiberSpec], pump: PumpSpec, signal_axis_nm: ArrayLike,
                 idler_axis_nm: ArrayLike, include_nonlinear_shift: bool = False,
                 label: str = "simulated") -> JointSpectrum:
    """Model JSI |alpha phi|**2 on wavelength axes (nm), peak scaled to 1."""
    s_nm = np.asarray(signal_axis_nm, dtype=float)
    i_nm = np.asarray(idler_axis_nm, dtype=float)
    ws = wavelength_to_omega(s_nm * 1e-9)
    wi = wavelength_to_omega(i_nm * 1e-9)
    inten = np.abs(jsa_values(fiber, pump, ws[:, None], wi[None, :], include_nonlinear_shift)) ** 2
    peak = inten.max()
    if peak > 0:
        inten = inten / peak
    return JointSpectrum(s_nm, i_nm, inten, kind=SpectrumKind.INTENSITY, unit="nm", label=label)


def simulate_set_scan(fiber: FiberSpec | Sequence[FiberSpec], pump: PumpSpec, setpoints_nm: ArrayLike,
                      signal_axis_nm: ArrayLike, drift_nm: float = 0.0, jitter_nm: float = 0.0,
                      background: float = 0.0, noise: float = 0.0, seed: int | None = None,
                      fiber_id: str = "simulated", include_nonlinear_shift: bool = False) -> SetScan:
    """Synthetic SET scan from the model JSI.

    The seed lands at setpoint + drift (+ Gaussian jitter) and the reference
    spectrometer records that true value; each row's trace is the model JSI
    column at the true seed wavelength, plus an optional floor and noise.
    """
    rng = np.random.default_rng(seed)
    setpoints = np.asarray(setpoints_nm, dtype=float)
    true_nm = setpoints + drift_nm
    if jitter_nm > 0:
        true_nm = true_nm + rng.normal(0.0, jitter_nm, size=setpoints.shape)
    s_nm = np.asarray(signal_axis_nm, dtype=float)
    ws = wavelength_to_omega(s_nm * 1e-9)
    wi = wavelength_to_omega(true_nm * 1e-9)
    inten = np.abs(jsa_values(fiber, pump, ws[:, None], wi[None, :], include_nonlinear_shift)) ** 2
    peak = inten.max()
    if peak > 0:
        inten = inten / peak
    inten = inten + background
    if noise > 0:
        inten = inten + rng.normal(0.0, noise, size=inten.shape)

    rows = tuple(SetRow(sp, tn, s_nm, inten[:, k]) for k, (sp, tn) in enumerate(zip(setpoints, true_nm)))
    segments = [fiber] if isinstance(fiber, FiberSpec) else list(fiber)
    return SetScan(rows, fiber_id, float(sum(s.length for s in segments)), pump.center_wavelength * 1e9)
