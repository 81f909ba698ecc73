# cli.py
"""Command-line entry point: ``python cli.py <subcommand> [options]``.

Every default can come from the environment (``XFWM_*``, a ``.env`` in the
working directory, or the dotenv file named by ``--config``); explicit flags win.
Logs go to stderr, the one-line run summary to stdout. On failure a JSON error
object is printed to stderr and the exit status says what went wrong:
2 configuration, 3 computation, 4 file system, 1 anything else.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from dotenv import load_dotenv

# load environment variables from .env early
load_dotenv()

import numpy as np
import pandas as pd

import artifacts
from errors import ConfigError, PhotonSourceError
from fiber_model import FiberSpec, beat_length, birefringence_from_fringes, load_fiber_profile, load_fringe_trace
from jointspectrum import (
    BandwidthKind,
    GridPolicy,
    auto_grid,
    build_jsa,
    bandwidth_convert,
    jsa_from_jsi,
    principal_axis_angle,
    purity_sweep,
    read_joint_spectrum,
    schmidt_analyze,
    to_intensity,
    write_joint_spectrum,
)
from phasematch import PumpSpec, contour_angle, contour_frame, solve_contour
from photonstats import SourceStatModel, calibrate_power_coefficient, power_sweep, stats_table
from setdata import (
    FEATURE_LEVEL,
    OVERLAP_THRESHOLD,
    calibrate_scan,
    count_features,
    inhomogeneity_report,
    load_set_scan,
    subtract_background,
)

log = logging.getLogger(__name__)

PROG = "xfwm"
SUBCOMMAND_HELP = {
    "contours": "Phase-matched signal/idler wavelengths vs pump",
    "jsa": "Joint spectral amplitude and Schmidt purity",
    "purity-sweep": "Purity over fiber length x pump bandwidth",
    "stats": "Monte Carlo counting statistics (CAR, g2)",
    "set-calibrate": "Calibrated JSI from one SET scan directory",
    "overlap": "Pairwise JSI overlaps and inhomogeneity flags",
    "fringes": "Birefringence from a crossed-polarizer fringe trace",
}
SUBCOMMANDS = tuple(SUBCOMMAND_HELP)
BANDWIDTH_KINDS = {
    "sigma": BandwidthKind.SIGMA_FIELD_NM,
    "fwhm": BandwidthKind.FWHM_INTENSITY_NM,
    BandwidthKind.SIGMA_FIELD_NM.value: BandwidthKind.SIGMA_FIELD_NM,
    BandwidthKind.FWHM_INTENSITY_NM.value: BandwidthKind.FWHM_INTENSITY_NM,
}
IO_ERRORS = (OSError, json.JSONDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises ConfigError instead of exiting on bad input.

    Help is rendered one entry per line with a fixed indent, so the text does not
    depend on the terminal width or the Python version.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._optionals.title = "options"

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")

    def format_help(self):
        usage = [a.metavar if isinstance(a, argparse._SubParsersAction) else _invocation(a, first_only=True)
                 for a in self._actions if a.required]
        lines = [" ".join(["usage:", self.prog, *usage, "[options]"]), ""]
        if self.description:
            lines += [self.description, ""]
        for group in self._action_groups:
            actions = [a for a in group._group_actions if a.help is not argparse.SUPPRESS]
            if not actions:
                continue
            lines.append(f"{group.title}:")
            for action in actions:
                if isinstance(action, argparse._SubParsersAction):
                    for choice in action._choices_actions:
                        lines += [f"  {choice.metavar}", f"      {choice.help}"]
                    continue
                lines.append(f"  {_invocation(action)}")
                if action.help:
                    lines.append(f"      {action.help}")
            lines.append("")
        return "\n".join(lines).rstrip("\n") + "\n"


def _value(action) -> str:
    if action.choices is not None:
        text = "{" + ",".join(str(c) for c in action.choices) + "}"
    else:
        text = action.metavar or action.dest.upper()
    return f"{text} [{text} ...]" if action.nargs == "+" else text


def _invocation(action, first_only=False) -> str:
    options = action.option_strings[:1] if first_only else action.option_strings
    if action.nargs == 0:
        return ", ".join(options)
    return ", ".join(f"{opt} {_value(action)}" for opt in options)


def _env(name, fallback, cast=str):
    raw = os.getenv(name, fallback)
    try:
        return cast(raw) if raw is not None else None
    except ValueError as exc:
        raise ConfigError(f"{name}={raw!r} is not a valid {cast.__name__}") from exc


def _env_flag(name) -> bool:
    return os.getenv(name, "").strip().lower() in ("1", "true", "yes", "on")


def _count(text) -> int:
    return int(float(text))


def parse_axis(text, flag) -> np.ndarray:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    text = (text or "").strip()
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if not step > 0:
                raise ConfigError(f"{flag}: step must be > 0", flag=flag)
            values = np.arange(start, stop + 0.5 * step, step)
        else:
            values = np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError as exc:
        raise ConfigError(f"{flag}: cannot parse {text!r} ({exc})", flag=flag) from exc
    if values.size == 0:
        raise ConfigError(f"{flag}: empty axis {text!r}", flag=flag)
    return np.round(values, 9)


def _common_parser() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", metavar="FILE",
                   help="Extra dotenv file whose XFWM_* keys override the environment")
    g.add_argument("--fiber-profile", "--fiber", dest="fiber_profile",
                   default=_env("XFWM_FIBER_PROFILE", "pm980xp"),
                   help="Fiber profile name or .env path (default from XFWM_FIBER_PROFILE env or pm980xp)")
    g.add_argument("--profile-dir", default=os.getenv("XFWM_PROFILE_DIR"),
                   help="Extra directory searched for <name>.env profiles")
    g.add_argument("--out-dir", default=_env("XFWM_OUT_DIR", "out"),
                   help="Output directory for CSV/JSON/SVG artifacts (default from XFWM_OUT_DIR env or out)")
    g.add_argument("--seed", type=int, default=_env("XFWM_SEED", "0", int),
                   help="Random seed for Monte Carlo runs (default from XFWM_SEED env or 0)")
    g.add_argument("--n-jobs", type=int, default=_env("XFWM_N_JOBS", "1", int),
                   help="Parallel workers for sweeps and simulations (default from XFWM_N_JOBS env or 1)")
    g.add_argument("--log-level", default=_env("XFWM_LOG_LEVEL", "INFO"),
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper,
                   help="Logging level (default from XFWM_LOG_LEVEL env or INFO)")
    g.add_argument("--no-plots", action="store_true", default=_env_flag("XFWM_NO_PLOTS"),
                   help="Do not write SVG plots")
    return p


def _pump_options(p):
    p.add_argument("--pump-nm", type=float, default=_env("XFWM_PUMP_NM", "1000", float),
                   help="Pump center wavelength in nm (default from XFWM_PUMP_NM env or 1000)")
    p.add_argument("--bandwidth", type=float, default=_env("XFWM_BANDWIDTH_NM", "2", float),
                   help="Pump bandwidth in nm (default from XFWM_BANDWIDTH_NM env or 2)")
    p.add_argument("--bandwidth-kind", choices=sorted(BANDWIDTH_KINDS),
                   default=_env("XFWM_BANDWIDTH_KIND", "sigma"),
                   help="sigma: field sigma; fwhm: intensity FWHM (default from XFWM_BANDWIDTH_KIND env or sigma)")
    p.add_argument("--include-nonlinear", action="store_true",
                   help="Add the self/cross-phase-modulation term (2/3) gamma P to the mismatch")
    p.add_argument("--peak-power-w", type=float, default=_env("XFWM_PEAK_POWER_W", "0", float),
                   help="Pump peak power in W for the nonlinear term")


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    p = _Parser(prog=PROG, description="Cross-polarized four-wave-mixing photon-pair source toolkit")
    sub = p.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", required=True)

    sp = sub.add_parser("contours", parents=[common], help=SUBCOMMAND_HELP["contours"],
                        description=SUBCOMMAND_HELP["contours"])
    sp.add_argument("--pump-range", default=_env("XFWM_PUMP_RANGE", "1000:1100:1"),
                    help="Pump wavelengths in nm, start:stop:step or a list (default 1000:1100:1)")
    sp.add_argument("--include-nonlinear", action="store_true",
                    help="Add the self/cross-phase-modulation term (2/3) gamma P to the mismatch")
    sp.add_argument("--peak-power-w", type=float, default=_env("XFWM_PEAK_POWER_W", "0", float),
                    help="Pump peak power in W for the nonlinear term")

    sp = sub.add_parser("jsa", parents=[common], help=SUBCOMMAND_HELP["jsa"],
                        description=SUBCOMMAND_HELP["jsa"])
    _pump_options(sp)
    sp.add_argument("--length-cm", type=float, help="Fiber length in cm (default: the profile's length)")
    sp.add_argument("--grid", type=int, default=_env("XFWM_GRID", "256", int),
                    help="Grid points per axis (default from XFWM_GRID env or 256)")

    sp = sub.add_parser("purity-sweep", parents=[common], help=SUBCOMMAND_HELP["purity-sweep"],
                        description=SUBCOMMAND_HELP["purity-sweep"])
    _pump_options(sp)
    sp.add_argument("--sweep-lengths", default=_env("XFWM_SWEEP_LENGTHS", "0.5:20:0.5"),
                    help="Fiber lengths in cm, start:stop:step or a list (default 0.5:20:0.5)")
    sp.add_argument("--sweep-bandwidths", default=_env("XFWM_SWEEP_BANDWIDTHS", "1:20:1"),
                    help="Pump bandwidths in nm, start:stop:step or a list (default 1:20:1)")
    sp.add_argument("--grid", type=int, default=_env("XFWM_SWEEP_GRID", "128", int),
                    help="Grid points per axis per cell (default from XFWM_SWEEP_GRID env or 128)")

    sp = sub.add_parser("stats", parents=[common], help=SUBCOMMAND_HELP["stats"],
                        description=SUBCOMMAND_HELP["stats"])
    modes = sp.add_mutually_exclusive_group()
    modes.add_argument("--k-modes", type=int, default=_env("XFWM_K_MODES", "1", int),
                       help="Number of equal-weight Schmidt modes (default 1)")
    modes.add_argument("--schmidt-weights", help="Comma-separated Schmidt weights (normalized)")
    drive = sp.add_mutually_exclusive_group()
    drive.add_argument("--mu", help="Mean pair numbers per pulse, list or start:stop:step")
    drive.add_argument("--power-mw", help="Average pump powers in mW, list or start:stop:step")
    sp.add_argument("--eta-s", type=float, default=_env("XFWM_ETA_S", "0.25", float),
                    help="Signal arm efficiency (default from XFWM_ETA_S env or 0.25)")
    sp.add_argument("--eta-i", type=float, default=_env("XFWM_ETA_I", "0.25", float),
                    help="Idler arm efficiency (default from XFWM_ETA_I env or 0.25)")
    sp.add_argument("--dark", type=float, default=_env("XFWM_DARK_PROBABILITY", "0", float),
                    help="Dark-count probability per detector per pulse")
    sp.add_argument("--pulses", type=_count, default=_env("XFWM_PULSES", "1e6", _count),
                    help="Pump pulses per point (default from XFWM_PULSES env or 1e6)")
    sp.add_argument("--partitions", type=int, default=8, help="Independent RNG streams per point")
    sp.add_argument("--rep-rate-mhz", type=float, default=_env("XFWM_REP_RATE_MHZ", "80", float),
                    help="Pump repetition rate in MHz")
    sp.add_argument("--emission", choices=["squeezed", "poissonian"], default="squeezed",
                    help="Per-mode pair-number distribution")
    sp.add_argument("--target-rate", type=float, default=_env("XFWM_TARGET_RATE", "30000", float),
                    help="Coincidence rate (1/s) at the reference power used by --power-mw")
    sp.add_argument("--reference-power-mw", type=float, default=_env("XFWM_REFERENCE_POWER_MW", "70", float),
                    help="Reference average power for the --power-mw calibration")

    sp = sub.add_parser("set-calibrate", parents=[common], help=SUBCOMMAND_HELP["set-calibrate"],
                        description=SUBCOMMAND_HELP["set-calibrate"])
    sp.add_argument("--scan", required=True, help="SET scan directory (manifest.json + traces)")
    sp.add_argument("--subtract-background", action="store_true", help="Remove the constant noise floor")
    sp.add_argument("--feature-level", type=float, default=FEATURE_LEVEL,
                    help="Feature threshold as a fraction of the peak (default 0.2)")

    sp = sub.add_parser("overlap", parents=[common], help=SUBCOMMAND_HELP["overlap"],
                        description=SUBCOMMAND_HELP["overlap"])
    sp.add_argument("--scans", nargs="+", required=True,
                    help="SET scan directories or joint-spectrum JSON headers (nm axes)")
    sp.add_argument("--resolution-nm", help="Common-mesh step in nm, one value or signal,idler")
    sp.add_argument("--threshold", type=float, default=_env("XFWM_OVERLAP_THRESHOLD", str(OVERLAP_THRESHOLD), float),
                    help="Overlaps below this are reported (default 0.85)")
    sp.add_argument("--feature-level", type=float, default=FEATURE_LEVEL,
                    help="Feature threshold as a fraction of the peak (default 0.2)")
    sp.add_argument("--subtract-background", action="store_true", help="Remove the constant noise floor")

    sp = sub.add_parser("fringes", parents=[common], help=SUBCOMMAND_HELP["fringes"],
                        description=SUBCOMMAND_HELP["fringes"])
    sp.add_argument("--trace", required=True, help="CSV with wavelength_nm,intensity columns")
    sp.add_argument("--length-cm", type=float, help="Length of the measured fiber in cm (default: the profile's)")
    return p


@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation. ``options`` holds the subcommand's own flags
    (pump, grid, sweep, statistics or scan parameters)."""

    subcommand: str
    fiber_profile: str
    out_dir: Path
    profile_dir: str | None = None
    seed: int = 0
    n_jobs: int = 1
    plots: bool = True
    options: dict = field(default_factory=dict)

    _COMMON = ("subcommand", "fiber_profile", "out_dir", "profile_dir", "seed", "n_jobs", "no_plots",
               "log_level", "config")

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if self.n_jobs == 0:
            raise ConfigError("--n-jobs must be nonzero", flag="--n-jobs")

    @classmethod
    def from_namespace(cls, args: argparse.Namespace) -> "RunConfig":
        ns = vars(args)
        return cls(
            subcommand=args.subcommand,
            fiber_profile=args.fiber_profile,
            out_dir=Path(args.out_dir),
            profile_dir=args.profile_dir,
            seed=args.seed,
            n_jobs=args.n_jobs,
            plots=not args.no_plots,
            options={k: v for k, v in ns.items() if k not in cls._COMMON},
        )


def _fiber(config: RunConfig, length_cm=None) -> FiberSpec:
    fiber = load_fiber_profile(config.fiber_profile, config.profile_dir)
    if length_cm is not None:
        if not length_cm > 0:
            raise ConfigError("--length-cm must be > 0", flag="--length-cm")
        fiber = fiber.with_length(length_cm * 1e-2)
    return fiber


def _pump(opts: dict) -> PumpSpec:
    center = opts["pump_nm"] * 1e-9
    if not opts["bandwidth"] > 0:
        raise ConfigError("--bandwidth must be > 0", flag="--bandwidth")
    sigma_p = bandwidth_convert(opts["bandwidth"], BANDWIDTH_KINDS[opts["bandwidth_kind"]], center)
    return PumpSpec(center, sigma_p, peak_power=opts["peak_power_w"])


def _plot(config: RunConfig, make_chart, path):
    if not config.plots:
        return None
    # imported lazily so runs without plots never touch altair
    import plots
    try:
        chart = make_chart(plots)
    except Exception as exc:
        log.warning("Skipping plot %s: %s", Path(path).name, exc)
        return None
    return plots.save_chart(chart, path)


def run_contours(config: RunConfig) -> str:
    opts = config.options
    fiber = _fiber(config)
    pumps = parse_axis(opts["pump_range"], "--pump-range")
    result = solve_contour(fiber, pumps * 1e-9, opts["include_nonlinear"], opts["peak_power_w"])
    frame = contour_frame(result)
    path = artifacts.write_csv(frame, config.out_dir / "contours.csv")
    _plot(config, lambda plots: plots.contour_chart(frame), config.out_dir / "contours.svg")
    return f"contours: {len(frame)} points, {len(result.unmatched)} unmatched pumps -> {path}"


def run_jsa(config: RunConfig) -> str:
    opts = config.options
    fiber = _fiber(config, opts.get("length_cm"))
    pump = _pump(opts)
    grid = auto_grid(fiber, pump, GridPolicy(points=opts["grid"]))
    jsa = build_jsa(fiber, pump, grid, opts["include_nonlinear"])
    schmidt = schmidt_analyze(jsa)

    point = next(iter(solve_contour(fiber, [pump.center_wavelength]).for_pump(pump.center_wavelength)), None)
    summary = {
        "fiber": fiber.name,
        "length_cm": fiber.length * 100,
        "pump_nm": opts["pump_nm"],
        "bandwidth_nm": opts["bandwidth"],
        "bandwidth_kind": BANDWIDTH_KINDS[opts["bandwidth_kind"]].value,
        "sigma_p_rad_s": pump.sigma_p,
        "grid_points": opts["grid"],
        "purity": schmidt.purity,
        "schmidt_number": schmidt.schmidt_number,
        "schmidt_weights": schmidt.weights[:10],
        "jsi_principal_axis_deg": principal_axis_angle(to_intensity(jsa)),
    }
    if point is not None:
        summary.update({
            "signal_nm": point.signal_wavelength * 1e9,
            "idler_nm": point.idler_wavelength * 1e9,
            "contour_angle_deg": contour_angle(fiber, point),
            "contour_angle_wavelength_deg": contour_angle(fiber, point, coordinates="wavelength"),
        })
    csv_path, _ = write_joint_spectrum(jsa, config.out_dir / "jsa.csv")
    artifacts.write_json(summary, config.out_dir / "jsa_summary.json")
    _plot(config, lambda plots: plots.jsi_heatmap(jsa), config.out_dir / "jsi.svg")
    angle = summary.get("contour_angle_deg", float("nan"))
    return (f"jsa: purity={schmidt.purity:.4f} K={schmidt.schmidt_number:.4f} "
            f"theta_si={angle:.2f} deg -> {csv_path}")


def run_purity_sweep(config: RunConfig) -> str:
    opts = config.options
    fiber = _fiber(config)
    pump = _pump(opts)
    lengths_cm = parse_axis(opts["sweep_lengths"], "--sweep-lengths")
    bandwidths = parse_axis(opts["sweep_bandwidths"], "--sweep-bandwidths")
    sweep = purity_sweep(fiber, pump, lengths_cm * 1e-2, bandwidths, GridPolicy(points=opts["grid"]),
                         BANDWIDTH_KINDS[opts["bandwidth_kind"]], opts["include_nonlinear"], config.n_jobs)
    path = artifacts.write_csv(sweep.to_frame(), config.out_dir / "purity_sweep.csv", index=True)
    artifacts.write_csv(sweep.cells_frame(), config.out_dir / "purity_sweep_cells.csv")
    _plot(config, lambda plots: plots.purity_map(sweep), config.out_dir / "purity_sweep.svg")
    length, bandwidth, best = sweep.argmax()
    return (f"purity-sweep: max purity={best:.4f} at L={length * 100:.3g} cm, "
            f"bandwidth={bandwidth:.3g} nm ({len(sweep.failures)} failed cells, "
            f"{int(sweep.clipped.sum())} on clipped grids) -> {path}")


def run_stats(config: RunConfig) -> str:
    opts = config.options
    kwargs = dict(mean_pairs_per_pulse=0.0, eta_signal=opts["eta_s"], eta_idler=opts["eta_i"],
                  rep_rate=opts["rep_rate_mhz"] * 1e6, dark_probability=opts["dark"], emission=opts["emission"])
    if opts["schmidt_weights"]:
        weights = parse_axis(opts["schmidt_weights"], "--schmidt-weights")
        model = SourceStatModel.from_weights(weights, **kwargs)
    else:
        model = SourceStatModel.equal_modes(opts["k_modes"], **kwargs)
    if opts["pulses"] < 1:
        raise ConfigError("--pulses must be >= 1", flag="--pulses")

    if opts["power_mw"]:
        powers = parse_axis(opts["power_mw"], "--power-mw") * 1e-3
        coefficient = calibrate_power_coefficient(model, opts["target_rate"], opts["reference_power_mw"] * 1e-3)
        table = power_sweep(model, powers, coefficient, opts["pulses"], config.seed, opts["partitions"],
                            config.n_jobs)
        x = "power_mw"
    else:
        mus = parse_axis(opts["mu"] or "0.001,0.002,0.005,0.01,0.02,0.05", "--mu")
        table = stats_table(model, mus, opts["pulses"], config.seed, partitions=opts["partitions"],
                            n_jobs=config.n_jobs)
        x = "mu"
    path = artifacts.write_csv(table, config.out_dir / "stats.csv")
    _plot(config, lambda plots: plots.stats_chart(table, x), config.out_dir / "stats.svg")
    last = table.iloc[-1]
    return (f"stats: {len(table)} points, K={model.schmidt_number:.3g}, last {x}={last[x]:.4g}: "
            f"CAR={last['CAR']:.4g} g2h={last['g2h']:.4g} -> {path}")


def _load_spectrum(path, subtract: bool):
    path = Path(path)
    if path.is_dir():
        js = calibrate_scan(load_set_scan(path))
    else:
        js = to_intensity(read_joint_spectrum(path))
    return subtract_background(js) if subtract else js


def run_set_calibrate(config: RunConfig) -> str:
    opts = config.options
    js = _load_spectrum(opts["scan"], opts["subtract_background"])
    name = js.label or Path(opts["scan"]).name
    features = count_features(js, opts["feature_level"])
    schmidt = schmidt_analyze(jsa_from_jsi(js))
    csv_path, _ = write_joint_spectrum(js, config.out_dir / f"{name}_jsi.csv")
    artifacts.write_json({
        "fiber_id": name,
        "features": features,
        "inhomogeneous": features > 1,
        "purity_upper_bound": schmidt.purity,
        "rows": int(js.idler_axis.size),
        "idler_nm": [float(js.idler_axis[0]), float(js.idler_axis[-1])],
        "signal_nm": [float(js.signal_axis[0]), float(js.signal_axis[-1])],
    }, config.out_dir / f"{name}_summary.json")
    _plot(config, lambda plots: plots.jsi_heatmap(js, title=f"{name} (SET)"), config.out_dir / f"{name}_jsi.svg")
    return f"set-calibrate: {name} features={features} purity<={schmidt.purity:.4f} -> {csv_path}"


def run_overlap(config: RunConfig) -> str:
    opts = config.options
    spectra = [_load_spectrum(p, opts["subtract_background"]) for p in opts["scans"]]
    labels = [js.label or Path(p).stem for js, p in zip(spectra, opts["scans"])]
    if len(set(labels)) < len(labels):
        labels = [f"{lab}#{k}" for k, lab in enumerate(labels)]
    resolution = None
    if opts["resolution_nm"]:
        steps = parse_axis(opts["resolution_nm"], "--resolution-nm")
        if np.any(steps <= 0) or steps.size > 2:
            raise ConfigError("--resolution-nm takes one or two positive values", flag="--resolution-nm")
        resolution = float(steps[0]) if steps.size == 1 else (float(steps[0]), float(steps[1]))
    report = inhomogeneity_report(spectra, opts["threshold"], opts["feature_level"], labels, resolution,
                                  config.n_jobs)
    path = artifacts.write_json(report.to_dict(), config.out_dir / "overlap.json")
    flagged = [lab for lab, bad in zip(report.labels, report.inhomogeneous) if bad]
    if report.overlaps is None:
        return f"overlap: 1 scan, features={report.features[0]} -> {path}"
    artifacts.write_csv(report.overlaps.to_frame(), config.out_dir / "overlap.csv", index=True)
    artifacts.write_text(report.overlaps.to_table() + "\n", config.out_dir / "overlap.txt")
    log.info("pairwise overlaps\n%s", report.overlaps.to_table())
    _plot(config, lambda plots: plots.overlap_heatmap(report.overlaps), config.out_dir / "overlap.svg")
    off = report.overlaps.pairwise[~np.eye(len(labels), dtype=bool)]
    return (f"overlap: {len(labels)} scans, min={off.min():.4f} max={off.max():.4f}, "
            f"{len(report.below_threshold)} pairs < {opts['threshold']}, inhomogeneous={flagged} -> {path}")


def run_fringes(config: RunConfig) -> str:
    opts = config.options
    fiber = _fiber(config, opts.get("length_cm"))
    trace = load_fringe_trace(opts["trace"], fiber.length)
    est = birefringence_from_fringes(trace)
    result = {
        "dn": est.dn,
        "uncertainty": est.uncertainty,
        "mean_fringe_spacing_nm": est.mean_spacing * 1e9,
        "center_wavelength_nm": est.center_wavelength * 1e9,
        "n_peaks": est.n_peaks,
        "fiber_length_m": fiber.length,
        "beat_length_mm": beat_length(fiber.with_birefringence(est.dn), est.center_wavelength) * 1e3,
    }
    path = artifacts.write_json(result, config.out_dir / "fringes.json")
    return f"fringes: dn={est.dn:.4e} +/- {est.uncertainty:.1e} from {est.n_peaks} peaks -> {path}"


HANDLERS = {
    "contours": run_contours,
    "jsa": run_jsa,
    "purity-sweep": run_purity_sweep,
    "stats": run_stats,
    "set-calibrate": run_set_calibrate,
    "overlap": run_overlap,
    "fringes": run_fringes,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, PhotonSourceError):
        return 3
    if isinstance(exc, IO_ERRORS):
        return 4
    return 1


def report_error(exc: BaseException) -> int:
    code = exit_code_for(exc)
    if isinstance(exc, PhotonSourceError):
        kind = exc.kind
    else:
        kind = "io" if code == 4 else "unexpected"
    payload = {"status": "error", "kind": kind, "exit_code": code, "message": str(exc),
               "error": type(exc).__name__}
    if getattr(exc, "flag", None):
        payload["flag"] = exc.flag
    if code == 1:
        log.exception("unexpected failure")
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def run(config: RunConfig) -> int:
    """Execute one subcommand; returns the process exit status."""
    try:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(config.out_dir, os.W_OK):
            raise PermissionError(f"output directory {config.out_dir} is not writable")
        summary = HANDLERS[config.subcommand](config)
    except Exception as exc:
        return report_error(exc)
    print(summary)
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        pre = _Parser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        if known.config:
            if not Path(known.config).is_file():
                raise ConfigError(f"config file {known.config} not found", flag="--config")
            load_dotenv(known.config, override=True)
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level),
                            format="%(asctime)s %(levelname)s %(message)s")
        config = RunConfig.from_namespace(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    except Exception as exc:
        return report_error(exc)
    return run(config)


if __name__ == "__main__":
    raise SystemExit(main())
