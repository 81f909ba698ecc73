# photonstats.py
"""Counting statistics of the heralded pair source.

Model: independent two-mode squeezed vacua, one per Schmidt mode, with thermal
pair-number distributions of mean mu * lambda_k. Each arm is thinned
binomially by its efficiency and detected with threshold detectors; one arm is
split 50:50 onto two detectors for the g2 measurements.

Counts in a CountingRecord are totals over ``integration_time``, i.e. over
``rep_rate * integration_time`` pulses.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.typing import ArrayLike
from scipy.optimize import brentq

from errors import ConfigError, DataError, UndefinedEstimatorError

log = logging.getLogger(__name__)

SPLIT_ARMS = ("idler", "signal")
EMISSION_MODELS = ("squeezed", "poissonian")
DEFAULT_PARTITIONS = 8
CHUNK_PULSES = 1_000_000
_WEIGHT_TOL = 1e-9

# tally order of the simulator and the closed form
_EVENTS = ("h", "d1", "d2", "d_any", "h_d1", "h_d2", "h_any", "d1_d2", "h_d1_d2")


@dataclass(frozen=True)
class SourceStatModel:
    schmidt_weights: tuple[float, ...]
    mean_pairs_per_pulse: float
    eta_signal: float
    eta_idler: float
    rep_rate: float = 80e6
    dark_probability: float = 0.0  # per detector per pulse
    emission: str = "squeezed"

    def __post_init__(self):
        w = np.asarray(self.schmidt_weights, dtype=float).ravel()
        if w.size == 0 or np.any(w < 0):
            raise ConfigError("Schmidt weights must be a nonempty nonnegative list", flag="--schmidt-weights")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ConfigError(f"Schmidt weights must sum to 1, got {w.sum():.12g}", flag="--schmidt-weights")
        if not self.mean_pairs_per_pulse >= 0:
            raise ConfigError(f"mean pair number must be >= 0, got {self.mean_pairs_per_pulse}", flag="--mu")
        for name in ("eta_signal", "eta_idler", "dark_probability"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if not self.rep_rate > 0:
            raise ConfigError(f"rep rate must be > 0, got {self.rep_rate}")
        if self.emission not in EMISSION_MODELS:
            raise ConfigError(f"emission must be one of {EMISSION_MODELS}, got {self.emission!r}")
        object.__setattr__(self, "schmidt_weights", tuple(float(x) for x in w))

    @classmethod
    def from_weights(cls, weights: ArrayLike, **kwargs) -> SourceStatModel:
        """Normalizes ``weights`` before building the model."""
        w = np.asarray(weights, dtype=float).ravel()
        if w.size == 0 or np.any(w < 0) or not w.sum() > 0:
            raise ConfigError("Schmidt weights must be nonnegative with a positive sum", flag="--schmidt-weights")
        return cls(tuple(w / w.sum()), **kwargs)

    @classmethod
    def equal_modes(cls, k: int, **kwargs) -> SourceStatModel:
        if k < 1:
            raise ConfigError(f"number of Schmidt modes must be >= 1, got {k}", flag="--k-modes")
        return cls(tuple([1.0 / k] * k), **kwargs)

    @property
    def schmidt_number(self) -> float:
        return 1.0 / float(np.sum(np.square(self.schmidt_weights)))

    def with_mean_pairs(self, mu: float) -> SourceStatModel:
        return SourceStatModel(self.schmidt_weights, float(mu), self.eta_signal, self.eta_idler,
                               self.rep_rate, self.dark_probability, self.emission)


@dataclass(frozen=True)
class CountingRecord:
    """Detector tallies over one integration window.

    ``n_herald_i1`` / ``n_herald_i2`` are herald-and-split-port coincidences,
    ``n_triples`` herald-and-both-ports. ``n_split_*`` are the unheralded
    split-arm singles and their two-fold coincidence used for the marginal g2.
    """

    n_singles_signal: float
    n_singles_idler: float
    n_coincidences: float
    n_triples: float
    n_herald_i1: float
    n_herald_i2: float
    integration_time: float
    rep_rate: float
    n_split_1: float = 0.0
    n_split_2: float = 0.0
    n_split_coincidences: float = 0.0
    split_arm: str = "idler"

    def __post_init__(self):
        counts = [self.n_singles_signal, self.n_singles_idler, self.n_coincidences, self.n_triples,
                  self.n_herald_i1, self.n_herald_i2, self.n_split_1, self.n_split_2,
                  self.n_split_coincidences]
        if any(c < 0 for c in counts):
            raise DataError("counts must be >= 0")
        if not self.integration_time > 0 or not self.rep_rate > 0:
            raise DataError("integration time and rep rate must be > 0")
        if self.split_arm not in SPLIT_ARMS:
            raise DataError(f"split_arm must be one of {SPLIT_ARMS}")
        slack = 1e-9 * max(1.0, max(counts))
        if self.n_coincidences > min(self.n_singles_signal, self.n_singles_idler) + slack:
            raise DataError("coincidences exceed singles")
        if self.n_triples > min(self.n_herald_i1, self.n_herald_i2) + slack:
            raise DataError("triples exceed herald coincidences")

    @property
    def n_pulses(self) -> float:
        return self.rep_rate * self.integration_time

    @property
    def n_herald(self) -> float:
        return self.n_singles_signal if self.split_arm == "idler" else self.n_singles_idler

    def rates(self) -> dict:
        t = self.integration_time
        return {
            "N_s": self.n_singles_signal / t,
            "N_i": self.n_singles_idler / t,
            "N_si": self.n_coincidences / t,
        }


def car(record: CountingRecord) -> float:
    """N_si R_p / (N_s N_i) with rates N = counts / T_int."""
    if record.n_singles_signal <= 0 or record.n_singles_idler <= 0:
        raise UndefinedEstimatorError("CAR undefined: zero singles in one arm")
    t = record.integration_time
    return (record.n_coincidences / t) * record.rep_rate / (
        (record.n_singles_signal / t) * (record.n_singles_idler / t))


def g2_marginal(record: CountingRecord) -> float:
    """N_dc R_p T_int / (N_d1 N_d2) for the split arm, counts over T_int."""
    if record.n_split_1 <= 0 or record.n_split_2 <= 0:
        raise UndefinedEstimatorError("marginal g2 undefined: a split detector has no counts")
    return record.n_split_coincidences * record.n_pulses / (record.n_split_1 * record.n_split_2)


def g2_heralded(record: CountingRecord) -> float:
    """N_{h,i1,i2} N_h / (N_{h,i1} N_{h,i2})."""
    if record.n_herald <= 0:
        raise UndefinedEstimatorError("heralded g2 undefined: no herald counts")
    if record.n_herald_i1 <= 0 or record.n_herald_i2 <= 0:
        raise UndefinedEstimatorError("heralded g2 undefined: zero herald coincidences")
    return record.n_triples * record.n_herald / (record.n_herald_i1 * record.n_herald_i2)


def heralding_efficiencies(record: CountingRecord) -> tuple[float, float]:
    """Klyshko efficiencies (signal arm N_si/N_i, idler arm N_si/N_s)."""
    if record.n_singles_signal <= 0 or record.n_singles_idler <= 0:
        raise UndefinedEstimatorError("heralding efficiency undefined: zero singles")
    return (record.n_coincidences / record.n_singles_idler,
            record.n_coincidences / record.n_singles_signal)


def purity_from_marginal_g2(g2: float) -> float:
    """Heralded purity 1/K from g2_m = 1 + 1/K."""
    return g2 - 1.0


def _arm_efficiencies(model: SourceStatModel, split_arm: str) -> tuple[float, float]:
    if split_arm not in SPLIT_ARMS:
        raise ConfigError(f"split_arm must be one of {SPLIT_ARMS}, got {split_arm!r}")
    if split_arm == "idler":
        return model.eta_signal, model.eta_idler
    return model.eta_idler, model.eta_signal


def _simulate_partition(model: SourceStatModel, n_pulses: int, seed: np.random.SeedSequence,
                        split_arm: str) -> np.ndarray:
    rng = np.random.default_rng(seed)
    eta_h, eta_x = _arm_efficiencies(model, split_arm)
    mu = model.mean_pairs_per_pulse
    tally = np.zeros(len(_EVENTS), dtype=np.int64)
    remaining = n_pulses
    while remaining > 0:
        n = min(remaining, CHUNK_PULSES)
        remaining -= n
        pairs = np.zeros(n, dtype=np.int64)
        if mu > 0:
            if model.emission == "poissonian":
                pairs += rng.poisson(mu, size=n)
            else:
                for lam in model.schmidt_weights:
                    m = mu * lam
                    if m > 0:
                        # thermal: P(n) = m**n / (1 + m)**(n + 1)
                        pairs += rng.geometric(1.0 / (1.0 + m), size=n) - 1
        herald_photons = rng.binomial(pairs, eta_h)
        split_photons = rng.binomial(pairs, eta_x)
        port1 = rng.binomial(split_photons, 0.5)
        h = herald_photons > 0
        d1 = port1 > 0
        d2 = (split_photons - port1) > 0
        if model.dark_probability > 0:
            h |= rng.random(n) < model.dark_probability
            d1 |= rng.random(n) < model.dark_probability
            d2 |= rng.random(n) < model.dark_probability
        d_any = d1 | d2
        tally += np.array([
            h.sum(), d1.sum(), d2.sum(), d_any.sum(),
            (h & d1).sum(), (h & d2).sum(), (h & d_any).sum(),
            (d1 & d2).sum(), (h & d1 & d2).sum(),
        ], dtype=np.int64)
    return tally


def _record_from_tally(tally, n_pulses: float, model: SourceStatModel, split_arm: str) -> CountingRecord:
    t = dict(zip(_EVENTS, tally))
    herald, split_any = t["h"], t["d_any"]
    signal, idler = (herald, split_any) if split_arm == "idler" else (split_any, herald)
    return CountingRecord(
        n_singles_signal=signal,
        n_singles_idler=idler,
        n_coincidences=t["h_any"],
        n_triples=t["h_d1_d2"],
        n_herald_i1=t["h_d1"],
        n_herald_i2=t["h_d2"],
        integration_time=n_pulses / model.rep_rate,
        rep_rate=model.rep_rate,
        n_split_1=t["d1"],
        n_split_2=t["d2"],
        n_split_coincidences=t["d1_d2"],
        split_arm=split_arm,
    )


def simulate_counts(model: SourceStatModel, n_pulses: int, seed: int | np.random.SeedSequence | None = 0,
                    split_arm: str = "idler", partitions: int = DEFAULT_PARTITIONS,
                    n_jobs: int = 1) -> CountingRecord:
    """Monte Carlo of ``n_pulses`` pulses.

    The pulses are cut into ``partitions`` streams seeded from
    SeedSequence(seed).spawn(partitions), so the record depends on the seed and
    the partition count only, not on ``n_jobs``.
    """
    n_pulses = int(n_pulses)
    if n_pulses < 1:
        raise ConfigError(f"n_pulses must be >= 1, got {n_pulses}", flag="--pulses")
    _arm_efficiencies(model, split_arm)
    partitions = max(1, min(int(partitions), n_pulses))
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = seq.spawn(partitions)
    sizes = [n_pulses // partitions + (1 if k < n_pulses % partitions else 0) for k in range(partitions)]
    tallies = Parallel(n_jobs=n_jobs)(
        delayed(_simulate_partition)(model, size, child, split_arm)
        for size, child in zip(sizes, children)
    )
    tally = np.sum(tallies, axis=0)
    record = _record_from_tally(tally.tolist(), n_pulses, model, split_arm)
    log.debug("simulated %d pulses (mu=%.4g, split %s): %s", n_pulses, model.mean_pairs_per_pulse,
              split_arm, record)
    return record


def _log_no_click(model: SourceStatModel, split_arm: str, herald: bool, ports: int) -> float:
    """log P(no click on the herald detector (if ``herald``) and on ``ports`` split ports)."""
    eta_h, eta_x = _arm_efficiencies(model, split_arm)
    r = (1.0 - eta_h if herald else 1.0) * (1.0 - eta_x * ports / 2.0)
    mu = model.mean_pairs_per_pulse
    if model.emission == "poissonian":
        log_p = -mu * (1.0 - r)
    else:
        # thermal generating function per mode: E[r**n] = 1 / (1 + m (1 - r))
        log_p = -float(np.sum(np.log1p(mu * np.asarray(model.schmidt_weights) * (1.0 - r))))
    detectors = int(herald) + ports
    if model.dark_probability > 0:
        log_p += detectors * np.log1p(-model.dark_probability)
    return log_p


def click_probabilities(model: SourceStatModel, split_arm: str = "idler") -> dict:
    """Exact per-pulse probabilities of every tallied event (inclusion-exclusion)."""

    def e(herald, ports):
        # P(at least one click among the named detectors)
        return -np.expm1(_log_no_click(model, split_arm, herald, ports))

    return {
        "h": e(True, 0),
        "d1": e(False, 1),
        "d2": e(False, 1),
        "d_any": e(False, 2),
        "h_d1": e(True, 0) + e(False, 1) - e(True, 1),
        "h_d2": e(True, 0) + e(False, 1) - e(True, 1),
        "h_any": e(True, 0) + e(False, 2) - e(True, 2),
        "d1_d2": 2 * e(False, 1) - e(False, 2),
        "h_d1_d2": e(True, 0) + 2 * e(False, 1) - 2 * e(True, 1) - e(False, 2) + e(True, 2),
    }


def expected_record(model: SourceStatModel, n_pulses: float, split_arm: str = "idler") -> CountingRecord:
    """Expected counts over ``n_pulses`` pulses."""
    probs = click_probabilities(model, split_arm)
    tally = [max(0.0, probs[k]) * n_pulses for k in _EVENTS]
    return _record_from_tally(tally, n_pulses, model, split_arm)


def coincidence_rate(model: SourceStatModel) -> float:
    return click_probabilities(model)["h_any"] * model.rep_rate


def calibrate_power_coefficient(model: SourceStatModel, target_coincidence_rate: float = 30e3,
                                reference_power: float = 0.070) -> float:
    """Coefficient a of mu = a P**2 such that the model's coincidence rate at
    ``reference_power`` (W) equals ``target_coincidence_rate`` (1/s)."""
    if not target_coincidence_rate > 0 or not reference_power > 0:
        raise ConfigError("calibration target and reference power must be > 0")

    def mismatch(mu):
        return coincidence_rate(model.with_mean_pairs(mu)) - target_coincidence_rate

    hi = 50.0
    if mismatch(hi) < 0:
        raise ConfigError(
            f"coincidence rate {target_coincidence_rate:g}/s unreachable with "
            f"eta_s={model.eta_signal}, eta_i={model.eta_idler}"
        )
    mu = brentq(mismatch, 0.0, hi, xtol=1e-15, rtol=1e-12)
    a = mu / reference_power**2
    log.info("power calibration: mu=%.4g at %.1f mW -> a=%.4g /W^2", mu, reference_power * 1e3, a)
    return a


def power_to_mean_pairs(power, coefficient: float):
    return coefficient * np.square(power)


def _safe(fn, record):
    try:
        return fn(record)
    except UndefinedEstimatorError as exc:
        log.warning("%s", exc)
        return float("nan")


def stats_table(model: SourceStatModel, mean_pairs: Sequence[float], n_pulses: int, seed: int = 0,
                powers: Sequence[float] | None = None, partitions: int = DEFAULT_PARTITIONS,
                n_jobs: int = 1) -> pd.DataFrame:
    """Rates, CAR and g2 estimates per mean pair number, Monte Carlo and exact.

    Each row runs the idler-split layout (singles, coincidences, CAR, g2m_i, g2h)
    and the signal-split layout (g2m_s) with independent seeds.
    """
    mus = np.asarray(mean_pairs, dtype=float).ravel()
    if mus.size == 0:
        raise ConfigError("no mean pair numbers / powers given", flag="--mu")
    seeds = np.random.SeedSequence(seed).spawn(2 * mus.size)
    rows = []
    for k, mu in enumerate(mus):
        m = model.with_mean_pairs(mu)
        rec_i = simulate_counts(m, n_pulses, seeds[2 * k], "idler", partitions, n_jobs)
        rec_s = simulate_counts(m, n_pulses, seeds[2 * k + 1], "signal", partitions, n_jobs)
        exact_i = expected_record(m, n_pulses, "idler")
        exact_s = expected_record(m, n_pulses, "signal")
        row = {}
        if powers is not None:
            row["power_mw"] = float(powers[k]) * 1e3
        row.update({"mu": mu, **rec_i.rates()})
        row.update({
            "CAR": _safe(car, rec_i),
            "g2m_s": _safe(g2_marginal, rec_s),
            "g2m_i": _safe(g2_marginal, rec_i),
            "g2h": _safe(g2_heralded, rec_i),
            "CAR_model": _safe(car, exact_i),
            "g2m_s_model": _safe(g2_marginal, exact_s),
            "g2m_i_model": _safe(g2_marginal, exact_i),
            "g2h_model": _safe(g2_heralded, exact_i),
        })
        rows.append(row)
        log.info("stats mu=%.4g: N_si=%.4g/s CAR=%.4g g2h=%.4g", mu, row["N_si"], row["CAR"], row["g2h"])
    return pd.DataFrame(rows)


def power_sweep(model: SourceStatModel, powers: Sequence[float], coefficient: float, n_pulses: int,
                seed: int = 0, partitions: int = DEFAULT_PARTITIONS, n_jobs: int = 1) -> pd.DataFrame:
    """stats_table driven by pump power (W) through mu = a P**2."""
    powers = np.asarray(powers, dtype=float).ravel()
    return stats_table(model, power_to_mean_pairs(powers, coefficient), n_pulses, seed, powers,
                       partitions, n_jobs)
