"""Source, link, detector and weather models for the desk-scale link.

Rates and efficiencies default to the calibrated urban 270 m scenario: a
320 MHz pulsed entangled-pair source measured locally by Alice, with the
partner photon crossing a free-space channel to Bob through a fluctuating
single-mode-fiber coupling, daylight background, and optional rain.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

TDC_TICK_PS = 81.0
FWHM_TO_SIGMA = 1.0 / 2.355

ALICE_CHANNEL_COUNT = 6  # 3 settings x 2 outcomes
BOB_CHANNEL_COUNT = 4  # 2 settings x 2 outcomes

ALICE_BASIS_PROBS = (0.5, 0.25, 0.25)  # key basis first, then the two CHSH bases
BOB_BASIS_PROBS = (0.5, 0.5)


@dataclass(frozen=True)
class SourceParams:
    """Entangled-pair source figures of merit.

    ``eta_prep`` is the probability a pump pulse starts the radiative
    cascade and ``eta_blink`` the emitter's on-time fraction; their product
    is the per-pulse pair probability.  Wavelengths and g2 values are
    carried as metadata only.
    """

    rep_rate_hz: float = 320e6
    eta_prep: float = 0.86
    eta_blink: float = 0.26
    fidelity: float = 0.942
    lambda_xx_nm: float = 784.75
    lambda_x_nm: float = 782.86
    g2_xx: float = 0.013
    g2_x: float = 0.022

    def __post_init__(self):
        if self.rep_rate_hz <= 0:
            raise ValueError("repetition rate must be positive")
        for name in ("eta_prep", "eta_blink", "fidelity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def rep_period_ps(self) -> float:
        return 1e12 / self.rep_rate_hz


def pair_probability(src: SourceParams) -> float:
    """Per-pulse probability that a usable entangled pair is emitted."""
    return src.eta_prep * src.eta_blink


@dataclass(frozen=True)
class ChannelParams:
    """Per-arm efficiencies, detector properties and background rates.

    The two arm efficiencies lump collection and platform optics and are the
    calibration knobs that set the observed singles rates; link, coupling
    and detector efficiencies carry the measured link budget.  Background
    rates are per detector at the receiver; Alice's local detectors see only
    dark counts.
    """

    alice_arm_efficiency: float = 0.0143
    bob_arm_efficiency: float = 0.0441
    link_efficiency: float = 0.10
    coupling_mean: float = 0.40
    coupling_rms_frac: float = 0.17
    coupling_lo: float = 0.30
    coupling_hi: float = 0.50
    coupling_tau_s: float = 3600.0
    detector_efficiency: float = 0.46
    jitter_fwhm_ps: float = 400.0
    dark_rate_cps: float = 250.0
    beacon_rate_cps: float = 700.0
    sun_rate_ref_cps: float = 520.0
    sun_ref_irradiance_wm2: float = 120.0
    rain_atten_coeff_per_mmhr: float = 0.005
    depolarization: float = 0.0
    multiphoton: bool = False

    def __post_init__(self):
        for name in (
            "alice_arm_efficiency",
            "bob_arm_efficiency",
            "link_efficiency",
            "coupling_mean",
            "detector_efficiency",
            "depolarization",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("dark_rate_cps", "beacon_rate_cps", "sun_rate_ref_cps", "jitter_fwhm_ps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class WeatherSample:
    timestamp_s: float
    irradiance_wm2: float
    rain_mmhr: float

    def __post_init__(self):
        if self.irradiance_wm2 < 0:
            raise ValueError("irradiance must be non-negative")
        if self.rain_mmhr < 0:
            raise ValueError("rain rate must be non-negative")


class WeatherSeries:
    """Piecewise-linear weather record; constant extrapolation at the ends."""

    def __init__(self, samples: list[WeatherSample]):
        if not samples:
            raise ValueError("weather series needs at least one sample")
        samples = sorted(samples, key=lambda s: s.timestamp_s)
        self._t = np.array([s.timestamp_s for s in samples])
        self._irr = np.array([s.irradiance_wm2 for s in samples])
        self._rain = np.array([s.rain_mmhr for s in samples])

    @staticmethod
    def constant(irradiance_wm2: float, rain_mmhr: float = 0.0) -> "WeatherSeries":
        return WeatherSeries([WeatherSample(0.0, irradiance_wm2, rain_mmhr)])

    @staticmethod
    def from_csv(path) -> "WeatherSeries":
        samples = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"timestamp_s", "irradiance_wm2", "rain_mmhr"}
            if reader.fieldnames is None or expected - set(reader.fieldnames):
                raise ValueError(f"weather CSV must have columns {sorted(expected)}")
            for row in reader:
                samples.append(
                    WeatherSample(
                        float(row["timestamp_s"]),
                        float(row["irradiance_wm2"]),
                        float(row["rain_mmhr"]),
                    )
                )
        return WeatherSeries(samples)

    def at(self, t_s: float) -> WeatherSample:
        irr = float(np.interp(t_s, self._t, self._irr))
        rain = float(np.interp(t_s, self._t, self._rain))
        return WeatherSample(t_s, irr, rain)


def background_rate(ch: ChannelParams, w: WeatherSample) -> float:
    """Receiver background per detector: dark + beacon + scaled sunlight (cps)."""
    if w.irradiance_wm2 < 0:
        raise ValueError("irradiance must be non-negative")
    sun = ch.sun_rate_ref_cps * (w.irradiance_wm2 / ch.sun_ref_irradiance_wm2)
    return ch.dark_rate_cps + ch.beacon_rate_cps + sun


def rain_transmission(ch: ChannelParams, rain_mmhr: float) -> float:
    """Multiplicative channel transmission under rain."""
    return math.exp(-ch.rain_atten_coeff_per_mmhr * rain_mmhr)


class CouplingProcess:
    """Fiber-coupling efficiency as a clipped mean-reverting random walk.

    An Ornstein-Uhlenbeck path with the configured mean, relative RMS and
    correlation time, sampled on a fixed grid and clipped to the observed
    coupling range.  Deterministic in (params, seed).
    """

    GRID_S = 60.0

    def __init__(self, ch: ChannelParams, seed: int):
        self._ch = ch
        self._rng = np.random.default_rng(seed)
        self._path = [self._draw_stationary()]

    def _draw_stationary(self) -> float:
        return self._ch.coupling_mean + self._sigma() * self._rng.standard_normal()

    def _sigma(self) -> float:
        return self._ch.coupling_rms_frac * self._ch.coupling_mean

    def _extend_to(self, idx: int):
        decay = math.exp(-self.GRID_S / self._ch.coupling_tau_s)
        noise = self._sigma() * math.sqrt(1.0 - decay * decay)
        while len(self._path) <= idx:
            prev = self._path[-1]
            mean = self._ch.coupling_mean
            self._path.append(mean + (prev - mean) * decay + noise * self._rng.standard_normal())

    def at(self, t_s: float) -> float:
        if t_s < 0:
            raise ValueError("time must be non-negative")
        idx = int(t_s // self.GRID_S)
        self._extend_to(idx)
        return float(np.clip(self._path[idx], self._ch.coupling_lo, self._ch.coupling_hi))


def coupling_process(ch: ChannelParams, t_s: float, seed: int) -> float:
    """Convenience wrapper: coupling efficiency at one time for one seed."""
    return CouplingProcess(ch, seed).at(t_s)


@dataclass(frozen=True)
class AcquisitionWindow:
    index: int
    start_s: float
    length_s: float
    discarded: bool


def duty_cycle_schedule(
    total_s: float,
    acq_len_s: float = 1.2,
    duty: float = 0.45,
    sync_fail_prob: float = 0.30,
    seed: int = 0,
) -> list[AcquisitionWindow]:
    """Acquisition windows separated by processing dead time.

    Windows of ``acq_len_s`` start every acq_len_s/duty seconds so the active
    fraction equals the duty cycle; each window is independently flagged
    discarded with the synchronization failure probability.
    """
    if not 0.0 < duty <= 1.0:
        raise ValueError(f"duty cycle must lie in (0, 1], got {duty}")
    if acq_len_s <= 0:
        raise ValueError("acquisition length must be positive")
    if not 0.0 <= sync_fail_prob <= 1.0:
        raise ValueError("sync failure probability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    period = acq_len_s / duty
    windows = []
    i = 0
    while i * period + acq_len_s <= total_s + 1e-9:
        windows.append(
            AcquisitionWindow(
                index=i,
                start_s=i * period,
                length_s=acq_len_s,
                discarded=bool(rng.random() < sync_fail_prob),
            )
        )
        i += 1
    return windows
