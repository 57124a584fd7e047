"""Noise injection, amplitude spectral densities and sensitivity limits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.signal import get_window, welch
from scipy.stats import chi2

from .lockin import TimeTrace, probe_frequency
from .odmr import axis_lines, write_csv
from .spin_core import NvParameters

POISSON_THRESHOLD = 50.0  # mean counts per sample below which shot noise is drawn exactly


@dataclass(frozen=True)
class MagneticTone:
    frequency: float           # Hz
    amplitude: float           # T, peak
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)  # lab frame
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0 or self.frequency < 0:
            raise ValueError("tone frequency and amplitude must be nonnegative")
        u = np.asarray(self.direction, dtype=float)
        if not np.linalg.norm(u) > 0:
            raise ValueError("tone direction must be nonzero")


@dataclass(frozen=True)
class NoiseConfig:
    shot: bool = True
    laser_rin: float = 0.0         # one-sided relative ASD, 1/sqrt(Hz)
    electronic_floor: float = 0.0  # one-sided additive ASD, (photons/s)/sqrt(Hz)
    magnetic_tones: tuple[MagneticTone, ...] = ()
    magnetic_drift: float = 0.0    # random walk, T/sqrt(s)
    drift_direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    exact_field_mapping: bool = False

    def __post_init__(self):
        if self.laser_rin < 0 or self.electronic_floor < 0 or self.magnetic_drift < 0:
            raise ValueError("noise amplitudes must be nonnegative")
        object.__setattr__(self, "magnetic_tones", tuple(self.magnetic_tones))

    @property
    def has_magnetic(self) -> bool:
        return self.magnetic_drift > 0 or any(t.amplitude > 0 for t in self.magnetic_tones)

    def without_magnetic(self) -> "NoiseConfig":
        return NoiseConfig(self.shot, self.laser_rin, self.electronic_floor)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# --------------------------------------------------------------------------
# magnetic field -> resonance shift

def tracked_frequency(p: NvParameters, B_lab, axis, branch: int) -> float:
    """Exact electronic transition frequency (branch 0 = lower) of one orientation."""
    return axis_lines(p, B_lab, axis, hyperfine=False)[branch][0]


@dataclass
class FieldMapping:
    """Maps a lab-frame field perturbation onto a shift of the tracked line.

    ``gradient`` is dF/dB at the bias (Hz/T) from central differences.
    """

    p: NvParameters
    bias: np.ndarray
    axis: np.ndarray
    branch: int
    gradient: np.ndarray = field(init=False)
    dF_dD: float = field(init=False)

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=float)
        self.axis = _unit(self.axis)
        h = 1e-7
        g = np.zeros(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            g[k] = (self.frequency(self.bias + e) - self.frequency(self.bias - e)) / (2 * h)
        self.gradient = g
        hd = 1e3
        self.dF_dD = (tracked_frequency(self.p.replace(D=self.p.D + hd), self.bias, self.axis, self.branch)
                      - tracked_frequency(self.p.replace(D=self.p.D - hd), self.bias, self.axis, self.branch)) / (2 * hd)

    def frequency(self, B_lab) -> float:
        return tracked_frequency(self.p, B_lab, self.axis, self.branch)

    def linear_shift(self, dB: np.ndarray) -> np.ndarray:
        """dB has shape (n, 3)."""
        return dB @ self.gradient

    def exact_table(self, direction, smax: float, n: int = 201) -> Callable[[np.ndarray], np.ndarray]:
        """Shift along one direction by full diagonalization on an n-point table."""
        u = _unit(direction)
        s = np.linspace(-smax, smax, n)
        f0 = self.frequency(self.bias)
        shifts = np.array([self.frequency(self.bias + si * u) - f0 for si in s])
        return lambda x: np.interp(x, s, shifts)


class MagneticPerturbation:
    """Stateful generator of the magnetic resonance shift, chunk by chunk."""

    def __init__(self, noise: NoiseConfig, mapping: FieldMapping | None, rng: np.random.Generator,
                 duration_hint: float = 600.0):
        self.noise = noise
        self.mapping = mapping
        self.rng = rng
        self._walk = 0.0
        self._table = None
        if noise.has_magnetic and mapping is None:
            raise ValueError("magnetic noise requires a FieldMapping")
        if not noise.has_magnetic:
            return
        dirs = [_unit(t.direction) for t in noise.magnetic_tones if t.amplitude > 0]
        if noise.magnetic_drift > 0:
            dirs.append(_unit(noise.drift_direction))
        excursion = sum(t.amplitude for t in noise.magnetic_tones)
        excursion += 6 * noise.magnetic_drift * np.sqrt(duration_hint)
        bias = max(np.linalg.norm(mapping.bias), 1e-12)
        colinear = all(np.allclose(d, dirs[0]) for d in dirs)
        if noise.exact_field_mapping or excursion > 0.01 * bias:
            if not colinear:
                raise ValueError("exact field mapping needs all perturbations along one direction")
            self._direction = dirs[0]
            self._table = mapping.exact_table(dirs[0], max(excursion, 1e-12))

    def field(self, t: np.ndarray) -> np.ndarray:
        """Perturbation field, shape (n, 3), Tesla."""
        dB = np.zeros((len(t), 3))
        for tone in self.noise.magnetic_tones:
            if tone.amplitude > 0:
                dB += np.outer(tone.amplitude * np.sin(2 * np.pi * tone.frequency * t + tone.phase),
                               _unit(tone.direction))
        if self.noise.magnetic_drift > 0:
            dt = t[1] - t[0] if len(t) > 1 else 1.0
            steps = self.noise.magnetic_drift * np.sqrt(dt) * self.rng.standard_normal(len(t))
            walk = self._walk + np.cumsum(steps)
            self._walk = float(walk[-1]) if len(walk) else self._walk
            dB += np.outer(walk, _unit(self.noise.drift_direction))
        return dB

    def shift(self, t: np.ndarray) -> np.ndarray:
        """Resonance shift in Hz."""
        if not self.noise.has_magnetic:
            return np.zeros(len(t))
        dB = self.field(t)
        if self._table is not None:
            return self._table(dB @ self._direction)
        return self.mapping.linear_shift(dB)


def magnetic_shift(noise: NoiseConfig, t: np.ndarray, mapping: FieldMapping, seed=None) -> np.ndarray:
    gen = MagneticPerturbation(noise, mapping, np.random.default_rng(seed), duration_hint=float(t[-1] - t[0]))
    return gen.shift(np.asarray(t, dtype=float))


# --------------------------------------------------------------------------
# photocurrent noise

class NoiseContext(NamedTuple):
    spectrum: object   # OdmrSpectrum
    fm: object         # FmConfig with carrier
    mapping: FieldMapping


def apply_noise(mean_trace: TimeTrace, n: NoiseConfig, rng: np.random.Generator,
                I0: float | None = None, context: NoiseContext | None = None) -> TimeTrace:
    """Add the configured noise to a noiseless photon-rate trace (photons/s).

    Magnetic terms need ``context``: the mean trace is then regenerated
    from the spectrum with the resonance shifted sample by sample. Draw
    order is fixed (magnetic, RIN, shot, electronic), so a given generator
    state always yields the same trace.
    """
    fs = mean_trace.fs
    x = mean_trace.samples.copy()
    if n.has_magnetic:
        if context is None:
            raise ValueError("magnetic noise needs a NoiseContext")
        t = mean_trace.t
        shift = MagneticPerturbation(n, context.mapping, rng, mean_trace.duration).shift(t)
        scale = I0 if I0 is not None else 1.0
        x = scale * context.spectrum(probe_frequency(context.fm, t) - shift)
    x = add_photocurrent_noise(x, fs, n, rng, I0)
    return TimeTrace(fs, x, mean_trace.t0)


def add_photocurrent_noise(x: np.ndarray, fs: float, n: NoiseConfig, rng: np.random.Generator,
                           I0: float | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if n.laser_rin > 0:
        x = x * (1 + n.laser_rin * np.sqrt(fs / 2) * rng.standard_normal(len(x)))
    if n.shot:
        counts = np.clip(x, 0, None) / fs
        if counts.min(initial=np.inf) < POISSON_THRESHOLD:
            x = rng.poisson(counts) * fs
        else:
            x = x + np.sqrt(counts) * fs * rng.standard_normal(len(x))
    if n.electronic_floor > 0:
        x = x + n.electronic_floor * np.sqrt(fs / 2) * rng.standard_normal(len(x))
    return x


# --------------------------------------------------------------------------
# spectral densities

@dataclass(frozen=True)
class AsdCurve:
    freqs: np.ndarray
    values: np.ndarray
    units: str = ""
    dof: float | None = None   # equivalent chi-square degrees of freedom per bin

    def scaled(self, factor: float, units: str = "") -> "AsdCurve":
        return AsdCurve(self.freqs, np.abs(factor) * self.values, units or self.units, self.dof)

    def at(self, f: float) -> float:
        return float(self.values[int(np.argmin(np.abs(self.freqs - f)))])

    def to_csv(self, path) -> None:
        write_csv(path, "freq_hz,asd_value", self.freqs, self.values)


def asd(trace: TimeTrace, segment_length: int | None = None, overlap: float = 0.5,
        n_segments: int = 8) -> AsdCurve:
    """One-sided RMS amplitude spectral density, Welch average, Hann window."""
    n = len(trace)
    if segment_length is None:
        segment_length = int(n / (1 + (n_segments - 1) * (1 - overlap)))
    if segment_length > n:
        raise ValueError("segment_length exceeds trace length")
    noverlap = int(segment_length * overlap)
    f, psd = welch(trace.samples, fs=trace.fs, window="hann", nperseg=segment_length,
                   noverlap=noverlap, detrend="constant", scaling="density", return_onesided=True)
    return AsdCurve(f, np.sqrt(psd), dof=welch_dof(n, segment_length, noverlap))


def welch_dof(n: int, segment_length: int, noverlap: int) -> float:
    """Equivalent degrees of freedom of a Hann-window Welch average."""
    step = segment_length - noverlap
    k = 1 + (n - segment_length) // step
    w = get_window("hann", segment_length)
    norm = np.sum(w ** 2)
    acc = float(k)
    for j in range(1, k):
        if j * step >= segment_length:
            break
        rho = (np.sum(w[j * step:] * w[:segment_length - j * step]) / norm) ** 2
        acc += 2 * (k - j) * rho
    return 2 * k * k / acc


class Floor(NamedTuple):
    value: float
    uncertainty: float
    n_bins: int


def sensitivity_floor(a: AsdCurve, band: tuple[float, float]) -> Floor:
    """Median plateau over ``band`` with a MAD-based standard error."""
    lo, hi = band
    sel = (a.freqs >= lo) & (a.freqs <= hi)
    if not np.any(sel):
        raise ValueError(f"no ASD bins inside band {band}")
    v = a.values[sel]
    med = float(np.median(v))
    mad = 1.4826 * float(np.median(np.abs(v - med)))
    # the median of a chi-square PSD estimate sits below its mean
    bias = np.sqrt(chi2.median(a.dof) / a.dof) if a.dof else 1.0
    return Floor(med / bias, 1.2533 * mad / np.sqrt(len(v)) / bias, int(len(v)))


# --------------------------------------------------------------------------
# analytic limits

def cw_shot_noise_limit(c_tau: float, delta_nu: float, contrast: float, I0: float,
                        K: float = 1.0, lockin_factor: bool = False) -> float:
    """K * delta_nu / (|c_tau| sqrt(I0) C), in K/sqrt(Hz).

    With ``lockin_factor`` the result is divided by sqrt(2): probing both
    flanks doubles the signal while the noise grows by sqrt(2).
    """
    for name, v in (("c_tau", c_tau), ("delta_nu", delta_nu), ("contrast", contrast), ("I0", I0), ("K", K)):
        if v == 0 or not np.isfinite(v) or (name != "c_tau" and v < 0):
            raise ValueError(f"{name} must be positive and finite")
    eta = K * delta_nu / (abs(c_tau) * np.sqrt(I0) * contrast)
    return eta / np.sqrt(2) if lockin_factor else eta


def shot_noise_limit_from_slope(c_tau: float, I0: float, max_slope: float,
                                lockin_factor: bool = False) -> float:
    """sqrt(I0) / (|c_tau| max dI/dnu) with dI/dnu = I0 * max|dPL/dnu|."""
    eta = np.sqrt(I0) / (abs(c_tau) * I0 * max_slope)
    return eta / np.sqrt(2) if lockin_factor else eta


def ensemble_sensitivity(delta_nu: float, contrast: float, I0_per_center: float, N: float,
                         c_tau: float = -74.2e3) -> float:
    if N < 1:
        raise ValueError("N must be >= 1")
    if contrast == 0:
        return float("inf")
    return delta_nu / (abs(c_tau) * contrast * np.sqrt(I0_per_center) * np.sqrt(N))


# --------------------------------------------------------------------------
# reports

@dataclass
class SensitivityReport:
    """Temperature ASD plus its fitted floor, the analytic shot limit and
    a per-source budget (all K/sqrt(Hz))."""

    asd: AsdCurve
    floor: float
    floor_uncertainty: float
    shot_limit: float
    budget: dict[str, float]
    band: tuple[float, float]
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "floor_K_per_rtHz": self.floor,
            "floor_uncertainty_K_per_rtHz": self.floor_uncertainty,
            "shot_limit_K_per_rtHz": self.shot_limit,
            "budget_K_per_rtHz": dict(sorted(self.budget.items())),
            "band_hz": list(self.band),
            "details": self.details,
        }

    def to_json(self, path) -> None:
        write_json(path, self.to_dict())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.12g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, data: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
