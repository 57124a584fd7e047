"""Frequency-modulated probing of an ODMR spectrum and digital lock-in
demodulation."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from .odmr import OdmrSpectrum, write_csv


class NoZeroCrossingError(ValueError):
    pass


@dataclass(frozen=True)
class FmConfig:
    f_mod: float = 1009.0
    depth: float = 0.6e6
    carrier: float | None = None

    def __post_init__(self):
        if not self.f_mod > 0:
            raise ValueError("f_mod must be positive")
        if not self.depth > 0:
            raise ValueError("depth must be positive")
        if self.carrier is not None and not self.carrier > 0:
            raise ValueError("carrier must be positive")

    def with_carrier(self, carrier: float) -> "FmConfig":
        return FmConfig(self.f_mod, self.depth, carrier)


@dataclass(frozen=True)
class LockInConfig:
    tau: float = 10e-3
    filter_order: int = 1
    phase: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if int(self.filter_order) != self.filter_order or self.filter_order < 1:
            raise ValueError("filter_order must be an integer >= 1")


@dataclass(frozen=True)
class TimeTrace:
    fs: float
    samples: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        x = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("trace contains non-finite samples")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return len(self.samples)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.samples)) / self.fs

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs

    def to_csv(self, path) -> None:
        write_csv(path, "t_s,value", self.t, self.samples)

    def to_binary(self, path) -> None:
        """Little-endian float64: fs, t0, then the samples."""
        with open(Path(path), "wb") as fh:
            fh.write(struct.pack("<dd", self.fs, self.t0))
            fh.write(self.samples.astype("<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "TimeTrace":
        raw = Path(path).read_bytes()
        fs, t0 = struct.unpack("<dd", raw[:16])
        return cls(fs, np.frombuffer(raw[16:], dtype="<f8").copy(), t0)


class LockIn:
    """Streaming phase-sensitive detector.

    Output is lowpass(2 x sin(2 pi f_ref t + phase)) through ``filter_order``
    cascaded single-pole sections, so an input A sin(2 pi f_ref t + phase)
    settles to A. Filter state and the reference phase carry across calls.
    """

    def __init__(self, fs: float, f_ref: float, cfg: LockInConfig, start_index: int = 0):
        if not fs > 2 * f_ref:
            raise ValueError(f"fs = {fs} Hz must exceed 2 * f_ref = {2 * f_ref} Hz")
        self.fs = fs
        self.f_ref = f_ref
        self.cfg = cfg
        a = np.exp(-1.0 / (fs * cfg.tau))
        self._b = np.array([1.0 - a])
        self._a = np.array([1.0, -a])
        self._zi = [np.zeros(1) for _ in range(cfg.filter_order)]
        self._n = start_index

    def process(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self._n + np.arange(len(x))
        ref = np.sin(2 * np.pi * self.f_ref * (n / self.fs) + self.cfg.phase)
        y = 2.0 * x * ref
        for k in range(self.cfg.filter_order):
            y, self._zi[k] = lfilter(self._b, self._a, y, zi=self._zi[k])
        self._n += len(x)
        return y


def demodulate(trace: TimeTrace, f_ref: float, cfg: LockInConfig) -> TimeTrace:
    li = LockIn(trace.fs, f_ref, cfg, start_index=int(round(trace.t0 * trace.fs)))
    return TimeTrace(trace.fs, li.process(trace.samples), trace.t0)


def probe_frequency(fm: FmConfig, t: np.ndarray) -> np.ndarray:
    return fm.carrier + fm.depth * np.sin(2 * np.pi * fm.f_mod * t)


def _check_coverage(spectrum: OdmrSpectrum, lo: float, hi: float) -> None:
    if spectrum.freqs[0] > lo or spectrum.freqs[-1] < hi:
        raise ValueError(
            f"spectrum grid [{spectrum.freqs[0]:.6g}, {spectrum.freqs[-1]:.6g}] Hz "
            f"does not cover the probed range [{lo:.6g}, {hi:.6g}] Hz")


def fm_photocurrent(spectrum: OdmrSpectrum, fm: FmConfig, duration: float, fs: float,
                    I0: float, noise=None, seed=None, shift=None) -> TimeTrace:
    """Detected photon rate (photons/s) while the MW is frequency modulated.

    ``shift`` optionally moves the spectrum by a per-sample amount in Hz
    (resonance drift); ``noise`` is a :class:`nvtherm.noise.NoiseConfig`
    whose photocurrent terms (shot, laser RIN, electronic) are applied.
    Magnetic terms of ``noise`` need a field mapping and are handled by
    :func:`nvtherm.noise.magnetic_shift`; pass the result as ``shift``.
    """
    if fm.carrier is None:
        raise ValueError("FmConfig.carrier is required")
    if fs < 20 * fm.f_mod:
        raise ValueError(f"fs = {fs} Hz is below 20 * f_mod = {20 * fm.f_mod} Hz")
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    f = probe_frequency(fm, t)
    if shift is not None:
        f = f - np.broadcast_to(np.asarray(shift, dtype=float), f.shape)
    _check_coverage(spectrum, f.min(), f.max())
    mean = I0 * spectrum(f)
    if noise is None:
        return TimeTrace(fs, mean)
    from .noise import apply_noise
    return apply_noise(TimeTrace(fs, mean), noise, np.random.default_rng(seed), I0=I0)


class LiaCurve(NamedTuple):
    carriers: np.ndarray
    values: np.ndarray


def harmonic_response(spectrum: OdmrSpectrum, carriers, depth: float, phase: float = 0.0,
                      I0: float = 1.0, n_phase: int = 4096) -> np.ndarray:
    """Steady-state first-harmonic lock-in output for each carrier.

    Exact average of 2 I0 pl(fc + depth sin(theta)) sin(theta + phase) over
    one modulation period, i.e. what the lock-in settles to once its filter
    has removed the harmonics.
    """
    if n_phase % 2:
        raise ValueError("n_phase must be even")
    carriers = np.asarray(carriers, dtype=float)
    theta = 2 * np.pi * np.arange(n_phase) / n_phase
    f = carriers[:, None] + depth * np.sin(theta)[None, :]
    _check_coverage(spectrum, f.min(), f.max())
    ref = np.sin(theta + phase)
    return 2 * I0 * (spectrum(f) @ ref) / n_phase


def lia_sweep(spectrum: OdmrSpectrum, fm: FmConfig, carriers, cfg: LockInConfig,
              I0: float = 1.0, method: str = "harmonic", fs: float | None = None) -> LiaCurve:
    """Noiseless LIA output versus MW carrier.

    ``method="harmonic"`` evaluates the steady state directly;
    ``method="time"`` runs a trace through :func:`demodulate` per carrier,
    drops 10 tau of settling and averages a whole number of modulation
    periods.
    """
    carriers = np.asarray(carriers, dtype=float)
    if method == "harmonic":
        return LiaCurve(carriers, harmonic_response(spectrum, carriers, fm.depth, cfg.phase, I0))
    if method != "time":
        raise ValueError(f"unknown method {method!r}")
    # whole samples per modulation period, so the averaging window holds an
    # exact number of periods and the large f_mod ripple from the DC level cancels
    fs = fm.f_mod * max(20, round((fs or 100e3) / fm.f_mod))
    settle = 10 * cfg.tau
    periods = max(20, int(np.ceil(10 * cfg.tau * fm.f_mod)))
    duration = settle + periods / fm.f_mod
    out = np.empty_like(carriers)
    for k, fc in enumerate(carriers):
        tr = fm_photocurrent(spectrum, fm.with_carrier(fc), duration, fs, I0)
        y = demodulate(tr, fm.f_mod, cfg).samples
        out[k] = y[-int(round(periods * fs / fm.f_mod)):].mean()
    return LiaCurve(carriers, out)


class ZeroCrossing(NamedTuple):
    frequency: float
    slope: float
    count: int


def find_zero_crossing(curve: LiaCurve) -> ZeroCrossing:
    """Interpolated zero crossing; the steepest one if there are several."""
    c = np.asarray(curve.carriers, dtype=float)
    v = np.asarray(curve.values, dtype=float)
    found = []
    for i in range(len(v) - 1):
        if v[i] == 0.0 and i > 0 and v[i - 1] * v[i + 1] < 0:
            slope = (v[i + 1] - v[i - 1]) / (c[i + 1] - c[i - 1])
            found.append((c[i], slope))
        elif v[i] * v[i + 1] < 0:
            slope = (v[i + 1] - v[i]) / (c[i + 1] - c[i])
            found.append((c[i] - v[i] / slope, slope))
    if not found:
        raise NoZeroCrossingError("LIA curve has no sign change")
    f0, slope = max(found, key=lambda fs_: abs(fs_[1]))
    return ZeroCrossing(float(f0), float(slope), len(found))


def slope_at_zero(curve: LiaCurve) -> float:
    """d(LIA output)/d(carrier) at the working zero crossing."""
    return find_zero_crossing(curve).slope
