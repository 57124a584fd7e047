"""CW ODMR spectra: transitions for an arbitrary lab field over the four NV
orientations, Lorentzian dip synthesis and single-tone / SHfD drive."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spin_core import (
    NvParameters,
    Transition,
    TransitionSet,
    build_electron_hamiltonian,
    eigensolve,
    hyperfine_lines,
    spin_operators,
)

_SX, _SY, _ = spin_operators("S1")


class GridCoverageError(ValueError):
    pass


@dataclass(frozen=True)
class Lineshape:
    width: float = 1.1e6      # FWHM, Hz
    contrast: float = 0.0064  # dip depth per unit-amplitude transition
    shape: str = "lorentzian"

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("width must be positive")
        if not 0 < self.contrast < 1:
            raise ValueError("contrast must lie in (0, 1)")
        if self.shape != "lorentzian":
            raise ValueError(f"unsupported lineshape {self.shape!r}")


@dataclass(frozen=True)
class DriveConfig:
    mode: str = "single_tone"
    shfd_offset: float = 2.16e6

    def __post_init__(self):
        if self.mode not in ("single_tone", "shfd"):
            raise ValueError(f"unknown drive mode {self.mode!r}")
        if self.mode == "shfd" and not self.shfd_offset > 0:
            raise ValueError("shfd_offset must be positive")


@dataclass(frozen=True)
class OdmrSpectrum:
    freqs: np.ndarray
    pl: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        if f.ndim != 1 or len(f) < 2 or np.any(np.diff(f) <= 0):
            raise ValueError("freqs must be a strictly ascending 1-D grid")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "pl", np.asarray(self.pl, dtype=float))

    @property
    def step(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def __call__(self, f) -> np.ndarray:
        """Linear interpolation; 1 (off resonance) outside the grid."""
        return np.interp(f, self.freqs, self.pl, left=1.0, right=1.0)

    def to_csv(self, path) -> None:
        write_csv(path, "freq_hz,pl_norm", self.freqs, self.pl)


def write_csv(path, header: str, *columns) -> None:
    rows = np.column_stack(columns)
    with open(Path(path), "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def default_axes() -> np.ndarray:
    axes = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    return axes / np.sqrt(3)


@dataclass(frozen=True)
class OrientationSet:
    axes: np.ndarray = field(default_factory=default_axes)
    weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        axes = np.asarray(self.axes, dtype=float)
        if axes.shape != (len(self.weights), 3):
            raise ValueError("need one weight per axis")
        if not np.allclose(np.linalg.norm(axes, axis=1), 1.0, atol=1e-12):
            raise ValueError("axes must be unit vectors")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "axes", axes)


def nv_frame_field(B_lab, axis) -> np.ndarray:
    """Lab-frame field expressed as (B_perp, 0, B_par) in the frame of ``axis``.

    The transverse direction is irrelevant for an unstrained NV (the
    Hamiltonian is axially symmetric), so it is rotated onto x.
    """
    B = np.asarray(B_lab, dtype=float)
    axis = np.asarray(axis, dtype=float)
    b_par = float(B @ axis)
    b_perp = float(np.linalg.norm(B - b_par * axis))
    return np.array([b_perp, 0.0, b_par])


def _electronic_lines(p: NvParameters, B) -> list[tuple[float, float, str]]:
    es = eigensolve(build_electron_hamiltonian(p, B))
    g = int(np.argmax(np.abs(es.vectors[1, :]) ** 2))
    out = []
    upper = [k for k in range(3) if k != g]
    for label, k in zip(("deg_pair_low", "deg_pair_high"), upper):
        vi, vf = es.vectors[:, g], es.vectors[:, k]
        s = abs(np.vdot(vf, _SX @ vi)) ** 2 + abs(np.vdot(vf, _SY @ vi)) ** 2
        out.append((float(es.values[k] - es.values[g]), float(s), label))
    return out


_MI_LABEL = {-1: "hyperfine_m-1", 0: "hyperfine_m0", 1: "hyperfine_m+1"}


def axis_lines(p: NvParameters, B_lab, axis, hyperfine: bool = True) -> list[tuple[float, float, str]]:
    """(frequency, raw strength, label) for one orientation."""
    B_nv = nv_frame_field(B_lab, axis)
    if not hyperfine:
        return _electronic_lines(p, B_nv)
    return [(l.frequency, l.strength, _MI_LABEL[l.m_I]) for l in hyperfine_lines(p, B_nv)]


def transitions_for_lab_field(p: NvParameters, B_lab, orientations: OrientationSet | None = None,
                              hyperfine: bool = True) -> TransitionSet:
    """All allowed m_s=0 -> upper transitions of every orientation.

    Amplitudes are transverse matrix-element strengths times the
    orientation weight, normalized so the strongest line is 1.
    """
    orientations = orientations or OrientationSet()
    if np.linalg.norm(B_lab) >= 0.1:
        raise ValueError("|B_lab| must be below 0.1 T")
    raw = []
    for axis, w in zip(orientations.axes, orientations.weights):
        if w == 0:
            continue
        for f, s, label in axis_lines(p, B_lab, axis, hyperfine):
            raw.append((f, s * w, label))
    if not raw:
        return TransitionSet()
    smax = max(s for _, s, _ in raw)
    raw.sort(key=lambda r: r[0])
    return TransitionSet(tuple(Transition(f, min(s / smax, 1.0), label) for f, s, label in raw))


def lorentzian_dips(freqs, centers, depths, width) -> np.ndarray:
    """Sum of Lorentzian dip depths (not PL): sum_i d_i g^2 / ((f - f_i)^2 + g^2)."""
    f = np.asarray(freqs, dtype=float)[:, None]
    c = np.asarray(centers, dtype=float)[None, :]
    d = np.asarray(depths, dtype=float)[None, :]
    hw2 = (width / 2) ** 2
    return np.sum(d * hw2 / ((f - c) ** 2 + hw2), axis=1)


def synthesize_spectrum(t: TransitionSet, lineshape: Lineshape, grid,
                        check_coverage: bool = True) -> OdmrSpectrum:
    freqs = np.asarray(grid, dtype=float)
    if len(t) and check_coverage:
        lo = t.frequencies.min() - 5 * lineshape.width
        hi = t.frequencies.max() + 5 * lineshape.width
        if freqs[0] > lo or freqs[-1] < hi:
            raise GridCoverageError(
                f"grid [{freqs[0]:.6g}, {freqs[-1]:.6g}] Hz must span at least "
                f"[{lo:.6g}, {hi:.6g}] Hz (all transitions +/- 5 linewidths)")
    if len(t) == 0:
        return OdmrSpectrum(freqs, np.ones_like(freqs))
    depth = lorentzian_dips(freqs, t.frequencies, lineshape.contrast * t.amplitudes, lineshape.width)
    return OdmrSpectrum(freqs, np.clip(1.0 - depth, 1e-12, 1.0))


def spectrum_slope(s: OdmrSpectrum) -> tuple[float, float]:
    """Largest |dPL/df| (1/Hz) from centered differences, and where it occurs."""
    if len(s.freqs) < 3:
        raise ValueError("need at least 3 grid points")
    d = np.gradient(s.pl, s.freqs)
    k = int(np.argmax(np.abs(d)))
    return float(abs(d[k])), float(s.freqs[k])


def effective_drive_spectrum(s: OdmrSpectrum, d: DriveConfig) -> OdmrSpectrum:
    """Carrier response for the given drive.

    For SHfD the carrier itself is suppressed and the two sidebands at
    +/- offset each burn their own dip, so the dip depths add.
    """
    if d.mode == "single_tone":
        return s
    f = s.freqs
    depth = (1 - s(f - d.shfd_offset)) + (1 - s(f + d.shfd_offset))
    return OdmrSpectrum(f, np.clip(1 - depth, 1e-12, 1.0))
