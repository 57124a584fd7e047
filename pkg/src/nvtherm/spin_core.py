"""NV ground-state spin Hamiltonians, exact diagonalization and the
second-order degenerate perturbation theory for a transverse bias field.

All Hamiltonians are in frequency units (Hz). The electronic basis is
ordered m_s = (+1, 0, -1); the nuclear (14N, I = 1) basis m_I = (+1, 0, -1).
Composite 9x9 operators are electron (x) nucleus.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.constants import physical_constants

MU_B_OVER_H = physical_constants["Bohr magneton in Hz/T"][0]  # Hz/T

HERMITIAN_RTOL = 1e-12
PERTURBATIVE_LIMIT = 0.1


class NonHermitianError(ValueError):
    pass


class PerturbativeRegimeError(ValueError):
    pass


@dataclass(frozen=True)
class NvParameters:
    """Physical constants of one NV species (frequencies in Hz).

    ``A_perp`` defaults to ``A_par``; the true transverse coupling is not
    pinned down here and should be swept when it matters. ``Q`` defaults to
    the usual 14N ground-state value; with Q = 0 nothing pins the nuclear
    spin to the NV axis and a transverse bias no longer collapses the
    hyperfine triplet.
    """

    D: float = 2.87e9
    g: float = 2.003
    A_par: float = 2.16e6
    A_perp: float | None = None
    Q: float = -4.945e6
    c_tau: float = -74.2e3

    def __post_init__(self):
        if self.A_perp is None:
            object.__setattr__(self, "A_perp", self.A_par)
        for name in ("D", "g", "A_par", "A_perp", "Q", "c_tau"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.D <= 0:
            raise ValueError("D must be positive")
        if self.g <= 0:
            raise ValueError("g must be positive")
        if self.A_par < 0:
            raise ValueError("A_par must be nonnegative")
        if self.c_tau >= 0:
            raise ValueError("c_tau must be negative")

    @property
    def gamma(self) -> float:
        """Electron gyromagnetic ratio g*mu_B/h in Hz/T."""
        return self.g * MU_B_OVER_H

    def replace(self, **changes) -> "NvParameters":
        kw = dict(D=self.D, g=self.g, A_par=self.A_par, A_perp=self.A_perp,
                  Q=self.Q, c_tau=self.c_tau)
        kw.update(changes)
        return NvParameters(**kw)


@dataclass(frozen=True)
class MagneticField:
    """Field in the NV frame (z along the NV axis), Tesla."""

    Bx: float = 0.0
    By: float = 0.0
    Bz: float = 0.0

    def __post_init__(self):
        v = self.as_array()
        if not np.all(np.isfinite(v)):
            raise ValueError("field components must be finite")
        if np.linalg.norm(v) >= 0.1:
            raise ValueError(f"|B| = {np.linalg.norm(v):.4g} T exceeds 0.1 T")

    def as_array(self) -> np.ndarray:
        return np.array([self.Bx, self.By, self.Bz], dtype=float)

    @property
    def perp(self) -> float:
        return float(np.hypot(self.Bx, self.By))

    @property
    def par(self) -> float:
        return float(self.Bz)


class EigenSystem(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray  # columns aligned with values


@dataclass(frozen=True)
class Transition:
    frequency: float
    amplitude: float
    label: str = "other"


TRANSITION_LABELS = ("deg_pair_low", "deg_pair_high", "hyperfine_m-1",
                     "hyperfine_m0", "hyperfine_m+1", "other")


@dataclass(frozen=True)
class TransitionSet:
    transitions: tuple[Transition, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for tr in self.transitions:
            if tr.frequency <= 0:
                raise ValueError(f"non-positive transition frequency {tr.frequency}")
            if not 0.0 <= tr.amplitude <= 1.0 + 1e-12:
                raise ValueError(f"amplitude {tr.amplitude} outside [0, 1]")
            if tr.label not in TRANSITION_LABELS:
                raise ValueError(f"unknown label {tr.label!r}")

    def __len__(self):
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([t.frequency for t in self.transitions], dtype=float)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([t.amplitude for t in self.transitions], dtype=float)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.transitions)

    def union(self, other: "TransitionSet") -> "TransitionSet":
        return TransitionSet(self.transitions + other.transitions)

    def within(self, lo: float, hi: float) -> "TransitionSet":
        return TransitionSet(tuple(t for t in self.transitions if lo <= t.frequency <= hi))

    def scaled(self, factor: float) -> "TransitionSet":
        return TransitionSet(tuple(Transition(t.frequency, t.amplitude * factor, t.label)
                                   for t in self.transitions))

    def shifted(self, df: float) -> "TransitionSet":
        return TransitionSet(tuple(Transition(t.frequency + df, t.amplitude, t.label)
                                   for t in self.transitions))


# --------------------------------------------------------------------------
# operators and Hamiltonians

def spin_operators(spin: str = "S1") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spin-1 matrices (x, y, z) in the m = (+1, 0, -1) basis.

    ``spin`` is "S1" (electron) or "I1" (14N nucleus); both are spin 1 so the
    matrices coincide, the name only documents intent at call sites.
    """
    if spin not in ("S1", "I1"):
        raise ValueError(f"unknown spin {spin!r}")
    s = 1 / np.sqrt(2)
    sx = s * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
    sy = s * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


_SX, _SY, _SZ = spin_operators("S1")
_IX, _IY, _IZ = spin_operators("I1")
_I3 = np.eye(3, dtype=complex)

# unperturbed eigenbasis |0>, |+>, |->  expressed in m = (+1, 0, -1)
KET_0 = np.array([0, 1, 0], dtype=complex)
KET_PLUS = np.array([1, 0, 1], dtype=complex) / np.sqrt(2)
KET_MINUS = np.array([1, 0, -1], dtype=complex) / np.sqrt(2)


def check_hermitian(H: np.ndarray, rtol: float = HERMITIAN_RTOL) -> None:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise NonHermitianError(f"matrix must be square, got shape {H.shape}")
    scale = max(np.max(np.abs(H)), 1e-300)
    asym = np.max(np.abs(H - H.conj().T))
    if asym > rtol * scale:
        raise NonHermitianError(
            f"matrix not Hermitian: max|H - H^dagger| = {asym:.3e} "
            f"(relative {asym / scale:.3e})")


def _field_array(B) -> np.ndarray:
    if isinstance(B, MagneticField):
        return B.as_array()
    return np.asarray(B, dtype=float).reshape(3)


def build_electron_hamiltonian(p: NvParameters, B) -> np.ndarray:
    """H = D Sz^2 + gamma (B . S), 3x3, Hz."""
    bx, by, bz = _field_array(B)
    H = p.D * (_SZ @ _SZ) + p.gamma * (bx * _SX + by * _SY + bz * _SZ)
    return 0.5 * (H + H.conj().T)


def build_full_hamiltonian(p: NvParameters, B) -> np.ndarray:
    """Electron (x) 14N Hamiltonian, 9x9, Hz. Nuclear Zeeman is omitted."""
    He = build_electron_hamiltonian(p, B)
    H = (np.kron(He, _I3)
         + p.Q * np.kron(_I3, _IZ @ _IZ)
         + p.A_par * np.kron(_SZ, _IZ)
         + p.A_perp * (np.kron(_SX, _IX) + np.kron(_SY, _IY)))
    return 0.5 * (H + H.conj().T)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v) - 1e-9 * np.arange(len(v))))  # first of ties
    return v * (np.abs(v[k]) / v[k])


def eigensolve(H: np.ndarray, degeneracy_tol: float = 1e-9) -> EigenSystem:
    """Hermitian eigendecomposition with a reproducible eigenvector gauge.

    Inside a degenerate cluster (eigenvalues closer than
    ``degeneracy_tol * max(|H|, 1)``) the basis is rebuilt by Gram-Schmidt on
    the projections of the standard basis vectors e_0, e_1, ... onto the
    cluster subspace, so the result does not depend on LAPACK's choice.
    Every vector is then rotated so its largest-magnitude component (first
    one on ties) is real and positive.
    """
    H = np.asarray(H, dtype=complex)
    check_hermitian(H)
    values, vectors = np.linalg.eigh(H)
    n = len(values)
    tol = degeneracy_tol * max(np.max(np.abs(H)), 1.0)

    out = vectors.copy()
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and values[stop] - values[stop - 1] < tol:
            stop += 1
        if stop - start > 1:
            V = vectors[:, start:stop]
            P = V @ V.conj().T
            basis = []
            for j in range(n):
                w = P[:, j].copy()
                for b in basis:
                    w -= (b.conj() @ w) * b
                nrm = np.linalg.norm(w)
                if nrm > 1e-6:
                    basis.append(w / nrm)
                if len(basis) == stop - start:
                    break
            out[:, start:stop] = np.column_stack(basis)
        start = stop

    for k in range(n):
        out[:, k] = _fix_phase(out[:, k])
    return EigenSystem(values, out)


# --------------------------------------------------------------------------
# perturbation theory for a transverse bias

def _perturbation_ratio(p: NvParameters, B_perp: float) -> float:
    r = p.gamma * abs(B_perp) / p.D
    if r >= PERTURBATIVE_LIMIT:
        raise PerturbativeRegimeError(
            f"gamma*B_perp/D = {r:.4g} is outside the perturbative regime "
            f"(< {PERTURBATIVE_LIMIT})")
    return r


def second_order_shift(p: NvParameters, B_perp: float) -> float:
    """(gamma B_perp)^2 / D in Hz."""
    _perturbation_ratio(p, B_perp)
    return (p.gamma * B_perp) ** 2 / p.D


def perturbative_levels(p: NvParameters, B_perp: float) -> tuple[float, float, float]:
    d = second_order_shift(p, B_perp)
    return -d, p.D, p.D + d


def perturbative_states(p: NvParameters, B_perp: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized states |1>, |2>, |3> in the m = (+1, 0, -1) basis."""
    r = _perturbation_ratio(p, B_perp) * np.sign(B_perp)
    norm = 1 / np.sqrt(1 + r * r)
    s1 = norm * (KET_0 - r * KET_PLUS)
    s2 = KET_MINUS.copy()
    s3 = norm * (r * KET_0 + KET_PLUS)
    return s1, s2, s3


def transition_frequencies(p: NvParameters, B_perp: float) -> TransitionSet:
    d = second_order_shift(p, B_perp)
    return TransitionSet((Transition(p.D + d, 1.0, "deg_pair_low"),
                          Transition(p.D + 2 * d, 1.0, "deg_pair_high")))


def _require_normalized(state: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    nrm = np.vdot(state, state).real
    if abs(nrm - 1) > tol:
        raise ValueError(f"state is not normalized (<psi|psi> = {nrm:.12g})")
    return state


def spin_expectation(state: np.ndarray, axis: str) -> float:
    state = _require_normalized(state)
    op = {"x": _SX, "y": _SY, "z": _SZ}[axis]
    return float(np.vdot(state, op @ state).real)


def hyperfine_expectation(electronic_state: np.ndarray, Iz: int, p: NvParameters) -> float:
    """<psi, m_I| A_par Sz Iz + A_perp (Sx Ix + Sy Iy) |psi, m_I> in Hz."""
    psi = _require_normalized(electronic_state)
    if Iz not in (-1, 0, 1):
        raise ValueError("Iz must be -1, 0 or +1")
    nuc = np.zeros(3, dtype=complex)
    nuc[1 - Iz] = 1.0
    ket = np.kron(psi, nuc)
    Hhf = (p.A_par * np.kron(_SZ, _IZ)
           + p.A_perp * (np.kron(_SX, _IX) + np.kron(_SY, _IY)))
    return float(np.vdot(ket, Hhf @ ket).real)


def min_transverse_field(p: NvParameters) -> float:
    """Transverse field (T) at which the perturbative pair splitting equals A_par."""
    return float(np.sqrt(p.A_par * p.D) / p.gamma)


# --------------------------------------------------------------------------
# exact transitions

def electron_transitions(p: NvParameters, B) -> TransitionSet:
    """Exact m_s=0 -> upper transitions of the 3x3 model, lowest first.

    The ground level is the eigenstate with the largest m_s = 0 weight.
    """
    es = eigensolve(build_electron_hamiltonian(p, B))
    g = int(np.argmax(np.abs(es.vectors[1, :]) ** 2))
    out = []
    upper = [k for k in range(3) if k != g]
    for label, k in zip(("deg_pair_low", "deg_pair_high"), upper):
        out.append(Transition(float(es.values[k] - es.values[g]), 1.0, label))
    return TransitionSet(tuple(out))


def _transverse_strength(vi: np.ndarray, vf: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> float:
    return float(abs(np.vdot(vf, sx @ vi)) ** 2 + abs(np.vdot(vf, sy @ vi)) ** 2)


@dataclass(frozen=True)
class HyperfineLine:
    frequency: float
    strength: float   # |<f|Sx|i>|^2 + |<f|Sy|i>|^2, unnormalized
    group: int        # 0 = lower electronic transition, 1 = upper
    m_I: int          # dominant nuclear projection of the final state


def hyperfine_lines(p: NvParameters, B, min_relative_strength: float = 1e-2) -> list[HyperfineLine]:
    """Allowed lines of the 9x9 model from the m_s=0-like manifold.

    Each 9x9 eigenstate is assigned to the exact electronic eigenstate (3x3,
    same field) that carries most of its weight; lines whose strength is
    below ``min_relative_strength`` of the strongest (nuclear-flip lines)
    are dropped. The microwave field is taken transverse and unpolarized,
    so the strength sums the Sx and Sy matrix elements.
    """
    ee = eigensolve(build_electron_hamiltonian(p, B))
    g = int(np.argmax(np.abs(ee.vectors[1, :]) ** 2))
    uppers = [k for k in range(3) if k != g]

    full = eigensolve(build_full_hamiltonian(p, B))
    # weight of each 9x9 state on each electronic eigenstate
    proj = np.zeros((3, 9))
    for k in range(3):
        P = np.kron(np.outer(ee.vectors[:, k], ee.vectors[:, k].conj()), _I3)
        proj[k] = np.einsum("ij,ij->j", full.vectors.conj(), P @ full.vectors).real
    owner = np.argmax(proj, axis=0)
    nuc_pop = np.zeros((3, 9))
    for m_idx in range(3):
        Pn = np.kron(_I3, np.diag(np.eye(3)[m_idx]).astype(complex))
        nuc_pop[m_idx] = np.einsum("ij,ij->j", full.vectors.conj(), Pn @ full.vectors).real

    sx = np.kron(_SX, _I3)
    sy = np.kron(_SY, _I3)
    lines = []
    ground = np.flatnonzero(owner == g)
    for grp, k in enumerate(uppers):
        for f in np.flatnonzero(owner == k):
            for i in ground:
                s = _transverse_strength(full.vectors[:, i], full.vectors[:, f], sx, sy)
                freq = float(full.values[f] - full.values[i])
                m_I = 1 - int(np.argmax(nuc_pop[:, f]))
                lines.append(HyperfineLine(freq, s, grp, m_I))
    smax = max((l.strength for l in lines), default=0.0)
    return [l for l in lines if smax > 0 and l.strength >= min_relative_strength * smax]


def hyperfine_spread(p: NvParameters, B, min_relative_strength: float = 0.05) -> tuple[float, float]:
    """Max - min frequency of the hyperfine lines within each electronic dip."""
    lines = hyperfine_lines(p, B, min_relative_strength)
    out = []
    for grp in (0, 1):
        f = [l.frequency for l in lines if l.group == grp]
        out.append(max(f) - min(f) if f else 0.0)
    return out[0], out[1]


def full_transitions(p: NvParameters, B) -> TransitionSet:
    """Hyperfine-resolved transitions with amplitudes normalized to max 1."""
    lines = hyperfine_lines(p, B)
    if not lines:
        return TransitionSet()
    smax = max(l.strength for l in lines)
    labels = {-1: "hyperfine_m-1", 0: "hyperfine_m0", 1: "hyperfine_m+1"}
    return TransitionSet(tuple(
        Transition(l.frequency, min(l.strength / smax, 1.0), labels[l.m_I])
        for l in sorted(lines, key=lambda l: l.frequency)))
