"""Acceptance criteria, one test each; every test prints a PASS/FAIL line and
the terminal summary repeats them in order."""
import json
from pathlib import Path

import numpy as np
import pytest

from nvtherm import thermometry as th
from nvtherm.cli import main
from nvtherm.lockin import FmConfig, LockInConfig, TimeTrace, demodulate, lia_sweep
from nvtherm.noise import NoiseConfig, asd, cw_shot_noise_limit
from nvtherm.odmr import Lineshape, synthesize_spectrum
from nvtherm.spin_core import (
    NvParameters, Transition, TransitionSet, build_electron_hamiltonian, eigensolve,
    electron_transitions, hyperfine_expectation, hyperfine_spread, min_transverse_field,
    perturbative_levels, perturbative_states, transition_frequencies,
)

from oracles import A_PAR, D, DELTA_6MT, REFERENCE_ETA

P = NvParameters()
CONFIGS = Path(__file__).parent.parent / "configs"
CLI_RUNS = {
    "spectrum": "spectrum.yaml",
    "lia-sweep": "lia_sweep.yaml",
    "sensitivity": "sensitivity.yaml",
    "thermal-cycle": "thermal_cycle_tf.yaml",
    "compare": "compare.yaml",
}


@pytest.fixture(scope="module")
def cli_outputs(tmp_path_factory):
    """Every shipped scenario run twice into separate directories."""
    root = tmp_path_factory.mktemp("cli")
    out = {}
    for cmd, cfg in CLI_RUNS.items():
        dirs = []
        for rep in ("a", "b"):
            d = root / f"{cmd}_{rep}"
            assert main([cmd, "--config", str(CONFIGS / cfg), "--out", str(d)]) == 0
            dirs.append(d)
        out[cmd] = dirs
    return out


def test_1_perturbation_fidelity(criterion):
    errs = []
    for b in (0.5e-3, 1e-3, 2e-3):
        exact = eigensolve(build_electron_hamiltonian(P, [b, 0, 0])).values
        errs.append(np.max(np.abs(np.array(perturbative_levels(P, b)) - exact)))
    ratios = [errs[1] / errs[0], errs[2] / errs[1]]
    scaling_ok = all(6 <= r <= 10 for r in ratios)
    exact = electron_transitions(P, [6e-3, 0, 0]).frequencies - D
    pert = transition_frequencies(P, 6e-3).frequencies - D
    rel = np.abs(pert / exact - 1)
    shifts_ok = np.all(rel <= 0.03) and pert[0] == pytest.approx(DELTA_6MT, rel=1e-6)
    criterion(1, "perturbation fidelity", scaling_ok and shifts_ok,
              f"error ratios on doubling {ratios[0]:.2f}, {ratios[1]:.2f} (gate [6, 10]); "
              f"6 mT shifts {exact[0] / 1e6:.3f}, {exact[1] / 1e6:.3f} MHz exact vs "
              f"{pert[0] / 1e6:.3f}, {pert[1] / 1e6:.3f} MHz, max rel dev {rel.max():.4f} (gate 0.03)")


def test_2_threshold(criterion):
    b = min_transverse_field(P)
    criterion(2, "collapse threshold", abs(b - 2.8e-3) <= 0.1e-3, f"{b * 1e3:.4f} mT (gate 2.8 +/- 0.1)")


def test_3_hyperfine_collapse(criterion):
    tf = hyperfine_spread(P, [6e-3, 0, 0])
    ax_low, ax_high = hyperfine_spread(P, [0, 0, 2e-3])
    spacing = np.array([ax_low, ax_high]) / 2
    tf_ok = max(tf) < 0.1 * A_PAR
    ax_ok = np.all(np.abs(spacing / A_PAR - 1) <= 0.01)
    criterion(3, "hyperfine collapse", tf_ok and ax_ok,
              f"6 mT transverse spread {tf[0] / 1e3:.1f}, {tf[1] / 1e3:.1f} kHz = "
              f"{max(tf) / A_PAR:.3f} A_par (gate < 0.1); axial spacing "
              f"{spacing[0] / 1e6:.4f}, {spacing[1] / 1e6:.4f} MHz (gate 2.16 MHz +/- 1%)")


def test_4_hyperfine_nullity(criterion):
    worst = 0.0
    for b in (3e-3, 6e-3):
        for s in perturbative_states(P, b):
            for m in (-1, 0, 1):
                worst = max(worst, abs(hyperfine_expectation(s, m, P)))
    criterion(4, "hyperfine expectation nullity", worst < 1e-6 * A_PAR,
              f"max |<A_par Sz Iz>| = {worst:.3g} Hz over 9 combinations at 3 and 6 mT "
              f"(gate {1e-6 * A_PAR:.3g} Hz)")


def test_5_shot_noise_limit(criterion):
    c_tau, width, contrast, I0, K = REFERENCE_ETA
    eta = cw_shot_noise_limit(c_tau, width, contrast, I0, K)
    gap = eta / 4.7e-3 - 1
    criterion(5, "shot-noise limit", abs(gap) <= 0.20,
              f"recomputed {eta * 1e3:.3f} mK/rtHz vs reference 4.7 mK/rtHz, gap {gap:+.1%} (gate +/- 20%)")


def test_6_end_to_end_floor(criterion):
    sensor = th.prepare_sensor(P, th.tf_regime(), FmConfig(1009.0, 0.6e6), LockInConfig(tau=1e-3))
    shot = th.measure_sensitivity(sensor, NoiseConfig(shot=True), 600.0, seed=1)
    full = th.measure_sensitivity(sensor, th.default_noise(), 600.0, seed=1)
    limit = th.reference_shot_limit()["with_lockin_factor_K_per_rtHz"]
    model_shot = shot.budget["shot"]
    ratio = shot.floor / limit
    ok = 1 / 1.5 <= ratio <= 1.5 and 4e-3 <= full.floor <= 6e-3
    criterion(6, "end-to-end floor", ok,
              f"shot-only plateau {shot.floor * 1e3:.3f} mK/rtHz = {ratio:.2f} x analytic "
              f"{limit * 1e3:.3f} (gate 1.5x; model shot budget {model_shot * 1e3:.3f}); "
              f"full-noise plateau {full.floor * 1e3:.3f} +/- {full.floor_uncertainty * 1e3:.3f} mK/rtHz (gate 4-6)")


def test_7_magnetic_rejection(criterion, cli_outputs):
    rep = json.loads((cli_outputs["compare"][0] / "compare.json").read_text())
    regs = rep["regimes"]
    tf = regs["TF"]["sensitivity"]["details"]["peak_25hz_K_per_rtHz"]
    sh = regs["SHfD"]["sensitivity"]["details"]["peak_25hz_K_per_rtHz"]
    criterion(7, "25 Hz magnetic rejection", tf <= sh / 10,
              f"TF peak {tf * 1e3:.3f} mK/rtHz, SHfD peak {sh * 1e3:.3f} mK/rtHz, ratio {sh / tf:.1f} (gate >= 10)")


def test_8_regime_ratio(criterion, cli_outputs):
    rep = json.loads((cli_outputs["compare"][0] / "compare.json").read_text())
    r = rep["ratios"]["readout_rms_shfd_over_tf"]
    tf = rep["regimes"]["TF"]["readout_rms_K"]
    sh = rep["regimes"]["SHfD"]["readout_rms_K"]
    criterion(8, "regime readout ratio", r >= 2,
              f"readout RMS TF {tf * 1e3:.2f} mK, SHfD {sh * 1e3:.2f} mK, ratio {r:.2f} (gate >= 2); "
              f"floor ratio {rep['ratios']['floor_shfd_over_tf']:.2f}")


def test_9_calibration_round_trip(criterion):
    temps = np.linspace(293.15, 318.15, 6)
    base = 298.15
    rng = np.random.default_rng(2024)
    parts, ok = [], True
    for reg in (th.tf_regime(), th.shfd_regime()):
        s = th.prepare_sensor(P, reg)
        f0 = np.array([th.zero_crossing_at(P, reg, s.fm, s.lockin, T, base) for T in temps])
        fits = np.array([th.calibrate(np.column_stack([temps + 5e-3 * rng.standard_normal(len(temps)), f0]),
                                      reference_T=base).c_tau_fit for _ in range(200)])
        worst = np.max(np.abs(fits / -74.2e3 - 1))
        ok &= worst <= 0.01
        parts.append(f"{reg.regime} mean {fits.mean() / 1e3:.3f} kHz/K, worst dev {worst:.2%}")
    criterion(9, "calibration round trip", ok, "; ".join(parts) + " over 200 noise draws (gate 1%)")


def _quadrature_rejection():
    fs, f = 100e3, 1009.0
    t = np.arange(int(0.5 * fs)) / fs
    cfg = LockInConfig(tau=10e-3)
    n0, per = int(0.2 * fs), int(round(fs / f))
    n = ((len(t) - n0) // per) * per
    i = demodulate(TimeTrace(fs, np.sin(2 * np.pi * f * t)), f, cfg).samples[n0:n0 + n].mean()
    q = demodulate(TimeTrace(fs, np.cos(2 * np.pi * f * t)), f, cfg).samples[n0:n0 + n].mean()
    return 20 * np.log10(abs(i) / abs(q))


def _enbw_error(tau=1e-3):
    fs = 100e3
    x = np.random.default_rng(7).standard_normal(int(60 * fs))
    y = demodulate(TimeTrace(fs, x), 1009.0, LockInConfig(tau=tau)).samples[int(20 * tau * fs):]
    return y.var() / (2 * 2 / fs) * 4 * tau - 1


def _parseval_error():
    fs = 1000.0
    x = np.random.default_rng(5).standard_normal(2 ** 16)
    a = asd(TimeTrace(fs, x))
    power = np.sum(a.values ** 2) * (a.freqs[1] - a.freqs[0])
    return power / np.var(x) - 1


def _antisymmetry():
    n = 600
    g = D + 1e3 * np.arange(-20000, 20001)
    s = synthesize_spectrum(TransitionSet((Transition(D, 1.0, "deg_pair_low"),)), Lineshape(1.1e6, 0.0064), g)
    c = D + 5e3 * np.arange(-n, n + 1)
    v = lia_sweep(s, FmConfig(1009.0, 0.6e6), c, LockInConfig()).values
    return np.max(np.abs(v + v[::-1])) / np.abs(v).max()


def test_10_dsp_contracts(criterion):
    rej, enbw, pars, anti = _quadrature_rejection(), _enbw_error(), _parseval_error(), _antisymmetry()
    ok = rej > 60 and abs(enbw) <= 0.05 and abs(pars) <= 0.02 and anti <= 1e-6
    criterion(10, "DSP contracts", ok,
              f"quadrature rejection {rej:.1f} dB (gate 60); ENBW deviation {enbw:+.2%} (gate 5%); "
              f"Parseval deviation {pars:+.2%} (gate 2%); sweep antisymmetry {anti:.2g} (gate 1e-6)")


def test_11_reproducibility(criterion, cli_outputs):
    differing, count = [], 0
    for cmd, (a, b) in cli_outputs.items():
        for f in sorted(a.iterdir()):
            count += 1
            if f.read_bytes() != (b / f.name).read_bytes():
                differing.append(f"{cmd}/{f.name}")
    criterion(11, "CLI reproducibility", not differing,
              f"{count} files over {len(cli_outputs)} subcommands, "
              f"{len(differing)} differ{': ' + ', '.join(differing) if differing else ''}")
