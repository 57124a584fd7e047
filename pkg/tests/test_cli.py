import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nvtherm.cli import main
from nvtherm.config import ConfigError, load_config

CONFIGS = Path(__file__).parent.parent / "configs"

SHORT = {
    "spectrum": "spectrum:\n  step_hz: 100.0e3\n",
    "lia-sweep": "lia_sweep:\n  step_hz: 20.0e3\n",
    "sensitivity": "sensitivity:\n  duration_s: 20\n",
    "thermal-cycle": ("thermal_cycle:\n  scenario:\n    period_s: 10\n    duration_s: 10\n"
                      "  noise:\n    preset: default\n"),
    "compare": ("compare:\n  scenario:\n    period_s: 10\n    duration_s: 10\n"
                "  sensitivity_duration_s: 20\n"),
}

OUTPUTS = {
    "spectrum": {"spectrum_tf.csv", "spectrum_axial.csv", "spectrum.json"},
    "lia-sweep": {"lia_sweep.csv", "zero_crossing.json"},
    "sensitivity": {"asd.csv", "sensitivity.json"},
    "thermal-cycle": {"set_T.csv", "measured_T.csv", "thermocouple_T.csv", "thermal_cycle.json"},
    "compare": {"asd_tf.csv", "asd_shfd.csv", "set_T.csv", "measured_T_tf.csv", "measured_T_shfd.csv",
                "compare.json"},
}


def run(tmp_path, command, text, *extra, name="run"):
    cfg = tmp_path / f"{name}.yaml"
    cfg.write_text(text)
    out = tmp_path / name
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


@pytest.mark.parametrize("command", list(SHORT))
def test_subcommand_outputs_and_rerun_identity(tmp_path, command):
    code, a = run(tmp_path, command, SHORT[command], "--seed", "3", name="a")
    assert code == 0
    assert {p.name for p in a.iterdir()} == OUTPUTS[command]
    code, b = run(tmp_path, command, SHORT[command], "--seed", "3", name="b")
    assert code == 0
    for f in OUTPUTS[command]:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_seed_changes_noisy_output(tmp_path):
    _, a = run(tmp_path, "sensitivity", SHORT["sensitivity"], "--seed", "1", name="a")
    _, b = run(tmp_path, "sensitivity", SHORT["sensitivity"], "--seed", "2", name="b")
    assert (a / "asd.csv").read_bytes() != (b / "asd.csv").read_bytes()
    assert json.loads((b / "sensitivity.json").read_text())["seed"] == 2


def test_threads_flag(tmp_path):
    code, _ = run(tmp_path, "lia-sweep", SHORT["lia-sweep"], "--threads", "2")
    assert code == 0
    code, out = run(tmp_path, "lia-sweep", SHORT["lia-sweep"], "--threads", "0", name="zero")
    assert code == 2 and not out.exists()


def test_malformed_config_names_key_and_line(tmp_path, capsys):
    code, out = run(tmp_path, "sensitivity", "seed: 1\nsensitivity:\n  duraton_s: 5\n")
    assert code == 2
    err = capsys.readouterr().err
    assert "duraton_s" in err and "line 3" in err
    assert not out.exists()


def test_bad_value_type(tmp_path, capsys):
    code, _ = run(tmp_path, "sensitivity", "sensitivity:\n  tau_s: -1\n")
    assert code == 2
    assert "tau_s" in capsys.readouterr().err


def test_invalid_yaml(tmp_path):
    code, _ = run(tmp_path, "spectrum", "spectrum: [unclosed\n")
    assert code == 2


def test_missing_config_file(tmp_path):
    assert main(["spectrum", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_numeric_guard_exit_code(tmp_path, capsys):
    # 2 mT is below the collapse threshold for the transverse regime
    text = "lia_sweep:\n  regime:\n    regime: TF\n    field_mT: [0.0, 1.414, -1.414]\n"
    code, out = run(tmp_path, "lia-sweep", text)
    assert code == 3
    assert "B_perp" in capsys.readouterr().err
    assert not out.exists()


def test_flat_spectrum_sweep(tmp_path):
    code, out = run(tmp_path, "lia-sweep", "lia_sweep:\n  flat_spectrum: true\n  step_hz: 50.0e3\n")
    assert code == 0
    v = np.loadtxt(out / "lia_sweep.csv", delimiter=",", skiprows=1)[:, 1]
    assert np.all(v == 0)
    assert json.loads((out / "zero_crossing.json").read_text())["zero_crossing"] is None


def test_zero_field_spectrum_single_dip(tmp_path):
    code, out = run(tmp_path, "spectrum", (CONFIGS / "spectrum_zero_field.yaml").read_text())
    assert code == 0
    summary = json.loads((out / "spectrum.json").read_text())
    (entry,) = summary.values()
    assert entry["pl_min_freq_hz"] == pytest.approx(2.87e9, abs=20e3)


def test_a_perp_sweep_reported(tmp_path):
    text = SHORT["spectrum"] + "  a_perp_sweep_hz: [0.0, 2.7e6]\n"
    code, out = run(tmp_path, "spectrum", text)
    assert code == 0
    rows = json.loads((out / "spectrum.json").read_text())["axial"]["a_perp_sweep"]
    assert [r["a_perp_hz"] for r in rows] == [0.0, 2.7e6]
    assert rows[0]["spread_low_hz"] == pytest.approx(2 * 2.16e6, rel=0.01)


def test_tone_visible_in_asd(tmp_path):
    code, out = run(tmp_path, "sensitivity", (CONFIGS / "sensitivity_tone.yaml").read_text())
    assert code == 0
    f, v = np.loadtxt(out / "asd.csv", delimiter=",", skiprows=1).T
    peak = v[np.abs(f - 25) <= 0.1].max()
    background = np.median(v[(f > 5) & (f < 20)])
    assert peak > 5 * background


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    load_config(path)


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="line 2"):
        load_config(text="seed: 1\nbogus: 3\n")


def test_module_entry_point(tmp_path):
    out = tmp_path / "o"
    r = subprocess.run([sys.executable, "-m", "nvtherm", "lia-sweep", "--out", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (out / "zero_crossing.json").exists()
