"""YAML run configuration: schema, defaults and conversion to model objects.

Every block rejects unknown keys. Fields are given in mT in the lab
(crystal) frame; frequencies in Hz.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import thermometry as th
from .lockin import FmConfig
from .noise import MagneticTone, NoiseConfig
from .odmr import DriveConfig, Lineshape
from .spin_core import NvParameters


class ConfigError(Exception):
    """Invalid run configuration; ``str()`` lists key paths and line numbers."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Vec3 = tuple[float, float, float]


class NvModel(_Strict):
    D_hz: float = 2.87e9
    g: float = 2.003
    A_par_hz: float = 2.16e6
    A_perp_hz: Optional[float] = None
    Q_hz: float = -4.945e6
    c_tau_hz_per_K: float = -74.2e3

    def build(self) -> NvParameters:
        return NvParameters(D=self.D_hz, g=self.g, A_par=self.A_par_hz, A_perp=self.A_perp_hz,
                            Q=self.Q_hz, c_tau=self.c_tau_hz_per_K)


class ToneModel(_Strict):
    frequency_hz: float = Field(25.0, ge=0)
    amplitude_nT: float = Field(100.0, ge=0)
    direction: Vec3 = (1.0, 0.0, 0.0)


class NoiseModel(_Strict):
    preset: Literal["default", "shot", "none"] = "default"
    laser_rin_per_rthz: Optional[float] = Field(None, ge=0)
    electronic_floor: Optional[float] = Field(None, ge=0)
    tones: list[ToneModel] = []
    magnetic_drift_T_per_rts: float = Field(0.0, ge=0)
    drift_direction: Vec3 = (1.0, 0.0, 0.0)
    exact_field_mapping: bool = False

    def build(self) -> NoiseConfig:
        shot, rin, elec = {
            "default": (True, th.DEFAULT_LASER_RIN, th.DEFAULT_ELECTRONIC_FLOOR),
            "shot": (True, 0.0, 0.0),
            "none": (False, 0.0, 0.0),
        }[self.preset]
        if self.laser_rin_per_rthz is not None:
            rin = self.laser_rin_per_rthz
        if self.electronic_floor is not None:
            elec = self.electronic_floor
        tones = tuple(MagneticTone(t.frequency_hz, t.amplitude_nT * 1e-9, t.direction) for t in self.tones)
        return NoiseConfig(shot, rin, elec, tones, self.magnetic_drift_T_per_rts, self.drift_direction,
                           self.exact_field_mapping)


class RegimeModel(_Strict):
    regime: Literal["TF", "SHfD"] = "TF"
    field_mT: Optional[Vec3] = None
    axis: Vec3 = (1.0, 1.0, 1.0)
    linewidth_hz: float = Field(1.1e6, gt=0)
    contrast: Optional[float] = Field(None, gt=0, lt=1)
    shfd_offset_hz: float = Field(2.16e6, gt=0)

    def build(self) -> th.RegimeConfig:
        axis = tuple(np.asarray(self.axis, dtype=float) / np.linalg.norm(self.axis))
        if self.regime == "TF":
            field = self.field_mT or tuple(6.0 * th.TF_BIAS_DIRECTION)
            contrast = self.contrast or Lineshape().contrast
            drive = DriveConfig()
        else:
            field = self.field_mT or tuple(2.0 * th.SENSOR_AXIS)
            contrast = self.contrast or th.SHFD_CONTRAST
            drive = DriveConfig("shfd", self.shfd_offset_hz)
        return th.RegimeConfig(self.regime, tuple(1e-3 * np.asarray(field, dtype=float)), drive,
                               Lineshape(self.linewidth_hz, contrast), axis)


class FmModel(_Strict):
    f_mod_hz: float = Field(1009.0, gt=0)
    depth_hz: float = Field(0.6e6, gt=0)

    def build(self) -> FmConfig:
        return FmConfig(self.f_mod_hz, self.depth_hz)


class ScenarioModel(_Strict):
    waveform: Literal["square", "sine"] = "square"
    period_s: float = Field(1800.0, gt=0)
    amplitude_K: float = Field(1.0, ge=0)
    base_T_K: float = 298.15
    duration_s: float = Field(3600.0, gt=0)

    def build(self) -> th.ThermalScenario:
        return th.ThermalScenario(self.waveform, self.period_s, self.amplitude_K, self.base_T_K, self.duration_s)


def _default_spectrum_fields() -> dict[str, Vec3]:
    return {"tf": tuple(6.0 * th.TF_BIAS_DIRECTION), "axial": tuple(2.0 * th.SENSOR_AXIS)}


class SpectrumBlock(_Strict):
    fields_mT: dict[str, Vec3] = Field(default_factory=_default_spectrum_fields)
    center_hz: Optional[float] = None
    half_span_hz: float = Field(160e6, gt=0)
    step_hz: float = Field(20e3, gt=0)
    linewidth_hz: float = Field(1.1e6, gt=0)
    contrast: float = Field(0.0064, gt=0, lt=1)
    hyperfine: bool = True
    # A_perp values (Hz) for which the [111] hyperfine spread is reported
    a_perp_sweep_hz: list[float] = Field(default_factory=list)

    @field_validator("fields_mT")
    @classmethod
    def _names(cls, v):
        if not v:
            raise ValueError("at least one field is required")
        for name in v:
            if not name.replace("_", "").isalnum():
                raise ValueError(f"field name {name!r} must be alphanumeric")
        return v


class LiaSweepBlock(_Strict):
    regime: RegimeModel = RegimeModel()
    fm: FmModel = FmModel()
    tau_s: float = Field(10e-3, gt=0)
    half_span_hz: float = Field(3e6, gt=0)
    step_hz: float = Field(5e3, gt=0)
    I0: float = Field(th.DEFAULT_I0, gt=0)
    flat_spectrum: bool = False


class SensitivityBlock(_Strict):
    regime: RegimeModel = RegimeModel()
    fm: FmModel = FmModel()
    noise: NoiseModel = NoiseModel()
    tau_s: float = Field(1e-3, gt=0)
    duration_s: float = Field(600.0, gt=0)
    fs_hz: Optional[float] = Field(None, gt=0)
    band_hz: tuple[float, float] = (1.0, 20.0)
    n_segments: int = Field(8, ge=1)
    I0: float = Field(th.DEFAULT_I0, gt=0)


class ThermalCycleBlock(_Strict):
    scenario: ScenarioModel = ScenarioModel()
    regime: RegimeModel = RegimeModel()
    fm: FmModel = FmModel()
    noise: NoiseModel = NoiseModel()
    tau_s: float = Field(10e-3, gt=0)
    averaging_time_s: float = Field(1.0, gt=0)
    fs_hz: Optional[float] = Field(None, gt=0)
    I0: float = Field(th.DEFAULT_I0, gt=0)


class CompareBlock(_Strict):
    scenario: ScenarioModel = ScenarioModel()
    tf: RegimeModel = RegimeModel()
    shfd: RegimeModel = RegimeModel(regime="SHfD")
    fm: FmModel = FmModel()
    noise: NoiseModel = NoiseModel(tones=[ToneModel()])
    sensitivity_duration_s: float = Field(600.0, gt=0)
    band_hz: tuple[float, float] = (1.0, 20.0)
    fs_hz: Optional[float] = Field(None, gt=0)
    I0: float = Field(th.DEFAULT_I0, gt=0)


class RunConfig(_Strict):
    seed: int = 0
    out: Optional[str] = None
    verbosity: int = 0
    nv: NvModel = NvModel()
    spectrum: Optional[SpectrumBlock] = None
    lia_sweep: Optional[LiaSweepBlock] = None
    sensitivity: Optional[SensitivityBlock] = None
    thermal_cycle: Optional[ThermalCycleBlock] = None
    compare: Optional[CompareBlock] = None


BLOCKS = {"spectrum": SpectrumBlock, "lia_sweep": LiaSweepBlock, "sensitivity": SensitivityBlock,
          "thermal_cycle": ThermalCycleBlock, "compare": CompareBlock}


def _line_of(node, loc) -> int | None:
    """1-based line of the YAML node at key path ``loc``, or its nearest parent."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == str(key)), None)
            if nxt is None:
                key_node = next((k for k, _ in node.value if k.value == str(key)), None)
                return key_node.start_mark.line + 1 if key_node is not None else line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
        line = node.start_mark.line + 1
    return line


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Parse and validate a YAML config. Raises :class:`ConfigError`."""
    if text is None:
        if path is None:
            return RunConfig()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML syntax error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at top level")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = [p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-"))]
            key = ".".join(str(p) for p in loc) or "<root>"
            line = _line_of(root, loc)
            where = f" (line {line})" if line else ""
            msgs.append(f"{key}{where}: {err['msg']}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(msgs)) from None
