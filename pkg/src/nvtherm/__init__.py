"""NV-center ODMR thermometry simulator.

Spin Hamiltonians, ODMR synthesis, FM lock-in readout, noise and the
transverse-field versus SHfD thermometry comparison.
"""
from .spin_core import NvParameters, MagneticField, eigensolve, min_transverse_field
from .odmr import Lineshape, DriveConfig, OdmrSpectrum, transitions_for_lab_field, synthesize_spectrum
from .lockin import FmConfig, LockInConfig, TimeTrace, LockIn, lia_sweep, find_zero_crossing
from .noise import NoiseConfig, MagneticTone, asd, sensitivity_floor, cw_shot_noise_limit
from .thermometry import (
    RegimeConfig, ThermalScenario, tf_regime, shfd_regime, prepare_sensor, calibrate,
    measure_sensitivity, run_thermal_cycle, compare_regimes,
)

__version__ = "0.1.0"
