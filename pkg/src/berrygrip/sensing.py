"""Fingertip force sensor chain: linear force/voltage map with rail
saturation, two-point calibration, ADC quantisation and Gaussian noise."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class SensorRangeError(ValueError):
    """Voltage or force outside the range where the linear map can be trusted."""


class SaturationError(SensorRangeError):
    def __init__(self, message: str, force_lower_bound: float):
        super().__init__(message)
        self.force_lower_bound = force_lower_bound


@dataclass(frozen=True)
class SensorCalibration:
    slope: float                # V/N
    v_ref: float = 3.0
    v_supply: float = 5.0
    v_min: float = 0.0
    v_max: float | None = None

    def __post_init__(self):
        if self.v_max is None:
            object.__setattr__(self, "v_max", self.v_supply)
        if not 0 < self.v_ref < self.v_supply:
            raise ValueError("need 0 < v_ref < v_supply")
        if self.slope <= 0:
            raise ValueError("calibration slope must be positive")

    @property
    def saturation_force(self) -> float:
        """Smallest force that drives the output to the upper rail."""
        return (self.v_max - self.v_ref) / self.slope


def two_point_calibrate(zero_point, span_point, v_supply: float = 5.0) -> SensorCalibration:
    """Linear calibration from a no-load reading and one loaded reading.

    Both points are ``(force_N, volts)``; the zero point's force must be 0.
    """
    f0, v0 = zero_point
    f1, v1 = span_point
    if f0 != 0:
        raise ValueError("zero point must be taken at 0 N")
    if f1 <= 0:
        raise ValueError("span force must be positive")
    if v1 <= v0:
        raise ValueError("span voltage must exceed the reference voltage")
    return SensorCalibration(slope=(v1 - v0) / f1, v_ref=v0, v_supply=v_supply)


# span point 4.5 V at 3.9 N
PROCEDURE = two_point_calibrate((0.0, 3.0), (3.9, 0.9 * 5.0))
FIELD_2020 = SensorCalibration(slope=5.232, v_ref=3.0, v_supply=5.0)

PRESETS = {"procedure": PROCEDURE, "field-2020": FIELD_2020}


def preset(name: str) -> SensorCalibration:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown calibration preset {name!r}; choose from {sorted(PRESETS)}") from None


def force_to_voltage(force, cal: SensorCalibration):
    f = np.asarray(force, dtype=float)
    if np.any(f < 0):
        raise SensorRangeError("force must be nonnegative")
    v = np.clip(cal.v_ref + cal.slope * f, cal.v_min, cal.v_max)
    return float(v) if np.ndim(force) == 0 else v


def voltage_to_force(voltage: float, cal: SensorCalibration) -> float:
    if voltage >= cal.v_max:
        lb = cal.saturation_force
        raise SaturationError(f"sensor saturated at {voltage:.4g} V: force unknown, >= {lb:.4g} N", lb)
    if voltage < cal.v_ref:
        raise SensorRangeError(f"{voltage:.4g} V is below the {cal.v_ref:.4g} V reference")
    return (voltage - cal.v_ref) / cal.slope


def check_setpoint(force: float, cal: SensorCalibration) -> float:
    """Threshold voltage for a force setpoint; raises if the setpoint saturates."""
    if force < 0:
        raise SensorRangeError("setpoint must be nonnegative")
    v = cal.v_ref + cal.slope * force
    if v >= cal.v_max:
        raise SaturationError(
            f"setpoint {force:.4g} N maps to {v:.4g} V, at or above the {cal.v_max:.4g} V rail "
            f"(calibration saturates at {cal.saturation_force:.4g} N)", cal.saturation_force)
    return v


@dataclass(frozen=True)
class AdcModel:
    bits: int = 10
    full_scale: float = 5.0

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("ADC needs at least one bit")
        if self.full_scale <= 0:
            raise ValueError("full scale must be positive")

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1


def adc_quantize(voltage, adc: AdcModel):
    v = np.asarray(voltage, dtype=float)
    if np.any(v < 0) or np.any(v > adc.full_scale):
        raise SensorRangeError(f"voltage outside [0, {adc.full_scale}] V")
    counts = np.rint(v / adc.full_scale * adc.levels).astype(np.int64)
    return int(counts) if np.ndim(voltage) == 0 else counts


def adc_dequantize(counts, adc: AdcModel):
    v = np.asarray(counts, dtype=float) * (adc.full_scale / adc.levels)
    return float(v) if np.ndim(counts) == 0 else v


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian voltage noise, one channel per finger.

    ``stream`` is the trial index: ``sample(seed, ticks)`` returns exactly the
    noise the closed loop adds on trial ``stream`` of a run seeded ``seed``.
    """
    std_dev: float = 0.005
    stream: int = 0

    def __post_init__(self):
        if self.std_dev < 0:
            raise ValueError("noise std must be nonnegative")
        if self.stream < 0:
            raise ValueError("stream id must be nonnegative")

    def sample(self, seed: int, ticks: int, n_fingers: int = 3) -> np.ndarray:
        """Noise voltages, shape ``(ticks, n_fingers)``."""
        from . import kernels

        if self.std_dev == 0:
            return np.zeros((ticks, n_fingers))
        key = kernels.trial_keys(seed, [self.stream])
        z = np.empty((ticks, n_fingers))
        for t in range(ticks):
            z[t] = kernels.normals_np(key, t, n_fingers)[0]
        return self.std_dev * z


def write_calibration_csv(path, cal: SensorCalibration, forces) -> None:
    """Export ``force_N, voltage_V`` pairs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["force_N", "voltage_V"])
        for f in forces:
            w.writerow([f"{f:.9g}", f"{force_to_voltage(float(f), cal):.9g}"])
