"""PD force-feedback loop and lead-screw actuator.

The controller runs at ``tick_rate``: it takes the largest of the finger
voltages, compares it with the setpoint voltage, and commands a signed
stepping rate from the error and its first difference.  Inside the deadband or
at a travel stop the motor is switched off and the non-backdrivable screw
holds the retraction exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .sensing import AdcModel, SensorCalibration, check_setpoint


@dataclass(frozen=True)
class ControllerParams:
    kp: float = 4000.0          # steps/s per volt
    kd: float = 125.0           # steps/s per (volt/tick)
    tick_rate: float = 10000.0  # Hz
    deadband: float = 0.02      # V
    max_step_rate: float = 10000.0
    hold_time: float = 0.1      # s of continuous motor-off that counts as settled

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ValueError("gains must be nonnegative")
        if self.tick_rate <= 0:
            raise ValueError("tick rate must be positive")
        if self.deadband <= 0:
            raise ValueError("deadband must be positive")
        if self.max_step_rate <= 0:
            raise ValueError("max step rate must be positive")
        if self.hold_time <= 0:
            raise ValueError("hold time must be positive")

    @property
    def hold_ticks(self) -> int:
        return max(1, int(round(self.hold_time * self.tick_rate)))


@dataclass(frozen=True)
class ActuatorModel:
    steps_per_mm: float = 100.0
    travel: tuple[float, float] = (0.0, 10.0)
    back_drivable: bool = False

    def __post_init__(self):
        if self.steps_per_mm <= 0:
            raise ValueError("steps_per_mm must be positive")
        lo, hi = self.travel
        if not lo < hi:
            raise ValueError("travel must be an increasing interval")
        if self.back_drivable:
            raise ValueError("only the non-backdrivable lead screw is modelled")

    def move_time(self, distance_mm: float, params: ControllerParams) -> float:
        """Seconds to move ``distance_mm`` at the maximum stepping rate."""
        return abs(distance_mm) * self.steps_per_mm / params.max_step_rate


@dataclass(frozen=True)
class ControllerState:
    retraction: float = 0.0
    prev_error: float | None = None
    motor_on: bool = False
    tick: int = 0
    speed: float = 0.0


def pd_speed(error: float, d_error: float, params: ControllerParams) -> float:
    if not (np.isfinite(error) and np.isfinite(d_error)):
        raise ValueError("error terms must be finite")
    u = params.kp * error + params.kd * d_error
    return min(max(u, -params.max_step_rate), params.max_step_rate)


def control_tick(state: ControllerState, measured_v: Sequence[float], threshold_v: float,
                 params: ControllerParams, actuator: ActuatorModel,
                 v_supply: float = 5.0) -> ControllerState:
    if any(not 0.0 <= v <= v_supply for v in measured_v):
        raise ValueError(f"measured voltages must lie in [0, {v_supply}] V")
    error = threshold_v - max(measured_v)
    prev = error if state.prev_error is None else state.prev_error
    lo, hi = actuator.travel
    nxt = replace(state, prev_error=error, tick=state.tick + 1, motor_on=False, speed=0.0)
    if abs(error) <= params.deadband:
        return nxt
    speed = pd_speed(error, error - prev, params)
    dr = speed / params.tick_rate / actuator.steps_per_mm
    r = state.retraction
    if (r >= hi and dr > 0) or (r <= lo and dr < 0):
        return nxt
    return replace(nxt, retraction=min(max(r + dr, lo), hi), motor_on=True, speed=speed)


@dataclass(frozen=True)
class ContactPlant:
    """Linear fingertip contact: zero force until ``contact`` mm of retraction,
    then ``stiffness`` N per mm, identical on every finger."""

    contact: float
    stiffness: float

    def force(self, retraction):
        return np.where(np.asarray(retraction) > self.contact,
                        self.stiffness * (np.asarray(retraction) - self.contact), 0.0)


@dataclass(frozen=True)
class LoopSetup:
    """Sensor, controller and actuator settings shared by every trial."""

    cal: SensorCalibration
    params: ControllerParams = ControllerParams()
    actuator: ActuatorModel = ActuatorModel()
    noise_sd: float = 0.005
    adc: AdcModel | None = None
    n_fingers: int = 3

    def constants(self, timeout: float, r0: float = 0.0) -> kernels.LoopConstants:
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        p, a = self.params, self.actuator
        return kernels.LoopConstants(
            v_ref=self.cal.v_ref, slope=self.cal.slope, v_max=self.cal.v_max,
            noise_sd=float(self.noise_sd),
            adc_levels=self.adc.levels if self.adc else 0,
            adc_full_scale=self.adc.full_scale if self.adc else 1.0,
            kp=p.kp, kd=p.kd, deadband=p.deadband, max_rate=p.max_step_rate,
            tick_rate=p.tick_rate, steps_per_mm=a.steps_per_mm,
            travel_lo=a.travel[0], travel_hi=a.travel[1],
            hold_ticks=p.hold_ticks, max_ticks=int(round(timeout * p.tick_rate)),
            n_fingers=self.n_fingers, r0=r0)


class LoopReport(NamedTuple):
    settled: bool
    settle_time: float           # s; start of the final hold window (nan on timeout)
    final_force: float           # true per-finger force when the loop stopped, N
    force_error: float           # final_force - setpoint, N
    peak_force: float
    final_retraction: float
    ticks: int
    trajectory: kernels.Trajectory | None = None


def run_closed_loop(plant: ContactPlant, setpoint: float, setup: LoopSetup, timeout: float = 5.0,
                    seed: int = 0, trial: int = 0, record: bool = True) -> LoopReport:
    """Drive the loop against ``plant`` until the motor has held for
    ``hold_time`` or ``timeout`` elapses.  A timeout is reported, not raised."""
    threshold = check_setpoint(setpoint, setup.cal)
    lc = setup.constants(timeout)
    key = kernels.trial_keys(seed, [trial])[0]
    rate = setup.params.tick_rate
    if record:
        tr = kernels.run_trajectory(plant.contact, plant.stiffness, threshold, key, lc)
        final_r = float(tr.retraction[-1]) if len(tr.retraction) else lc.r0
        final_f = float(plant.force(final_r))
        peak = max(float(tr.force.max(initial=0.0)), final_f)
        settle, ticks = tr.settle_tick, len(tr.retraction)
    else:
        tr = None
        res = kernels.run_batch([plant.contact], plant.stiffness, threshold, [key], lc)
        final_r, final_f, peak = float(res.retraction[0]), float(res.force[0]), float(res.peak_force[0])
        settle, ticks = int(res.settle_tick[0]), int(res.ticks[0])
    return LoopReport(settled=settle >= 0,
                      settle_time=settle / rate if settle >= 0 else float("nan"),
                      final_force=final_f, force_error=final_f - setpoint, peak_force=peak,
                      final_retraction=final_r, ticks=ticks, trajectory=tr)


TRAJECTORY_COLUMNS = ("tick", "time_s", "retraction_mm", "error_V", "speed_steps_s",
                      "force_N_true", "motor_on")


def write_trajectory_csv(path, traj: kernels.Trajectory, tick_rate: float, every: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for t in range(0, len(traj.retraction), every):
            w.writerow([t, f"{t / tick_rate:.9g}", f"{traj.retraction[t]:.9g}", f"{traj.error[t]:.9g}",
                        f"{traj.speed[t]:.9g}", f"{traj.force[t]:.9g}", int(traj.motor_on[t])])
