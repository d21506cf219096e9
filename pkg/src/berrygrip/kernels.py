"""Hot loops of the force-feedback simulation.

Two interchangeable backends run the same tick arithmetic:

* numba: ``_run_batch_nb`` walks trials one at a time (``nogil``, so chunks
  can run on a thread pool);
* numpy: ``_run_batch_np`` advances every unfinished trial in lock-step, one
  vectorised tick at a time.

Sensor noise is drawn from a counter-based SplitMix64 stream addressed by
``(trial key, tick, draw)``, so a trial's noise does not depend on which
backend, chunk or thread ran it.  The two backends agree to rounding of the
libm transcendentals in Box-Muller.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from ._accel import HAVE_NUMBA, njit

_MASK64 = (1 << 64) - 1
_GAMMA_INT = 0x9E3779B97F4A7C15
_GAMMA = np.uint64(_GAMMA_INT)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * np.pi


class LoopConstants(NamedTuple):
    """Everything the tick loop needs besides the per-trial arrays."""

    v_ref: float
    slope: float
    v_max: float
    noise_sd: float
    adc_levels: int          # 0 disables quantisation
    adc_full_scale: float
    kp: float
    kd: float
    deadband: float
    max_rate: float
    tick_rate: float
    steps_per_mm: float
    travel_lo: float
    travel_hi: float
    hold_ticks: int
    max_ticks: int
    n_fingers: int
    r0: float = 0.0
    level_step: float = 0.0  # N; first-passage grid for the running-max force
    n_levels: int = 0


class BatchResult(NamedTuple):
    settle_tick: np.ndarray    # first tick of the final hold window, -1 on timeout
    ticks: np.ndarray          # ticks simulated
    retraction: np.ndarray     # final retraction, mm
    force: np.ndarray          # final true per-finger force, N
    peak_force: np.ndarray     # max true per-finger force seen, N
    level_ticks: np.ndarray    # (n, n_levels): first tick with force >= j * level_step, -1 if never
    stop_tick: np.ndarray      # tick at which peak force reached the trial's stop force, -1 if never


def trial_keys(seed: int, indices) -> np.ndarray:
    """One 64-bit noise key per trial index, from ``SeedSequence([seed, i])``."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    out = np.empty(idx.size, dtype=np.uint64)
    for j, i in enumerate(idx):
        out[j] = np.random.SeedSequence([int(seed), int(i)]).generate_state(1, np.uint64)[0]
    return out


# ---------------------------------------------------------------- scalar path

@njit
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def _uniform(key, counter):
    # (0, 1]; counter-th output of a SplitMix64 stream started at key
    z = _mix(key + np.uint64(counter) * _GAMMA)
    return (np.float64(z >> _S11) + 1.0) * _INV53


@njit
def _normal(key, tick, j, draws_per_tick):
    """j-th standard normal of a tick (Box-Muller, both halves used)."""
    pair = j // 2
    base = tick * draws_per_tick + 2 * pair
    u1 = _uniform(key, base)
    u2 = _uniform(key, base + 1)
    r = np.sqrt(-2.0 * np.log(u1))
    if j % 2 == 0:
        return r * np.cos(_TWO_PI * u2)
    return r * np.sin(_TWO_PI * u2)


@njit
def _clip_quantize(v, v_max, adc_levels, adc_fs):
    if v < 0.0:
        v = 0.0
    elif v > v_max:
        v = v_max
    if adc_levels > 0:
        v = np.rint(v / adc_fs * adc_levels) * (adc_fs / adc_levels)
    return v


@njit
def _measure(r, contact, stiffness, key, tick, v_ref, slope, v_max, noise_sd,
             adc_levels, adc_fs, n_fingers):
    """True per-finger force and the max measured voltage over fingers."""
    force = stiffness * (r - contact) if r > contact else 0.0
    v_true = v_ref + slope * force
    if v_true > v_max:
        v_true = v_max
    if noise_sd <= 0.0:
        return force, _clip_quantize(v_true, v_max, adc_levels, adc_fs)
    draws = 2 * ((n_fingers + 1) // 2)
    vmax_meas = -1.0
    # one Box-Muller pair feeds two fingers; same values as _normal(key, tick, f, draws)
    for pair in range((n_fingers + 1) // 2):
        base = tick * draws + 2 * pair
        u1 = _uniform(key, base)
        u2 = _uniform(key, base + 1)
        rad = np.sqrt(-2.0 * np.log(u1))
        v = _clip_quantize(v_true + noise_sd * (rad * np.cos(_TWO_PI * u2)), v_max, adc_levels, adc_fs)
        if v > vmax_meas:
            vmax_meas = v
        if 2 * pair + 1 < n_fingers:
            v = _clip_quantize(v_true + noise_sd * (rad * np.sin(_TWO_PI * u2)), v_max,
                               adc_levels, adc_fs)
            if v > vmax_meas:
                vmax_meas = v
    return force, vmax_meas


@njit
def _step(r, prev_e, first, vmeas, threshold, kp, kd, deadband, max_rate,
          tick_rate, spm, lo, hi):
    """One controller update.  Returns (retraction, error, motor_on, speed)."""
    e = threshold - vmeas
    if first:
        prev_e = e
    speed = 0.0
    on = False
    if abs(e) > deadband:
        speed = kp * e + kd * (e - prev_e)
        if speed > max_rate:
            speed = max_rate
        elif speed < -max_rate:
            speed = -max_rate
        dr = speed / tick_rate / spm
        if (r >= hi and dr > 0.0) or (r <= lo and dr < 0.0):
            speed = 0.0
        else:
            r = r + dr
            if r > hi:
                r = hi
            elif r < lo:
                r = lo
            on = True
    return r, e, on, speed


@njit
def _run_batch_nb(contact, stiffness, threshold, keys, stop_force, v_ref, slope, v_max, noise_sd,
                  adc_levels, adc_fs, kp, kd, deadband, max_rate, tick_rate, spm,
                  lo, hi, hold_ticks, max_ticks, n_fingers, r0, level_step,
                  out_settle, out_ticks, out_r, out_force, out_peak, out_levels, out_stop):
    n_levels = out_levels.shape[1]
    for i in range(contact.shape[0]):
        c = contact[i]
        k = stiffness[i]
        r = r0
        prev_e = 0.0
        hold = 0
        peak = 0.0
        settle = -1
        ticks = max_ticks
        nxt = 0
        stop = -1
        for j in range(n_levels):
            out_levels[i, j] = -1
        for t in range(max_ticks):
            force, vm = _measure(r, c, k, keys[i], t, v_ref, slope, v_max, noise_sd,
                                 adc_levels, adc_fs, n_fingers)
            if force > peak:
                peak = force
            while nxt < n_levels and peak >= nxt * level_step:
                out_levels[i, nxt] = t
                nxt += 1
            if peak >= stop_force[i]:
                stop = t
                ticks = t
                break
            r, prev_e, on, speed = _step(r, prev_e, t == 0, vm, threshold[i], kp, kd,
                                         deadband, max_rate, tick_rate, spm, lo, hi)
            if on:
                hold = 0
            else:
                hold += 1
                if hold >= hold_ticks:
                    settle = t - hold_ticks + 1
                    ticks = t + 1
                    break
        force = k * (r - c) if r > c else 0.0
        if force > peak:
            peak = force
            while nxt < n_levels and peak >= nxt * level_step:
                out_levels[i, nxt] = ticks
                nxt += 1
            if stop < 0 and peak >= stop_force[i]:
                stop = ticks
        out_stop[i] = stop
        out_settle[i] = settle
        out_ticks[i] = ticks
        out_r[i] = r
        out_force[i] = force
        out_peak[i] = peak


@njit
def _run_trajectory(contact, stiffness, threshold, key, v_ref, slope, v_max, noise_sd,
                    adc_levels, adc_fs, kp, kd, deadband, max_rate, tick_rate, spm,
                    lo, hi, hold_ticks, max_ticks, n_fingers, r0,
                    rec_r, rec_e, rec_speed, rec_force, rec_on):
    """Single trial with per-tick recording; returns (ticks, settle_tick)."""
    r = r0
    prev_e = 0.0
    hold = 0
    for t in range(max_ticks):
        force, vm = _measure(r, contact, stiffness, key, t, v_ref, slope, v_max, noise_sd,
                             adc_levels, adc_fs, n_fingers)
        r, prev_e, on, speed = _step(r, prev_e, t == 0, vm, threshold, kp, kd,
                                     deadband, max_rate, tick_rate, spm, lo, hi)
        rec_r[t] = r
        rec_e[t] = prev_e
        rec_speed[t] = speed
        rec_force[t] = force
        rec_on[t] = on
        if on:
            hold = 0
        else:
            hold += 1
            if hold >= hold_ticks:
                return t + 1, t - hold_ticks + 1
    return max_ticks, -1


def _uniform_py(key, counter):
    # pure-Python twin of _uniform; numpy uint64 scalars would warn on wraparound
    z = (int(key) + counter * _GAMMA_INT) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return ((z >> 11) + 1.0) * _INV53


if not HAVE_NUMBA:
    _uniform = _uniform_py  # noqa: F811


# ---------------------------------------------------------------- numpy path

def _mix_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _uniform_np(keys, counter: int):
    offset = np.uint64((counter * _GAMMA_INT) & _MASK64)
    z = _mix_np(keys + offset)
    return ((z >> _S11).astype(np.float64) + 1.0) * _INV53


def normals_np(keys, tick: int, n_fingers: int) -> np.ndarray:
    """Standard normals for one tick, shape ``(len(keys), n_fingers)``."""
    draws = 2 * ((n_fingers + 1) // 2)
    out = np.empty((keys.size, n_fingers))
    for pair in range((n_fingers + 1) // 2):
        base = tick * draws + 2 * pair
        u1 = _uniform_np(keys, base)
        u2 = _uniform_np(keys, base + 1)
        r = np.sqrt(-2.0 * np.log(u1))
        out[:, 2 * pair] = r * np.cos(_TWO_PI * u2)
        if 2 * pair + 1 < n_fingers:
            out[:, 2 * pair + 1] = r * np.sin(_TWO_PI * u2)
    return out


def _run_batch_np(contact, stiffness, threshold, keys, stop_force, lc: LoopConstants) -> BatchResult:
    n = contact.size
    L = lc.n_levels
    settle = np.full(n, -1, dtype=np.int64)
    ticks = np.full(n, lc.max_ticks, dtype=np.int64)
    out_r = np.empty(n)
    out_f = np.empty(n)
    out_peak = np.empty(n)
    out_levels = np.full((n, L), -1, dtype=np.int64)
    out_stop = np.full(n, -1, dtype=np.int64)

    idx = np.arange(n)
    c, k, thr, key, stop = (contact.copy(), stiffness.copy(), threshold.copy(), keys.copy(),
                            stop_force.copy())
    r = np.full(n, lc.r0)
    prev_e = np.zeros(n)
    hold = np.zeros(n, dtype=np.int64)
    peak = np.zeros(n)
    nxt = np.zeros(n, dtype=np.int64)
    q = lc.adc_full_scale / lc.adc_levels if lc.adc_levels > 0 else 0.0

    def pass_levels(rows, t):
        # same order of comparisons as the scalar loop: level j reached when peak >= j * step
        rows = rows[(nxt[rows] < L) & (peak[rows] >= nxt[rows] * lc.level_step)]
        while rows.size:
            out_levels[idx[rows], nxt[rows]] = t
            nxt[rows] += 1
            rows = rows[(nxt[rows] < L) & (peak[rows] >= nxt[rows] * lc.level_step)]

    def retire(mask, t_settle, t_run, stopped=False):
        rows = np.flatnonzero(mask)
        f = np.where(r[rows] > c[rows], k[rows] * (r[rows] - c[rows]), 0.0)
        j = idx[rows]
        if stopped:
            out_stop[j] = t_run
        else:
            grew = f > peak[rows]
            peak[rows] = np.maximum(peak[rows], f)
            if L:
                pass_levels(rows[grew], t_run)
            out_stop[j[grew & (peak[rows] >= stop[rows])]] = t_run
        settle[j] = t_settle
        ticks[j] = t_run
        out_r[j] = r[rows]
        out_f[j] = f
        out_peak[j] = peak[rows]

    all_rows = np.arange(n)
    for t in range(lc.max_ticks):
        if idx.size == 0:
            break
        force = np.where(r > c, k * (r - c), 0.0)
        peak = np.maximum(peak, force)
        if L:
            pass_levels(all_rows[:idx.size], t)
        hit = peak >= stop
        if hit.any():
            retire(hit, -1, t, stopped=True)
            keep = ~hit
            idx, c, k, thr, key, stop = idx[keep], c[keep], k[keep], thr[keep], key[keep], stop[keep]
            r, prev_e, hold, peak, nxt = r[keep], prev_e[keep], hold[keep], peak[keep], nxt[keep]
            force = force[keep]
            if idx.size == 0:
                break
        v = np.minimum(lc.v_ref + lc.slope * force, lc.v_max)
        vm = np.repeat(v[:, None], lc.n_fingers, axis=1)
        if lc.noise_sd > 0.0:
            vm = vm + lc.noise_sd * normals_np(key, t, lc.n_fingers)
        vm = np.clip(vm, 0.0, lc.v_max)
        if lc.adc_levels > 0:
            vm = np.rint(vm / lc.adc_full_scale * lc.adc_levels) * q
        e = thr - vm.max(axis=1)
        if t == 0:
            prev_e = e
        speed = np.clip(lc.kp * e + lc.kd * (e - prev_e), -lc.max_rate, lc.max_rate)
        dr = speed / lc.tick_rate / lc.steps_per_mm
        blocked = ((r >= lc.travel_hi) & (dr > 0.0)) | ((r <= lc.travel_lo) & (dr < 0.0))
        on = (np.abs(e) > lc.deadband) & ~blocked
        r = np.where(on, np.clip(r + dr, lc.travel_lo, lc.travel_hi), r)
        prev_e = e
        hold = np.where(on, 0, hold + 1)
        done = hold >= lc.hold_ticks
        if done.any():
            retire(done, t - lc.hold_ticks + 1, t + 1)
            keep = ~done
            idx, c, k, thr, key, stop = idx[keep], c[keep], k[keep], thr[keep], key[keep], stop[keep]
            r, prev_e, hold, peak, nxt = r[keep], prev_e[keep], hold[keep], peak[keep], nxt[keep]
    if idx.size:
        retire(np.ones(idx.size, dtype=bool), -1, lc.max_ticks)
    return BatchResult(settle, ticks, out_r, out_f, out_peak, out_levels, out_stop)


# ---------------------------------------------------------------- dispatch

def _batch_chunk(contact, stiffness, threshold, keys, stop, lc: LoopConstants,
                 use_numba: bool) -> BatchResult:
    if not use_numba:
        return _run_batch_np(contact, stiffness, threshold, keys, stop, lc)
    n = contact.size
    out = BatchResult(np.empty(n, np.int64), np.empty(n, np.int64),
                      np.empty(n), np.empty(n), np.empty(n),
                      np.empty((n, lc.n_levels), np.int64), np.empty(n, np.int64))
    _run_batch_nb(contact, stiffness, threshold, keys, stop,
                  lc.v_ref, lc.slope, lc.v_max, lc.noise_sd, lc.adc_levels, lc.adc_full_scale,
                  lc.kp, lc.kd, lc.deadband, lc.max_rate, lc.tick_rate, lc.steps_per_mm,
                  lc.travel_lo, lc.travel_hi, lc.hold_ticks, lc.max_ticks, lc.n_fingers, lc.r0,
                  lc.level_step, *out)
    return out


def run_batch(contact, stiffness, threshold, keys, lc: LoopConstants, stop_force=np.inf,
              parallel: int = 1, backend: str | None = None) -> BatchResult:
    """Run independent closed-loop trials.

    ``contact`` (mm), ``stiffness`` (N/mm), ``threshold`` (V) and ``keys``
    (uint64) are per-trial arrays.  A trial also ends as soon as its peak
    per-finger force reaches ``stop_force`` (N).  ``parallel`` splits the trials into that
    many contiguous chunks on a thread pool; per-trial results do not depend
    on it.
    """
    contact = np.ascontiguousarray(contact, dtype=np.float64)
    stiffness = np.ascontiguousarray(np.broadcast_to(stiffness, contact.shape), dtype=np.float64)
    threshold = np.ascontiguousarray(np.broadcast_to(threshold, contact.shape), dtype=np.float64)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    stop = np.ascontiguousarray(np.broadcast_to(stop_force, contact.shape), dtype=np.float64)
    if lc.hold_ticks < 1:
        raise ValueError("hold_ticks must be at least 1")
    use_numba = HAVE_NUMBA if backend is None else backend == "numba"
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")

    n = contact.size
    parallel = max(1, min(int(parallel), n)) if n else 1
    if parallel == 1:
        return _batch_chunk(contact, stiffness, threshold, keys, stop, lc, use_numba)
    bounds = np.linspace(0, n, parallel + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        parts = list(pool.map(
            lambda s: _batch_chunk(contact[s], stiffness[s], threshold[s], keys[s], stop[s], lc,
                                   use_numba),
            slices))
    return BatchResult(*(np.concatenate(cols) for cols in zip(*parts)))


class Trajectory(NamedTuple):
    retraction: np.ndarray
    error: np.ndarray
    speed: np.ndarray
    force: np.ndarray
    motor_on: np.ndarray
    settle_tick: int


def run_trajectory(contact: float, stiffness: float, threshold: float, key,
                   lc: LoopConstants) -> Trajectory:
    """One recorded trial.  Without numba this runs the scalar loop in Python."""
    m = lc.max_ticks
    rec = (np.empty(m), np.empty(m), np.empty(m), np.empty(m), np.empty(m, dtype=np.bool_))
    n, settle = _run_trajectory(float(contact), float(stiffness), float(threshold), np.uint64(key),
                                lc.v_ref, lc.slope, lc.v_max, lc.noise_sd, lc.adc_levels,
                                lc.adc_full_scale, lc.kp, lc.kd, lc.deadband, lc.max_rate,
                                lc.tick_rate, lc.steps_per_mm, lc.travel_lo, lc.travel_hi,
                                lc.hold_ticks, lc.max_ticks, lc.n_fingers, lc.r0, *rec)
    return Trajectory(*(a[:n] for a in rec), settle_tick=int(settle))
