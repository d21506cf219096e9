"""Monte Carlo harvest campaigns.

Each attempt grips one sampled berry.  In force-feedback modes the closed
loop runs against the fingertip contact plant until the total grip
(``n_fingers`` times the per-finger force) reaches the berry's detachment
force, the loop settles, or the policy timeout elapses.  The open-loop mode
drives the screw to a fixed retraction at full rate.

Timing of one attempt::

    approach + (detach time | timeout) + release + stow

where release is the move back to zero retraction at the maximum step rate.
Damage is scored on the peak per-finger force up to detachment, multiplied by
the rigid-tip factor in feedback modes only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import kernels
from .config import GripperConfig
from .finger import DomainError, contact_retraction
from .sensing import check_setpoint

MODES = ("feedback", "fixed", "hand")
BERRY_FIELDS = ("length", "width", "mass", "detachment_force", "damage_threshold")
_BERRY_STREAM = 1      # SeedSequence([seed, index, 1]) for berry draws; noise uses [seed, index]


@dataclass(frozen=True)
class Dist:
    """Normal distribution truncated to ``[lo, hi]``; ``sd = 0`` is a point mass."""

    mean: float
    sd: float = 0.0
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if self.sd < 0:
            raise ValueError("standard deviation must be nonnegative")
        if not self.lo <= self.hi:
            raise ValueError("need lo <= hi")
        if self.sd == 0 and not self.lo <= self.mean <= self.hi:
            raise ValueError(f"point mass {self.mean} lies outside [{self.lo}, {self.hi}]")

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.sd == 0:
            return np.full(u.shape, float(self.mean))
        a = (self.lo - self.mean) / self.sd
        b = (self.hi - self.mean) / self.sd
        # inverse-CDF on the normal tails; the upper branch keeps precision when a > 0
        if a > 0:
            qa, qb = ndtr(-a), ndtr(-b)
            if qa <= qb:
                return np.full(u.shape, float(self.lo))
            z = -ndtri(qa - u * (qa - qb))
        else:
            pa, pb = ndtr(a), ndtr(b)
            if pb <= pa:
                return np.full(u.shape, float(self.lo))
            z = ndtri(pa + u * (pb - pa))
        return np.clip(self.mean + self.sd * z, self.lo, self.hi)


@dataclass(frozen=True)
class BerrySpec:
    length: float
    width: float
    mass: float
    detachment_force: float     # total grip force, N
    damage_threshold: float     # per-finger force, N
    rigid_tip_factor: float = 1.4

    def __post_init__(self):
        if not 15.0 <= self.width <= 50.0:
            raise ValueError("berry width outside the 15-50 mm design envelope")
        if self.detachment_force < 0 or self.damage_threshold <= 0:
            raise ValueError("berry forces must be positive")


# Defaults are the starting template for `calibrate_population`; the
# detachment and damage distributions are not measured, only fitted.
@dataclass(frozen=True)
class BerryPopulation:
    length: Dist = Dist(30.0, 2.0, 20.0, 40.0)
    width: Dist = Dist(21.0, 1.5, 15.0, 50.0)
    mass: Dist = Dist(8.0, 1.0, 3.0, 15.0)
    detachment_force: Dist = Dist(1.2, 0.6, 0.0, 2.5)
    damage_threshold: Dist = Dist(1.1, 0.15, 0.8, 3.0)
    rigid_tip_factor: float = 1.4
    seed: int = 0

    def __post_init__(self):
        if self.width.lo < 15.0 or self.width.hi > 50.0:
            raise ValueError("width bounds must stay inside the 15-50 mm envelope")
        if self.detachment_force.lo < 0:
            raise ValueError("detachment force cannot be negative")
        if self.damage_threshold.lo <= 0 and self.damage_threshold.sd > 0:
            raise ValueError("damage threshold lower bound must be positive")
        if self.rigid_tip_factor < 1.0:
            raise ValueError("rigid tip factor must be >= 1")


class BerryBatch(NamedTuple):
    length: np.ndarray
    width: np.ndarray
    mass: np.ndarray
    detachment_force: np.ndarray
    damage_threshold: np.ndarray


def berry_uniforms(seed: int, indices) -> np.ndarray:
    """Per-berry uniforms, shape ``(n, 5)``; column order follows BERRY_FIELDS."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    out = np.empty((idx.size, len(BERRY_FIELDS)))
    for j, i in enumerate(idx):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(i), _BERRY_STREAM]))
        out[j] = rng.random(len(BERRY_FIELDS))
    return out


def berries_from_uniforms(pop: BerryPopulation, u) -> BerryBatch:
    return BerryBatch(*(getattr(pop, name).ppf(u[:, j]) for j, name in enumerate(BERRY_FIELDS)))


def sample_berries(pop: BerryPopulation, indices, seed: int | None = None) -> BerryBatch:
    return berries_from_uniforms(pop, berry_uniforms(pop.seed if seed is None else seed, indices))


def sample_berry(pop: BerryPopulation, index: int, seed: int | None = None) -> BerrySpec:
    b = sample_berries(pop, [index], seed)
    return BerrySpec(*(float(col[0]) for col in b), rigid_tip_factor=pop.rigid_tip_factor)


@dataclass(frozen=True)
class HarvestPolicy:
    name: str
    mode: str
    setpoint: float | None = None       # N per finger, feedback mode
    retraction: float | None = None     # mm, fixed mode
    approach_time: float = 2.0
    stow_time: float = 1.0
    timeout: float = 20.0               # s spent on an attempt that never detaches

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "feedback" and (self.setpoint is None or self.setpoint < 0):
            raise ValueError("feedback policy needs a nonnegative setpoint")
        if self.mode == "fixed" and (self.retraction is None or self.retraction < 0):
            raise ValueError("fixed policy needs a nonnegative retraction")
        if self.approach_time < 0 or self.stow_time < 0 or self.timeout <= 0:
            raise ValueError("times must be nonnegative and the timeout positive")

    def validate(self, cfg: GripperConfig) -> None:
        if self.mode == "feedback":
            check_setpoint(self.setpoint, cfg.cal)
        elif self.mode == "fixed":
            lo, hi = cfg.setup.actuator.travel
            if not lo <= self.retraction <= hi:
                raise DomainError(f"retraction {self.retraction} mm outside travel [{lo}, {hi}]")


class TrialRecord(NamedTuple):
    trial: int
    policy: str
    setpoint: float
    succeeded: bool
    damaged: bool
    harvest_time: float
    peak_finger_force: float
    settle_ticks: int


class TrialArrays(NamedTuple):
    succeeded: np.ndarray
    damaged: np.ndarray
    harvest_time: np.ndarray
    peak_force: np.ndarray
    settle_ticks: np.ndarray
    detach_time: np.ndarray


class CampaignSummary(NamedTuple):
    policy: str
    n: int
    n_success: int
    n_damaged: int
    reliability: float          # % of attempts
    rdr: float                  # % of harvested berries
    mean_time: float            # s, over all attempts

    def as_dict(self) -> dict:
        return self._asdict()


HAND_REFERENCE = CampaignSummary("hand", 0, 0, 0, 100.0, 0.0, 1.4)


def summarize(policy: str, arrays: TrialArrays) -> CampaignSummary:
    n = int(arrays.succeeded.size)
    if n == 0:
        raise ValueError("no trials to summarise")
    ns = int(np.count_nonzero(arrays.succeeded))
    nd = int(np.count_nonzero(arrays.damaged))
    # fsum is exactly rounded, so the mean does not depend on trial order
    t = math.fsum(arrays.harvest_time.tolist()) / n
    return CampaignSummary(policy, n, ns, nd, 100.0 * ns / n, 100.0 * nd / ns if ns else 0.0, t)


def _geometry(cfg: GripperConfig, width):
    width = np.asarray(width, dtype=float)
    if np.any(width > cfg.gripper.max_aperture):
        raise DomainError("berry wider than the maximum aperture")
    return contact_retraction(width, cfg.gripper, cfg.cmap), cfg.contact.stiffness_at(width)


def _release_time(cfg: GripperConfig, r):
    a, p = cfg.setup.actuator, cfg.setup.params
    return np.abs(r) * a.steps_per_mm / p.max_step_rate


def simulate_policy(cfg: GripperConfig, policy: HarvestPolicy, berries: BerryBatch, keys,
                    rigid_tip_factor: float = 1.4, parallel: int = 1,
                    backend: str | None = None) -> TrialArrays:
    """Score every berry under ``policy``.  ``keys`` are the per-trial noise keys."""
    if policy.mode == "hand":
        raise ValueError("the hand reference is a fixture, not a simulated policy")
    policy.validate(cfg)
    n_f = cfg.gripper.n_fingers
    D = np.asarray(berries.detachment_force, dtype=float)
    c, k = _geometry(cfg, berries.width)
    overhead = policy.approach_time + policy.stow_time
    if policy.mode == "feedback":
        lc = cfg.setup.constants(policy.timeout)
        thr = check_setpoint(policy.setpoint, cfg.cal)
        res = kernels.run_batch(c, k, thr, keys, lc, stop_force=D / n_f,
                                parallel=parallel, backend=backend)
        ok = res.stop_tick >= 0
        detach = np.where(ok, res.stop_tick / cfg.setup.params.tick_rate, np.nan)
        busy = np.where(ok, detach, policy.timeout)
        peak = res.peak_force
        damaged = ok & (peak * rigid_tip_factor >= berries.damage_threshold)
        t = overhead + busy + _release_time(cfg, res.retraction)
        return TrialArrays(ok, damaged, t, peak, res.settle_tick, detach)

    return _open_loop(cfg, policy, c, k, D, berries.damage_threshold)


def _open_loop(cfg: GripperConfig, policy: HarvestPolicy, c, k, D, H) -> TrialArrays:
    # fixed retraction: open-loop move at full rate, grip crosses D on the way in
    n_f = cfg.gripper.n_fingers
    overhead = policy.approach_time + policy.stow_time
    target = float(policy.retraction)
    rate = cfg.setup.params.max_step_rate / cfg.setup.actuator.steps_per_mm   # mm/s
    r_detach = np.where(D > 0, c + D / (n_f * k), 0.0)
    ok = r_detach <= target
    r_end = np.where(ok, r_detach, target)
    detach = np.where(ok, r_detach / rate, np.nan)
    peak = np.where(ok, D / n_f, k * np.maximum(target - c, 0.0))
    busy = np.where(ok, detach, policy.timeout)
    t = overhead + busy + _release_time(cfg, r_end)
    move_ticks = int(math.ceil(target / rate * cfg.setup.params.tick_rate))
    settle = np.full(D.shape, move_ticks, dtype=np.int64)
    # no rigid support on the sensorless gripper: factor 1
    damaged = ok & (peak >= H)
    return TrialArrays(ok, damaged, t, peak, settle, detach)


def attempt_harvest(cfg: GripperConfig, policy: HarvestPolicy, berry: BerrySpec, seed: int = 0,
                    trial: int = 0) -> TrialRecord:
    b = BerryBatch(*(np.array([getattr(berry, f)]) for f in BERRY_FIELDS))
    keys = kernels.trial_keys(seed, [trial])
    rtf = berry.rigid_tip_factor
    a = simulate_policy(cfg, policy, b, keys, rigid_tip_factor=rtf)
    return TrialRecord(trial, policy.name, float(policy.setpoint or 0.0), bool(a.succeeded[0]),
                       bool(a.damaged[0]), float(a.harvest_time[0]), float(a.peak_force[0]),
                       int(a.settle_ticks[0]))


def run_campaign(n: int, policy: HarvestPolicy, pop: BerryPopulation, cfg: GripperConfig,
                 seed: int | None = None, parallel: int = 1, backend: str | None = None):
    """Returns ``(CampaignSummary, TrialArrays)``.  Trial ``i`` always sees
    the same berry and noise stream for a given seed, whatever the policy or
    degree of parallelism."""
    if n < 1:
        raise ValueError("campaign needs at least one trial")
    if policy.mode == "hand":
        return HAND_REFERENCE, None
    seed = pop.seed if seed is None else seed
    idx = np.arange(n)
    berries = sample_berries(pop, idx, seed)
    keys = kernels.trial_keys(seed, idx)
    arrays = simulate_policy(cfg, policy, berries, keys, pop.rigid_tip_factor, parallel, backend)
    return summarize(policy.name, arrays), arrays


def trial_records(policy: HarvestPolicy, arrays: TrialArrays) -> list[TrialRecord]:
    sp = float(policy.setpoint) if policy.setpoint is not None else float("nan")
    return [TrialRecord(i, policy.name, sp, bool(arrays.succeeded[i]), bool(arrays.damaged[i]),
                        float(arrays.harvest_time[i]), float(arrays.peak_force[i]),
                        int(arrays.settle_ticks[i]))
            for i in range(arrays.succeeded.size)]


# ---------------------------------------------------------------- calibration

class Target(NamedTuple):
    policy: HarvestPolicy
    reliability: float
    rdr: float
    time: float


@dataclass(frozen=True)
class Tolerance:
    reliability: float = 3.0
    rdr: float = 3.0
    time: float = 0.5


# name, (lower, upper) search bounds
CAL_PARAMS = (
    ("detach_mean", (0.0, 4.0)),
    ("detach_sd", (0.02, 2.0)),
    ("detach_hi", (0.5, 6.0)),
    ("damage_mean", (0.3, 3.0)),
    ("damage_sd", (0.01, 1.5)),
    ("damage_lo", (0.2, 2.0)),
    ("rigid_tip_factor", (1.0, 3.0)),
)
TIMEOUT_BOUNDS = {"feedback": (0.5, 60.0), "fixed": (0.05, 30.0)}


def population_params(pop: BerryPopulation) -> np.ndarray:
    d, h = pop.detachment_force, pop.damage_threshold
    return np.array([d.mean, d.sd, d.hi, h.mean, h.sd, h.lo, pop.rigid_tip_factor])


def apply_params(theta, pop: BerryPopulation) -> BerryPopulation:
    d = pop.detachment_force
    h = pop.damage_threshold
    return replace(pop,
                   detachment_force=Dist(float(theta[0]), float(theta[1]), d.lo, float(max(theta[2], d.lo))),
                   damage_threshold=Dist(float(theta[3]), float(theta[4]), float(theta[5]),
                                         float(max(h.hi, theta[5]))),
                   rigid_tip_factor=float(theta[6]))


class CalibrationResult(NamedTuple):
    population: BerryPopulation
    policies: list
    predicted: list              # CampaignSummary-like rows from the calibration sample
    residuals: list              # (d_reliability, d_rdr, d_time) per target
    objective: float
    converged: bool
    evaluations: int


class _Precomputed(NamedTuple):
    # feedback: first-passage ticks of the running-max force on a level grid
    level_ticks: np.ndarray
    final_r: np.ndarray


class _Scorer:
    """Cheap re-scoring of a fixed trial sample under new population
    parameters.  Feedback loops are simulated once, recording when the
    running-max finger force first crosses each level of a fine grid; any
    detachment force then maps to a first-passage time by lookup."""

    def __init__(self, cfg, pop, targets, n, n_open, seed, level_step, parallel, backend):
        self.cfg, self.targets, self.step, self.n = cfg, targets, level_step, n
        # open-loop rows are closed-form, so they get the larger sample
        self.u = berry_uniforms(seed, np.arange(max(n, n_open)))
        self.n_open = n_open
        self.keys = kernels.trial_keys(seed, np.arange(n))
        self.widths = pop.width.ppf(self.u[:, 1])
        self.c_open, self.k_open = _geometry(cfg, self.widths)
        self.c, self.k = self.c_open[:n], self.k_open[:n]
        self.pre = {}
        for i, t in enumerate(targets):
            if t.policy.mode != "feedback":
                continue
            p = t.policy
            thr = check_setpoint(p.setpoint, cfg.cal)
            top = p.setpoint * 1.5 + 0.1
            lc = cfg.setup.constants(TIMEOUT_BOUNDS["feedback"][1])._replace(
                level_step=level_step, n_levels=int(math.ceil(top / level_step)) + 1)
            res = kernels.run_batch(self.c, self.k, thr, self.keys, lc, parallel=parallel,
                                    backend=backend)
            self.pre[i] = _Precomputed(res.level_ticks, res.retraction)

    def _row(self, i, p, pop, D_all, H_all) -> TrialArrays:
        if p.mode == "fixed":
            m = self.n_open
            return _open_loop(self.cfg, p, self.c_open[:m], self.k_open[:m], D_all[:m], H_all[:m])
        D, H = D_all[:self.n], H_all[:self.n]
        n_f = self.cfg.gripper.n_fingers
        rate = self.cfg.setup.params.tick_rate
        lt_all, final_r = self.pre[i]
        j = np.ceil(D / n_f / self.step).astype(np.int64)
        inside = j < lt_all.shape[1]
        lt = np.where(inside, lt_all[np.arange(len(D)), np.minimum(j, lt_all.shape[1] - 1)], -1)
        ok = (lt >= 0) & (lt < p.timeout * rate)
        detach = np.where(ok, lt / rate, p.timeout)
        peak = np.where(ok, j * self.step, 0.0)
        damaged = ok & (peak * pop.rigid_tip_factor >= H)
        tt = p.approach_time + p.stow_time + detach + _release_time(self.cfg, final_r)
        return TrialArrays(ok, damaged, tt, peak, lt, detach)

    def score(self, pop, policies, solve_timeouts: bool = True):
        """Rows for ``pop``.  With ``solve_timeouts`` each simulated row's
        timeout is set so its mean time hits the target (mean time is linear
        in the timeout once the success set is fixed)."""
        D_all = pop.detachment_force.ppf(self.u[:, 3])
        H_all = pop.damage_threshold.ppf(self.u[:, 4])
        rows, pols = [], []
        for i, (t, p) in enumerate(zip(self.targets, policies)):
            if p.mode == "hand":
                rows.append(HAND_REFERENCE)
                pols.append(p)
                continue
            if solve_timeouts:
                lo, hi = TIMEOUT_BOUNDS[p.mode]
                p = replace(p, timeout=hi)
                for _ in range(6):
                    arr = self._row(i, p, pop, D_all, H_all)
                    fail = ~arr.succeeded
                    nf = int(np.count_nonzero(fail))
                    if nf == 0:
                        break
                    n = arr.succeeded.size
                    other = math.fsum(arr.harvest_time.tolist()) - nf * p.timeout
                    T = min(max((t.time * n - other) / nf, lo), hi)
                    if T == p.timeout:
                        break
                    p = replace(p, timeout=T)
            rows.append(summarize(p.name, self._row(i, p, pop, D_all, H_all)))
            pols.append(p)
        return rows, pols


def _residuals(rows, targets):
    return [(r.reliability - t.reliability, r.rdr - t.rdr, r.mean_time - t.time)
            for r, t in zip(rows, targets)]


def _objective(res, tol: Tolerance):
    return sum((a / tol.reliability) ** 2 + (b / tol.rdr) ** 2 + (c / tol.time) ** 2 for a, b, c in res)


def calibrate_population(targets: Sequence[Target], template: BerryPopulation, cfg: GripperConfig,
                         n: int = 1000, n_open: int = 10000, seed: int | None = None,
                         restarts: int = 4,
                         tol: Tolerance = Tolerance(), level_step: float = 0.001,
                         max_sweeps: int = 60, parallel: int = 1,
                         backend: str | None = None) -> CalibrationResult:
    """Coordinate descent with restarts over the detachment/damage
    distributions and the rigid-tip factor; each simulated row's timeout is
    solved inside the objective.

    Minimises the tolerance-scaled squared mismatch of (reliability, RDR,
    mean time) over all target rows at once.  Hand rows are carried through
    unchanged.  Returns the best point found; ``converged`` says whether
    every row is inside ``tol``.
    """
    sim_rows = [t for t in targets if t.policy.mode == "feedback"]
    if len(sim_rows) < 1:
        raise ValueError("need at least one feedback target row")
    for t in targets:
        if not (0 <= t.reliability <= 100 and 0 <= t.rdr <= 100 and t.time >= 0):
            raise ValueError(f"malformed target {t}")
    seed = template.seed if seed is None else seed
    scorer = _Scorer(cfg, template, targets, n, n_open, seed, level_step, parallel, backend)
    lo = np.array([b[0] for _, b in CAL_PARAMS])
    hi = np.array([b[1] for _, b in CAL_PARAMS])
    policies = [t.policy for t in targets]
    evals = 0

    def f(theta):
        nonlocal evals
        evals += 1
        rows, _ = scorer.score(apply_params(theta, template), policies)
        return _objective(_residuals(rows, targets), tol)

    def descend(x, fx):
        step = 0.25 * (hi - lo)
        for _ in range(max_sweeps):
            improved = False
            for i in range(x.size):
                for sgn in (1.0, -1.0):
                    moved = False
                    # keep striding while the move pays off
                    while True:
                        y = x.copy()
                        y[i] = min(max(x[i] + sgn * step[i], lo[i]), hi[i])
                        if y[i] == x[i]:
                            break
                        fy = f(y)
                        if fy >= fx:
                            break
                        x, fx, moved = y, fy, True
                    if moved:
                        improved = True
                        break
            if not improved:
                step = step * 0.5
                if np.all(step < 1e-3 * (hi - lo)):
                    break
        return x, fx

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCA1]))
    best_x = np.clip(population_params(template), lo, hi)
    best_x, best_f = descend(best_x, f(best_x))
    for rs in range(restarts):
        if rs % 2 == 0:
            x = lo + rng.random(lo.size) * (hi - lo)
        else:
            x = np.clip(best_x + (rng.random(lo.size) - 0.5) * 0.3 * (hi - lo), lo, hi)
        x, fx = descend(x, f(x))
        if fx < best_f:
            best_x, best_f = x, fx
    pop = apply_params(best_x, template)
    rows, pols = scorer.score(pop, policies)
    res = _residuals(rows, targets)
    ok = all(abs(a) <= tol.reliability and abs(b) <= tol.rdr and abs(c) <= tol.time for a, b, c in res)
    return CalibrationResult(pop, pols, rows, res, float(_objective(res, tol)), ok, evals)
