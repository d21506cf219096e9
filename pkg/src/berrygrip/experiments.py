"""Experiment runners behind the CLI.

Every runner writes plot-ready CSV plus a versioned JSON summary into the
output directory.  Numbers are printed with 9 significant digits and the JSON
carries no timestamps, so re-running with the same seed and config rewrites
byte-identical files whatever the degree of parallelism.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import fixtures, kernels
from .config import GripperConfig
from .control import ContactPlant, run_closed_loop, write_trajectory_csv
from .finger import (arc_point, contact_retraction, curvature_from_retraction,
                     tendon_force_for_curvature)
from .fitting import circle_fit, finger_force_analysis, quadratic_fit
from .grasp import (ConeTestSpec, finger_force_from_push_pull, fingertip_force, fit_stiffness_table,
                    forward_push_pull, load_fingertip_csv, load_retention_csv)
from .harvest import (HAND_REFERENCE, Tolerance, calibrate_population, run_campaign)
from .sensing import SaturationError, check_setpoint, two_point_calibrate, write_calibration_csv

SCHEMA_VERSION = 1
KINDS = ("force_reliability", "actuation_characterization", "retention", "fingertip_force",
         "field_campaign", "finger_analysis", "sensor_calibration", "loop_trace")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: str = "out"
    parallel: int = 1
    trials: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.parallel < 1:
            raise ValueError("parallel must be >= 1")
        if self.trials is not None and self.trials < 1:
            raise ValueError("trials must be >= 1")


class ExperimentReport(NamedTuple):
    kind: str
    files: list
    summary: dict
    passed: bool | None     # None when the experiment has no acceptance check


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    if x is None:
        return ""
    return x


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if not math.isfinite(x) else float(f"{x:.9g}")
    return x


def write_json(path, kind: str, payload: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, **_jsonable(payload)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- runners

def _force_reliability(spec, cfg: GripperConfig, doc):
    p = {**doc.get("force_reliability", {}), **spec.params}
    n_sp = int(p.get("n_setpoints", 11))
    setpoints = np.linspace(float(p.get("setpoint_min", 0.491)), float(p.get("setpoint_max", 1.472)), n_sp)
    per = int(spec.trials or p.get("trials_per_setpoint", 11))
    d = float(p.get("contact_diameter", 21.0))
    tol = float(p.get("tolerance", 0.05))
    timeout = float(p.get("timeout", 5.0))

    rows, saturated = [], []
    usable, thr = [], []
    for s in setpoints:
        try:
            thr.append(check_setpoint(float(s), cfg.cal))
            usable.append(float(s))
        except SaturationError as e:
            saturated.append({"setpoint_N": float(s), "force_lower_bound_N": e.force_lower_bound})
    errs = np.array([])
    if usable:
        sp = np.repeat(usable, per)
        th = np.repeat(thr, per)
        idx = np.arange(sp.size)
        c = contact_retraction(d, cfg.gripper, cfg.cmap)
        k = cfg.contact.stiffness_at(d)
        res = kernels.run_batch(np.full(sp.size, c), k, th, kernels.trial_keys(spec.seed, idx),
                                cfg.setup.constants(timeout), parallel=spec.parallel)
        errs = np.abs(res.force - sp)
        rate = cfg.setup.params.tick_rate
        for i in idx:
            st = res.settle_tick[i]
            rows.append((float(sp[i]), int(i % per), float(th[i]), float(res.force[i]), float(errs[i]),
                         bool(st >= 0), st / rate if st >= 0 else None))
    path = os.path.join(spec.out_dir, "force_reliability.csv")
    write_csv(path, ("setpoint_N", "trial", "threshold_V", "applied_force_N", "abs_error_N",
                     "settled", "settle_time_s"), rows)
    mean_err = float(errs.mean()) if errs.size else float("nan")
    passed = bool(errs.size and mean_err <= tol and not saturated)
    summary = {"setpoints_N": setpoints.tolist(), "trials_per_setpoint": per, "points": int(errs.size),
               "mean_abs_error_N": mean_err, "max_abs_error_N": float(errs.max()) if errs.size else None,
               "tolerance_N": tol, "saturated_setpoints": saturated,
               "calibration_slope_V_per_N": cfg.cal.slope, "passed": passed}
    jpath = os.path.join(spec.out_dir, "force_reliability.json")
    write_json(jpath, "force_reliability", summary)
    return [path, jpath], summary, passed


def _actuation(spec, cfg: GripperConfig, doc):
    p = {**doc.get("actuation", {}), **spec.params}
    L = cfg.gripper.finger.length
    if p.get("csv"):
        with open(p["csv"], newline="") as fh:
            data = [(float(r["retraction_mm"]), float(r["force_N"]), float(r["curvature_1_per_m"]))
                    for r in csv.DictReader(fh)]
        dl = np.array([r[0] for r in data])
        force = np.array([r[1] for r in data])
        kappa_meas = np.array([r[2] for r in data])
        kappa_model = np.full(dl.size, np.nan)
    else:
        step = float(p.get("retraction_step", 0.5))
        dl = np.round(np.arange(0.0, cfg.cmap.retraction_max + 1e-9, step), 9)
        kappa_model = curvature_from_retraction(dl, cfg.cmap)
        force = tendon_force_for_curvature(kappa_model, cfg.cmap)
        npts = int(p.get("points_per_arc", 40))
        noise = float(p.get("pixel_noise", 0.0))
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 13]))
        s = np.linspace(0.05, 1.0, npts)
        kappa_meas = np.empty(dl.size)
        for i, kap in enumerate(kappa_model):
            x, y = arc_point(np.full(npts, kap), L, s)
            pts = np.column_stack([x, y])
            if noise > 0:
                pts = pts + rng.normal(0.0, noise, pts.shape)
            fit = circle_fit(pts)
            kappa_meas[i] = 0.0 if fit.straight else 1000.0 * fit.curvature
    by_dl = quadratic_fit(dl, kappa_meas, zero_intercept=True)
    by_f = quadratic_fit(force, kappa_meas, zero_intercept=True)
    path = os.path.join(spec.out_dir, "actuation.csv")
    write_csv(path, ("retraction_mm", "tendon_force_N", "curvature_model_1_per_m",
                     "curvature_measured_1_per_m", "curvature_fit_retraction", "curvature_fit_force"),
              zip(dl.tolist(), force.tolist(), kappa_model.tolist(), kappa_meas.tolist(),
                  by_dl.predict(dl).tolist(), by_f.predict(force).tolist()))
    summary = {"source": "csv" if p.get("csv") else "simulated",
               "fit_retraction": {"coefficients": by_dl.coefficients.tolist(),
                                  "mean_abs_error": by_dl.mean_abs_error,
                                  "mean_percent_error": by_dl.mean_percent_error},
               "fit_force": {"coefficients": by_f.coefficients.tolist(),
                             "mean_abs_error": by_f.mean_abs_error,
                             "mean_percent_error": by_f.mean_percent_error}}
    jpath = os.path.join(spec.out_dir, "actuation.json")
    write_json(jpath, "actuation_characterization", summary)
    return [path, jpath], summary, None


def _retention(spec, cfg, doc):
    p = spec.params
    at4 = load_retention_csv(p["csv"]) if p.get("csv") else fixtures.retention_4mm()
    maxima = fixtures.retention_sweep_maxima()
    g = 9.81
    rows = [(r.shape, r.retraction, r.force, r.force / g, "at_retraction") for r in at4]
    rows += [(r.shape, r.retraction, r.force, r.force / g, "sweep_max") for r in maxima]
    path = os.path.join(spec.out_dir, "retention.csv")
    write_csv(path, ("shape", "retraction_mm", "force_N", "payload_kg", "kind"), rows)
    best = max(at4, key=lambda r: r.force)
    summary = {"max_shape": best.shape, "max_force_N": best.force,
               "records": [r._asdict() for r in at4], "sweep_maxima": [r._asdict() for r in maxima]}
    passed = None
    if not p.get("csv"):
        ref = {r.shape: r.force for r in fixtures.retention_4mm()}
        passed = all(ref[r.shape] == r.force for r in at4)
    jpath = os.path.join(spec.out_dir, "retention.json")
    write_json(jpath, "retention", summary)
    return [path, jpath], summary, passed


def _fingertip(spec, cfg: GripperConfig, doc):
    p = {**doc.get("fingertip", {}), **spec.params}
    model = cfg.contact
    if p.get("csv"):
        model = fit_stiffness_table(load_fingertip_csv(p["csv"]), model)
    cone = ConeTestSpec(**p.get("cone", {}))
    rows = []
    for dl in p.get("retractions", [5.0, 6.0, 7.0, 8.0, 9.0]):
        for d in p.get("diameters", [9.0, 21.0, 30.0, 47.0]):
            f = fingertip_force(float(dl), float(d), model)
            push, pull = forward_push_pull(f, cone.n_fingers, cone.cone_angle, cone.friction)
            back = finger_force_from_push_pull(push, pull, cone.n_fingers, cone.cone_angle)
            rows.append((float(dl), float(d), f, push, pull, back))
    path = os.path.join(spec.out_dir, "fingertip_force.csv")
    write_csv(path, ("retraction_mm", "diameter_mm", "force_N", "push_N", "pull_N", "recovered_N"), rows)
    anchor = fingertip_force(model.anchor_retraction, model.anchor_diameter, model)
    passed = anchor == model.anchor_force if not model.diameters else None
    summary = {"anchor": {"retraction_mm": model.anchor_retraction, "diameter_mm": model.anchor_diameter,
                          "force_N": anchor}, "stiffness_N_per_mm": model.stiffness,
               "stiffness_table": [list(model.diameters), list(model.stiffness_table)],
               "cone": {"angle_deg": cone.cone_angle, "n_fingers": cone.n_fingers,
                        "friction": cone.friction},
               "max_roundtrip_error_N": max(abs(r[5] - r[2]) for r in rows) if rows else 0.0}
    jpath = os.path.join(spec.out_dir, "fingertip_force.json")
    write_json(jpath, "fingertip_force", summary)
    return [path, jpath], summary, passed


def _field_campaign(spec, cfg: GripperConfig, doc):
    camp = doc.get("campaign", {})
    p = {**camp, **spec.params}
    pop = fixtures.population_from_dict(doc, seed=spec.seed)
    policies = fixtures.policies_from_dict(doc)
    targets = fixtures.field_targets(policies)
    n = int(spec.trials or p.get("trials", 10000))
    tol = Tolerance()
    cal = None
    if p.get("calibrate", True):
        cal = calibrate_population(targets, pop, cfg, n=int(p.get("calibration_trials", 2000)),
                                   restarts=int(p.get("calibration_restarts", 4)), seed=spec.seed,
                                   tol=tol, parallel=spec.parallel)
        pop, policies = cal.population, cal.policies
    rows, results = [], []
    for pol, tgt in zip(policies, targets):
        summ, arrays = run_campaign(n, pol, pop, cfg, seed=spec.seed, parallel=spec.parallel)
        if arrays is not None:
            sp = pol.setpoint
            for i in range(n):
                rows.append((i, pol.name, sp, bool(arrays.succeeded[i]), bool(arrays.damaged[i]),
                             float(arrays.harvest_time[i]), float(arrays.peak_force[i])))
        res = (summ.reliability - tgt.reliability, summ.rdr - tgt.rdr, summ.mean_time - tgt.time)
        results.append({"policy": pol.name, "mode": pol.mode, "setpoint_N": pol.setpoint,
                        "retraction_mm": pol.retraction, "timeout_s": pol.timeout if pol.mode != "hand" else None,
                        "simulated": summ is not HAND_REFERENCE, "trials": summ.n,
                        "reliability_pct": summ.reliability, "rdr_pct": summ.rdr,
                        "mean_time_s": summ.mean_time,
                        "target": {"reliability_pct": tgt.reliability, "rdr_pct": tgt.rdr,
                                   "mean_time_s": tgt.time},
                        "residual": {"reliability_pct": res[0], "rdr_pct": res[1], "mean_time_s": res[2]},
                        "within_tolerance": abs(res[0]) <= tol.reliability and abs(res[1]) <= tol.rdr
                        and abs(res[2]) <= tol.time})
    path = os.path.join(spec.out_dir, "campaign_trials.csv")
    write_csv(path, ("trial", "policy", "setpoint_N", "success", "damaged", "time_s", "peak_force_N"), rows)
    fb = [r for r in results if r["mode"] == "feedback"]
    fb.sort(key=lambda r: r["setpoint_N"])
    monotone = all(a["reliability_pct"] <= b["reliability_pct"] and a["rdr_pct"] <= b["rdr_pct"]
                   and a["mean_time_s"] >= b["mean_time_s"] for a, b in zip(fb, fb[1:]))
    passed = all(r["within_tolerance"] for r in results) and monotone
    summary = {"trials_per_policy": n, "rows": results, "monotone_in_setpoint": monotone,
               "population": _population_dict(pop), "passed": passed,
               "tolerance": {"reliability_pct": tol.reliability, "rdr_pct": tol.rdr,
                             "mean_time_s": tol.time}}
    if cal is not None:
        summary["calibration"] = {"converged": cal.converged, "objective": cal.objective,
                                  "evaluations": cal.evaluations,
                                  "sample_residuals": [list(r) for r in cal.residuals]}
    jpath = os.path.join(spec.out_dir, "campaign_summary.json")
    write_json(jpath, "field_campaign", summary)
    return [path, jpath], summary, passed


def _population_dict(pop) -> dict:
    out = {}
    for name in ("length", "width", "mass", "detachment_force", "damage_threshold"):
        d = getattr(pop, name)
        out[name] = {"mean": d.mean, "sd": d.sd, "lo": d.lo, "hi": d.hi}
    out["rigid_tip_factor"] = pop.rigid_tip_factor
    return out


def _finger_analysis(spec, cfg, doc):
    p = spec.params
    forces = fixtures.finger_forces(p.get("csv"))
    thr = float(p.get("threshold", 0.1))
    rank = finger_force_analysis(forces, thr)
    path = os.path.join(spec.out_dir, "finger_analysis.csv")
    write_csv(path, ("rank", "finger", "mean_force_N", "kept"),
              [(i + 1, f, v, True) for i, (f, v) in enumerate(rank.ranking)]
              + [(None, f, v, False) for f, v in rank.dropped])
    summary = {"threshold_N": thr, "recommended_fingers": rank.count,
               "ranking": [list(kv) for kv in rank.ranking], "dropped": [list(kv) for kv in rank.dropped]}
    jpath = os.path.join(spec.out_dir, "finger_analysis.json")
    write_json(jpath, "finger_analysis", summary)
    return [path, jpath], summary, (rank.count == 3 if not p.get("csv") else None)


def _sensor_calibration(spec, cfg: GripperConfig, doc):
    p = spec.params
    cal = cfg.cal
    if "span_force" in p:
        cal = two_point_calibrate((0.0, float(p.get("zero_voltage", cal.v_ref))),
                                  (float(p["span_force"]), float(p["span_voltage"])), cal.v_supply)
    top = float(p.get("max_force", 4.0))
    forces = np.round(np.linspace(0.0, top, int(p.get("points", 41))), 12)
    path = os.path.join(spec.out_dir, "calibration.csv")
    write_calibration_csv(path, cal, forces)
    summary = {"slope_V_per_N": cal.slope, "v_ref": cal.v_ref, "v_supply": cal.v_supply,
               "v_max": cal.v_max, "saturation_force_N": cal.saturation_force}
    jpath = os.path.join(spec.out_dir, "calibration.json")
    write_json(jpath, "sensor_calibration", summary)
    return [path, jpath], summary, None


def _loop_trace(spec, cfg: GripperConfig, doc):
    p = spec.params
    d = float(p.get("diameter", 21.0))
    sp = float(p.get("setpoint", 0.78))
    plant = ContactPlant(contact_retraction(d, cfg.gripper, cfg.cmap), cfg.contact.stiffness_at(d))
    rep = run_closed_loop(plant, sp, cfg.setup, timeout=float(p.get("timeout", 5.0)), seed=spec.seed,
                          trial=int(p.get("trial", 0)))
    path = os.path.join(spec.out_dir, "trajectory.csv")
    write_trajectory_csv(path, rep.trajectory, cfg.setup.params.tick_rate, every=int(p.get("every", 1)))
    summary = {"setpoint_N": sp, "diameter_mm": d, "settled": rep.settled, "settle_time_s": rep.settle_time,
               "final_force_N": rep.final_force, "force_error_N": rep.force_error,
               "peak_force_N": rep.peak_force, "final_retraction_mm": rep.final_retraction,
               "ticks": rep.ticks}
    jpath = os.path.join(spec.out_dir, "trajectory.json")
    write_json(jpath, "loop_trace", summary)
    return [path, jpath], summary, None


_RUNNERS = {
    "force_reliability": _force_reliability,
    "actuation_characterization": _actuation,
    "retention": _retention,
    "fingertip_force": _fingertip,
    "field_campaign": _field_campaign,
    "finger_analysis": _finger_analysis,
    "sensor_calibration": _sensor_calibration,
    "loop_trace": _loop_trace,
}


def run_experiment(spec: ExperimentSpec, cfg: GripperConfig, doc: dict | None = None) -> ExperimentReport:
    os.makedirs(spec.out_dir, exist_ok=True)
    files, summary, passed = _RUNNERS[spec.kind](spec, cfg, doc or {})
    return ExperimentReport(spec.kind, files, summary, passed)
