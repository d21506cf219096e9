"""``berrygrip`` command line: batch experiments, fits and reports."""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .config import gripper_from_dict, load_document
from .experiments import ExperimentSpec, run_experiment, write_json
from .fitting import circle_fit, quadratic_fit

EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2

_COMMANDS = {
    "calibrate": "sensor_calibration",
    "sim-loop": "loop_trace",
    "fig12": "force_reliability",
    "fig13": "actuation_characterization",
    "fig14": "retention",
    "fig17": "fingertip_force",
    "table2": "field_campaign",
    "analyze-fingers": "finger_analysis",
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_globals(p, suppress: bool):
    # Registered on the root parser and again on each subparser, so the flags
    # work on either side of the subcommand.
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="TOML config (else $BERRYGRIP_CONFIG, else packaged default)")
    p.add_argument("--seed", type=_u64, default=d(None), help="master seed (default: config 'seed', else 0)")
    p.add_argument("--out", default=d("out"), help="output directory")
    p.add_argument("--check", action="store_true", default=d(False),
                   help="exit nonzero when an acceptance tolerance fails")
    p.add_argument("--trials", type=_positive, default=d(None), help="override trial count")
    p.add_argument("--parallel", type=_positive, default=d(1), help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="berrygrip", description=__doc__)
    _add_globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        _add_globals(sp, suppress=True)
        return sp

    sp = cmd("calibrate", "two-point sensor calibration and force/voltage table")
    sp.add_argument("--preset", help="start from a named sensor preset")
    sp.add_argument("--zero-voltage", type=float, help="output voltage at zero load")
    sp.add_argument("--span-force", type=float, help="known load for the span point, N")
    sp.add_argument("--span-voltage", type=float, help="output voltage at the span load")
    sp.add_argument("--max-force", type=float, default=4.0)
    sp.add_argument("--points", type=int, default=41)

    sp = cmd("sim-loop", "single closed-loop grasp with a per-tick trace")
    sp.add_argument("--setpoint", type=float, default=0.78, help="per-finger force, N")
    sp.add_argument("--diameter", type=float, default=21.0, help="berry diameter, mm")
    sp.add_argument("--timeout", type=float, default=5.0)
    sp.add_argument("--trial", type=int, default=0)
    sp.add_argument("--every", type=_positive, default=1, help="write every n-th tick")
    sp.add_argument("--preset")

    sp = cmd("fig12", "force-control reliability sweep")
    sp.add_argument("--preset", help="sensor preset override (e.g. field-2020)")
    sp.add_argument("--tolerance", type=float)

    sp = cmd("fig13", "curvature characterisation and quadratic fits")
    sp.add_argument("--csv", help="digitised retraction_mm,force_N,curvature_1_per_m data")
    sp.add_argument("--pixel-noise", type=float, help="std dev of simulated edge points, mm")

    sp = cmd("fig14", "retention-force dataset report")
    sp.add_argument("--csv", help="shape,retraction_mm,force_N data")

    sp = cmd("fig17", "fingertip force grid and cone push/pull inversion")
    sp.add_argument("--csv", help="digitised retraction_mm,diameter_mm,force_N data")

    sp = cmd("table2", "calibrate the berry population and run field campaigns")
    sp.add_argument("--no-calibrate", action="store_true", help="use the config population as is")

    sp = cmd("fit", "quadratic or circle fit of a CSV")
    sp.add_argument("csv")
    sp.add_argument("--model", choices=("quadratic", "circle"), default="quadratic")
    sp.add_argument("--x", default="x", help="x column")
    sp.add_argument("--y", default="y", help="y column")
    sp.add_argument("--zero-intercept", action="store_true")

    sp = cmd("analyze-fingers", "rank per-finger forces and recommend a finger count")
    sp.add_argument("--csv", help="finger,mean_force_N data")
    sp.add_argument("--threshold", type=float, default=0.1)
    return ap


def _params(args) -> dict:
    p = {}
    for name in ("zero_voltage", "span_force", "span_voltage", "max_force", "points", "setpoint",
                 "diameter", "timeout", "trial", "every", "tolerance", "csv", "pixel_noise", "threshold"):
        v = getattr(args, name, None)
        if v is not None:
            p[name] = v
    if getattr(args, "no_calibrate", False):
        p["calibrate"] = False
    return p


def _run_fit(args, seed) -> int:
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        xs = np.array([float(r[args.x]) for r in rows])
        ys = np.array([float(r[args.y]) for r in rows])
    except KeyError as e:
        raise ValueError(f"column {e} not in {args.csv}") from None
    os.makedirs(args.out, exist_ok=True)
    if args.model == "circle":
        f = circle_fit(np.column_stack([xs, ys]))
        summary = {"model": "circle", "center": list(f.center), "radius": f.radius,
                   "curvature": f.curvature, "straight": f.straight, "points": len(xs)}
    else:
        f = quadratic_fit(xs, ys, zero_intercept=args.zero_intercept)
        summary = {"model": "quadratic", "coefficients": f.coefficients.tolist(),
                   "zero_intercept": f.zero_intercept, "mean_abs_error": f.mean_abs_error,
                   "mean_percent_error": f.mean_percent_error, "residuals": f.residuals.tolist()}
    path = os.path.join(args.out, "fit.json")
    write_json(path, "fit", summary)
    _report("fit", [path], summary, None, args.out)
    return 0


def _report(kind, files, summary, passed, out_dir=None) -> None:
    lines = [f"[{kind}]"]
    for k in sorted(summary):
        v = summary[k]
        if isinstance(v, (list, dict)) and len(str(v)) > 100:
            continue
        lines.append(f"  {k}: {v}")
    if kind == "field_campaign":
        for r in summary["rows"]:
            lines.append(f"  {r['policy']:>6}: reliability {r['reliability_pct']:6.2f}%  rdr {r['rdr_pct']:6.2f}%"
                         f"  time {r['mean_time_s']:6.3f} s  "
                         f"{'ok' if r['within_tolerance'] else 'OUT OF TOLERANCE'}")
    if passed is not None:
        lines.append(f"  check: {'PASS' if passed else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        path = os.path.join(out_dir, f"{kind}.txt")
        with open(path, "w") as fh:
            fh.write(text)
        files = [*files, path]
    print(text, end="")
    for f in files:
        print(f"  wrote {f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = load_document(args.config)
        seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
        if args.command == "fit":
            return _run_fit(args, seed)
        preset_name = getattr(args, "preset", None)
        if preset_name:
            doc = {**doc, "sensor": {"preset": preset_name}}
        cfg = gripper_from_dict(doc)
        spec = ExperimentSpec(_COMMANDS[args.command], _params(args), seed=seed, out_dir=args.out,
                              parallel=args.parallel, trials=args.trials)
        rep = run_experiment(spec, cfg, doc)
    except (OSError, ValueError, KeyError) as e:
        print(f"berrygrip: error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    _report(rep.kind, rep.files, rep.summary, rep.passed, spec.out_dir)
    if args.check and rep.passed is False:
        return EXIT_CHECK_FAILED
    return 0


if __name__ == "__main__":
    sys.exit(main())
