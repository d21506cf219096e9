"""Closed-loop batch kernel: numba vs numpy.

    python benchmarks/bench_kernels.py [--trials N] [--parallel P]

Runs the same seeded batch on both backends, checks the results are
bit-identical and prints wall time and tick throughput.  With
BERRYGRIP_DISABLE_NUMBA=1 only the numpy path is timed.
"""
import argparse
import time

import numpy as np

from berrygrip import kernels
from berrygrip.config import load_config
from berrygrip.finger import contact_retraction
from berrygrip.sensing import check_setpoint


def _batch(cfg, n, seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(15.0, 30.0, n)
    contact = np.array([contact_retraction(x, cfg.gripper, cfg.cmap) for x in d])
    sp = rng.uniform(0.491, 1.472, n)
    thr = np.array([check_setpoint(s, cfg.cal) for s in sp])
    return contact, cfg.contact.stiffness, thr, kernels.trial_keys(seed, np.arange(n))


def time_backend(name, args, lc, parallel, repeat=3):
    kernels.run_batch(*[a[:4] if np.ndim(a) else a for a in args], lc, backend=name)   # compile / warm
    best, res = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = kernels.run_batch(*args, lc, parallel=parallel, backend=name)
        best = min(best, time.perf_counter() - t0)
    return best, res


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--parallel", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    cfg, _ = load_config()
    lc = cfg.setup.constants(5.0)
    args = _batch(cfg, a.trials, a.seed)
    names = ["numba", "numpy"] if kernels.HAVE_NUMBA else ["numpy"]
    out = {}
    for name in names:
        dt, res = time_backend(name, args, lc, a.parallel)
        ticks = int(res.ticks.sum())
        out[name] = res
        print(f"{name:>6}: {a.trials} trials  {dt:8.3f} s  {ticks / dt / 1e6:8.2f} Mticks/s")
    if len(out) == 2:
        same = all(np.array_equal(getattr(out["numba"], f), getattr(out["numpy"], f))
                   for f in kernels.BatchResult._fields)
        print(f"bit-identical: {same}")


if __name__ == "__main__":
    main()
