"""Packaged measurement tables and campaign definitions.

CSV schemas (all with header rows):

* ``retention_4mm.csv``, ``retention_sweep_maxima.csv``: ``shape, retraction_mm, force_N``
  (empty retraction = not recorded)
* ``finger_forces_manual.csv``: ``finger, mean_force_N``
* ``field_results.csv``: ``row, mode, desired_force_N, retraction_mm,
  reliability_pct, harvest_time_s, rdr_pct`` (empty = not applicable)
"""
from __future__ import annotations

import csv
from importlib import resources
from typing import NamedTuple

from .grasp import load_retention_csv
from .harvest import BerryPopulation, Dist, HarvestPolicy, Target


def data_path(name: str):
    p = resources.files("berrygrip") / "data" / name
    if not p.is_file():
        raise FileNotFoundError(f"missing packaged fixture {name}")
    return p


def retention_4mm():
    return load_retention_csv(data_path("retention_4mm.csv"))


def retention_sweep_maxima():
    return load_retention_csv(data_path("retention_sweep_maxima.csv"))


def finger_forces(path=None) -> dict[str, float]:
    with open(path or data_path("finger_forces_manual.csv"), newline="") as fh:
        return {r["finger"]: float(r["mean_force_N"]) for r in csv.DictReader(fh)}


class FieldRow(NamedTuple):
    row: str
    mode: str
    desired_force: float | None
    retraction: float | None
    reliability: float
    harvest_time: float
    rdr: float


def _opt(x: str):
    x = x.strip()
    return float(x) if x else None


def field_results(path=None) -> list[FieldRow]:
    with open(path or data_path("field_results.csv"), newline="") as fh:
        return [FieldRow(r["row"], r["mode"], _opt(r["desired_force_N"]), _opt(r["retraction_mm"]),
                         float(r["reliability_pct"]), float(r["harvest_time_s"]), float(r["rdr_pct"]))
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------- config tables

def population_from_dict(doc: dict, seed: int = 0) -> BerryPopulation:
    p = dict(doc.get("population", {}))
    kw = {}
    for name in ("length", "width", "mass", "detachment_force", "damage_threshold"):
        if name in p:
            kw[name] = Dist(**p.pop(name))
    if "rigid_tip_factor" in p:
        kw["rigid_tip_factor"] = float(p.pop("rigid_tip_factor"))
    if p:
        raise ValueError(f"[population] unknown keys: {sorted(p)}")
    return BerryPopulation(seed=seed, **kw)


def policies_from_dict(doc: dict) -> list[HarvestPolicy]:
    camp = doc.get("campaign", {})
    shared = {k: camp[k] for k in ("approach_time", "stow_time") if k in camp}
    return [HarvestPolicy(**{**shared, **p}) for p in camp.get("policy", [])]


def field_targets(policies, rows=None) -> list[Target]:
    """Pair each policy with the field row of the same name."""
    rows = {r.row: r for r in (rows or field_results())}
    out = []
    for p in policies:
        if p.name not in rows:
            raise KeyError(f"no field row named {p.name!r}")
        r = rows[p.name]
        out.append(Target(p, r.reliability, r.rdr, r.harvest_time))
    return out
