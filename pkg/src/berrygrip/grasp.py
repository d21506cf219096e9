"""Grasp mechanics: cone push/pull decomposition, the fingertip contact plant
and the measured retention-force datasets."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .finger import CurvatureMap, DomainError, GripperGeometry, contact_retraction

SHAPES = ("sphere", "cylinder", "cube", "upright cone", "inverted cone",
          "icosahedron", "stellated dodecahedron")


@dataclass(frozen=True)
class ConeTestSpec:
    cone_angle: float = 15.0   # deg, full draft angle
    n_fingers: int = 3
    friction: float = 0.5      # only used to synthesise push/pull data; cancels on inversion
    speed: float = 1.0         # mm/s

    def __post_init__(self):
        if not 0 < self.cone_angle < 180:
            raise ValueError("cone angle must lie in (0, 180) degrees")
        if self.n_fingers < 2:
            raise ValueError("need at least two fingers")
        if self.friction < 0:
            raise ValueError("friction coefficient must be nonnegative")


def _half_angle_sin_cos(theta_deg):
    half = math.radians(theta_deg) / 2.0
    return math.sin(half), math.cos(half)


def forward_push_pull(f_finger, n: int, theta_deg: float, mu: float):
    """Axial forces needed to pull the cone out of / push it into the grip.

    Returns ``(F_push, F_pull)``.  The finger normal force has an axial
    component ``sin(theta/2)`` and friction adds ``mu cos(theta/2)`` against
    the motion.
    """
    if np.any(np.asarray(f_finger) < 0):
        raise ValueError("finger force must be nonnegative")
    s, c = _half_angle_sin_cos(theta_deg)
    nf = n * np.asarray(f_finger, dtype=float)
    push = nf * (s + mu * c)
    pull = nf * (-s + mu * c)
    if np.ndim(f_finger) == 0:
        return float(push), float(pull)
    return push, pull


def finger_force_from_push_pull(f_push, f_pull, n: int, theta_deg: float):
    """Per-finger normal force from a push and a pull measurement.  Friction
    cancels in the difference."""
    if n < 2:
        raise ValueError("need at least two fingers")
    if not 0 < theta_deg < 180:
        raise ValueError("cone angle must lie in (0, 180) degrees")
    s, _ = _half_angle_sin_cos(theta_deg)
    if s == 0.0:
        raise ZeroDivisionError("sin(theta/2) vanishes")
    f = (np.asarray(f_push, dtype=float) - np.asarray(f_pull, dtype=float)) / (2.0 * n * s)
    return float(f) if np.ndim(f) == 0 else f


@dataclass(frozen=True)
class ContactModel:
    """Linear post-contact fingertip force, scaled so the anchor is exact.

    ``F = F_a * (dl - dl0(d)) / (dl_a - dl0(d_a))`` beyond contact.  An
    optional stiffness table (``diameters``, ``stiffness`` in N/mm) replaces
    the single anchor slope with a piecewise-linear ``k(d)``.
    """

    anchor_retraction: float = 9.0
    anchor_diameter: float = 47.0
    anchor_force: float = 4.92
    gripper: GripperGeometry = field(default_factory=GripperGeometry)
    cmap: CurvatureMap = field(default_factory=CurvatureMap)
    diameters: tuple = ()
    stiffness_table: tuple = ()

    def __post_init__(self):
        if self.anchor_force <= 0:
            raise ValueError("anchor force must be positive")
        if len(self.diameters) != len(self.stiffness_table):
            raise ValueError("stiffness table columns differ in length")
        if any(k <= 0 for k in self.stiffness_table):
            raise ValueError("tabulated stiffness must be positive")
        if self.anchor_span <= 0:
            raise ValueError("anchor retraction does not reach the anchor diameter")

    @property
    def anchor_span(self) -> float:
        return self.anchor_retraction - contact_retraction(self.anchor_diameter, self.gripper, self.cmap)

    @property
    def stiffness(self) -> float:
        """Single anchor-fit slope, N per mm of post-contact retraction."""
        return self.anchor_force / self.anchor_span

    def stiffness_at(self, d):
        if not self.diameters:
            return self.stiffness if np.ndim(d) == 0 else np.full(np.shape(d), self.stiffness)
        k = np.interp(d, self.diameters, self.stiffness_table)
        return float(k) if np.ndim(d) == 0 else k


def fingertip_force(dl, d, model: ContactModel):
    """Per-finger normal force at retraction ``dl`` (mm) on an object of
    diameter ``d`` (mm)."""
    dl_arr = np.asarray(dl, dtype=float)
    lo, hi = 0.0, model.cmap.retraction_max
    if np.any(dl_arr < lo) or np.any(dl_arr > hi):
        raise DomainError(f"retraction outside [{lo}, {hi}] mm")
    dl0 = contact_retraction(d, model.gripper, model.cmap)
    over = dl_arr - dl0
    if model.diameters:
        f = model.stiffness_at(d) * over
    else:
        f = model.anchor_force * (over / model.anchor_span)
    f = np.where(over > 0, f, 0.0)
    return float(f) if f.ndim == 0 else f


class ContactPoint(NamedTuple):
    retraction: float
    diameter: float
    force: float


def load_fingertip_csv(path) -> list[ContactPoint]:
    """Digitised fingertip-force curves, columns ``retraction_mm, diameter_mm, force_N``."""
    with open(path, newline="") as fh:
        return [ContactPoint(float(r["retraction_mm"]), float(r["diameter_mm"]), float(r["force_N"]))
                for r in csv.DictReader(fh)]


def fit_stiffness_table(points, model: ContactModel) -> ContactModel:
    """Per-diameter least-squares slope through the origin of force against
    post-contact retraction; returns a model carrying the ``k(d)`` table."""
    by_d: dict[float, list[ContactPoint]] = {}
    for p in points:
        by_d.setdefault(p.diameter, []).append(p)
    ds, ks = [], []
    for d in sorted(by_d):
        rows = by_d[d]
        x = np.array([p.retraction for p in rows]) - contact_retraction(d, model.gripper, model.cmap)
        y = np.array([p.force for p in rows])
        use = x > 0
        if not use.any():
            continue
        ds.append(d)
        ks.append(float(np.dot(x[use], y[use]) / np.dot(x[use], x[use])))
    if not ds:
        raise ValueError("no digitised point lies beyond contact")
    return ContactModel(model.anchor_retraction, model.anchor_diameter, model.anchor_force,
                        model.gripper, model.cmap, tuple(ds), tuple(ks))


# ---------------------------------------------------------------- retention data

class RetentionRecord(NamedTuple):
    shape: str
    retraction: float | None   # None when the source gives no retraction
    force: float


class UnknownShapeError(KeyError):
    pass


def load_retention_csv(path) -> list[RetentionRecord]:
    """Rows of ``shape, retraction_mm, force_N``; an empty retraction cell
    means the retraction was not recorded."""
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            shape = r["shape"].strip()
            if shape not in SHAPES:
                raise UnknownShapeError(f"unknown shape tag {shape!r}")
            dl = r["retraction_mm"].strip()
            force = float(r["force_N"])
            if force < 0:
                raise ValueError("retention force must be nonnegative")
            out.append(RetentionRecord(shape, float(dl) if dl else None, force))
    return out


def retention_query(dataset, shape: str, retraction: float) -> float:
    """Recorded force at ``retraction``, linearly interpolated between grid
    points of the same shape."""
    rows = sorted((r for r in dataset if r.shape == shape and r.retraction is not None),
                  key=lambda r: r.retraction)
    if not rows:
        if shape not in SHAPES or not any(r.shape == shape for r in dataset):
            raise UnknownShapeError(f"no retention data for shape {shape!r}")
        raise ValueError(f"retention data for {shape!r} carries no retraction grid")
    xs = [r.retraction for r in rows]
    if not xs[0] <= retraction <= xs[-1]:
        raise DomainError(f"retraction {retraction} mm outside recorded grid [{xs[0]}, {xs[-1]}]")
    for r in rows:
        if r.retraction == retraction:
            return r.force
    return float(np.interp(retraction, xs, [r.force for r in rows]))
