"""Quasi-static finger and gripper geometry.

Lengths are millimetres, curvature is 1/m.  Each finger is a single
constant-curvature arc whose endpoint is the fingertip; the three fingers are
mounted at ``palm_radius`` and tilted outward by ``mount_offset_deg``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Argument outside the characterised range of a map or actuator."""


@dataclass(frozen=True)
class FingerGeometry:
    length: float = 64.5
    tendon_offset: float = 3.0
    backbone_width: float = 5.0
    backbone_thickness: float = 0.3
    max_tendon_force: float = 20.0

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("finger length must be positive")
        if not 0 < self.backbone_thickness <= self.backbone_width:
            raise ValueError("need 0 < backbone thickness <= width")
        if self.tendon_offset <= 0:
            raise ValueError("tendon offset must be positive")
        if self.max_tendon_force <= 0:
            raise ValueError("max tendon force must be positive")


@dataclass(frozen=True)
class CurvatureMap:
    """Zero-intercept quadratics: curvature from retraction (``a2, a1``) and
    from tendon force (``b2, b1``)."""

    a2: float = 0.14
    a1: float = 2.4
    b2: float = 0.04
    b1: float = 2.0
    retraction_max: float = 10.0
    max_tendon_force: float = 20.0

    def __post_init__(self):
        if self.retraction_max <= 0:
            raise ValueError("retraction domain must be positive")
        for name, c2, c1, hi in (("retraction", self.a2, self.a1, self.retraction_max),
                                 ("tendon force", self.b2, self.b1, self.max_tendon_force)):
            # slope 2*c2*x + c1 must stay positive over [0, hi]
            if c1 <= 0 or 2 * c2 * hi + c1 <= 0:
                raise ValueError(f"curvature-from-{name} map must be increasing on its domain")

    @classmethod
    def from_csv(cls, path, **kwargs) -> "CurvatureMap":
        """Fit both maps to a ``retraction_mm, force_N, curvature_1_per_m`` table."""
        from .fitting import quadratic_fit

        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        dl = np.array([float(r["retraction_mm"]) for r in rows])
        force = np.array([float(r["force_N"]) for r in rows])
        kappa = np.array([float(r["curvature_1_per_m"]) for r in rows])
        by_dl = quadratic_fit(dl, kappa, zero_intercept=True)
        by_f = quadratic_fit(force, kappa, zero_intercept=True)
        kwargs.setdefault("retraction_max", float(dl.max()))
        return cls(a2=float(by_dl.coefficients[0]), a1=float(by_dl.coefficients[1]),
                   b2=float(by_f.coefficients[0]), b1=float(by_f.coefficients[1]), **kwargs)


def backbone_stiffness_ratio(width: float, thickness: float) -> float:
    """Transverse over bending second moment of a rectangular strip, ``(w/t)^2``."""
    if width <= 0 or thickness <= 0 or thickness > width:
        raise ValueError("need 0 < thickness <= width")
    return (width / thickness) ** 2


def curvature_from_retraction(dl, cmap: CurvatureMap):
    dl_arr = np.asarray(dl, dtype=float)
    if np.any(dl_arr < 0) or np.any(dl_arr > cmap.retraction_max):
        raise DomainError(f"retraction outside [0, {cmap.retraction_max}] mm")
    k = cmap.a2 * dl_arr * dl_arr + cmap.a1 * dl_arr
    return float(k) if np.ndim(dl) == 0 else k


def curvature_from_tendon_force(force, cmap: CurvatureMap):
    f = np.asarray(force, dtype=float)
    if np.any(f < 0):
        raise DomainError("tendon force must be nonnegative")
    if np.any(f > cmap.max_tendon_force):
        raise DomainError(f"tendon force above the {cmap.max_tendon_force} N actuator limit")
    k = cmap.b2 * f * f + cmap.b1 * f
    return float(k) if np.ndim(force) == 0 else k


def tendon_force_for_curvature(kappa, cmap: CurvatureMap):
    """Inverse of :func:`curvature_from_tendon_force` (positive root)."""
    k = np.asarray(kappa, dtype=float)
    if cmap.b2 == 0:
        f = k / cmap.b1
    else:
        f = (-cmap.b1 + np.sqrt(cmap.b1 * cmap.b1 + 4 * cmap.b2 * k)) / (2 * cmap.b2)
    return float(f) if np.ndim(kappa) == 0 else f


def arc_point(kappa, length, s=1.0):
    """Point at arc fraction ``s`` of a finger with curvature ``kappa`` (1/m).

    Base frame: ``y`` along the unbent finger, ``x`` toward the bending side.
    Written with ``2 sin^2(t/2)/t`` and ``sinc`` so it is continuous at
    ``kappa = 0``.
    """
    s_arr = np.asarray(s, dtype=float)
    k_arr = np.asarray(kappa, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr > 1):
        raise ValueError("arc fraction must lie in [0, 1]")
    if np.any(k_arr < 0):
        raise ValueError("curvature must be nonnegative")
    arc = s_arr * length
    theta = (k_arr / 1000.0) * arc
    half = 0.5 * theta
    # (1 - cos t)/t = 2 sin^2(t/2)/t = sin(t/2) * sinc(t/2 / pi)
    x = arc * np.sin(half) * np.sinc(half / np.pi)
    y = arc * np.sinc(theta / np.pi)
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


@dataclass(frozen=True)
class GripperGeometry:
    finger: FingerGeometry = field(default_factory=FingerGeometry)
    n_fingers: int = 3
    angular_spacing: float = 120.0
    mount_offset_angle: float = 20.0
    max_aperture: float = 55.0
    palm_radius: float | None = None

    def __post_init__(self):
        if self.n_fingers < 2:
            raise ValueError("need at least two fingers")
        if abs(self.angular_spacing * self.n_fingers - 360.0) > 1e-9:
            raise ValueError("fingers must be evenly spaced around the palm")
        if self.palm_radius is None:
            # the aperture is the given quantity; solve the palm from it
            alpha = math.radians(self.mount_offset_angle)
            palm = 0.5 * self.max_aperture - self.finger.length * math.sin(alpha)
            if palm < 0:
                raise ValueError("finger too long for the requested aperture and tilt")
            object.__setattr__(self, "palm_radius", palm)

    @property
    def fingers(self) -> tuple[FingerGeometry, ...]:
        return (self.finger,) * self.n_fingers


def fingertip_radius(dl, gripper: GripperGeometry, cmap: CurvatureMap):
    """Signed radial distance of the fingertips from the gripper axis (mm)."""
    kappa = curvature_from_retraction(dl, cmap)
    x, y = arc_point(kappa, gripper.finger.length, 1.0)
    alpha = math.radians(gripper.mount_offset_angle)
    return gripper.palm_radius - np.asarray(x) * math.cos(alpha) + np.asarray(y) * math.sin(alpha)


def grip_aperture(dl, gripper: GripperGeometry, cmap: CurvatureMap):
    """Diameter of the circle through the fingertips, clamped at zero once they
    reach the axis."""
    d = np.maximum(2.0 * fingertip_radius(dl, gripper, cmap), 0.0)
    return float(d) if np.ndim(dl) == 0 else d


def contact_retraction(d, gripper: GripperGeometry, cmap: CurvatureMap, tol: float = 1e-3):
    """Smallest retraction whose aperture is at most ``d`` (bisection).

    Accepts a scalar or an array of diameters; the returned value is the upper
    end of the final bracket, so ``grip_aperture(result) <= d`` holds.
    """
    d_arr = np.atleast_1d(np.asarray(d, dtype=float))
    if np.any(d_arr <= 0):
        raise ValueError("object diameter must be positive")
    if np.any(d_arr > gripper.max_aperture + 1e-9):
        raise DomainError(f"object larger than the {gripper.max_aperture} mm maximum aperture")
    hi_dl = cmap.retraction_max
    if np.any(grip_aperture(hi_dl, gripper, cmap) > d_arr):
        raise DomainError("object too small to be reached within the retraction travel")

    open_ap = grip_aperture(0.0, gripper, cmap)
    lo = np.zeros_like(d_arr)
    hi = np.full_like(d_arr, hi_dl)
    done = open_ap <= d_arr + 1e-9
    hi[done] = 0.0
    while np.any(hi - lo > tol):
        mid = 0.5 * (lo + hi)
        closed = grip_aperture(mid, gripper, cmap) <= d_arr
        hi = np.where(closed, mid, hi)
        lo = np.where(closed, lo, mid)
    return float(hi[0]) if np.ndim(d) == 0 else hi


