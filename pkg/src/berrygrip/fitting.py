"""Curve fitting used by the analysis commands: Kasa circle fit, quadratic
least squares with the percent-error convention, and the per-finger force
ranking."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

# points with |data| below this are left out of percent-error means (kappa = 0 row)
PERCENT_ERROR_FLOOR = 1e-9


class CircleFit(NamedTuple):
    center: tuple[float, float]
    radius: float
    curvature: float
    straight: bool


def circle_fit(points) -> CircleFit:
    """Algebraic (Kasa) least-squares circle through planar points.

    Solves ``x^2 + y^2 + D x + E y + F = 0`` in the least-squares sense on
    centroid-shifted coordinates.  Units follow the input; curvature is
    ``1 / radius`` in the inverse of those units.  Collinear input returns
    ``curvature == 0`` with ``straight`` set and an infinite radius.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    if len(pts) < 3:
        raise ValueError("circle_fit needs at least 3 points")

    mean = pts.mean(axis=0)
    x = pts[:, 0] - mean[0]
    y = pts[:, 1] - mean[1]
    scale = max(np.abs(x).max(), np.abs(y).max())
    if scale == 0.0:
        raise ValueError("all points coincide")

    # collinearity: the centred point cloud has a vanishing second singular value
    sv = np.linalg.svd(np.column_stack([x, y]) / scale, compute_uv=False)
    if sv[1] <= 1e-12 * sv[0]:
        return CircleFit((float("nan"), float("nan")), float("inf"), 0.0, True)

    u, v = x / scale, y / scale
    A = np.column_stack([u, v, np.ones_like(u)])
    b = -(u * u + v * v)
    (D, E, F), *_ = np.linalg.lstsq(A, b, rcond=None)
    cu, cv = -D / 2.0, -E / 2.0
    r2 = cu * cu + cv * cv - F
    if not np.isfinite(r2) or r2 <= 0:
        return CircleFit((float("nan"), float("nan")), float("inf"), 0.0, True)
    radius = float(np.sqrt(r2) * scale)
    center = (float(cu * scale + mean[0]), float(cv * scale + mean[1]))
    return CircleFit(center, radius, 1.0 / radius, False)


@dataclass(frozen=True)
class FitReport:
    """Quadratic fit result.  ``coefficients`` are highest power first
    (``c2, c1, c0``); residuals are ``data - fit``."""

    coefficients: np.ndarray
    mean_abs_error: float
    mean_percent_error: float
    residuals: np.ndarray
    zero_intercept: bool = False

    def predict(self, xs):
        return np.polyval(self.coefficients, np.asarray(xs, dtype=float))


def mean_percent_error(data, fit) -> float:
    data = np.asarray(data, dtype=float)
    fit = np.asarray(fit, dtype=float)
    keep = np.abs(data) >= PERCENT_ERROR_FLOOR
    if not keep.any():
        return float("nan")
    return float(np.mean(np.abs(fit[keep] - data[keep]) / np.abs(data[keep])) * 100.0)


def quadratic_fit(xs, ys, zero_intercept: bool = False) -> FitReport:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-D arrays of equal length")
    if len(xs) < 3:
        raise ValueError("quadratic_fit needs at least 3 points")

    cols = [xs * xs, xs] if zero_intercept else [xs * xs, xs, np.ones_like(xs)]
    A = np.column_stack(cols)
    coef, _, rank, _ = np.linalg.lstsq(A, ys, rcond=None)
    if rank < A.shape[1]:
        raise np.linalg.LinAlgError(f"rank-deficient design matrix (rank {rank} < {A.shape[1]})")
    if zero_intercept:
        coef = np.append(coef, 0.0)
    fitted = np.polyval(coef, xs)
    resid = ys - fitted
    return FitReport(
        coefficients=coef,
        mean_abs_error=float(np.mean(np.abs(resid))),
        mean_percent_error=mean_percent_error(ys, fitted),
        residuals=resid,
        zero_intercept=zero_intercept,
    )


class FingerRanking(NamedTuple):
    count: int
    ranking: list[tuple[str, float]]
    dropped: list[tuple[str, float]]


def finger_force_analysis(forces: Mapping[str, float] | Sequence[tuple[str, float]],
                          threshold: float = 0.1) -> FingerRanking:
    """Keep fingers whose mean force reaches ``threshold`` (N), strongest first."""
    items = list(forces.items()) if isinstance(forces, Mapping) else list(forces)
    if not items:
        raise ValueError("need at least one finger entry")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    kept = sorted((kv for kv in items if kv[1] >= threshold), key=lambda kv: -kv[1])
    dropped = [kv for kv in items if kv[1] < threshold]
    if not kept:
        warnings.warn(f"no finger reaches the {threshold} N threshold", stacklevel=2)
    return FingerRanking(len(kept), kept, dropped)
