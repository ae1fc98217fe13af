"""Transformations between raw design variables and physical densities.

Covers the cone density filter, exact volume projection through a shifted
sigmoid, and black-and-white thresholding. Every differentiable operation
comes with its exact vector-Jacobian product so gradients can be chained
through the whole pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
from scipy.special import expit

#: Bisection interval tolerance on the sigmoid shift.
SHIFT_TOL = 1e-12


@dataclass(frozen=True)
class VolumeBudget:
    """Volume fraction target V0 with uniform element volumes."""

    target: float
    element_volume: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.target <= 1.0:
            raise ValueError("volume target must lie in (0, 1]")


@dataclass(frozen=True)
class FilterOperator:
    """Row-normalized cone-weight filter on an nx-by-ny grid.

    ``weights`` holds the raw symmetric cone weights; filtering divides by
    the per-row sums, so a uniform field passes through unchanged.
    """

    nx: int
    ny: int
    radius: float
    weights: sparse.csr_matrix
    row_sums: np.ndarray

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.size:
            raise ValueError(f"field has {x.size} entries, expected {self.size}")
        return (self.weights @ x) / self.row_sums

    def vjp(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float).ravel()
        if w.size != self.size:
            raise ValueError(f"vector has {w.size} entries, expected {self.size}")
        # H = D^-1 W with W symmetric, so H^T w = W (w / row_sums).
        return self.weights @ (w / self.row_sums)


def build_filter(nx: int, ny: int, rmin: float) -> FilterOperator:
    """Cone filter: weight of element j on i is max(0, rmin - dist(centers))."""
    if rmin <= 0.0:
        raise ValueError("filter radius must be positive")
    reach = int(np.ceil(rmin)) - 1
    n = nx * ny
    rows, cols, vals = [], [], []
    for dy in range(-reach, reach + 1):
        for dx in range(-reach, reach + 1):
            weight = rmin - np.hypot(dx, dy)
            if weight <= 0.0:
                continue
            x_src = np.arange(max(0, -dx), min(nx, nx - dx))
            y_src = np.arange(max(0, -dy), min(ny, ny - dy))
            if x_src.size == 0 or y_src.size == 0:
                continue
            xs, ys = np.meshgrid(x_src, y_src)
            src = (ys * nx + xs).ravel()
            dst = ((ys + dy) * nx + (xs + dx)).ravel()
            rows.append(dst)
            cols.append(src)
            vals.append(np.full(src.size, weight))
    weights = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    row_sums = np.asarray(weights.sum(axis=1)).ravel()
    return FilterOperator(nx=nx, ny=ny, radius=float(rmin), weights=weights, row_sums=row_sums)


def apply_filter(filt: FilterOperator, x: np.ndarray) -> np.ndarray:
    return filt.apply(x)


def filter_vjp(filt: FilterOperator, w: np.ndarray) -> np.ndarray:
    return filt.vjp(w)


def find_volume_shift(raw: np.ndarray, target: float) -> float:
    """Bisection for b such that mean(sigmoid(raw + b)) equals the target.

    The mean is monotone increasing in b, so the bracket below always
    contains the root for finite input and target in (0, 1). The interval is
    shrunk to SHIFT_TOL, which bounds the volume error by 0.25 * SHIFT_TOL.
    """
    raw = np.asarray(raw, dtype=float).ravel()
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw field must be finite")
    if not 0.0 < target < 1.0:
        raise ValueError("volume target must lie strictly in (0, 1) for projection")
    lo = -float(raw.max()) - 40.0
    hi = -float(raw.min()) + 40.0
    if expit(raw + lo).mean() > target or expit(raw + hi).mean() < target:
        raise RuntimeError("bisection bracket failure in volume projection")
    while hi - lo > SHIFT_TOL:
        mid = 0.5 * (lo + hi)
        if expit(raw + mid).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def shifted_sigmoid_project(raw: np.ndarray, budget: VolumeBudget) -> np.ndarray:
    """Map an unbounded field to densities with mean exactly at the target."""
    raw = np.asarray(raw, dtype=float).ravel()
    shift = find_volume_shift(raw, budget.target)
    return expit(raw + shift)


def shifted_sigmoid_vjp(
    raw: np.ndarray,
    budget: VolumeBudget,
    w: np.ndarray,
    shift: float | None = None,
) -> np.ndarray:
    """VJP of the projection, including the implicit shift sensitivity.

    With rho_i = s(raw_i + b(raw)) and the volume constraint pinning b, the
    implicit function theorem gives db/draw_j = -s'_j / sum_k s'_k, hence
    (w^T drho/draw)_j = w_j s'_j - s'_j * sum_i(w_i s'_i) / sum_i s'_i.
    """
    raw = np.asarray(raw, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if w.size != raw.size:
        raise ValueError("vector length mismatch")
    if shift is None:
        shift = find_volume_shift(raw, budget.target)
    rho = expit(raw + shift)
    ds = rho * (1.0 - rho)
    total = ds.sum()
    return w * ds - ds * (w @ ds) / total


def threshold_count(n: int, target: float) -> int:
    """Number of solid elements kept by thresholding (round half up)."""
    return int(np.floor(n * (target - 0.001) / (1.0 - 0.001) + 0.5))


def threshold(rho: np.ndarray, budget: VolumeBudget) -> np.ndarray:
    """Project a gray design to black-and-white.

    The densest n_p elements become 1 and the rest 0.001, with ties broken
    in favor of lower element indices.
    """
    rho = np.asarray(rho, dtype=float).ravel()
    n_p = threshold_count(rho.size, budget.target)
    n_p = min(max(n_p, 0), rho.size)
    out = np.full(rho.size, 0.001)
    if n_p > 0:
        order = np.argsort(-rho, kind="stable")
        out[order[:n_p]] = 1.0
    return out


def rescale_thresholded_compliance(c_th: float, v_th: float, v0: float) -> float:
    """Compare thresholded compliance at a slightly different volume fraction."""
    if v0 <= 0.0:
        raise ValueError("target volume fraction must be positive")
    return c_th * v_th / v0


def volume_fraction(rho: np.ndarray) -> float:
    """Material volume fraction of a density field (uniform element volumes)."""
    return float(np.asarray(rho, dtype=float).mean())
