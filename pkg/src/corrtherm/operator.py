"""Collocation discretization of the correspondence transfer operator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .correspondence import Correspondence, _require_coincidence_free
from .errors import ConfigError, ConvergenceError, NumericError, PreconditionError
from .maps import CircleMap, mod1
from .orbits import Potential

logger = logging.getLogger(__name__)

MIN_RESOLUTION = 64
TORUS_MAX_RESOLUTION = 2**9


@dataclass
class GridDensity:
    """Cell-averaged density on ``resolution**dim`` uniform cells of ``[0,1)^dim``.

    Point values between cell centers come from (multi)linear interpolation with
    wrap-around; interval masses treat the density as piecewise constant.
    """

    values: np.ndarray
    dim: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.dim or len(set(self.values.shape)) != 1:
            raise ConfigError(f"density values must be a {self.dim}-d cube, got shape {self.values.shape}")

    @classmethod
    def lebesgue(cls, resolution: int, dim: int = 1) -> "GridDensity":
        return cls(np.ones((resolution,) * dim), dim)

    @classmethod
    def from_function(cls, func, resolution: int, dim: int = 1) -> "GridDensity":
        c = cell_centers(resolution, dim)
        return cls(np.asarray(func(c), dtype=float).reshape((resolution,) * dim), dim)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return cell_centers(self.resolution, self.dim)

    def mean(self) -> float:
        return float(np.mean(self.values))

    def normalized(self) -> "GridDensity":
        return GridDensity(self.values / self.mean(), self.dim)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.resolution
        if self.dim == 1:
            u = x * n - 0.5
            i0 = np.floor(u)
            t = u - i0
            i0 = i0.astype(np.int64) % n
            return (1.0 - t) * self.values[i0] + t * self.values[(i0 + 1) % n]
        idx, wts = _interp_stencil(x, n, self.dim)
        out = np.zeros(x.shape[:-1])
        for cell, w in zip(idx, wts):
            out += w * self.values.reshape(-1)[cell]
        return out

    def cdf(self, x) -> np.ndarray:
        """``mu([0, x))`` on the circle for the piecewise-constant density."""
        if self.dim != 1:
            raise PreconditionError("cdf is defined on the circle only")
        n = self.resolution
        cum = np.concatenate([[0.0], np.cumsum(self.values)]) / n
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        i = np.minimum(np.floor(x * n).astype(np.int64), n - 1)
        return cum[i] + (x * n - i) * self.values[i] / n

    def interval_mass(self, a: float, b: float) -> float:
        return float(self.cdf(b) - self.cdf(a))


def cell_centers(resolution: int, dim: int = 1) -> np.ndarray:
    axis = (np.arange(resolution) + 0.5) / resolution
    if dim == 1:
        return axis
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, dim)


def _interp_stencil(x: np.ndarray, n: int, dim: int):
    """Flat cell indices and weights of the ``2**dim`` interpolation corners."""
    u = x * n - 0.5
    i0 = np.floor(u)
    t = u - i0
    i0 = i0.astype(np.int64)
    idx, wts = [], []
    for corner in np.ndindex(*([2] * dim)):
        corner = np.asarray(corner)
        cell = (i0 + corner) % n
        w = np.prod(np.where(corner == 1, t, 1.0 - t), axis=-1)
        flat = np.ravel_multi_index(tuple(np.moveaxis(cell, -1, 0)), (n,) * dim) if dim > 1 else cell[..., 0]
        idx.append(flat)
        wts.append(w)
    return idx, wts


def _check_resolution(T: Correspondence, resolution: int) -> None:
    if resolution < MIN_RESOLUTION:
        raise ConfigError(f"grid resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    if T.dim > 1 and resolution > TORUS_MAX_RESOLUTION:
        raise ConfigError(f"torus resolution is capped at {TORUS_MAX_RESOLUTION} per dimension")


def _branch_entries(T: Correspondence, resolution: int, weight_fn):
    """Rows, columns and values of ``sum_j sum_{x1} weight_fn(j, x1) * interp(x1)`` at every cell center."""
    centers = cell_centers(resolution, T.dim)
    ncell = resolution**T.dim
    rows_all, cols_all, vals_all = [], [], []
    row_ids = np.arange(ncell)
    for j, g in enumerate(T.generators):
        inv = np.asarray(g.inverse_branches(centers))
        w = weight_fn(j, inv)
        rows = np.broadcast_to(row_ids, w.shape)
        if T.dim == 1:
            idx, wts = _interp_stencil(inv[..., None], resolution, 1)
        else:
            idx, wts = _interp_stencil(inv, resolution, T.dim)
        for cell, iw in zip(idx, wts):
            rows_all.append(rows.ravel())
            cols_all.append(cell.ravel())
            vals_all.append((w * iw).ravel())
    return np.concatenate(rows_all), np.concatenate(cols_all), np.concatenate(vals_all), ncell


def transfer_matrix(T: Correspondence, phi: Potential, resolution: int) -> sp.csr_matrix:
    """Sparse matrix of ``g -> sum_j sum_{x1 in f_j^-1 x} exp(phi(x1, x)) g(x1)`` on cell centers."""
    _check_resolution(T, resolution)
    phi._check(T)
    rows, cols, vals, n = _branch_entries(T, resolution, lambda j, x1: np.exp(phi.log_weight(T, j, x1)))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def apply_transfer(T: Correspondence, phi: Potential, g: GridDensity) -> GridDensity:
    """One unnormalized application of the transfer operator to ``g``."""
    if g.dim != T.dim:
        raise ConfigError("density and correspondence dimensions differ")
    M = transfer_matrix(T, phi, g.resolution)
    return GridDensity((M @ g.values.reshape(-1)).reshape(g.values.shape), g.dim)


@dataclass
class DensityResult:
    Phi: GridDensity
    eigenvalue: float
    residual: float
    iterations: int
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def max_over_min(self) -> float:
        return float(self.Phi.values.max() / self.Phi.values.min())

    def summary(self) -> dict:
        return {
            "eigenvalue": self.eigenvalue,
            "residual": self.residual,
            "iterations": self.iterations,
            "max_over_min": self.max_over_min,
        }


def invariant_density(
    T: Correspondence,
    phi: Potential | None = None,
    resolution: int = 2**12,
    tol: float = 1e-10,
    max_iter: int = 1000,
    init: GridDensity | None = None,
    matrix: sp.csr_matrix | None = None,
) -> DensityResult:
    """Power iteration ``g <- Lg / mean(Lg)`` to the positive eigenfunction ``Phi`` (mean 1)."""
    phi = phi or Potential.jacobian()
    if phi.kind == "jacobian":
        _require_coincidence_free(T, "invariant_density")
    elif phi.kind != "torus_measurable":
        raise PreconditionError("invariant_density needs the jacobian or torus_measurable potential")
    M = matrix if matrix is not None else transfer_matrix(T, phi, resolution)
    if init is None:
        g = np.ones(M.shape[0])
    else:
        if init.resolution != resolution or init.dim != T.dim:
            raise ConfigError("init density does not match the requested grid")
        g = init.values.reshape(-1) / init.mean()
    if np.any(g <= 0):
        raise ConfigError("init density must be strictly positive")
    history = []
    change = math.inf
    it = 0
    while it < max_iter:
        it += 1
        h = M @ g
        h /= h.mean()
        change = float(np.max(np.abs(h - g)))
        history.append(change)
        g = h
        if change < tol:
            break
    if np.any(g < 0):
        raise NumericError("negative density values from a positive operator")
    Lg = M @ g
    eigenvalue = float(np.mean(Lg / g))
    residual = float(np.max(np.abs(Lg - eigenvalue * g)) / np.max(g))
    if change >= tol:
        raise ConvergenceError(f"power iteration did not reach tol={tol} in {max_iter} steps", residual)
    shape = (resolution,) * T.dim
    return DensityResult(GridDensity(g.reshape(shape), T.dim), eigenvalue, residual, it, history)


def kernel_transfer(T: Correspondence, kernel, rho: GridDensity) -> GridDensity:
    """Density of ``(rho m) Q`` on the same grid: ``sum_j L_j(P_j rho)``.

    ``L_j`` is the change-of-variables operator of ``f_j`` (weights ``1/Jac``);
    ``P_j`` and ``rho`` are read at the exact preimages.
    """
    if rho.dim != T.dim:
        raise ConfigError("density and correspondence dimensions differ")
    if kernel.k != T.k:
        raise ConfigError(f"kernel has {kernel.k} weights for {T.k} generators")
    centers = rho.centers
    out = np.zeros(centers.shape[0])
    for j, g in enumerate(T.generators):
        inv = np.asarray(g.inverse_branches(centers))
        contrib = kernel.probability(j, inv, T.dim) * rho.evaluate(inv) / g.jacobian(inv)
        out += contrib.sum(axis=0)
    return GridDensity(out.reshape(rho.values.shape), rho.dim)


def check_kernel_invariance(T: Correspondence, Phi: GridDensity, kernel) -> float:
    """L1 distance between the density of ``(Phi m) Q`` and ``Phi``."""
    pushed = kernel_transfer(T, kernel, Phi)
    return float(np.mean(np.abs(pushed.values - Phi.values)))


def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def preimage_union(T: Correspondence, a: float, b: float) -> list[tuple[float, float]]:
    """``T^-1 [a, b) = union_j f_j^-1 [a, b)`` as merged disjoint intervals (circle only)."""
    pieces = []
    for g in T.generators:
        if not isinstance(g, CircleMap):
            raise PreconditionError("interval preimages are available for circle generators only")
        pieces.extend(g.preimage_intervals(a, b))
    return _merge(pieces)


def miller_akin_condition1(
    T: Correspondence, mu: GridDensity, intervals: int = 64, quadrature: int = 2**9
) -> float:
    """``max_A mu(A) - mu(T^-1 A)`` over dyadic cells ``A``.

    On the circle the preimages are exact interval unions; on a torus
    ``intervals`` is split into a square grid of boxes and ``mu(T^-1 A)`` is
    estimated on a ``quadrature``-per-axis midpoint grid.
    """
    if T.dim == 1:
        worst = -math.inf
        for i in range(intervals):
            a, b = i / intervals, (i + 1) / intervals
            lhs = mu.interval_mass(a, b)
            rhs = math.fsum(mu.interval_mass(lo, hi) for lo, hi in preimage_union(T, a, b))
            worst = max(worst, lhs - rhs)
        return worst
    side = max(1, round(intervals ** (1.0 / T.dim)))
    pts = cell_centers(quadrature, T.dim)
    dens = mu.evaluate(pts)
    dens = dens / dens.mean()
    images = T.image(pts)
    box = np.minimum(np.floor(images * side).astype(np.int64), side - 1)
    flat = np.ravel_multi_index(tuple(np.moveaxis(box, -1, 0)), (side,) * T.dim)
    mu_cells = np.bincount(
        np.ravel_multi_index(
            tuple(np.moveaxis(np.minimum(np.floor(pts * side).astype(np.int64), side - 1), -1, 0)),
            (side,) * T.dim,
        ),
        weights=dens,
        minlength=side**T.dim,
    ) / len(pts)
    worst = -math.inf
    for cell in range(side**T.dim):
        hit = np.any(flat == cell, axis=0)
        worst = max(worst, float(mu_cells[cell] - dens[hit].sum() / len(pts)))
    return worst
