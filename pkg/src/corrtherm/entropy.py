"""Kernel entropy: partition estimates, fiber entropy and the variational identity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .correspondence import Correspondence
from .errors import ConfigError, PreconditionError, ResourceError
from .kernel import Kernel, _Lattice, _initial_pieces, exact_mode_available
from .operator import GridDensity, check_kernel_invariance
from .orbits import Potential, extrapolate_inverse_n

MAX_WORDS = 10**7
MAX_ALPHABET = 64
MAX_N = 12
INVARIANCE_TOL = 1e-6


def _plogp(p: float) -> float:
    return -p * math.log(p) if p > 0 else 0.0


def _exact_level_entropies(T, kernel, mu, m, n_max) -> list[float]:
    """``H_1..H_{n_max}`` by depth-first refinement of weighted lattice pieces."""
    lat = _Lattice(T, [Fraction(i, m) for i in range(m + 1)], 1 if mu is None else mu.resolution)
    width = lat.D // m
    weights = [float(w) for w in kernel.exact_weights]
    H = [0.0] * (n_max + 1)
    count = [0] * (n_max + 1)

    def children(pieces):
        out: dict[int, dict] = {}
        for j in range(T.k):
            if weights[j] == 0:
                continue
            for (a, b), w in lat.image(pieces, j, weights[j]).items():
                for cell in range(a // width, (b - 1) // width + 1):
                    s, e = max(a, cell * width), min(b, (cell + 1) * width)
                    bucket = out.setdefault(cell, {})
                    bucket[(s, e)] = bucket.get((s, e), 0.0) + w
        return out

    def visit(pieces, level):
        p = lat.mass(pieces)
        if p <= 0:
            return
        H[level] += _plogp(p)
        count[level] += 1
        if count[level] > MAX_WORDS:
            raise ResourceError(f"more than {MAX_WORDS} positive-measure words at n={level}")
        if level < n_max:
            kids = children(pieces)
            for cell in sorted(kids):
                visit(kids[cell], level + 1)

    root = _initial_pieces(lat, mu, exact=False)
    for cell in range(m):
        visit(lat.restrict(root, cell), 1)
    return H[1:]


def _quadrature_level_entropies(T, kernel, mu, m, n_max, resolution) -> list[float]:
    """``H_1..H_{n_max}`` from weighted midpoint particles branched over every symbol."""
    if T.dim != 1:
        raise PreconditionError("partition entropy is implemented on the circle")
    x = (np.arange(resolution) + 0.5) / resolution
    w = mu.evaluate(x) if mu is not None else np.ones(resolution)
    w = w / w.sum()
    code = np.minimum((x * m).astype(np.int64), m - 1)
    H = []
    for level in range(1, n_max + 1):
        _, inv = np.unique(code, return_inverse=True)
        p = np.bincount(inv, weights=w)
        p = p[p > 0]
        if len(p) > MAX_WORDS:
            raise ResourceError(f"more than {MAX_WORDS} positive-measure words at n={level}")
        H.append(float(-np.sum(p * np.log(p))))
        if level == n_max:
            break
        xs, ws, cs = [], [], []
        for j, g in enumerate(T.generators):
            y = np.asarray(g(x))
            wy = w * kernel.probability(j, x)
            keep = wy > 0
            xs.append(y[keep])
            ws.append(wy[keep])
            cs.append(code[keep] * m + np.minimum((y[keep] * m).astype(np.int64), m - 1))
        x, w, code = np.concatenate(xs), np.concatenate(ws), np.concatenate(cs)
        # compress the codes so they stay within int64 for long words
        _, code = np.unique(code, return_inverse=True)
    return H


def partition_entropies(
    mu: GridDensity | None,
    kernel: Kernel,
    T: Correspondence,
    m: int,
    n_max: int,
    mode: str = "auto",
    resolution: int = 2**14,
) -> list[float]:
    """Block entropies ``H_n = H_{mu Q^[n-1]}(A^n)`` for ``n = 1..n_max`` over ``m`` equal arcs."""
    if m < 1 or n_max < 1:
        raise ConfigError("need m >= 1 and n_max >= 1")
    if m * T.k > MAX_ALPHABET or n_max > MAX_N:
        raise ResourceError(f"need m*k <= {MAX_ALPHABET} and n_max <= {MAX_N}")
    if kernel.k != T.k:
        raise ConfigError(f"kernel has {kernel.k} weights for {T.k} generators")
    if mode == "auto":
        mode = "exact" if exact_mode_available(T, kernel, mu) else "quadrature"
    if mode == "exact":
        if not exact_mode_available(T, kernel, mu):
            raise PreconditionError("exact mode needs circle_linear generators and a constant kernel")
        return _exact_level_entropies(T, kernel, mu, m, n_max)
    if mode != "quadrature":
        raise ConfigError(f"unknown partition mode {mode!r}")
    return _quadrature_level_entropies(T, kernel, mu, m, n_max, resolution)


def partition_entropy_rate(
    mu: GridDensity | None,
    kernel: Kernel,
    T: Correspondence,
    m: int,
    n_max: int,
    mode: str = "auto",
    resolution: int = 2**14,
) -> list[tuple[int, float]]:
    """``[(n, H_n / n)]`` for ``n = 1..n_max``; ``mu=None`` means Lebesgue."""
    H = partition_entropies(mu, kernel, T, m, n_max, mode=mode, resolution=resolution)
    return [(n, h / n) for n, h in enumerate(H, start=1)]


def _density(mu: GridDensity | None, T: Correspondence, resolution: int):
    if mu is None:
        mu = GridDensity.lebesgue(resolution, T.dim)
    return mu.centers, mu.values.reshape(-1) / mu.mean()


def _kernel_weights(T: Correspondence, kernel: Kernel | None) -> np.ndarray:
    if kernel is None:
        return np.full(T.k, 1.0 / T.k)
    if not kernel.is_constant:
        raise PreconditionError("analytic entropy needs constant kernel weights")
    if kernel.k != T.k:
        raise ConfigError(f"kernel has {kernel.k} weights for {T.k} generators")
    return kernel.weights


def fiber_entropy(
    T: Correspondence, mu: GridDensity | None = None, kernel: Kernel | None = None, resolution: int = 2**12
) -> float:
    """``sum_j P_j int log Jac_j dmu`` by midpoint quadrature on the grid of ``mu``.

    With the default uniform weights this is ``(1/k) sum_j int log Jac_j dmu``.
    """
    P = _kernel_weights(T, kernel)
    x, dens = _density(mu, T, resolution)
    total = 0.0
    for p, g in zip(P, T.generators):
        if p > 0:
            total += p * float(np.mean(np.log(g.jacobian(x)) * dens))
    return total


def shift_entropy(T: Correspondence, kernel: Kernel | None = None) -> float:
    """Entropy of the Bernoulli base: ``log k`` for the uniform kernel."""
    P = _kernel_weights(T, kernel)
    return float(sum(_plogp(p) for p in P))


def kernel_entropy_analytic(
    T: Correspondence, mu: GridDensity | None = None, kernel: Kernel | None = None, resolution: int = 2**12
) -> float:
    """Skew-product assembly ``h = H(P) + sum_j P_j int log Jac_j dmu`` (``log k + fiber`` when uniform)."""
    return shift_entropy(T, kernel) + fiber_entropy(T, mu, kernel, resolution)


def potential_integral(
    T: Correspondence, phi: Potential, mu: GridDensity | None = None, kernel: Kernel | None = None,
    resolution: int = 2**12,
) -> float:
    """``int int phi dQ_x dmu(x) = sum_j int P_j(x) phi(x, f_j x) dmu``.

    The coincidence set of a ``torus_measurable`` potential is Lebesgue-null and
    is left out, so every branch contributes its off-set value ``-log|det A_j|``.
    """
    x, dens = _density(mu, T, resolution)
    kernel = kernel or Kernel.uniform(T.k)
    consts = phi.branch_constants(T) if phi.kind == "torus_measurable" else None
    total = 0.0
    for j in range(T.k):
        pj = kernel.probability(j, x, T.dim)
        vals = np.full(len(dens), consts[j]) if consts is not None else phi.log_weight(T, j, x)
        total += float(np.mean(pj * vals * dens))
    return total


@dataclass
class VariationalResult:
    lhs: float
    rhs: float
    gap: float
    entropy: float
    integral: float
    invariance: float

    def to_dict(self) -> dict:
        return asdict(self)


def variational_check(
    T: Correspondence,
    phi: Potential,
    mu: GridDensity | None = None,
    kernel: Kernel | None = None,
    resolution: int = 2**12,
) -> VariationalResult:
    """``lhs = h_mu(Q) + int int phi``, ``rhs = log k``, ``gap = rhs - lhs``.

    Raises :class:`PreconditionError` when ``mu`` is not ``Q``-invariant to 1e-6.
    """
    kernel = kernel or Kernel.uniform(T.k)
    phi._check(T)
    grid = mu if mu is not None else GridDensity.lebesgue(resolution, T.dim)
    disc = check_kernel_invariance(T, grid.normalized(), kernel)
    if disc > INVARIANCE_TOL:
        raise PreconditionError(f"measure is not kernel-invariant (discrepancy {disc:.3e})")
    h = kernel_entropy_analytic(T, grid, kernel)
    integral = potential_integral(T, phi, grid, kernel)
    lhs = h + integral
    rhs = math.log(T.k)
    return VariationalResult(float(lhs), rhs, float(rhs - lhs), float(h), float(integral), disc)


@dataclass
class EntropyReport:
    h_partition: list[tuple[int, int, float]]
    h_extrapolated: float
    h_analytic: float
    fiber_entropy: float
    shift_entropy: float
    variational_lhs: float
    pressure_rhs: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def entropy_report(
    T: Correspondence,
    phi: Potential,
    mu: GridDensity | None = None,
    kernel: Kernel | None = None,
    m: int = 16,
    n_max: int = 8,
    mode: str = "auto",
    resolution: int = 2**12,
) -> EntropyReport:
    """Both entropy tracks plus the variational identity for one ``(mu, Q)`` pair."""
    kernel = kernel or Kernel.uniform(T.k)
    rates = partition_entropy_rate(mu, kernel, T, m, n_max, mode=mode)
    ns = [n for n, _ in rates]
    fib = fiber_entropy(T, mu, kernel, resolution)
    shift = shift_entropy(T, kernel)
    var = variational_check(T, phi, mu, kernel, resolution)
    return EntropyReport(
        h_partition=[(n, m, r) for n, r in rates],
        h_extrapolated=extrapolate_inverse_n(ns, [r for _, r in rates]),
        h_analytic=shift + fib,
        fiber_entropy=fib,
        shift_entropy=shift,
        variational_lhs=var.lhs,
        pressure_rhs=var.rhs,
        extra={"gap": var.gap, "invariance": var.invariance},
    )
