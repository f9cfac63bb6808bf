"""Finitely generated correspondences and their expansion constants."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, ExpansionVerificationError, PreconditionError
from .maps import GeneratorMap, distance, generator_from_config, mod1

logger = logging.getLogger(__name__)

TOL_COINC = 1e-9
ETA_SAFETY = 0.9
OMEGA_TRUNCATION = 40
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ExpansionConstants:
    """Separation and expansion constants of a correspondence.

    ``eta`` and ``lambda_tilde`` are NaN when the generators have a coincidence.
    """

    epsilon_star: float
    eta: float
    lambda_tilde: float
    u0: float
    coincidence_free: bool

    def to_dict(self) -> dict:
        return asdict(self)


class Correspondence:
    """``T(x) = {f_1(x), ..., f_k(x)}`` for an ordered list of generators."""

    def __init__(self, generators: Sequence[GeneratorMap]):
        generators = tuple(generators)
        if not generators:
            raise ConfigError("a correspondence needs at least one generator")
        dims = {g.dim for g in generators}
        if len(dims) != 1:
            raise ConfigError(f"generators live on different dimensions: {sorted(dims)}")
        self.generators = generators
        self.dim = dims.pop()

    @classmethod
    def from_config(cls, cfg: dict) -> "Correspondence":
        gens = cfg.get("generators")
        if not isinstance(gens, list) or not gens:
            raise ConfigError("config needs a non-empty 'generators' list")
        return cls([generator_from_config(g) for g in gens])

    def to_config(self) -> dict:
        return {"generators": [g.to_config() for g in self.generators]}

    @property
    def k(self) -> int:
        return len(self.generators)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(g.degree for g in self.generators)

    @property
    def total_degree(self) -> int:
        return sum(self.degrees)

    @property
    def max_jacobian(self) -> float:
        return max(g.max_jacobian for g in self.generators)

    @property
    def constant_jacobians(self) -> bool:
        return all(g.constant_jacobian for g in self.generators)

    def image(self, x) -> np.ndarray:
        """All images ``f_j(x)`` stacked on a leading generator axis."""
        return np.stack([np.asarray(g(x)) for g in self.generators])

    def __iter__(self):
        return iter(self.generators)

    def __len__(self):
        return self.k

    def __repr__(self):
        return f"Correspondence({list(self.generators)!r})"

    @cached_property
    def constants(self) -> ExpansionConstants:
        return expansion_constants(self)

    @property
    def coincidence_free(self) -> bool:
        return self.constants.coincidence_free


def _grid(resolution: int, dim: int) -> np.ndarray:
    if dim == 1:
        return np.arange(resolution) / resolution
    n = max(4, round(resolution ** (1.0 / dim)))
    axes = [np.arange(n) / n] * dim
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)


def golden_section_min(func, a: float, b: float, iters: int = 60) -> tuple[float, float]:
    """Minimise a unimodal scalar function on ``[a, b]``; returns ``(x, f(x))``."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = func(d)
    x = 0.5 * (a + b)
    return x, func(x)


def _pair_gap(f: GeneratorMap, g: GeneratorMap, x) -> np.ndarray:
    return np.asarray(distance(f(x), g(x), f.dim))


def coincidence_gap(T: Correspondence, grid_resolution: int = 2**12) -> float:
    """Grid estimate (with a golden-section polish) of ``min_{j != j'} inf_x d(f_j x, f_j' x)``.

    Returns ``inf`` for a single generator.
    """
    if grid_resolution < 2**10:
        raise ConfigError("coincidence_gap needs grid_resolution >= 1024")
    if T.k == 1:
        return math.inf
    grid = _grid(grid_resolution, T.dim)
    n_axis = grid_resolution if T.dim == 1 else round(len(grid) ** (1.0 / T.dim))
    h = 1.0 / n_axis
    best = math.inf
    for f, g in itertools.combinations(T.generators, 2):
        gaps = _pair_gap(f, g, grid)
        i = int(np.argmin(gaps))
        best = min(best, float(gaps[i]))
        x0 = grid[i]
        if T.dim == 1:
            _, v = golden_section_min(lambda s: float(_pair_gap(f, g, mod1(s))), x0 - h, x0 + h)
            best = min(best, v)
        else:
            x = np.array(x0, dtype=float)
            for axis in range(T.dim):
                def along(s, axis=axis):
                    y = x.copy()
                    y[axis] = s
                    return float(_pair_gap(f, g, mod1(y)))

                s, v = golden_section_min(along, x[axis] - h, x[axis] + h)
                x[axis] = s
                best = min(best, v)
    return best


def _random_pairs(rng: np.random.Generator, n: int, dim: int, radius: float):
    shape = (n,) if dim == 1 else (n, dim)
    x = rng.random(shape)
    y = mod1(x + rng.uniform(-radius, radius, size=shape))
    return x, np.asarray(y)


def expansion_constants(T: Correspondence, samples: int = 10**5, seed: int = 0) -> ExpansionConstants:
    """Compute ``epsilon_star``, ``eta``, ``lambda_tilde`` and verify expansion on random pairs.

    Raises :class:`ExpansionVerificationError` with the offending pair if some
    sampled ``d(x, y) <= eta`` violates ``min d(f_j x, f_j' y) >= lambda * d(x, y)``.
    """
    u0 = min(g.min_expansion for g in T.generators)
    eps_star = coincidence_gap(T)
    if not eps_star > TOL_COINC:
        return ExpansionConstants(eps_star, math.nan, math.nan, u0, False)
    max_deg = max(T.degrees)
    eta = ETA_SAFETY * min(eps_star / 2.0, 1.0 / (4.0 * max_deg)) / u0
    consts = ExpansionConstants(eps_star, eta, u0, u0, True)

    rng = np.random.default_rng(seed)
    x, y = _random_pairs(rng, samples, T.dim, eta)
    dxy = np.asarray(distance(x, y, T.dim))
    fx, fy = T.image(x), T.image(y)
    worst = np.full(samples, np.inf)
    for a in range(T.k):
        for b in range(T.k):
            worst = np.minimum(worst, distance(fx[a], fy[b], T.dim))
    bad = worst < u0 * dxy * (1.0 - 1e-9) - 1e-15
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ExpansionVerificationError(
            f"expansion fails for d(x,y)={dxy[i]:.3e} <= eta={eta:.3e}; shrink eta",
            witness=(x[i], y[i]),
        )
    return consts


def _require_coincidence_free(T: Correspondence, what: str) -> ExpansionConstants:
    consts = T.constants
    if not consts.coincidence_free:
        raise PreconditionError(f"{what} needs coincidence-free generators (gap {consts.epsilon_star:.3e})")
    return consts


def holder_diagnostic(T: Correspondence, samples: int = 10**4, seed: int = 0) -> tuple[float, float]:
    """Empirical Lipschitz constant of the Jacobian potential on ``(O_2(T), d_2)``.

    Pairs ``(x1, f_j x1)``, ``(y1, f_j' y1)`` with ``d_2 <= eta`` are sampled and the
    smallest ``C`` with ``|phi(y) - phi(x)| <= C d_2`` is returned together with
    the exponent, which is fixed at 1.
    """
    consts = _require_coincidence_free(T, "holder_diagnostic")
    rng = np.random.default_rng(seed)
    x1, y1 = _random_pairs(rng, samples, T.dim, consts.eta)
    j = rng.integers(T.k, size=samples)
    jp = np.where(rng.random(samples) < 0.5, j, rng.integers(T.k, size=samples))
    fx, fy = T.image(x1), T.image(y1)
    idx = np.arange(samples)
    x2, y2 = fx[j, idx], fy[jp, idx]
    d2 = np.maximum(distance(x1, y1, T.dim), distance(x2, y2, T.dim))
    log_jx = np.choose(j, [np.log(g.jacobian(x1)) for g in T.generators])
    log_jy = np.choose(jp, [np.log(g.jacobian(y1)) for g in T.generators])
    keep = (d2 <= consts.eta) & (d2 > 0)
    if not np.any(keep):
        return 1.0, 0.0
    ratio = np.abs(log_jx - log_jy)[keep] / d2[keep]
    return 1.0, float(np.max(ratio))


def check_forward_expansive(
    T: Correspondence,
    trials: int = 100,
    seed: int = 0,
    d0: float = 1e-6,
    depth: int = 20,
) -> bool:
    """Simulate pairs of nearby orbits driven by the same symbols and check they separate.

    Each trial must exceed ``eta`` within ``ceil(log_lambda(eta / d0)) + 1`` steps.
    Trials whose two starts coincide are skipped.
    """
    consts = _require_coincidence_free(T, "check_forward_expansive")
    rng = np.random.default_rng(seed)
    allowed = math.ceil(math.log(consts.eta / d0) / math.log(consts.lambda_tilde)) + 1 if d0 > 0 else 0
    steps = max(depth, allowed)
    skipped = 0
    for _ in range(trials):
        x = rng.random() if T.dim == 1 else rng.random(T.dim)
        sign = rng.choice([-1.0, 1.0], size=None if T.dim == 1 else T.dim)
        y = mod1(x + sign * d0)
        if distance(x, y, T.dim) == 0:
            skipped += 1
            continue
        symbols = rng.integers(T.k, size=steps)
        separated = False
        for i in range(allowed):
            if distance(x, y, T.dim) > consts.eta:
                separated = True
                break
            g = T.generators[symbols[i]]
            x, y = g(x), g(y)
        separated = separated or distance(x, y, T.dim) > consts.eta
        if not separated:
            return False
    if skipped:
        logger.info("check_forward_expansive skipped %d trials with identical starts", skipped)
    return True


def orbit_distance(xs, ys, dim: int = 1) -> float:
    """``d_n``: max over positions of the pointwise distance of two finite orbits."""
    return float(np.max(distance(np.asarray(xs), np.asarray(ys), dim)))


def orbit_distance_omega(xs, ys, dim: int = 1, n_trunc: int = OMEGA_TRUNCATION) -> float:
    """``d_omega = sum_i 2^-i d/(1+d)`` truncated after ``n_trunc`` terms (error <= 2^-n_trunc)."""
    d = np.asarray(distance(np.asarray(xs)[:n_trunc], np.asarray(ys)[:n_trunc], dim))
    i = np.arange(1, len(d) + 1)
    return float(np.sum(2.0 ** (-i) * d / (1.0 + d)))
