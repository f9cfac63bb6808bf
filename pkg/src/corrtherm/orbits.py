"""Backward orbit trees, the weighted sums Phi_n and three pressure estimators."""

from __future__ import annotations

import itertools
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .correspondence import TOL_COINC, Correspondence, _require_coincidence_free
from .errors import ConfigError, PreconditionError, ResourceError
from .maps import distance

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10**8
MATERIALIZE_CAP = 10**6
CHUNK = 2**20
POTENTIAL_KINDS = ("jacobian", "torus_measurable", "zero", "custom")


def branch_budget(budget: int | None = None) -> int:
    """Explicit budget, else ``CORRTHERM_BUDGET`` from the environment, else 10^8."""
    if budget is not None:
        return int(budget)
    env = os.environ.get("CORRTHERM_BUDGET")
    if env:
        try:
            return int(float(env))
        except ValueError as exc:
            raise ConfigError(f"CORRTHERM_BUDGET must be an integer, got {env!r}") from exc
    return DEFAULT_BUDGET


class Potential:
    """A potential ``phi(x1, x2)`` on two-step orbits, evaluated per generator branch.

    ``torus_measurable`` uses ``-log|det A_j|`` off the coincidence set ``E`` and
    the constant ``-c_E`` on it (``c_E`` defaults to ``min_j log|det A_j|``).
    ``custom`` tables hold one row per generator, sampled on a uniform grid over ``x1``.
    """

    def __init__(self, kind: str = "jacobian", table=None, c_E: float | None = None):
        if kind not in POTENTIAL_KINDS:
            raise ConfigError(f"unknown potential kind {kind!r}; expected one of {POTENTIAL_KINDS}")
        self.kind = kind
        self.c_E = c_E
        self.table = None
        if kind == "custom":
            if table is None:
                raise ConfigError("custom potential needs a table of shape (k, N)")
            self.table = np.asarray(table, dtype=float)
            if self.table.ndim != 2:
                raise ConfigError("custom potential table must be two-dimensional (k, N)")

    @classmethod
    def jacobian(cls) -> "Potential":
        return cls("jacobian")

    @classmethod
    def zero(cls) -> "Potential":
        return cls("zero")

    @classmethod
    def torus_measurable(cls, c_E: float | None = None) -> "Potential":
        return cls("torus_measurable", c_E=c_E)

    def __repr__(self):
        return f"Potential({self.kind!r})"

    def _check(self, T: Correspondence) -> None:
        if self.kind == "torus_measurable" and not T.constant_jacobians:
            raise PreconditionError("torus_measurable potential needs linear generators")
        if self.kind == "custom" and self.table.shape[0] != T.k:
            raise ConfigError(f"custom table has {self.table.shape[0]} rows for {T.k} generators")

    def _c_E(self, T: Correspondence) -> float:
        if self.c_E is not None:
            return float(self.c_E)
        return min(math.log(g.max_jacobian) for g in T.generators)

    def in_coincidence_set(self, T: Correspondence, x1) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        images = T.image(x1)
        hit = np.zeros(images.shape[1:] if T.dim == 1 else images.shape[1:-1], dtype=bool)
        for a, b in itertools.combinations(range(T.k), 2):
            hit |= np.asarray(distance(images[a], images[b], T.dim)) <= TOL_COINC
        return hit

    def log_weight(self, T: Correspondence, j: int, x1) -> np.ndarray:
        """``phi(x1, f_j(x1))`` for an array of basepoints ``x1``."""
        g = T.generators[j]
        x1 = np.asarray(x1, dtype=float)
        shape = x1.shape if T.dim == 1 else x1.shape[:-1]
        if self.kind == "jacobian":
            return -np.log(g.jacobian(x1))
        if self.kind == "zero":
            return np.zeros(shape)
        if self.kind == "torus_measurable":
            out = np.full(shape, -math.log(g.max_jacobian))
            if T.k > 1:
                out[self.in_coincidence_set(T, x1)] = -self._c_E(T)
            return out
        row = self.table[j]
        if T.dim == 1:
            idx = np.minimum((x1 * len(row)).astype(np.int64), len(row) - 1)
            return row[idx]
        n = round(len(row) ** (1.0 / T.dim))
        cell = np.minimum((x1 * n).astype(np.int64), n - 1)
        flat = np.ravel_multi_index(tuple(np.moveaxis(cell, -1, 0)), (n,) * T.dim)
        return row[flat]

    def branch_constants(self, T: Correspondence) -> np.ndarray | None:
        """Per-generator constant values of ``phi`` if it is constant on every branch.

        The coincidence set is ignored, so for ``torus_measurable`` the result is
        exact only for basepoints that avoid ``E``.
        """
        if self.kind == "zero":
            return np.zeros(T.k)
        if self.kind in ("jacobian", "torus_measurable") and T.constant_jacobians:
            return np.array([-math.log(g.max_jacobian) for g in T.generators])
        if self.kind == "custom" and np.all(self.table == self.table[:, :1]):
            return self.table[:, 0].copy()
        return None


def _require_potential(T: Correspondence, phi: Potential, what: str) -> None:
    phi._check(T)
    if phi.kind == "jacobian":
        _require_coincidence_free(T, what)


def _root(T: Correspondence, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if T.dim == 1:
        if x.ndim != 0:
            raise ConfigError("circle root must be a scalar")
        return x.reshape(1)
    if x.shape != (T.dim,):
        raise ConfigError(f"torus root must have shape ({T.dim},)")
    return x.reshape(1, T.dim)


def _expand(T: Correspondence, phi: Potential, pts: np.ndarray, logw: np.ndarray, symbols=None):
    """One backward step: children of every node, grouped by generator then branch."""
    out_pts, out_w, out_s = [], [], []
    for j, g in enumerate(T.generators):
        inv = np.asarray(g.inverse_branches(pts))
        w = logw[None, :] + phi.log_weight(T, j, inv)
        out_pts.append(inv.reshape((-1,) + pts.shape[1:]))
        out_w.append(w.reshape(-1))
        if symbols is not None:
            reps = np.tile(symbols, (g.degree, 1))
            out_s.append(np.concatenate([np.full((len(reps), 1), j, dtype=np.int16), reps], axis=1))
    new_s = np.concatenate(out_s) if symbols is not None else None
    return np.concatenate(out_pts), np.concatenate(out_w), new_s


def leaf_count(T: Correspondence, n: int) -> int:
    return T.total_degree**n


def max_depth(T: Correspondence, budget: int, roots: int = 1) -> int:
    n = 0
    while roots * T.total_degree ** (n + 1) <= budget:
        n += 1
    return n


@dataclass
class BackwardOrbitTree:
    """Every backward ``n``-orbit ending at ``root``.

    ``symbols[b]`` lists the generator indices ``(j_1, ..., j_n)`` in forward order,
    so ``x_{i+1} = f_{j_i}(x_i)``; ``x1[b]`` is the starting point and
    ``log_weight[b] = S_n phi`` along the branch.
    """

    root: np.ndarray
    depth: int
    symbols: np.ndarray
    x1: np.ndarray
    log_weight: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weight)

    @property
    def size(self) -> int:
        return len(self.log_weight)

    def total(self) -> float:
        return float(np.sum(self.weights))

    def replay_error(self, T: Correspondence) -> float:
        """Max distance between the root and the forward replay of every branch."""
        x = self.x1.copy()
        for i in range(self.depth):
            col = self.symbols[:, i]
            for j, g in enumerate(T.generators):
                sel = col == j
                if np.any(sel):
                    x[sel] = g(x[sel])
        return float(np.max(distance(x, self.root[0], T.dim)))

    def replay_tolerance(self, T: Correspondence) -> float:
        tol = max(g.tol_root for g in T.generators)
        return self.depth * tol * T.max_jacobian


def build_backward_tree(T: Correspondence, phi: Potential, x, n: int, budget: int | None = None) -> BackwardOrbitTree:
    """Materialize all ``(sum_j deg_j)^n`` backward orbits at ``x`` (at most 10^6 leaves)."""
    if n < 1:
        raise ConfigError("tree depth n must be >= 1")
    phi._check(T)
    cap = min(branch_budget(budget), MATERIALIZE_CAP)
    if leaf_count(T, n) > cap:
        raise ResourceError(
            f"tree with {leaf_count(T, n)} leaves exceeds materialization cap {cap}; "
            f"admissible max n = {max_depth(T, cap)}"
        )
    pts = _root(T, x)
    logw = np.zeros(1)
    symbols = np.zeros((1, 0), dtype=np.int16)
    for _ in range(n):
        pts, logw, symbols = _expand(T, phi, pts, logw, symbols)
    return BackwardOrbitTree(_root(T, x), n, symbols, pts, logw)


def _stream_levels(T, phi, pts, logw, levels_left, sums, level, chunk):
    """Depth-first over chunks, breadth-first inside a chunk; appends per-level partial sums."""
    while levels_left > 0:
        pts, logw, _ = _expand(T, phi, pts, logw)
        levels_left -= 1
        level += 1
        sums[level].append(float(np.sum(np.exp(logw))))
        if levels_left > 0 and len(logw) * T.total_degree > chunk:
            for start in range(0, len(logw), chunk):
                _stream_levels(
                    T, phi, pts[start : start + chunk], logw[start : start + chunk], levels_left, sums, level, chunk
                )
            return


def phi_sequence(
    T: Correspondence,
    phi: Potential,
    x,
    n: int,
    budget: int | None = None,
    threads: int = 1,
    chunk: int = CHUNK,
) -> np.ndarray:
    """``[Phi_1(x), ..., Phi_n(x)]`` from one streamed enumeration of the depth-``n`` tree.

    The work is split over the children of the root in a fixed order, and each
    per-level total is an ``fsum`` of partials in that order, so the result does
    not depend on ``threads``.  When the tree exceeds the budget and ``phi`` is
    constant on every branch, the closed form ``(sum_j deg_j e^{c_j})^n`` is used.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    phi._check(T)
    budget = branch_budget(budget)
    if leaf_count(T, n) > budget:
        consts = phi.branch_constants(T)
        if consts is None or phi.kind == "torus_measurable":
            raise ResourceError(
                f"{leaf_count(T, n)} leaves exceed the branch budget {budget}; "
                f"admissible max n = {max_depth(T, budget)}"
            )
        base = float(np.dot(T.degrees, np.exp(consts)))
        logger.info("closed-form tree reuse for n=%d (constant branch weights)", n)
        return base ** np.arange(1, n + 1, dtype=float)

    pts, logw, _ = _expand(T, phi, _root(T, x), np.zeros(1))
    first = float(np.sum(np.exp(logw)))
    if n == 1:
        return np.array([first])
    jobs = [(pts[i : i + 1], logw[i : i + 1]) for i in range(len(logw))]

    def run(job):
        sums = [[] for _ in range(n + 1)]
        _stream_levels(T, phi, job[0], job[1], n - 1, sums, 1, chunk)
        return sums

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]
    out = [first]
    for level in range(2, n + 1):
        out.append(math.fsum(v for part in parts for v in part[level]))
    return np.array(out)


def phi_n(T: Correspondence, phi: Potential, x, n: int, budget: int | None = None, threads: int = 1) -> float:
    """``Phi_n(x) = sum over backward n-orbits of exp(S_n phi)``."""
    return float(phi_sequence(T, phi, x, n, budget=budget, threads=threads)[-1])


def extrapolate_inverse_n(ns, values) -> float:
    """Least-squares fit of ``a + b/n`` over the top half of the ``n`` range; returns ``a``."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(ns) == 1:
        return float(values[0])
    top = ns >= ns[len(ns) // 2]
    if top.sum() < 2:
        top[-2:] = True
    design = np.stack([np.ones(top.sum()), 1.0 / ns[top]], axis=1)
    coef, *_ = np.linalg.lstsq(design, values[top], rcond=None)
    return float(coef[0])


def pressure_via_growth(
    T: Correspondence,
    phi: Potential,
    x,
    n_min: int = 1,
    n_max: int = 10,
    budget: int | None = None,
    threads: int = 1,
) -> tuple[float, list[float]]:
    """``(1/n) log Phi_n(x)`` for ``n = n_min..n_max`` and its ``a + b/n`` extrapolation."""
    if not 1 <= n_min <= n_max:
        raise ConfigError("need 1 <= n_min <= n_max")
    _require_potential(T, phi, "pressure_via_growth")
    phis = phi_sequence(T, phi, x, n_max, budget=budget, threads=threads)
    ns = np.arange(n_min, n_max + 1)
    seq = np.log(phis[n_min - 1 :]) / ns
    return extrapolate_inverse_n(ns, seq), seq.tolist()


def epsilon_net(T: Correspondence, epsilon: float) -> np.ndarray:
    """Uniform grid with ``ceil(1/epsilon)`` points per axis, so every point is within ``epsilon``."""
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    n = math.ceil(1.0 / epsilon - 1e-12)
    axis = np.arange(n) / n
    if T.dim == 1:
        return axis
    grids = np.meshgrid(*([axis] * T.dim), indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, T.dim)


def pressure_spanning_upper_sequence(
    T: Correspondence,
    phi: Potential,
    epsilon: float,
    n: int,
    budget: int | None = None,
    threads: int = 1,
) -> np.ndarray:
    """``(1/i) log sum_{l} Phi_i(x^(l))`` over an ``epsilon``-net, for ``i = 1..n``."""
    _require_potential(T, phi, "pressure_spanning_upper")
    if phi.kind == "jacobian" and epsilon > T.constants.eta:
        warnings.warn(
            f"epsilon={epsilon} exceeds the expansion radius eta={T.constants.eta:.4g}; "
            "the net is still a valid spanning set but the bound is looser",
            stacklevel=2,
        )
    net = epsilon_net(T, epsilon)
    budget = branch_budget(budget)
    consts = phi.branch_constants(T)
    if len(net) * leaf_count(T, n) > budget and (consts is None or phi.kind == "torus_measurable"):
        raise ResourceError(
            f"{len(net)} net points x {leaf_count(T, n)} leaves exceed budget {budget}; "
            f"admissible max n = {max_depth(T, budget, len(net))}"
        )
    per_root = budget // len(net) if len(net) * leaf_count(T, n) <= budget else 0
    totals = np.zeros(n)
    parts = [phi_sequence(T, phi, x, n, budget=per_root, threads=threads) for x in net]
    for i in range(n):
        totals[i] = math.fsum(p[i] for p in parts)
    return np.log(totals) / np.arange(1, n + 1)


def pressure_spanning_upper(
    T: Correspondence, phi: Potential, epsilon: float, n: int, budget: int | None = None, threads: int = 1
) -> float:
    """Upper estimator ``(1/n) log sum_l Phi_n(x^(l))`` over an ``epsilon``-net."""
    return float(pressure_spanning_upper_sequence(T, phi, epsilon, n, budget=budget, threads=threads)[-1])


def pressure_separated_lower(
    T: Correspondence, phi: Potential, x, n: int, budget: int | None = None, threads: int = 1
) -> float:
    """Lower estimator from the single-root tree at ``x``: ``(1/n) log Phi_n(x)``."""
    _require_potential(T, phi, "pressure_separated_lower")
    return math.log(phi_n(T, phi, x, n, budget=budget, threads=threads)) / n


def probe_points(T: Correspondence, count: int) -> np.ndarray:
    """``count`` equispaced points (per axis on a torus) starting at the origin."""
    axis = np.arange(count) / count
    if T.dim == 1:
        return axis
    grids = np.meshgrid(*([axis] * T.dim), indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, T.dim)


def phi_table(
    T: Correspondence, phi: Potential, n: int, probes: int = 32, budget: int | None = None, threads: int = 1
) -> np.ndarray:
    """``Phi_i`` at every probe for ``i = 1..n``; shape ``(len(probes), n)``."""
    return np.array([phi_sequence(T, phi, x, n, budget=budget, threads=threads) for x in probe_points(T, probes)])


def gibbs_ratio_sequence(
    T: Correspondence, phi: Potential, n: int, probes: int = 32, budget: int | None = None, threads: int = 1
) -> np.ndarray:
    """``max/min`` of ``Phi_i`` over the probes, for ``i = 1..n``."""
    _require_potential(T, phi, "gibbs_ratio")
    table = phi_table(T, phi, n, probes, budget=budget, threads=threads)
    return table.max(axis=0) / table.min(axis=0)


def gibbs_ratio(
    T: Correspondence, phi: Potential, n: int, probes: int = 32, budget: int | None = None, threads: int = 1
) -> float:
    """Empirical Gibbs constant: ``max/min`` of ``Phi_n`` over equispaced probes."""
    return float(gibbs_ratio_sequence(T, phi, n, probes, budget=budget, threads=threads)[-1])
