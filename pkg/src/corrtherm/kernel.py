"""Finitely supported transition kernels: pushforwards, cylinder measures and sampling."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .correspondence import Correspondence
from .errors import ConfigError, PreconditionError, ResourceError
from .maps import CircleLinear, TorusLinear, _as_fraction, mod1
from .operator import GridDensity, kernel_transfer

MAX_WORD = 14
STOCHASTIC_TOL = 1e-12
FIXED_BITS = 64
_MOD = 1 << FIXED_BITS
_STREAM_BLOCK = 4096


class Kernel:
    """Weights ``P_j(x)`` of ``Q_x = sum_j P_j(x) delta_{f_j(x)}``.

    Either constant weights or a table of shape ``(k, N)`` sampled on ``N``
    uniform cells of the circle (read piecewise constant).
    """

    def __init__(self, weights=None, table=None):
        if (weights is None) == (table is None):
            raise ConfigError("give exactly one of weights or table")
        self.table = None
        self.weights = None
        if weights is not None:
            self._exact = tuple(_weight_fraction(w) for w in weights)
            w = np.asarray([float(v) for v in weights], dtype=float)
            self._validate(w[:, None])
            self.weights = w
        else:
            tab = np.asarray(table, dtype=float)
            if tab.ndim != 2:
                raise ConfigError("kernel table must have shape (k, N)")
            self._validate(tab)
            self.table = tab
            self._exact = None

    @staticmethod
    def _validate(tab: np.ndarray) -> None:
        if np.any(tab < 0) or np.any(tab > 1):
            raise ConfigError("kernel weights must lie in [0, 1]")
        if np.max(np.abs(tab.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
            raise ConfigError("kernel weights must sum to 1 at every point")

    @classmethod
    def uniform(cls, k: int) -> "Kernel":
        return cls([Fraction(1, k)] * k)

    @classmethod
    def from_config(cls, cfg, k: int) -> "Kernel":
        if cfg is None or cfg == "uniform":
            return cls.uniform(k)
        if isinstance(cfg, dict):
            if "weights" in cfg:
                return cls([_parse_number(w) for w in cfg["weights"]])
            if "table" in cfg:
                return cls(table=cfg["table"])
        if isinstance(cfg, list):
            return cls([_parse_number(w) for w in cfg])
        raise ConfigError(f"cannot build a kernel from {cfg!r}")

    def to_config(self):
        if self.table is not None:
            return {"table": self.table.tolist()}
        return {"weights": [str(w) for w in self._exact]}

    @property
    def k(self) -> int:
        return len(self.weights) if self.weights is not None else self.table.shape[0]

    @property
    def is_constant(self) -> bool:
        return self.weights is not None

    @property
    def is_uniform(self) -> bool:
        return self.is_constant and all(w == Fraction(1, self.k) for w in self._exact)

    @property
    def exact_weights(self) -> tuple[Fraction, ...]:
        if self._exact is None:
            raise PreconditionError("tabulated kernels have no exact weights")
        return self._exact

    def probability(self, j: int, x, dim: int = 1) -> np.ndarray:
        """``P_j`` at points ``x`` (trailing axis of length ``dim`` on a torus)."""
        x = np.asarray(x, dtype=float)
        if self.weights is not None:
            return np.full(x.shape if dim == 1 else x.shape[:-1], self.weights[j])
        if dim != 1:
            raise PreconditionError("tabulated kernels are defined on the circle only")
        row = self.table[j]
        idx = np.minimum((x * len(row)).astype(np.int64), len(row) - 1)
        return row[idx]

    def probabilities(self, x, dim: int = 1) -> np.ndarray:
        return np.stack([self.probability(j, x, dim) for j in range(self.k)])

    def __repr__(self):
        if self.weights is not None:
            return f"Kernel({[str(w) for w in self._exact]})"
        return f"Kernel(table shape {self.table.shape})"


def _weight_fraction(w) -> Fraction:
    if isinstance(w, Fraction):
        return w
    if isinstance(w, str):
        return Fraction(w)
    return Fraction(repr(float(w)))


def _parse_number(w):
    return Fraction(w) if isinstance(w, str) else w


@dataclass(frozen=True)
class CylinderSpec:
    """Interval partition ``[b_0, b_1), ..., [b_{m-1}, b_m)`` of the circle and a cell word.

    Cell indices in ``word`` are 0-based.
    """

    breaks: tuple[Fraction, ...]
    word: tuple[int, ...]

    def __post_init__(self):
        b = self.breaks
        if len(b) < 2 or b[0] != 0 or b[-1] != 1 or any(x >= y for x, y in zip(b, b[1:])):
            raise ConfigError("partition breaks must increase strictly from 0 to 1")
        if not self.word or any(not 0 <= i < len(b) - 1 for i in self.word):
            raise ConfigError("word must be a non-empty sequence of valid cell indices")

    @classmethod
    def uniform(cls, m: int, word: Sequence[int]) -> "CylinderSpec":
        return cls(tuple(Fraction(i, m) for i in range(m + 1)), tuple(int(i) for i in word))

    @classmethod
    def from_breaks(cls, breaks: Iterable, word: Sequence[int]) -> "CylinderSpec":
        return cls(tuple(Fraction(str(b)) if isinstance(b, float) else Fraction(b) for b in breaks), tuple(word))

    @property
    def cells(self) -> int:
        return len(self.breaks) - 1


def pushforward(mu: GridDensity, kernel: Kernel, T: Correspondence) -> GridDensity:
    """Density of ``mu Q = sum_j (P_j mu) o f_j^-1`` on the grid of ``mu``."""
    return kernel_transfer(T, kernel, mu)


# exact forward engine ----------------------------------------------------------


def exact_mode_available(T: Correspondence, kernel: Kernel, mu: GridDensity | None) -> bool:
    return (
        T.dim == 1
        and all(isinstance(g, CircleLinear) for g in T.generators)
        and kernel.is_constant
        and (mu is None or mu.dim == 1)
    )


class _Lattice:
    """Interval pieces ``[a/D, b/D)`` with weights, pushed forward by linear circle branches.

    ``x -> p x + c`` maps the lattice ``Z/D`` to itself when ``c D`` is an integer,
    so endpoints stay exact integers for any number of steps.
    """

    def __init__(self, T: Correspondence, breaks: Sequence[Fraction], mu_res: int):
        dens = [Fraction(1, b.denominator) for b in breaks] + [Fraction(1, mu_res)]
        dens += [Fraction(1, g.c_exact.denominator) for g in T.generators]
        D = 1
        for f in dens:
            D = math.lcm(D, f.denominator)
        self.D = D
        self.maps = [(g.p, int(g.c_exact * D)) for g in T.generators]
        self.cells = [(int(breaks[i] * D), int(breaks[i + 1] * D)) for i in range(len(breaks) - 1)]

    def image(self, pieces: dict, j: int, scale) -> dict:
        p, cD = self.maps[j]
        D = self.D
        out: dict = {}
        for (a, b), w in pieces.items():
            lo, hi = p * a + cD, p * b + cD
            w2 = w * scale / p
            t = lo // D
            while t * D < hi:
                s, e = max(lo, t * D) - t * D, min(hi, (t + 1) * D) - t * D
                if e > s:
                    key = (s, e)
                    out[key] = out.get(key, 0) + w2
                t += 1
        return out

    def restrict(self, pieces: dict, cell: int) -> dict:
        ca, cb = self.cells[cell]
        out = {}
        for (a, b), w in pieces.items():
            s, e = max(a, ca), min(b, cb)
            if e > s:
                out[(s, e)] = out.get((s, e), 0) + w
        return out

    def mass(self, pieces: dict):
        # Fraction start keeps an empty (unreachable) cylinder exact
        return sum((w * (b - a) for (a, b), w in pieces.items()), Fraction(0)) / self.D


def _initial_pieces(lat: _Lattice, mu: GridDensity | None, exact: bool) -> dict:
    if mu is None:
        return {(0, lat.D): Fraction(1) if exact else 1.0}
    n = mu.resolution
    step = lat.D // n
    conv = Fraction if exact else float
    total = conv(mu.mean())
    return {(i * step, (i + 1) * step): conv(float(v)) / total for i, v in enumerate(mu.values) if v != 0}


def _exact_cylinder(T, kernel, spec, mu, exact=True):
    lat = _Lattice(T, spec.breaks, 1 if mu is None else mu.resolution)
    weights = kernel.exact_weights if exact else [float(w) for w in kernel.exact_weights]
    states = [lat.restrict(_initial_pieces(lat, mu, exact), spec.word[0])]
    for cell in spec.word[1:]:
        nxt: dict = {}
        for pieces in states:
            for j in range(T.k):
                if weights[j] == 0:
                    continue
                for key, w in lat.restrict(lat.image(pieces, j, weights[j]), cell).items():
                    nxt[key] = nxt.get(key, 0) + w
        states = [nxt]
    return lat.mass(states[0])


# quadrature engine -------------------------------------------------------------


def _quadrature_particles(T, mu, resolution):
    x = (np.arange(resolution) + 0.5) / resolution
    w = (mu.evaluate(x) if mu is not None else np.ones(resolution)) / resolution
    return x, w / w.sum()


def _cell_index(x, breaks_f):
    return np.searchsorted(breaks_f, x, side="right") - 1


def _quadrature_cylinder(T, kernel, spec, mu, resolution):
    if T.dim != 1:
        raise PreconditionError("cylinder measures are implemented on the circle")
    breaks_f = np.array([float(b) for b in spec.breaks])
    x, w = _quadrature_particles(T, mu, resolution)
    keep = _cell_index(x, breaks_f) == spec.word[0]
    x, w = x[keep], w[keep]
    for cell in spec.word[1:]:
        xs, ws = [], []
        for j, g in enumerate(T.generators):
            y = np.asarray(g(x))
            wy = w * kernel.probability(j, x)
            sel = (_cell_index(y, breaks_f) == cell) & (wy > 0)
            xs.append(y[sel])
            ws.append(wy[sel])
        x, w = np.concatenate(xs), np.concatenate(ws)
    return float(np.sum(w))


def cylinder_measure(
    mu: GridDensity | None,
    kernel: Kernel,
    T: Correspondence,
    spec: CylinderSpec,
    mode: str = "auto",
    resolution: int = 2**14,
    max_word: int = MAX_WORD,
):
    """``mu Q^[n-1](A_{i_1} x ... x A_{i_n})``; ``mu=None`` means Lebesgue.

    ``mode="exact"`` (linear circle generators, constant weights) sums the
    weighted pullback intersections in rational arithmetic and returns a
    ``Fraction``.  ``mode="quadrature"`` pushes ``resolution`` midpoint
    particles forward and returns a float.
    """
    if len(spec.word) > max_word:
        raise ResourceError(f"word length {len(spec.word)} exceeds max_word={max_word}")
    if kernel.k != T.k:
        raise ConfigError(f"kernel has {kernel.k} weights for {T.k} generators")
    if mode == "auto":
        mode = "exact" if exact_mode_available(T, kernel, mu) else "quadrature"
    if mode == "exact":
        if not exact_mode_available(T, kernel, mu):
            raise PreconditionError("exact mode needs circle_linear generators and a constant kernel")
        return _exact_cylinder(T, kernel, spec, mu, exact=True)
    if mode != "quadrature":
        raise ConfigError(f"unknown cylinder mode {mode!r}")
    return _quadrature_cylinder(T, kernel, spec, mu, resolution)


def cylinder_table(mu, kernel, T, m: int, n: int, mode: str = "auto", resolution: int = 2**14) -> dict:
    """All positive-measure length-``n`` words over the uniform ``m``-cell partition."""
    out = {}
    for word in itertools.product(range(m), repeat=n):
        v = cylinder_measure(mu, kernel, T, CylinderSpec.uniform(m, word), mode=mode, resolution=resolution)
        if v > 0:
            out[word] = v
    return out


# sampling ----------------------------------------------------------------------


def _generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


@dataclass
class MarkovSample:
    """Points ``x_0..x_steps`` and symbols ``j_0..j_{steps-1}`` with ``x_{i+1} = f_{j_i}(x_i)``."""

    points: np.ndarray
    symbols: np.ndarray
    seed: int
    engine: str

    def visited(self, burnin: int = 0) -> np.ndarray:
        return self.points[burnin:]


def _linear_data(T: Correspondence):
    mats, offsets = [], []
    for g in T.generators:
        if isinstance(g, CircleLinear):
            mats.append(np.array([[g.p]], dtype=object))
            offsets.append([g.c_exact])
        elif isinstance(g, TorusLinear):
            mats.append(np.array(g.A, dtype=object))
            offsets.append([_as_fraction(float(c)) for c in g.c])
        else:
            return None
    return mats, offsets


def _fixed_point_run(lin, X, refine, points, symbols, pick) -> None:
    """Linear generators on a 64-bit fixed-point state ``X / 2^64``.

    A Lebesgue-random point has random digits below ``2^-64``; multiplying by
    ``A`` carries ``floor(A r)`` of them into the state, with ``r`` a fresh
    uniform draw per step.
    """
    mats, offsets = lin
    dim = len(X)
    consts = [[int(round(v * _MOD)) % _MOD for v in c] for c in offsets]
    mats_i = [[[int(a) for a in row] for row in A] for A in mats]
    steps = len(symbols)
    for i in range(steps):
        points[i] = [v / _MOD for v in X] if dim > 1 else X[0] / _MOD
        j = pick(i, points[i])
        symbols[i] = j
        A, C, r = mats_i[j], consts[j], refine[i]
        X = [
            (sum(A[a][b] * X[b] for b in range(dim)) + math.floor(sum(A[a][b] * r[b] for b in range(dim))) + C[a])
            % _MOD
            for a in range(dim)
        ]
    points[steps] = [v / _MOD for v in X] if dim > 1 else X[0] / _MOD


def _choose(u: float, probs: np.ndarray) -> int:
    j = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(j, len(probs) - 1)


def sample_markov(
    T: Correspondence,
    kernel: Kernel,
    x0=None,
    steps: int = 1000,
    seed: int = 0,
    trajectory: int = 0,
) -> MarkovSample:
    """Simulate the chain ``x_{i+1} = f_{j_i}(x_i)`` with ``j_i ~ P(x_i)``.

    Randomness comes from a Philox stream keyed by ``(seed, trajectory)``.
    Linear generators run on exact arithmetic: rationals when ``x0`` is given,
    otherwise a 64-bit fixed-point state whose low digits are refined from the
    stream as a Lebesgue-random start requires (``x0=None``).  Other generators
    run in float64.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if kernel.k != T.k:
        raise ConfigError(f"kernel has {kernel.k} weights for {T.k} generators")
    rng = _generator(seed, trajectory)
    dim = T.dim
    lin = _linear_data(T)
    u = rng.random(steps)
    symbols = np.empty(steps, dtype=np.int64)
    shape = (steps + 1,) if dim == 1 else (steps + 1, dim)
    points = np.empty(shape)

    def pick(i, x):
        return _choose(u[i], kernel.probabilities(np.asarray(x), dim).reshape(T.k))

    if lin is not None and x0 is not None:
        mats, offsets = lin
        x = [_as_fraction(float(v)) if not isinstance(v, Fraction) else v for v in np.atleast_1d(np.asarray(x0, dtype=object))]
        x = [v % 1 for v in x]
        for i in range(steps):
            points[i] = [float(v) for v in x] if dim > 1 else float(x[0])
            j = pick(i, points[i])
            symbols[i] = j
            A, c = mats[j], offsets[j]
            x = [(sum(A[r][s] * x[s] for s in range(dim)) + c[r]) % 1 for r in range(dim)]
        points[steps] = [float(v) for v in x] if dim > 1 else float(x[0])
        return MarkovSample(points, symbols, seed, "rational")

    if lin is not None:
        X = [int(v) for v in rng.integers(0, _MOD, size=dim, dtype=np.uint64)]
        _fixed_point_run(lin, X, rng.random((steps, dim)), points, symbols, pick)
        return MarkovSample(points, symbols, seed, "fixed64")

    x = rng.random(dim if dim > 1 else None) if x0 is None else mod1(np.asarray(x0, dtype=float))
    for i in range(steps):
        points[i] = x
        j = pick(i, x)
        symbols[i] = j
        x = T.generators[j](x)
    points[steps] = x
    return MarkovSample(points, symbols, seed, "float64")


def sample_markov_many(
    T: Correspondence, kernel: Kernel, trajectories: int, steps: int, seed: int = 0, threads: int = 1
) -> list[MarkovSample]:
    """Independent Lebesgue-started trajectories, one Philox stream each; order independent of ``threads``."""
    def run(t):
        return sample_markov(T, kernel, None, steps, seed, trajectory=t)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, range(trajectories)))
    return [run(t) for t in range(trajectories)]


class SymbolStream:
    """Infinite i.i.d. symbol sequence over ``{0..k-1}``, addressable by position.

    Block ``b`` of 4096 symbols is drawn from the Philox stream keyed by
    ``(seed, b)``, so any position can be read without generating the prefix.
    """

    def __init__(self, k: int, seed: int = 0, probs=None, offset: int = 0):
        self.k = k
        self.seed = seed
        self.offset = offset
        self.probs = np.full(k, 1.0 / k) if probs is None else np.asarray(probs, dtype=float)
        self._cache: dict[int, np.ndarray] = {}

    def _block(self, b: int) -> np.ndarray:
        if b not in self._cache:
            u = _generator(self.seed, b).random(_STREAM_BLOCK)
            self._cache[b] = np.minimum(np.searchsorted(np.cumsum(self.probs), u, side="right"), self.k - 1)
        return self._cache[b]

    def __getitem__(self, i: int) -> int:
        pos = self.offset + i
        return int(self._block(pos // _STREAM_BLOCK)[pos % _STREAM_BLOCK])

    def take(self, n: int) -> np.ndarray:
        return np.array([self[i] for i in range(n)], dtype=np.int64)

    def shift(self, by: int = 1) -> "SymbolStream":
        s = SymbolStream(self.k, self.seed, self.probs, self.offset + by)
        s._cache = self._cache
        return s


def skew_product_step(symbols, x, T: Correspondence):
    """``(s, x) -> (shifted s, f_{s_0}(x))``; ``symbols`` is a :class:`SymbolStream` or a finite sequence."""
    if isinstance(symbols, SymbolStream):
        return symbols.shift(), T.generators[symbols[0]](x)
    symbols = tuple(symbols)
    if not symbols:
        raise ConfigError("symbol sequence is exhausted")
    return symbols[1:], T.generators[symbols[0]](x)


def orbit_projection(symbols, x, T: Correspondence, depth: int) -> np.ndarray:
    """First ``depth`` points ``(x, f_{s_0} x, f_{s_1} f_{s_0} x, ...)`` of the orbit coded by ``(s, x)``."""
    pts = []
    for i in range(depth):
        pts.append(np.asarray(x, dtype=float))
        x = T.generators[symbols[i]](x)
    return np.stack(pts)


def skew_product_orbit(T: Correspondence, stream: SymbolStream, x0, steps: int, seed: int = 0) -> np.ndarray:
    """Iterate the skew product ``steps`` times and return the visited base points.

    ``x0=None`` draws a Lebesgue-random start from the Philox stream keyed by
    ``(seed, 0)``; for linear generators the orbit then runs on the 64-bit
    fixed-point engine used by :func:`sample_markov`.
    """
    lin = _linear_data(T)
    if x0 is None:
        rng = _generator(seed, 0)
        shape = (steps + 1,) if T.dim == 1 else (steps + 1, T.dim)
        points = np.empty(shape)
        if lin is not None:
            X = [int(v) for v in rng.integers(0, _MOD, size=T.dim, dtype=np.uint64)]
            _fixed_point_run(lin, X, rng.random((steps, T.dim)), points, np.empty(steps, np.int64),
                             lambda i, x: stream[i])
            return points
        x0 = rng.random(T.dim if T.dim > 1 else None)
    pts = [np.asarray(x0, dtype=float)]
    s, x = stream, x0
    for _ in range(steps):
        s, x = skew_product_step(s, x, T)
        pts.append(np.asarray(x, dtype=float))
    return np.stack(pts)
