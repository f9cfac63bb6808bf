"""Expanding generator maps on the circle and on flat tori.

Points are plain floats / numpy arrays. A circle point is a scalar and a batch
of circle points is an array of any shape; a torus point has shape ``(m,)`` and
a batch has shape ``(..., m)``. All coordinates live in ``[0, 1)``.

``inverse_branches`` always puts the branch index on a new leading axis, so a
batch ``y`` of shape ``s`` gives ``(degree,) + s``.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Any, Union

import numpy as np

from .errors import ConfigError, NumericError

TWO_PI = 2.0 * math.pi
TOL_ROOT_CIRCLE = 1e-12
TOL_ROOT_TORUS = 1e-10
_MAX_ROOT_ITER = 100

Number = Union[float, Fraction]


def _as_fraction(value: float) -> Fraction:
    """Small-denominator rational for a float shift (1/3 stays 1/3)."""
    approx = Fraction(value).limit_denominator(2**20)
    if abs(float(approx) - value) <= 1e-15:
        return approx
    return Fraction(value)


def mod1(x):
    """Reduce to ``[0, 1)``. Rounding can produce exactly 1.0; that maps to 0.0."""
    r = np.mod(x, 1.0)
    r = np.where(r >= 1.0, 0.0, r)
    return r if np.ndim(r) else float(r)


def circle_distance(x, y):
    d = np.abs(np.mod(np.asarray(x, dtype=float) - y, 1.0))
    d = np.minimum(d, 1.0 - d)
    return d if np.ndim(d) else float(d)


def distance(x, y, dim: int = 1):
    """Flat metric: the max over coordinates of the circle distance."""
    d = circle_distance(x, y)
    if dim == 1:
        return d
    d = np.max(d, axis=-1)
    return d if np.ndim(d) else float(d)


class GeneratorMap:
    """Base class for a single expanding generator."""

    dim: int = 1
    degree: int
    min_expansion: float
    max_jacobian: float
    constant_jacobian: bool = False

    def eval(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def inverse_branches(self, y):
        raise NotImplementedError

    def __call__(self, x):
        return self.eval(x)

    def to_config(self) -> dict:
        raise NotImplementedError

    @property
    def tol_root(self) -> float:
        return TOL_ROOT_CIRCLE if self.dim == 1 else TOL_ROOT_TORUS

    def _check_point(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim > 1 and (x.ndim == 0 or x.shape[-1] != self.dim):
            raise ConfigError(
                f"expected points with trailing dimension {self.dim}, got shape {x.shape}"
            )
        return x


class CircleMap(GeneratorMap):
    """A circle endomorphism given by an increasing lift ``F`` with ``F(x+1) = F(x) + p``.

    Subclasses provide ``lift``, ``lift_derivative`` and ``lift_inverse``; the
    lift maps ``[0, 1)`` onto ``[c, c + p)``.
    """

    p: int
    c: float

    def lift(self, x):
        raise NotImplementedError

    def lift_derivative(self, x):
        raise NotImplementedError

    def lift_inverse(self, t):
        raise NotImplementedError

    @property
    def degree(self) -> int:
        return self.p

    def eval(self, x):
        x = self._check_point(x)
        return mod1(self.lift(x))

    def jacobian(self, x):
        x = self._check_point(x)
        j = np.abs(self.lift_derivative(x))
        return j if np.ndim(j) else float(j)

    def inverse_branches(self, y):
        y = np.asarray(y, dtype=float)
        t0 = np.where(y >= self.c, y, y + 1.0)
        t = t0[None, ...] + np.arange(self.p, dtype=float).reshape((self.p,) + (1,) * y.ndim)
        return mod1(self.lift_inverse(t))

    def preimage_intervals(self, a: float, b: float) -> list[tuple[float, float]]:
        """Preimage of the arc ``[a, b)`` (``0 <= a < b <= 1``) as disjoint intervals in [0, 1)."""
        out = []
        for s in range(math.floor(self.c - b), math.ceil(self.c + self.p - a) + 1):
            lo = max(a + s, self.c)
            hi = min(b + s, self.c + self.p)
            if hi > lo:
                xl = float(self.lift_inverse(np.asarray(lo)))
                xh = float(self.lift_inverse(np.asarray(hi)))
                out.append((max(0.0, xl), min(1.0, xh)))
        return out


class CircleLinear(CircleMap):
    """``x -> p*x + c (mod 1)``."""

    constant_jacobian = True

    def __init__(self, p: int, c: Number = 0.0):
        if isinstance(p, bool) or int(p) != p or p < 2:
            raise ConfigError(f"circle_linear needs an integer p >= 2, got {p!r}")
        if isinstance(c, str):
            try:
                c = Fraction(c)
            except ValueError:
                raise ConfigError(f"cannot parse shift {c!r}") from None
        if not 0 <= c < 1:
            raise ConfigError(f"circle_linear shift c must lie in [0, 1), got {c!r}")
        self.p = int(p)
        self.c_exact = c if isinstance(c, Fraction) else _as_fraction(float(c))
        self.c = float(c)
        self.min_expansion = float(self.p)
        self.max_jacobian = float(self.p)

    def lift(self, x):
        return self.p * x + self.c

    def lift_derivative(self, x):
        return np.full(np.shape(x), float(self.p)) if np.ndim(x) else float(self.p)

    def lift_inverse(self, t):
        return (np.asarray(t, dtype=float) - self.c) / self.p

    def to_config(self) -> dict:
        return {"kind": "circle_linear", "p": self.p, "c": self.c}

    def __repr__(self):
        return f"CircleLinear(p={self.p}, c={self.c!r})"


class CirclePerturbed(CircleMap):
    """``x -> p*x + c + eps/(2 pi) * sin(2 pi x) (mod 1)`` with ``|eps| < p - 1``."""

    def __init__(self, p: int, c: float = 0.0, eps: float = 0.0):
        if isinstance(p, bool) or int(p) != p or p < 2:
            raise ConfigError(f"circle_perturbed needs an integer p >= 2, got {p!r}")
        if not abs(eps) < p - 1:
            raise ConfigError(f"circle_perturbed is not expanding: |eps|={abs(eps)} >= p-1={p - 1}")
        self.p = int(p)
        self.c_raw = float(c)
        self.c = mod1(float(c))
        self.eps = float(eps)
        self.min_expansion = self.p - abs(self.eps)
        self.max_jacobian = self.p + abs(self.eps)
        self._amp = self.eps / TWO_PI

    def lift(self, x):
        return self.p * x + self.c + self._amp * np.sin(TWO_PI * x)

    def lift_derivative(self, x):
        return self.p + self.eps * np.cos(TWO_PI * x)

    def lift_inverse(self, t):
        # The root is bracketed: |F(x) - (p x + c)| <= |amp|. Newton clipped to the
        # bracket, then bisection for any entry that has not converged.
        t = np.asarray(t, dtype=float)
        spread = abs(self._amp)
        lo = np.clip((t - self.c - spread) / self.p, 0.0, 1.0)
        hi = np.clip((t - self.c + spread) / self.p, 0.0, 1.0)
        x = (t - self.c) / self.p
        x = x - self._amp * np.sin(TWO_PI * x) / self.p
        for _ in range(8):
            s = TWO_PI * x
            r = self.p * x + self.c + self._amp * np.sin(s) - t
            x = np.clip(x - r / (self.p + self.eps * np.cos(s)), lo, hi)
            if np.max(np.abs(r), initial=0.0) <= 1e-11:
                break
        r = np.abs(self.lift(x) - t)
        bad = r > 1e-13
        if np.any(bad):
            x[bad] = self._bisect(t[bad], lo[bad], hi[bad])
            r = np.abs(self.lift(x) - t)
        if np.any(r > TOL_ROOT_CIRCLE):
            worst = np.unravel_index(np.argmax(r), r.shape)
            raise NumericError(
                f"inverse branch {worst[0] if r.ndim else 0} did not converge: residual {r.max():.3e}"
            )
        return x

    def _bisect(self, t, lo, hi):
        for _ in range(_MAX_ROOT_ITER):
            mid = 0.5 * (lo + hi)
            above = self.lift(mid) > t
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            if np.all(hi - lo < 1e-13):
                break
        x = 0.5 * (lo + hi)
        for _ in range(2):
            x = x - (self.lift(x) - t) / self.lift_derivative(x)
        return x

    def to_config(self) -> dict:
        return {"kind": "circle_perturbed", "p": self.p, "c": self.c_raw, "eps": self.eps}

    def __repr__(self):
        return f"CirclePerturbed(p={self.p}, c={self.c_raw!r}, eps={self.eps!r})"


class TorusLinear(GeneratorMap):
    """``x -> A x + c (mod 1)`` on the flat torus ``T^m``."""

    constant_jacobian = True

    def __init__(self, A, c=None):
        A_arr = np.asarray(A, dtype=float)
        if A_arr.ndim != 2 or A_arr.shape[0] != A_arr.shape[1]:
            raise ConfigError(f"torus_linear needs a square matrix, got shape {A_arr.shape}")
        if not np.all(A_arr == np.round(A_arr)):
            raise ConfigError("torus_linear matrix must have integer entries")
        m = A_arr.shape[0]
        self.dim = m
        self.A = A_arr.astype(np.int64)
        self.c = np.zeros(m) if c is None else np.asarray(c, dtype=float).reshape(m)
        det = round(float(np.linalg.det(A_arr)))
        if det == 0:
            raise ConfigError("torus_linear matrix is singular")
        eig = np.abs(np.linalg.eigvals(A_arr))
        if np.any(eig <= 1.0):
            raise ConfigError(f"torus_linear matrix has an eigenvalue of modulus <= 1: {eig}")
        self.Ainv = np.linalg.inv(A_arr)
        # Expansion factor in the flat sup-metric.
        rate = 1.0 / np.max(np.sum(np.abs(self.Ainv), axis=1))
        if rate <= 1.0:
            raise ConfigError(
                "torus_linear matrix is not expanding in the flat sup-metric "
                f"(rate {rate:.4f}); an adapted metric is not supported"
            )
        self.degree = abs(det)
        self.min_expansion = float(rate)
        self.max_jacobian = float(abs(det))
        self._offsets = self._coset_offsets()

    def _coset_offsets(self) -> np.ndarray:
        m = self.dim
        corners = np.array(list(itertools.product([0.0, 1.0], repeat=m))) @ self.A.T
        lo = np.floor(corners.min(axis=0)).astype(int)
        hi = np.ceil(corners.max(axis=0)).astype(int)
        seen: dict[tuple, np.ndarray] = {}
        for q in itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)]):
            x = mod1(self.Ainv @ np.asarray(q, dtype=float))
            key = tuple(np.round(np.asarray(x) * 1e10).astype(np.int64) % 10**10)
            seen.setdefault(key, np.asarray(x))
        if len(seen) != self.degree:
            raise NumericError(f"found {len(seen)} preimage offsets, expected {self.degree}")
        return np.array(sorted(seen.values(), key=tuple))

    def eval(self, x):
        x = self._check_point(x)
        return mod1(x @ self.A.T + self.c)

    def jacobian(self, x):
        x = self._check_point(x)
        shape = x.shape[:-1]
        return np.full(shape, float(self.degree)) if shape else float(self.degree)

    def inverse_branches(self, y):
        y = self._check_point(y)
        base = (y - self.c) @ self.Ainv.T
        off = self._offsets.reshape((self.degree,) + (1,) * (y.ndim - 1) + (self.dim,))
        return mod1(base[None, ...] + off)

    def to_config(self) -> dict:
        return {"kind": "torus_linear", "A": self.A.tolist(), "c": self.c.tolist()}

    def __repr__(self):
        return f"TorusLinear(A={self.A.tolist()}, c={self.c.tolist()})"


def generator_from_config(cfg: dict[str, Any]) -> GeneratorMap:
    """Build a generator from its JSON fragment."""
    kind = cfg.get("kind")
    try:
        if kind == "circle_linear":
            return CircleLinear(cfg["p"], cfg.get("c", 0.0))
        if kind == "circle_perturbed":
            return CirclePerturbed(cfg["p"], cfg.get("c", 0.0), cfg.get("eps", 0.0))
        if kind == "torus_linear":
            return TorusLinear(cfg["A"], cfg.get("c"))
    except KeyError as exc:
        raise ConfigError(f"generator {kind!r} is missing field {exc}") from None
    raise ConfigError(f"unknown generator kind {kind!r}")


def degree_identity(f: GeneratorMap, resolution: int = 2**14) -> float:
    """Midpoint quadrature of ``y -> sum over f^{-1}(y) of 1/Jac``; the exact value is 1."""
    if f.dim == 1:
        y = (np.arange(resolution) + 0.5) / resolution
    else:
        n = max(2, round(resolution ** (1.0 / f.dim)))
        axes = [(np.arange(n) + 0.5) / n] * f.dim
        y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, f.dim)
    pre = f.inverse_branches(y)
    return float(np.mean(np.sum(1.0 / f.jacobian(pre), axis=0)))
