"""The built-in acceptance suite: one function per criterion, each timed against its budget."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.stats import kstest

from .correspondence import Correspondence
from .entropy import kernel_entropy_analytic, fiber_entropy, partition_entropy_rate, variational_check
from .kernel import CylinderSpec, Kernel, cylinder_measure, sample_markov
from .maps import CircleLinear, CirclePerturbed, TorusLinear, degree_identity
from .operator import GridDensity, check_kernel_invariance, invariant_density, miller_akin_condition1, transfer_matrix
from .orbits import Potential, gibbs_ratio_sequence, phi_table, probe_points, pressure_via_growth

GOLDEN_SEED = 0x5EED
LOG2 = math.log(2.0)


def doubling_pair() -> Correspondence:
    return Correspondence([CircleLinear(2, 0), CircleLinear(2, Fraction(1, 2))])


def doubling_quad() -> Correspondence:
    return Correspondence([CircleLinear(2, Fraction(i, 4)) for i in range(4)])


def perturbed_pair(eps: float = 0.3) -> Correspondence:
    return Correspondence([CirclePerturbed(2, 0.0, eps), CirclePerturbed(2, 0.5, eps)])


def two_three() -> Correspondence:
    return Correspondence([CircleLinear(2, 0), CircleLinear(3, 0)])


def doubling() -> Correspondence:
    return Correspondence([CircleLinear(2, 0)])


def shipped_generators() -> list:
    """Every generator that appears in the bundled example configurations."""
    return [
        CircleLinear(2, 0),
        CircleLinear(2, Fraction(1, 4)),
        CircleLinear(2, Fraction(1, 2)),
        CircleLinear(2, Fraction(3, 4)),
        CircleLinear(3, 0),
        CircleLinear(3, Fraction(1, 3)),
        CircleLinear(3, Fraction(2, 3)),
        CirclePerturbed(2, 0.0, 0.3),
        CirclePerturbed(2, 0.5, 0.3),
        TorusLinear([[2, 0], [0, 3]]),
        TorusLinear([[3, 1], [1, 3]]),
    ]


@dataclass
class CriterionResult:
    id: str
    description: str
    expected: str
    observed: str
    tolerance: str
    value_ok: bool
    seconds: float
    budget: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.value_ok and self.seconds <= self.budget

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        timing = f"{self.seconds:.2f}s/{self.budget:g}s"
        return f"{self.id} {status} expected={self.expected} observed={self.observed} tol={self.tolerance} time={timing}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _g(x: float) -> str:
    return f"{x:.10g}"


def criterion_a1(threads: int = 1):
    est, seq = pressure_via_growth(doubling_pair(), Potential.jacobian(), 0.1, 1, 10, threads=threads)
    err = abs(est - LOG2)
    return _g(LOG2), _g(est), "1e-12", err <= 1e-12, f"max |term - log 2| = {max(abs(s - LOG2) for s in seq):.2e}"


def criterion_a2(threads: int = 1):
    est, seq = pressure_via_growth(perturbed_pair(), Potential.jacobian(), 0.37, 1, 10, threads=threads)
    return _g(LOG2), _g(est), "0.02", abs(est - LOG2) <= 0.02, f"raw n=10 term {seq[-1]:.10g}"


def criterion_a3(threads: int = 1):
    ratios = gibbs_ratio_sequence(perturbed_pair(), Potential.jacobian(), 9, 32, threads=threads)[3:]
    bound = ratios[-1] * 1.05
    return f"<= {_g(bound)}", _g(float(ratios.max())), "x1.05", bool(np.all(ratios <= bound)), (
        "ratios n=4..9: " + ", ".join(f"{r:.8f}" for r in ratios)
    )


def criterion_b1(threads: int = 1):
    r2 = invariant_density(doubling_pair())
    r4 = invariant_density(doubling_quad())
    rp = invariant_density(perturbed_pair(), resolution=2**12)
    errs = (abs(r2.eigenvalue - 2), abs(r4.eigenvalue - 4), abs(rp.eigenvalue - 2))
    ok = errs[0] <= 1e-10 and errs[1] <= 1e-10 and errs[2] <= 1e-4
    obs = f"{_g(r2.eigenvalue)}/{_g(r4.eigenvalue)}/{_g(rp.eigenvalue)}"
    return "2/4/2", obs, "1e-10/1e-10/1e-4", ok, f"iterations {r2.iterations}/{r4.iterations}/{rp.iterations}"


def criterion_b2(threads: int = 1):
    vals = []
    for T in (doubling_pair(), doubling_quad()):
        r = invariant_density(T)
        vals.append(check_kernel_invariance(T, r.Phi, Kernel.uniform(T.k)))
    P = perturbed_pair()
    rp = invariant_density(P)
    vals.append(check_kernel_invariance(P, rp.Phi, Kernel.uniform(2)))
    ok = vals[0] <= 1e-8 and vals[1] <= 1e-8 and vals[2] <= 1e-5
    return "0", "/".join(f"{v:.3e}" for v in vals), "1e-8/1e-8/1e-5", ok, "L1 discrepancy of (Phi m)Q vs Phi m"


def criterion_b3(threads: int = 1):
    P = perturbed_pair()
    r = invariant_density(P, resolution=2**12)
    table = phi_table(P, Potential.jacobian(), 10, 32, threads=threads)[:, -1] / 2.0**10
    err = float(np.max(np.abs(r.Phi.evaluate(probe_points(P, 32)) - table)))
    return "0", f"{err:.3e}", "1e-3", err <= 1e-3, "sup over 32 probes of |Phi - Phi_10/2^10|"


def criterion_b4(threads: int = 1):
    P = perturbed_pair()
    M = transfer_matrix(P, Potential.jacobian(), 2**12)
    rng = np.random.default_rng(GOLDEN_SEED)
    base = invariant_density(P, matrix=M, resolution=2**12).Phi.values
    spread = 0.0
    for _ in range(5):
        init = GridDensity(rng.uniform(0.1, 10.0, size=2**12))
        phi = invariant_density(P, matrix=M, resolution=2**12, init=init, tol=1e-12).Phi.values
        spread = max(spread, float(np.max(np.abs(phi - base))))
    return "0", f"{spread:.3e}", "1e-6", spread <= 1e-6, "5 random positive starts vs the constant start"


def criterion_c1(threads: int = 1):
    v = cylinder_measure(None, Kernel.uniform(2), two_three(), CylinderSpec.uniform(2, (0, 0)), mode="exact")
    return "7/24", str(v), "exact", v == Fraction(7, 24), "rational lattice engine"


def criterion_c2(threads: int = 1):
    T = two_three()
    res = variational_check(T, Potential.torus_measurable(), None, Kernel.uniform(2))
    h = kernel_entropy_analytic(T)
    fib = fiber_entropy(T)
    h_ref = LOG2 + 0.5 * math.log(6.0)
    fib_ref = 0.5 * math.log(6.0)
    ok = abs(res.gap) <= 1e-9 and abs(h - h_ref) <= 1e-9 and abs(fib - fib_ref) <= 1e-9
    obs = f"gap={res.gap:.2e} h={_g(h)} fiber={_g(fib)}"
    return f"gap=0 h={_g(h_ref)} fiber={_g(fib_ref)}", obs, "1e-9", ok, f"lhs {_g(res.lhs)} rhs {_g(res.rhs)}"


def criterion_c3(threads: int = 1):
    rates = partition_entropy_rate(None, Kernel.uniform(2), doubling_pair(), 16, 8)
    values = [r for _, r in rates]
    h = 2 * LOG2
    close = abs(values[-1] - h) <= 0.15
    monotone = all(values[i + 1] <= values[i] + 1e-9 for i in range(2, len(values) - 1))
    note = "H_n/n: " + ", ".join(f"{v:.6f}" for v in values)
    return _g(h), _g(values[-1]), "0.15 and non-increasing n>=3", close and monotone, note


def criterion_d1(threads: int = 1):
    vals = [degree_identity(g) for g in shipped_generators()]
    worst = max(abs(v - 1.0) for v in vals)
    return "1", f"max dev {worst:.2e}", "1e-6", worst <= 1e-6, f"{len(vals)} generators"


def criterion_d2(threads: int = 1):
    mu = GridDensity.lebesgue(64)
    v1 = miller_akin_condition1(two_three(), mu, 64)
    v2 = miller_akin_condition1(doubling_pair(), mu, 64)
    return "<= 0", f"{v1:.3e}/{v2:.3e}", "1e-9", max(v1, v2) <= 1e-9, "max_A mu(A) - mu(T^-1 A)"


def criterion_d3(threads: int = 1):
    T = doubling()
    p, _ = pressure_via_growth(T, Potential.jacobian(), 0.3, 1, 10)
    h = kernel_entropy_analytic(T)
    ok = abs(p) <= 1e-12 and abs(h - LOG2) <= 1e-9
    return f"P=0 h={_g(LOG2)}", f"P={p:.2e} h={_g(h)}", "1e-12/1e-9", ok, "single doubling map"


def criterion_e1(threads: int = 1):
    sample = sample_markov(two_three(), Kernel.uniform(2), None, 10**5, seed=GOLDEN_SEED)
    stat = float(kstest(sample.points[1:], "uniform").statistic)
    return "<= 0.0052", f"{stat:.6f}", "0.0052", stat <= 0.0052, f"seed {GOLDEN_SEED:#x}, engine {sample.engine}"


CRITERIA: dict[str, tuple[str, float, Callable]] = {
    "A1": ("pressure of {2x, 2x+1/2} equals log 2", 1.0, criterion_a1),
    "A2": ("extrapolated pressure of the perturbed pair", 60.0, criterion_a2),
    "A3": ("Gibbs ratio bounded over n = 4..9", 60.0, criterion_a3),
    "B1": ("transfer eigenvalue equals k", 30.0, criterion_b1),
    "B2": ("(Phi m)Q = Phi m for the uniform kernel", 10.0, criterion_b2),
    "B3": ("Phi agrees with Phi_10 / k^10", 60.0, criterion_b3),
    "B4": ("power iteration independent of the start", 60.0, criterion_b4),
    "C1": ("cylinder value 7/24 for {2x, 3x}", 1.0, criterion_c1),
    "C2": ("variational identity for {2x, 3x}", 1.0, criterion_c2),
    "C3": ("partition entropy rate at m=16, n=8", 120.0, criterion_c3),
    "D1": ("degree identity for shipped generators", 5.0, criterion_d1),
    "D2": ("mu(A) <= mu(T^-1 A) on dyadic cells", 5.0, criterion_d2),
    "D3": ("single-map reduction", 1.0, criterion_d3),
    "E1": ("Markov samples are Lebesgue distributed", 10.0, criterion_e1),
}


def run_criterion(cid: str, threads: int = 1) -> CriterionResult:
    description, budget, fn = CRITERIA[cid]
    t0 = time.perf_counter()
    expected, observed, tol, ok, note = fn(threads=threads)
    seconds = time.perf_counter() - t0
    return CriterionResult(cid, description, expected, observed, tol, bool(ok), seconds, budget, note)


def run_suite(ids=None, threads: int = 1) -> list[CriterionResult]:
    return [run_criterion(cid, threads) for cid in (ids or CRITERIA)]
