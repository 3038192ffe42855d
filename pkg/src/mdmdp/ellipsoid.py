"""Central-cut ellipsoid engine driven by a (possibly non-convex) separation oracle,
plus a thin dense LP front end."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-14


@dataclass(frozen=True)
class Hyperplane:
    """The half-space a . x <= b."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if not np.all(np.isfinite(a)) or not math.isfinite(self.b):
            raise ValueError("hyperplane has non-finite entries")
        if not np.any(a):
            raise ValueError("hyperplane normal is all-zero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def slack(self, x: np.ndarray) -> float:
        return self.b - float(self.a @ x)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return float(self.a @ x) <= self.b + tol


# An oracle returns None to accept the query point, or a hyperplane it violates.
SeparationOracle = Callable[[np.ndarray], Optional[Hyperplane]]


@dataclass
class EllipsoidState:
    center: np.ndarray
    shape: np.ndarray
    iteration: int = 0
    log_det: float = 0.0

    @classmethod
    def ball(cls, dim: int, radius: float) -> "EllipsoidState":
        return cls(np.zeros(dim), np.eye(dim) * radius**2, 0, dim * math.log(radius**2))

    def cut(self, a: np.ndarray) -> bool:
        """Central cut keeping {x : a.(x - c) <= 0}; False if the shape has degenerated."""
        d = len(self.center)
        Pa = self.shape @ a
        denom = float(a @ Pa)
        if not denom > 0 or not math.isfinite(denom):
            return False
        g = Pa / math.sqrt(denom)
        if d == 1:
            self.center = self.center - g / 2
            self.shape = self.shape / 4
            self.log_det += math.log(0.25)
        else:
            self.center = self.center - g / (d + 1)
            P = (d * d / (d * d - 1.0)) * (self.shape - (2.0 / (d + 1)) * np.outer(g, g))
            self.shape = (P + P.T) / 2
            self.log_det += d * math.log(d * d / (d * d - 1.0)) + math.log((d - 1.0) / (d + 1))
        self.iteration += 1
        return bool(np.all(np.isfinite(self.center)))

    def degenerate(self) -> bool:
        ev = np.linalg.eigvalsh(self.shape)
        return not (ev[0] > EIG_FLOOR * ev[-1])


@dataclass
class EllipsoidResult:
    accepted: bool
    x: np.ndarray | None
    iterations: int
    degenerate: bool = False
    stopped_early: bool = False
    max_query_norm: float = 0.0
    state: EllipsoidState | None = field(default=None, repr=False)

    @property
    def infeasible(self) -> bool:
        return not self.accepted


def default_iterations(dim: int, init_radius: float, K: float = 4.0, vol_floor: float = 1e-12) -> int:
    """N = ceil(K d^2 log(R / floor)), the practical stand-in for the volume bound."""
    return max(1, math.ceil(K * dim * dim * math.log(init_radius / vol_floor)))


def ellipsoid_feasible(
    oracle: SeparationOracle,
    init_radius: float,
    dim: int,
    max_iters: int | None = None,
    *,
    K: float = 4.0,
    vol_floor: float = 1e-12,
    should_stop: Callable[[int], bool] | None = None,
    stop_every: int = 0,
    check_cuts: bool = True,
) -> EllipsoidResult:
    """Query centers of a shrinking ellipsoid until the oracle accepts one.

    Starts from the origin-centred ball of radius ``init_radius``. After
    ``max_iters`` rejections the run reports infeasible. ``should_stop``,
    polled every ``stop_every`` rejections, lets the caller end the run
    early with an infeasibility certificate of its own.
    """
    if init_radius <= 0:
        raise ValueError("init_radius must be positive")
    if max_iters is None:
        max_iters = default_iterations(dim, init_radius, K, vol_floor)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    state = EllipsoidState.ball(dim, init_radius)
    max_norm = 0.0
    for it in range(max_iters):
        x = state.center
        max_norm = max(max_norm, float(np.max(np.abs(x))) if dim else 0.0)
        cut = oracle(x)
        if cut is None:
            return EllipsoidResult(True, x.copy(), it + 1, max_query_norm=max_norm, state=state)
        if check_cuts and not float(cut.a @ x) > cut.b:
            raise AssertionError(f"oracle returned a cut that does not separate the query point "
                                 f"(a.x - b = {float(cut.a @ x) - cut.b:.3e})")
        if not state.cut(cut.a):
            log.debug("ellipsoid degenerated at iteration %d", it)
            return EllipsoidResult(False, None, it + 1, degenerate=True, max_query_norm=max_norm, state=state)
        if (it + 1) % 64 == 0 and state.degenerate():
            log.debug("ellipsoid shape below eigenvalue floor at iteration %d", it)
            return EllipsoidResult(False, None, it + 1, degenerate=True, max_query_norm=max_norm, state=state)
        if should_stop is not None and stop_every and (it + 1) % stop_every == 0 and should_stop(it + 1):
            return EllipsoidResult(False, None, it + 1, stopped_early=True, max_query_norm=max_norm, state=state)
    return EllipsoidResult(False, None, max_iters, max_query_norm=max_norm, state=state)


class InfeasibleError(RuntimeError):
    pass


@dataclass
class OptimizeResult:
    x: np.ndarray
    value: float
    trace: list[tuple[float, bool, int]]


def ellipsoid_optimize(
    oracle: SeparationOracle,
    objective_constraint_builder: Callable[[float], Hyperplane],
    lo: float,
    hi: float,
    bits: int,
    dim: int,
    init_radius: float,
    **feasible_kwargs,
) -> OptimizeResult:
    """Maximize by bisecting on the objective value.

    ``objective_constraint_builder(x)`` gives the half-space "objective >= x";
    it is checked before ``oracle``. Returns the point found at the largest
    accepted guess.
    """
    if lo > hi:
        raise ValueError("lo must not exceed hi")

    def attempt(guess: float) -> EllipsoidResult:
        obj = objective_constraint_builder(guess)

        def combined(x: np.ndarray) -> Hyperplane | None:
            if not obj.contains(x):
                return obj
            return oracle(x)

        return ellipsoid_feasible(combined, init_radius, dim, **feasible_kwargs)

    trace: list[tuple[float, bool, int]] = []
    first = attempt(lo)
    trace.append((lo, first.accepted, first.iterations))
    if not first.accepted:
        raise InfeasibleError(f"no feasible point at the lowest guess {lo}")
    best_x, best_v = first.x, lo
    a, b = lo, hi
    for _ in range(bits):
        mid = (a + b) / 2
        res = attempt(mid)
        trace.append((mid, res.accepted, res.iterations))
        if res.accepted:
            a, best_x, best_v = mid, res.x, mid
        else:
            b = mid
    return OptimizeResult(best_x, best_v, trace)


# -- linear programming --------------------------------------------------------


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    value: float | None = None
    duals: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def lp_solve(
    c: Sequence[float],
    A: np.ndarray | None,
    b: Sequence[float] | None,
    eq_rows: Sequence[bool] | None = None,
    bounds: Sequence[tuple[float | None, float | None]] | tuple | None = None,
) -> LpResult:
    """Maximize c.x subject to A x <= b (rows flagged in ``eq_rows`` are equalities).

    ``bounds`` follows scipy's convention and defaults to x >= 0. Solved with
    HiGHS dual simplex, so the optimum returned is a basic solution and
    identical inputs give identical outputs.
    """
    c = np.asarray(c, dtype=float)
    nvar = len(c)
    if A is None or len(A) == 0:
        A = np.zeros((0, nvar))
        b = np.zeros(0)
    A = np.asarray(A, dtype=float).reshape(-1, nvar)
    b = np.asarray(b, dtype=float).reshape(-1)
    if len(b) != len(A):
        raise ValueError("A and b have inconsistent row counts")
    eq = np.zeros(len(A), dtype=bool) if eq_rows is None else np.asarray(eq_rows, dtype=bool)
    if bounds is None:
        bounds = (0, None)
    res = linprog(
        -c,
        A_ub=A[~eq] if (~eq).any() else None,
        b_ub=b[~eq] if (~eq).any() else None,
        A_eq=A[eq] if eq.any() else None,
        b_eq=b[eq] if eq.any() else None,
        bounds=bounds,
        method="highs-ds",
    )
    if res.status == 2:
        return LpResult("infeasible")
    if res.status == 3:
        return LpResult("unbounded")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return LpResult("optimal", np.asarray(res.x), float(c @ res.x))
