"""Revenue maximization over reduced forms via bisection + ellipsoid with WSO'.

The LP has variables (pi, p): pi is the reduced form (index order of
``reduced_form_index``), p the interim price of every (bidder, type) slot.
Incentive constraints are imposed exactly for D; feasibility of pi is
delegated to the weird separation oracle built from the welfare oracle's
reduced forms under D'; revenue is measured under the true D.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .ellipsoid import EllipsoidResult, Hyperplane, default_iterations, ellipsoid_feasible, lp_solve
from .model import Instance, PriceRule, ReducedForm
from .reduced_form import EmpiricalPrior, ReducedFormMap
from .welfare import WelfareOracle
from .wso import WsoConfig, WsoResult, wso_query

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    """Knobs for :func:`solve`.

    ``certify_every`` (outer) periodically checks, by LP over the
    incentive constraints and every cut WSO has produced so far, whether the
    current revenue guess is still attainable, ending hopeless runs early.
    ``cut_cache`` re-uses earlier WSO cuts (all valid for every guess)
    before paying for a fresh WSO call.
    """

    search_bits: int = 40
    K: float = 4.0
    vol_floor: float = 1e-12
    outer_iters: int | None = None
    certify_every: int = 50
    cut_cache: bool = True
    most_violated: bool = False
    bic_tol: float = 1e-12
    wso: WsoConfig = field(default_factory=lambda: WsoConfig(certify_every=10))

    def __post_init__(self):
        if self.search_bits < 0:
            raise ValueError("search_bits must be >= 0")


class SolverFailure(RuntimeError):
    pass


@dataclass
class LpPoint:
    pi: np.ndarray
    p: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.pi, self.p])

    @classmethod
    def from_vector(cls, x: np.ndarray, T: int) -> "LpPoint":
        x = np.asarray(x, dtype=float)
        return cls(x[:T].copy(), x[T:].copy())


@dataclass
class SolveReport:
    pi_star: ReducedForm
    p_star: PriceRule
    revenue: float
    lp_revenue: float
    rebate: float
    wso_result: WsoResult | None
    guesses: list[dict]
    alpha: float
    elapsed: float = 0.0
    mechanism: object = None
    residual: float | None = None
    wso_cuts: list[Hyperplane] = field(default_factory=list)

    @property
    def query_log(self):
        return [] if self.wso_result is None else self.wso_result.query_log

    def to_dict(self) -> dict:
        d = {
            "schema": "mdmdp.solve_report/1",
            "pi_star": self.pi_star.to_dict(),
            "p_star": self.p_star.to_dict(),
            "revenue": self.revenue,
            "lp_revenue": self.lp_revenue,
            "rebate": self.rebate,
            "alpha": self.alpha,
            "guesses": self.guesses,
            "query_log_size": len(self.query_log),
            "decomposition_residual": self.residual,
        }
        if self.mechanism is not None:
            d["mechanism"] = self.mechanism.to_dict()
        return d


def incentive_constraints(inst: Instance, with_boxes: bool = True) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Rows G, h of G x <= h over x = (pi, p), in the fixed scan order.

    Per bidder and true type v: IR(v), then BIC(v -> w) for every other w;
    then budgets; then the coordinate boxes pi in [0,1], |p| <= n v_max.
    """
    T, S, n = inst.T, inst.n_type_slots, inst.n_items
    offsets = inst.slot_offsets()
    rows, rhs, names = [], [], []

    def pi_slice(slot: int) -> slice:
        return slice(slot * n, slot * n + n)

    for i in range(inst.m):
        V = inst.values(i)
        for v in range(inst.type_counts[i]):
            sv = offsets[i] + v
            a = np.zeros(T + S)
            a[pi_slice(sv)] = -V[v]
            a[T + sv] = 1.0
            rows.append(a), rhs.append(0.0), names.append(f"IR[{i},{v}]")
            for w in range(inst.type_counts[i]):
                if w == v:
                    continue
                sw = offsets[i] + w
                a = np.zeros(T + S)
                a[pi_slice(sw)] += V[v]
                a[pi_slice(sv)] -= V[v]
                a[T + sw] -= 1.0
                a[T + sv] += 1.0
                rows.append(a), rhs.append(0.0), names.append(f"BIC[{i},{v}->{w}]")
    if inst.budgets is not None:
        for i, budget in enumerate(inst.budgets):
            if math.isfinite(budget):
                for v in range(inst.type_counts[i]):
                    a = np.zeros(T + S)
                    a[T + offsets[i] + v] = 1.0
                    rows.append(a), rhs.append(budget), names.append(f"budget[{i},{v}]")
    if with_boxes:
        pbound = inst.n_items * inst.v_max
        for k in range(T + S):
            hi = 1.0 if k < T else pbound
            lo = 0.0 if k < T else pbound
            a = np.zeros(T + S)
            a[k] = 1.0
            rows.append(a), rhs.append(hi), names.append(f"ub[{k}]")
            rows.append(-a), rhs.append(lo), names.append(f"lb[{k}]")
    return np.array(rows).reshape(-1, T + S), np.array(rhs), names


def revenue_row(inst: Instance) -> np.ndarray:
    """Coefficients c with c . x = expected payment under the true D."""
    return np.concatenate([np.zeros(inst.T), *[inst.probs(i) for i in range(inst.m)]])


def check_bic_ir(point: LpPoint, inst: Instance, tol: float = 0.0) -> Hyperplane | None:
    """First violated IR/BIC/budget constraint as a hyperplane over (pi, p), or None."""
    G, h, _ = incentive_constraints(inst, with_boxes=False)
    if len(G) == 0:
        return None
    viol = G @ point.vector - h
    bad = np.flatnonzero(viol > tol)
    if len(bad) == 0:
        return None
    k = bad[0]
    return Hyperplane(G[k], h[k])


def incentive_slack(point: LpPoint, inst: Instance) -> float:
    """Smallest slack over all IR/BIC/budget constraints (negative = violated)."""
    G, h, _ = incentive_constraints(inst, with_boxes=False)
    return float(np.min(h - G @ point.vector)) if len(G) else 0.0


class _FlatCut(Exception):
    pass


def implicit_equalities(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Mask of rows of G x <= h that hold with equality at every feasible x.

    Repeatedly maximizes the total (capped) slack of the still-undecided
    rows; rows that get positive slack are strict somewhere, and once the
    optimum is zero every remaining row is an implicit equality.
    """
    rows, nvar = G.shape
    undecided = np.ones(rows, dtype=bool)
    while undecided.any():
        idx = np.flatnonzero(undecided)
        k = len(idx)
        # variables (x, s), 0 <= s <= 1; G x + E s <= h
        E = np.zeros((rows, k))
        E[idx, np.arange(k)] = 1.0
        A = np.hstack([G, E])
        c = np.concatenate([np.zeros(nvar), np.ones(k)])
        bounds = [(None, None)] * nvar + [(0.0, 1.0)] * k
        res = lp_solve(c, A, h, bounds=bounds)
        if not res.ok:
            raise SolverFailure(f"incentive constraints are {res.status}")
        strict = res.x[nvar:] > 1e-9
        if not strict.any():
            break
        undecided[idx[strict]] = False
    return undecided


class RevenueProblem:
    """Everything WSO' needs for one (instance, D', oracle) triple."""

    def __init__(self, inst: Instance, dprime: EmpiricalPrior, oracle: WelfareOracle, cfg: SolverConfig):
        self.inst, self.dprime, self.oracle, self.cfg = inst, dprime, oracle, cfg
        self.T = inst.T
        self.S = inst.n_type_slots
        self.approx = ReducedFormMap(inst, dprime, oracle)
        self.G, self.h, self.names = incentive_constraints(inst)
        self.rev = revenue_row(inst)
        self.cuts: list[Hyperplane] = []  # WSO cuts in pi coordinates
        self.cut_A = np.zeros((0, self.T))
        self.cut_b = np.zeros(0)
        self.last_wso: WsoResult | None = None
        self.wso_calls = 0
        # prices live in [-n v_max, n v_max]; the outer ellipsoid works in p / scale
        self.scale = max(inst.n_items * inst.v_max, 1e-300)
        self.unscale = np.concatenate([np.ones(self.T), np.full(self.S, self.scale)])
        # Constraints that hold with equality everywhere (e.g. two types with
        # identical values) leave no interior; the ellipsoid then runs in
        # their affine hull x = origin + basis z, in scaled coordinates.
        self.equalities = implicit_equalities(self.G * self.unscale, self.h)
        if self.equalities.any():
            GE = self.G[self.equalities] * self.unscale
            self.basis = null_space(GE)
            self.origin = np.linalg.pinv(GE) @ self.h[self.equalities]
        else:
            self.basis = None
            self.origin = np.zeros(self.T + self.S)

    # coordinates ------------------------------------------------------------
    def to_point(self, z: np.ndarray) -> np.ndarray:
        y = self.origin + (z if self.basis is None else self.basis @ z)
        return y * self.unscale

    def to_z_cut(self, cut: Hyperplane) -> Hyperplane:
        a = cut.a * self.unscale
        b = cut.b - float(a @ self.origin)
        if self.basis is not None:
            a = self.basis.T @ a
            if not np.linalg.norm(a) > 1e-12 * np.linalg.norm(cut.a):
                raise _FlatCut
        return Hyperplane(a, b)

    def lift(self, cut: Hyperplane) -> Hyperplane:
        return Hyperplane(np.concatenate([cut.a, np.zeros(self.S)]), cut.b)

    # WSO' -------------------------------------------------------------------
    def revenue_cut(self, guess: float) -> Hyperplane:
        return Hyperplane(-self.rev, -guess)

    def static_cut(self, x: np.ndarray) -> Hyperplane | None:
        viol = self.G @ x - self.h
        if self.cfg.most_violated:
            viol[self.equalities] = 0.0
            k = int(np.argmax(viol))
            return Hyperplane(self.G[k], self.h[k]) if viol[k] > self.cfg.bic_tol else None
        viol[self.equalities] = 0.0
        bad = np.flatnonzero(viol > self.cfg.bic_tol)
        return Hyperplane(self.G[bad[0]], self.h[bad[0]]) if len(bad) else None

    def cached_cut(self, pi: np.ndarray) -> Hyperplane | None:
        if not len(self.cut_b):
            return None
        viol = self.cut_A @ pi - self.cut_b
        k = int(np.argmax(viol))
        return Hyperplane(self.cut_A[k], self.cut_b[k]) if viol[k] > 0 else None

    def add_cut(self, cut: Hyperplane) -> None:
        self.cuts.append(cut)
        self.cut_A = np.vstack([self.cut_A, cut.a])
        self.cut_b = np.append(self.cut_b, cut.b)

    def wso_prime(self, x: np.ndarray, guess: float) -> Hyperplane | None:
        """Revenue, then incentive constraints, then (cached cuts and) WSO on pi."""
        if float(self.rev @ x) < guess:
            return self.revenue_cut(guess)
        cut = self.static_cut(x)
        if cut is not None:
            return cut
        pi = x[: self.T]
        if self.cfg.cut_cache:
            cut = self.cached_cut(pi)
            if cut is not None:
                return self.lift(cut)
        self.wso_calls += 1
        res = wso_query(pi, self.approx, self.cfg.wso)
        if res.accepted:
            self.last_wso = res
            return None
        self.add_cut(res.hyperplane)
        return self.lift(res.hyperplane)

    def revenue_upper_bound(self) -> float:
        """max revenue subject to incentive constraints and every WSO cut seen so far."""
        A = np.vstack([self.G, np.hstack([self.cut_A, np.zeros((len(self.cut_b), self.S))])])
        b = np.concatenate([self.h, self.cut_b])
        res = lp_solve(self.rev, A, b, bounds=(None, None))
        return res.value if res.ok else -math.inf

    def dimension(self) -> int:
        return self.T + self.S if self.basis is None else self.basis.shape[1]

    def init_radius(self) -> float:
        return math.sqrt(self.T + self.S)

    def feasible_at(self, guess: float):
        """One ellipsoid run for the revenue guess; returns the accepted point or None."""
        self.last_wso = None
        dim = self.dimension()
        radius = self.init_radius()
        n_iter = self.cfg.outer_iters or default_iterations(dim, radius, self.cfg.K, self.cfg.vol_floor)

        def oracle(z: np.ndarray) -> Hyperplane | None:
            cut = self.wso_prime(self.to_point(z), guess)
            return None if cut is None else self.to_z_cut(cut)

        def hopeless(_it: int) -> bool:
            return self.revenue_upper_bound() < guess

        try:
            res = ellipsoid_feasible(
                oracle,
                radius,
                dim,
                n_iter,
                should_stop=hopeless if self.cfg.certify_every else None,
                stop_every=self.cfg.certify_every,
            )
        except _FlatCut:
            # a cut constant on the whole affine hull: nothing there meets the guess
            return EllipsoidResult(False, None, 0, stopped_early=True), None
        return res, (self.to_point(res.x) if res.accepted else None)


def wso_prime(
    point: LpPoint,
    guess_x: float,
    inst: Instance,
    dprime: EmpiricalPrior,
    oracle: WelfareOracle,
    cfg: SolverConfig | None = None,
) -> Hyperplane | None:
    """Stand-alone WSO' check of one LP point (None = accept)."""
    prob = RevenueProblem(inst, dprime, oracle, cfg or SolverConfig(cut_cache=False))
    return prob.wso_prime(point.vector, guess_x)


def null_report(inst: Instance, eps: float, alpha: float) -> SolveReport:
    return SolveReport(
        pi_star=ReducedForm.of(inst, np.zeros(inst.T)),
        p_star=PriceRule.of(inst, np.zeros(inst.n_type_slots)),
        revenue=-inst.m * eps,
        lp_revenue=0.0,
        rebate=eps,
        wso_result=None,
        guesses=[],
        alpha=alpha,
    )


def solve(
    inst: Instance,
    dprime: EmpiricalPrior,
    oracle: WelfareOracle,
    eps: float = 0.01,
    cfg: SolverConfig | None = None,
) -> SolveReport:
    """Bisect on the revenue guess over [0, m n v_max], one ellipsoid run per guess.

    The point from the highest accepted guess is returned, with every
    payment reduced by the rebate ``eps`` (so reported revenue already
    includes the m * eps loss). The accepting WSO call's query log is kept
    for the decomposition step.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    cfg = cfg or SolverConfig()
    start = time.perf_counter()
    if inst.v_max == 0:
        rep = null_report(inst, eps, oracle.alpha)
        rep.wso_result = WsoResult(True, None, [])
        return rep
    prob = RevenueProblem(inst, dprime, oracle, cfg)
    lo, hi = 0.0, inst.m * inst.n_items * inst.v_max
    guesses: list[dict] = []

    best = None

    def attempt(guess: float):
        # A point accepted earlier stays valid for every guess its revenue meets.
        if best is not None and float(prob.rev @ best[0]) >= guess:
            guesses.append({"guess": guess, "accepted": True, "iterations": 0, "certified": False, "reused": True})
            return best
        if cfg.certify_every and prob.revenue_upper_bound() < guess:
            guesses.append({"guess": guess, "accepted": False, "iterations": 0, "certified": True})
            return None
        res, x = prob.feasible_at(guess)
        guesses.append({
            "guess": guess,
            "accepted": bool(res.accepted),
            "iterations": res.iterations,
            "certified": bool(res.stopped_early),
            "degenerate": bool(res.degenerate),
        })
        log.info("guess %.6g -> %s after %d iterations", guess, res.accepted, res.iterations)
        return None if x is None else (x, prob.last_wso)

    found = attempt(lo)
    if found is None:
        raise SolverFailure("no feasible point even at revenue 0")
    best = found
    a, b = lo, hi
    for _ in range(cfg.search_bits):
        mid = (a + b) / 2
        got = attempt(mid)
        if got is None:
            b = mid
        else:
            a, best = mid, got
    x, wres = best
    point = LpPoint.from_vector(x, inst.T)
    lp_rev = float(revenue_row(inst) @ x)
    return SolveReport(
        pi_star=ReducedForm.of(inst, point.pi),
        p_star=PriceRule.of(inst, point.p),
        revenue=lp_rev - inst.m * eps,
        lp_revenue=lp_rev,
        rebate=eps,
        wso_result=wres,
        guesses=guesses,
        alpha=oracle.alpha,
        elapsed=time.perf_counter() - start,
        wso_cuts=list(prob.cuts),
    )
