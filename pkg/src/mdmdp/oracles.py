"""Ground-truth and audit tools: optimal revenue by brute force, Border's
condition, interim-feasibility enumeration, hull distances, and incentive audits."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .decompose import atom_allocations, check_compatible, exact_interim, mechanism_oracle
from .ellipsoid import lp_solve
from .model import Instance, Mechanism, PriceRule, ReducedForm
from .revenue import incentive_constraints, revenue_row
from .sampling import exhaustive_dprime
from .welfare import oracle_from_spec

MAX_LP_VARS = 100_000


class GuardExceeded(ValueError):
    pass


def _support(inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    return exhaustive_dprime(inst).support


def _enumerator(inst: Instance, masks: np.ndarray | None) -> np.ndarray:
    if masks is not None:
        return np.asarray(masks, dtype=bool)
    oracle = oracle_from_spec(inst.welfare_oracle, inst.n_items)
    if oracle.enumerate is None:
        raise GuardExceeded(f"oracle {oracle.name!r} has no feasibility enumerator")
    return oracle.enumerate(inst.m, inst.n_items)


def _interim_map(inst: Instance, profiles: np.ndarray, probs: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """(T, P*F) matrix sending ex-post lotteries x(profile, allocation) to the reduced form."""
    n, F = inst.n_items, len(masks)
    slots = inst.slot_offsets()[None, :] + profiles
    slot_mass = np.bincount(slots.reshape(-1), weights=np.repeat(probs, inst.m), minlength=inst.n_type_slots)
    M = np.zeros((inst.T, len(profiles) * F))
    for p, prof in enumerate(profiles):
        for i in range(inst.m):
            rows = slots[p, i] * n + np.arange(n)
            M[rows, p * F : (p + 1) * F] += masks[:, i, :].T * (probs[p] / slot_mass[slots[p, i]])
    return M


@dataclass
class OptResult:
    revenue: float
    pi: ReducedForm
    prices: PriceRule
    lottery: np.ndarray  # (P, F) ex-post allocation probabilities
    profiles: np.ndarray
    allocations: np.ndarray


def brute_force_opt(inst: Instance, masks: np.ndarray | None = None) -> OptResult:
    """Optimal BIC/IR revenue under D by the full ex-post LP over feasible allocations."""
    masks = _enumerator(inst, masks)
    profiles, probs = _support(inst)
    P, F, S = len(profiles), len(masks), inst.n_type_slots
    if P * F + S > MAX_LP_VARS:
        raise GuardExceeded(f"ex-post LP would need {P * F + S} variables")
    if inst.v_max == 0:
        lottery = np.zeros((P, F))
        lottery[:, 0] = 1.0
        return OptResult(0.0, ReducedForm.of(inst, np.zeros(inst.T)), PriceRule.of(inst, np.zeros(S)),
                         lottery, profiles, masks)
    M = _interim_map(inst, profiles, probs, masks)
    G, h, _ = incentive_constraints(inst, with_boxes=False)
    # x = (lottery, p); rows G_pi M lottery + G_p p <= h, plus one simplex row per profile
    G_pi, G_p = G[:, : inst.T], G[:, inst.T :]
    A_ub = np.hstack([G_pi @ M, G_p])
    A_eq = np.zeros((P, P * F + S))
    for p in range(P):
        A_eq[p, p * F : (p + 1) * F] = 1.0
    A = np.vstack([A_ub, A_eq])
    b = np.concatenate([h, np.ones(P)])
    eq = np.concatenate([np.zeros(len(h), dtype=bool), np.ones(P, dtype=bool)])
    c = np.concatenate([np.zeros(P * F), revenue_row(inst)[inst.T :]])
    bounds = [(0, None)] * (P * F) + [(None, None)] * S
    res = lp_solve(c, A, b, eq_rows=eq, bounds=bounds)
    if not res.ok:
        raise RuntimeError(f"ex-post LP ended {res.status}")
    x = res.x[: P * F]
    return OptResult(
        revenue=res.value,
        pi=ReducedForm.of(inst, M @ x),
        prices=PriceRule.of(inst, res.x[P * F :]),
        lottery=x.reshape(P, F),
        profiles=profiles,
        allocations=masks,
    )


def border_feasible(pi: ReducedForm | np.ndarray, inst: Instance, tol: float = 1e-9) -> bool:
    """Border's condition for single-item interim rules under independent types.

    Up to 20 (bidder, type) slots every set is checked; beyond that only
    sets that are, per bidder, the types with the largest pi (which suffice).
    """
    if inst.n_items != 1:
        raise ValueError("Border's condition applies to single-item instances only")
    v = pi.values if isinstance(pi, ReducedForm) else np.asarray(pi, dtype=float)
    offsets = inst.slot_offsets()
    per_bidder = []
    for i, k in enumerate(inst.type_counts):
        pr = inst.probs(i)
        block = v[offsets[i] : offsets[i] + k]
        if inst.n_type_slots <= 20:
            subsets = itertools.product([False, True], repeat=k)
            chosen = np.array(list(subsets), dtype=bool)
        else:
            order = np.argsort(-block, kind="stable")
            chosen = np.zeros((k + 1, k), dtype=bool)
            for r in range(1, k + 1):
                chosen[r, order[:r]] = True
        lhs = chosen @ (pr * block)
        miss = 1.0 - chosen @ pr
        per_bidder.append((lhs, miss))
    lhs, miss = per_bidder[0]
    for l2, m2 in per_bidder[1:]:
        lhs = (lhs[:, None] + l2[None, :]).reshape(-1)
        miss = (miss[:, None] * m2[None, :]).reshape(-1)
    return bool(np.all(lhs <= 1.0 - miss + tol))


def enumerate_feasible_interim(
    inst: Instance,
    masks: np.ndarray | None = None,
    support: tuple[np.ndarray, np.ndarray] | None = None,
    max_profiles: int = 4,
    max_allocations: int = 8,
) -> np.ndarray:
    """Reduced forms of every deterministic allocation rule (one allocation per profile).

    Their convex hull is the set of feasible reduced forms. Rows are unique
    and sorted.
    """
    masks = _enumerator(inst, masks)
    profiles, probs = support if support is not None else _support(inst)
    P, F = len(profiles), len(masks)
    if P > max_profiles or F > max_allocations:
        raise GuardExceeded(f"{P} profiles x {F} allocations exceeds the enumeration guard")
    M = _interim_map(inst, profiles, probs, masks)
    rules = np.array(list(itertools.product(range(F), repeat=P)), dtype=int)
    cols = rules + np.arange(P)[None, :] * F
    pts = M[:, cols].sum(axis=2).T
    return np.unique(np.round(pts, 12), axis=0)


def support_values(inst: Instance, W: np.ndarray, masks: np.ndarray | None = None,
                   support: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """max over feasible reduced forms x of w.x for each row w of W, by per-profile brute force.

    The maximum over the hull is attained at a deterministic rule, and a
    deterministic rule can pick its allocation profile by profile.
    """
    masks = _enumerator(inst, masks)
    profiles, probs = support if support is not None else _support(inst)
    M = _interim_map(inst, profiles, probs, masks)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    gains = (W @ M).reshape(len(W), len(profiles), len(masks))
    return gains.max(axis=2).sum(axis=1)


def support_value(inst: Instance, w: np.ndarray, masks: np.ndarray | None = None,
                  support: tuple[np.ndarray, np.ndarray] | None = None) -> float:
    return float(support_values(inst, w, masks, support)[0])


def hull_distance(points: np.ndarray, x: np.ndarray) -> float:
    """L-infinity distance from x to the convex hull of the rows of ``points``."""
    points = np.asarray(points, dtype=float)
    K, T = points.shape
    # variables: lambda (K), s; minimize s with |points^T lambda - x| <= s
    c = np.concatenate([np.zeros(K), [-1.0]])
    ones = np.ones((T, 1))
    A = np.vstack([
        np.hstack([points.T, -ones]),
        np.hstack([-points.T, -ones]),
        np.concatenate([np.ones(K), [0.0]])[None, :],
    ])
    b = np.concatenate([x, -x, [1.0]])
    eq = np.zeros(2 * T + 1, dtype=bool)
    eq[-1] = True
    res = lp_solve(c, A, b, eq_rows=eq)
    return max(0.0, -res.value)


def in_hull(points: np.ndarray, x: np.ndarray, tol: float = 1e-9) -> bool:
    return hull_distance(points, x) <= tol


@dataclass
class RegretReport:
    """Interim incentive audit under the true prior.

    ``regret[s, r]`` is the gain of type slot s from reporting slot r (same
    bidder). ``regret_vmax`` normalizes the worst gain by v_max;
    ``regret_items`` by v_max * max(1, items the type expects to win).
    """

    regret: np.ndarray
    stderr: np.ndarray
    ir_slack: np.ndarray
    ir_stderr: np.ndarray
    max_regret: float
    max_regret_stderr: float
    regret_vmax: float
    regret_items: float
    min_ir_slack: float
    samples: int | None

    def to_dict(self) -> dict:
        return {
            "max_regret": self.max_regret,
            "max_regret_stderr": self.max_regret_stderr,
            "regret_over_vmax": self.regret_vmax,
            "regret_over_vmax_items": self.regret_items,
            "min_ir_slack": self.min_ir_slack,
            "samples": self.samples,
        }


def _utilities(inst: Instance, interim: np.ndarray, prices: np.ndarray, rebate: float) -> np.ndarray:
    """U[s, r]: expected utility of type slot s reporting slot r (same bidder only, else nan)."""
    S, n = inst.n_type_slots, inst.n_items
    U = np.full((S, S), np.nan)
    off = inst.slot_offsets()
    pi = interim.reshape(S, n)
    for i in range(inst.m):
        sl = slice(off[i], off[i] + inst.type_counts[i])
        V = inst.values(i)
        U[sl, sl] = V @ pi[sl].T - prices[sl][None, :] + rebate
    return U


def _audit(inst, U, se, items_won, samples) -> RegretReport:
    truthful = np.diag(U)
    regret = U - truthful[:, None]
    ir = truthful
    vmax = inst.v_max if inst.v_max > 0 else 1.0
    reg = np.where(np.isnan(regret), -np.inf, regret)
    s, r = np.unravel_index(int(np.argmax(reg)), reg.shape)
    max_regret = max(0.0, float(reg[s, r]))
    max_se = float(se[s, r]) if max_regret > 0 else 0.0
    per_slot = np.nanmax(np.where(np.isnan(regret), -np.inf, regret), axis=1).clip(0.0)
    scale_items = vmax * np.maximum(1.0, items_won)
    return RegretReport(
        regret=regret,
        stderr=se,
        ir_slack=ir,
        ir_stderr=np.diag(se) if samples else np.zeros(len(ir)),
        max_regret=max_regret,
        max_regret_stderr=max_se,
        regret_vmax=max_regret / vmax,
        regret_items=float(np.max(per_slot / scale_items)),
        min_ir_slack=float(ir.min()),
        samples=samples,
    )


def verify_bic_regret(
    mech: Mechanism,
    inst: Instance,
    samples: int | None = None,
    seed: int = 0,
) -> RegretReport:
    """Incentive audit of a mechanism under the instance's prior D.

    ``samples=None`` computes interim utilities exactly by enumerating the
    support of D. Otherwise each sample draws the other bidders' types and
    an atom, and every misreport of every bidder is evaluated on that same
    draw, so regret estimates are paired differences with their own
    standard errors.
    """
    check_compatible(mech, inst)
    n, S = inst.n_items, inst.n_type_slots
    prices = mech.prices.values
    if samples is None:
        interim = exact_interim(mech, inst, _support(inst))
        U = _utilities(inst, interim, prices, mech.rebate)
        items = interim.reshape(S, n).sum(axis=1)
        return _audit(inst, U, np.zeros((S, S)), items, None)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    oracle = mechanism_oracle(mech, inst)
    off = inst.slot_offsets()
    base = np.stack([rng.choice(k, size=samples, p=inst.probs(i)) for i, k in enumerate(inst.type_counts)], axis=1)
    atoms = rng.choice(len(mech.mixture), size=samples, p=mech.lambdas)
    # won[q, s, :] = items bidder(s) wins on draw q when reporting slot s
    won = np.zeros((samples, S, n))
    for i in range(inst.m):
        for b in range(inst.type_counts[i]):
            prof = base.copy()
            prof[:, i] = b
            for k in np.unique(atoms):
                sel = atoms == k
                won[sel, off[i] + b] = atom_allocations(mech, inst, prof[sel], int(k), oracle)[:, i, :]
    U = np.full((S, S), np.nan)
    se = np.zeros((S, S))
    items = np.zeros(S)
    for i in range(inst.m):
        V = inst.values(i)
        sl = range(off[i], off[i] + inst.type_counts[i])
        for v_idx, s in enumerate(sl):
            util = {r: won[:, r, :] @ V[v_idx] - prices[r] + mech.rebate for r in sl}
            items[s] = won[:, s, :].sum(axis=1).mean()
            for r in sl:
                U[s, r] = util[r].mean()
                diff = util[r] - util[s] if r != s else util[s]
                se[s, r] = diff.std(ddof=1) / np.sqrt(samples) if samples > 1 else np.inf
    return _audit(inst, U, se, items, samples)


def verify_alpha(oracle, m: int, n: int, masks: np.ndarray | None = None, trials: int = 2000, seed: int = 0) -> float:
    """Worst observed welfare ratio of ``oracle`` against brute force on (m, n) inputs.

    Inputs are random matrices (non-negative and mixed-sign), integer
    matrices with many ties, and the near-tie family where taking the
    single largest entry first loses half the welfare. An observed ratio
    is an upper bound on the oracle's true guarantee.
    """
    from .welfare import brute_force_best, welfare

    masks = masks if masks is not None else oracle.enumerate(m, n)
    rng = np.random.default_rng(seed)
    inputs = [rng.random((m, n)) for _ in range(trials // 2)]
    inputs += [rng.uniform(-1, 1, (m, n)) for _ in range(trials // 4)]
    inputs += [rng.integers(0, 4, (m, n)).astype(float) for _ in range(trials - len(inputs))]
    if min(m, n) >= 2:
        for gap in (1e-3, 1e-6):
            trap = np.zeros((m, n))
            trap[0, 0], trap[0, 1], trap[1, 0] = 1 + gap, 1.0, 1.0
            inputs.append(trap)
    worst = 1.0
    for v in inputs:
        _, best = brute_force_best(v, masks)
        if best <= 1e-12:
            continue
        got = welfare(v, oracle.allocate_mask(v))
        worst = min(worst, got / best)
    return worst
