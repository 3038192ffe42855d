"""Turning an accepted reduced form into an executable mechanism."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ellipsoid import lp_solve
from .model import Instance, Mechanism, PriceRule, ReducedForm, reduced_form_index
from .reduced_form import EmpiricalPrior, ReducedFormMap
from .welfare import WelfareOracle, mask_to_allocation, oracle_from_spec
from .wso import QueryRecord

DECOMP_TOL = 1e-6
PRUNE_BELOW = 1e-12


class DecompositionFailure(RuntimeError):
    """The target is not (numerically) in the hull of the logged oracle points."""

    def __init__(self, residual: float, tol: float):
        super().__init__(f"decomposition residual {residual:.3e} exceeds tolerance {tol:.1e}")
        self.residual = residual
        self.tol = tol


@dataclass
class Decomposition:
    lambdas: np.ndarray
    weights: np.ndarray  # (K, T) virtual weights, one row per atom
    points: np.ndarray  # (K, T) reduced forms of the atoms
    residual: float
    pruned_mass: float = 0.0

    def reconstruct(self) -> np.ndarray:
        return self.lambdas @ self.points


def convex_decompose(
    pi_star: ReducedForm | np.ndarray,
    log: Sequence[QueryRecord],
    tol: float = DECOMP_TOL,
) -> Decomposition:
    """Write pi_star as sum_k lambda_k R(w_k) over the logged queries.

    Solved as an LP minimizing the L1 slack of the reconstruction. Atoms with
    weight below 1e-12 are dropped and the rest renormalized; the reported
    residual is measured after that.
    """
    target = pi_star.values if isinstance(pi_star, ReducedForm) else np.asarray(pi_star, dtype=float)
    if not log:
        raise DecompositionFailure(float(np.max(np.abs(target), initial=0.0)), tol)
    points = np.array([q.point for q in log], dtype=float)
    weights = np.array([q.w for q in log], dtype=float)
    K, T = points.shape
    # variables: lambda (K), slack+ (T), slack- (T)
    c = np.concatenate([np.zeros(K), -np.ones(2 * T)])
    eye = np.eye(T)
    A = np.vstack([
        np.hstack([points.T, eye, -eye]),
        np.concatenate([np.ones(K), np.zeros(2 * T)])[None, :],
    ])
    b = np.concatenate([target, [1.0]])
    res = lp_solve(c, A, b, eq_rows=np.ones(T + 1, dtype=bool))
    if not res.ok:
        raise DecompositionFailure(float("inf"), tol)
    lam = np.clip(res.x[:K], 0.0, None)
    keep = lam >= PRUNE_BELOW
    pruned = float(lam[~keep].sum())
    lam = lam[keep] / lam[keep].sum()
    points, weights = points[keep], weights[keep]
    residual = float(np.max(np.abs(lam @ points - target), initial=0.0))
    if residual > tol:
        raise DecompositionFailure(residual, tol)
    return Decomposition(lam, weights, points, residual, pruned)


def assemble_mechanism(
    decomposition: Decomposition | Sequence[tuple[float, np.ndarray]],
    p_star: PriceRule,
    rebate: float,
    inst: Instance,
    marginals: np.ndarray,
    oracle: WelfareOracle | None = None,
) -> Mechanism:
    """Package a decomposition as a mechanism.

    ``oracle`` is the one the atoms were computed with; without it the
    instance's declared oracle is assumed.
    """
    if isinstance(decomposition, Decomposition):
        mixture = tuple(zip(decomposition.lambdas.tolist(), decomposition.weights))
    else:
        mixture = tuple(decomposition)
    return Mechanism(
        mixture=mixture,
        prices=p_star,
        rebate=rebate,
        index=tuple(reduced_form_index(inst)),
        marginals=np.asarray(marginals, dtype=float),
        welfare_oracle=dict(inst.welfare_oracle) if oracle is None else oracle_spec(oracle),
        oracle=oracle,
    )


def oracle_spec(oracle: WelfareOracle) -> dict:
    """Registry entry for ``oracle``; unregistered oracles get a marker that fails on reload."""
    if oracle.spec is not None:
        return dict(oracle.spec)
    return {"kind": oracle.name, "unregistered": True}


def decompose_solution(report, inst: Instance, dprime: EmpiricalPrior, oracle: WelfareOracle,
                       tol: float = DECOMP_TOL) -> Mechanism:
    """Decompose a SolveReport's pi_star and attach the mechanism to it.

    An empty query log only happens when WSO never queried the oracle; the
    all-negative weight vector (whose reduced form is zero for downward-closed
    oracles) is then the only atom offered.
    """
    approx = ReducedFormMap(inst, dprime, oracle)
    log = list(report.query_log)
    if not log:
        w = -np.ones(inst.T)
        log = [QueryRecord(w, 0.0, approx(w))]
    dec = convex_decompose(report.pi_star, log, tol)
    mech = assemble_mechanism(dec, report.p_star, report.rebate, inst, approx.slot_marginals, oracle)
    report.mechanism = mech
    report.residual = dec.residual
    return mech


def mechanism_oracle(mech: Mechanism, inst: Instance) -> WelfareOracle:
    if mech.oracle is not None:
        return mech.oracle
    return oracle_from_spec(mech.welfare_oracle, inst.n_items)


def check_compatible(mech: Mechanism, inst: Instance) -> None:
    if mech.index != tuple(reduced_form_index(inst)):
        raise ValueError("mechanism and instance use different reduced-form index sets")
    if mech.prices.index != tuple((i, t.label) for i in range(inst.m) for t in inst.types[i]):
        raise ValueError("mechanism and instance use different price index sets")


def atom_allocations(
    mech: Mechanism, inst: Instance, profiles: np.ndarray, atom: int, oracle: WelfareOracle | None = None
) -> np.ndarray:
    """(P, m, n) allocation masks of atom ``atom`` on the given type-index profiles."""
    oracle = oracle or mechanism_oracle(mech, inst)
    n = inst.n_items
    slot = inst.slot_offsets()[None, :] + np.asarray(profiles, dtype=int)
    entry = slot[:, :, None] * n + np.arange(n)[None, None, :]
    f = mech.mixture[atom][1] / np.repeat(mech.marginals, n)
    return oracle.allocate_many(f[entry])


def run_mechanism(
    mech: Mechanism,
    inst: Instance,
    reported: Sequence[str],
    rng_seed: int | np.random.Generator = 0,
) -> tuple[frozenset, np.ndarray]:
    """Run the mechanism once on reported type labels: (allocation, payments)."""
    check_compatible(mech, inst)
    if len(reported) != inst.m:
        raise ValueError(f"expected {inst.m} reports, got {len(reported)}")
    profile = np.array([[inst.type_index(i, lab) for i, lab in enumerate(reported)]])
    rng = np.random.default_rng(rng_seed)
    k = int(rng.choice(len(mech.mixture), p=mech.lambdas))
    mask = atom_allocations(mech, inst, profile, k)[0]
    slots = inst.slot_offsets() + profile[0]
    payments = mech.prices.values[slots] - mech.rebate
    return mask_to_allocation(mask), payments


@dataclass
class SimulationReport:
    draws: int
    revenue: float
    revenue_stderr: float
    interim: np.ndarray  # per reduced-form entry
    interim_stderr: np.ndarray
    type_counts: np.ndarray  # draws in which each (bidder, type) slot occurred

    def to_dict(self, inst: Instance) -> dict:
        return {
            "schema": "mdmdp.simulation/1",
            "draws": self.draws,
            "revenue": self.revenue,
            "revenue_stderr": self.revenue_stderr,
            "interim": [
                {"bidder": i, "type": lab, "item": j, "estimate": float(v), "stderr": float(s)}
                for (i, lab, j), v, s in zip(reduced_form_index(inst), self.interim, self.interim_stderr)
            ],
        }


def simulate(
    mech: Mechanism,
    inst: Instance,
    draws: int,
    seed: int = 0,
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
) -> SimulationReport:
    """Monte Carlo over truthful profiles from D (or ``sampler``): revenue and interim estimates.

    Each draw samples a profile and an atom, then runs the oracle; draws are
    grouped by atom so every atom is one batched oracle call.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    check_compatible(mech, inst)
    rng = np.random.default_rng(seed)
    if sampler is None:
        profiles = np.stack(
            [rng.choice(k, size=draws, p=inst.probs(i)) for i, k in enumerate(inst.type_counts)], axis=1
        )
    else:
        profiles = np.asarray(sampler(rng, draws), dtype=int)
    atoms = rng.choice(len(mech.mixture), size=draws, p=mech.lambdas)
    oracle = mechanism_oracle(mech, inst)
    m, n = inst.m, inst.n_items
    masks = np.zeros((draws, m, n), dtype=bool)
    for k in np.unique(atoms):
        sel = atoms == k
        masks[sel] = atom_allocations(mech, inst, profiles[sel], int(k), oracle)
    slots = inst.slot_offsets()[None, :] + profiles
    pay = (mech.prices.values[slots] - mech.rebate).sum(axis=1)
    S = inst.n_type_slots
    counts = np.bincount(slots.reshape(-1), minlength=S).astype(float)
    entry = (slots[:, :, None] * n + np.arange(n)).reshape(-1)
    hits = np.bincount(entry, weights=masks.reshape(-1).astype(float), minlength=inst.T)
    denom = np.repeat(np.maximum(counts, 1.0), n)
    est = hits / denom
    se = np.sqrt(est * (1 - est) / denom)
    return SimulationReport(
        draws=draws,
        revenue=float(pay.mean()),
        revenue_stderr=float(pay.std(ddof=1) / np.sqrt(draws)) if draws > 1 else float("nan"),
        interim=est,
        interim_stderr=se,
        type_counts=counts,
    )


def exact_interim(mech: Mechanism, inst: Instance, support: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Exact reduced form of the mechanism over an explicit (profiles, probabilities) support."""
    profiles, probs = support
    oracle = mechanism_oracle(mech, inst)
    n = inst.n_items
    slots = inst.slot_offsets()[None, :] + profiles
    entry = (slots[:, :, None] * n + np.arange(n)).reshape(-1)
    won = np.zeros(inst.T)
    for k, (lam, _) in enumerate(mech.mixture):
        masks = atom_allocations(mech, inst, profiles, k, oracle)
        mass = masks * probs[:, None, None]
        won += lam * np.bincount(entry, weights=mass.reshape(-1), minlength=inst.T)
    slot_mass = np.bincount(slots.reshape(-1), weights=np.repeat(probs, inst.m), minlength=inst.n_type_slots)
    return won / np.repeat(slot_mass, n)
