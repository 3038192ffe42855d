"""Welfare-oracle plug-ins.

An oracle maps an (m, n) matrix of per-bidder, per-item values (entries may be
negative) to a feasible allocation. Internally allocations travel as boolean
masks of the same shape; :func:`mask_to_allocation` converts to the
set-of-pairs form used at the public surface.

Ties are always broken lexicographically: lowest bidder, then lowest item.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

Allocation = frozenset  # of (bidder, item) pairs

MaskFn = Callable[[np.ndarray], np.ndarray]
EnumFn = Callable[[int, int], np.ndarray]


class OracleConfigError(ValueError):
    pass


def mask_to_allocation(mask: np.ndarray) -> frozenset[tuple[int, int]]:
    return frozenset((int(i), int(j)) for i, j in zip(*np.nonzero(mask)))


def allocation_to_mask(alloc: Iterable[tuple[int, int]], m: int, n: int) -> np.ndarray:
    mask = np.zeros((m, n), dtype=bool)
    for i, j in alloc:
        mask[i, j] = True
    return mask


def welfare(values: np.ndarray, mask: np.ndarray) -> float:
    return float(np.sum(np.where(mask, values, 0.0)))


@dataclass(frozen=True)
class WelfareOracle:
    """A (possibly approximate, not necessarily truthful) welfare maximizer.

    ``allocate_mask`` must be a pure function of its input. ``batch`` is an
    optional vectorized form over a stack of (P, m, n) inputs; ``enumerate``
    lists every feasible allocation for a given (m, n) so brute-force checks
    can audit the oracle. ``spec`` is the registry entry that rebuilds the
    oracle, when one exists; mechanisms record it so they can be saved.
    """

    name: str
    allocate_mask: MaskFn
    alpha: float = 1.0
    downward_closed: bool = True
    batch: Callable[[np.ndarray], np.ndarray] | None = None
    enumerate: EnumFn | None = None
    randomized: bool = False
    info: Mapping[str, float] = field(default_factory=dict)
    spec: Mapping[str, Any] | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise OracleConfigError(f"alpha must lie in (0, 1], got {self.alpha}")

    def allocate(self, values) -> frozenset[tuple[int, int]]:
        return mask_to_allocation(self.allocate_mask(np.asarray(values, dtype=float)))

    def allocate_many(self, values: np.ndarray) -> np.ndarray:
        if self.randomized:
            raise OracleConfigError(f"{self.name} is randomized; wrap it with derandomize() first")
        if self.batch is not None:
            return self.batch(values)
        return np.stack([self.allocate_mask(v) for v in values]) if len(values) else np.zeros(
            values.shape, dtype=bool
        )


# -- feasible-allocation enumerators ----------------------------------------


def enumerate_itemwise(m: int, n: int) -> np.ndarray:
    """Every item goes to at most one bidder (order: per item, nobody first)."""
    out = []
    for owners in itertools.product(range(-1, m), repeat=n):
        mask = np.zeros((m, n), dtype=bool)
        for j, i in enumerate(owners):
            if i >= 0:
                mask[i, j] = True
        out.append(mask)
    return np.array(out)


def enumerate_matchings(m: int, n: int) -> np.ndarray:
    """All partial matchings; each bidder picks an item or nothing, in bidder order."""
    out = []

    def rec(i: int, used: frozenset, mask: np.ndarray):
        if i == m:
            out.append(mask.copy())
            return
        rec(i + 1, used, mask)
        for j in range(n):
            if j not in used:
                mask[i, j] = True
                rec(i + 1, used | {j}, mask)
                mask[i, j] = False

    rec(0, frozenset(), np.zeros((m, n), dtype=bool))
    return np.array(out)


def _first_argmax_alloc(values: np.ndarray, masks: np.ndarray) -> np.ndarray:
    flat = masks.reshape(len(masks), -1).astype(float)
    scores = values.reshape(values.shape[0], -1) @ flat.T
    return masks[np.argmax(scores, axis=1)]


def brute_force_best(values: np.ndarray, masks: np.ndarray) -> tuple[np.ndarray, float]:
    """Optimal allocation among ``masks`` (first maximizer) and its welfare."""
    best = _first_argmax_alloc(values[None], masks)[0]
    return best, welfare(values, best)


# -- built-in oracles -------------------------------------------------------


def _itemwise_batch(values: np.ndarray) -> np.ndarray:
    P, m, n = values.shape
    winners = np.argmax(values, axis=1)  # first max -> lowest bidder
    best = np.take_along_axis(values, winners[:, None, :], axis=1)[:, 0, :]
    mask = np.zeros(values.shape, dtype=bool)
    pp, jj = np.nonzero(best > 0)
    mask[pp, winners[pp, jj], jj] = True
    return mask


def exact_single_item() -> WelfareOracle:
    """Exact oracle when every item may go to at most one bidder (alpha = 1).

    Each item is given to its highest positive bidder; with one item this is
    the classic single-item argmax.
    """
    return WelfareOracle(
        name="exact_single_item",
        allocate_mask=lambda v: _itemwise_batch(np.asarray(v, dtype=float)[None])[0],
        alpha=1.0,
        batch=_itemwise_batch,
        enumerate=enumerate_itemwise,
        spec={"kind": "exact_single_item"},
    )


def _greedy_batch(values: np.ndarray) -> np.ndarray:
    P, m, n = values.shape
    work = values.reshape(P, m * n).copy()
    mask = np.zeros((P, m * n), dtype=bool)
    rows = np.arange(P)
    for _ in range(min(m, n)):
        k = np.argmax(work, axis=1)  # row-major: lowest bidder, then lowest item
        ok = work[rows, k] > 0
        if not ok.any():
            break
        mask[rows[ok], k[ok]] = True
        bi, it = np.divmod(k[ok], n)
        w3 = work.reshape(P, m, n)
        w3[rows[ok], bi, :] = -np.inf
        w3[rows[ok], :, it] = -np.inf
    return mask.reshape(P, m, n)


def greedy_matching() -> WelfareOracle:
    """Greedy 1/2-approximation for unit-demand bidders (each item to one bidder)."""
    return WelfareOracle(
        name="greedy_matching",
        allocate_mask=lambda v: _greedy_batch(np.asarray(v, dtype=float)[None])[0],
        alpha=0.5,
        batch=_greedy_batch,
        enumerate=enumerate_matchings,
        spec={"kind": "greedy_matching"},
    )


_ENUM_CACHE: dict[tuple[str, int, int], np.ndarray] = {}


def _cached_enum(key: str, fn: EnumFn, m: int, n: int) -> np.ndarray:
    k = (key, m, n)
    if k not in _ENUM_CACHE:
        _ENUM_CACHE[k] = fn(m, n)
    return _ENUM_CACHE[k]


def _matching_via_assignment(values: np.ndarray) -> np.ndarray:
    from scipy.optimize import linear_sum_assignment

    pos = np.maximum(values, 0.0)
    rows, cols = linear_sum_assignment(pos, maximize=True)
    mask = np.zeros(values.shape, dtype=bool)
    keep = values[rows, cols] > 0
    mask[rows[keep], cols[keep]] = True
    return mask


MATCHING_ENUM_LIMIT = 5000


def exact_matching(enum_limit: int = MATCHING_ENUM_LIMIT) -> WelfareOracle:
    """Maximum-weight bipartite matching on positive edges (alpha = 1).

    Small shapes are solved by enumerating matchings so the lexicographic
    tie rule holds exactly; larger ones fall back to the Hungarian method.
    """

    def batch(values: np.ndarray) -> np.ndarray:
        P, m, n = values.shape
        if math.perm(max(m, n), min(m, n)) * 2 ** min(m, n) <= enum_limit:
            masks = _cached_enum("matching", enumerate_matchings, m, n)
            pos = np.where(values > 0, values, 0.0)
            out = _first_argmax_alloc(pos, masks)
            return out & (values > 0)
        return np.stack([_matching_via_assignment(v) for v in values])

    return WelfareOracle(
        name="exact_matching",
        allocate_mask=lambda v: batch(np.asarray(v, dtype=float)[None])[0],
        alpha=1.0,
        batch=batch,
        enumerate=enumerate_matchings,
        spec={"kind": "exact_matching", **({} if enum_limit == MATCHING_ENUM_LIMIT else {"enum_limit": enum_limit})},
    )


# -- symmetric bidders (cardinality valuations) ------------------------------


def cardinality_allocate(curves: Sequence[Sequence[float]], n: int) -> tuple[int, ...]:
    """Exact welfare maximizer for bidders who only care how many items they get.

    ``curves[i][j]`` is bidder i's value for receiving j items, j = 0..n.
    Among optimal count vectors the lexicographically smallest is returned,
    so ties resolve to fewer items for earlier bidders.
    """
    curves = [list(map(float, c)) for c in curves]
    for i, c in enumerate(curves):
        if len(c) != n + 1:
            raise ValueError(f"curve {i} has length {len(c)}, expected {n + 1}")
    m = len(curves)
    tol = 1e-12
    # best[i][r]: optimum for bidders i.. with r items still available
    best = [[0.0] * (n + 1) for _ in range(m + 1)]
    for i in range(m - 1, -1, -1):
        for r in range(n + 1):
            best[i][r] = max(curves[i][j] - curves[i][0] + best[i + 1][r - j] for j in range(r + 1))
    counts = []
    r = n
    for i in range(m):
        for j in range(r + 1):
            if curves[i][j] - curves[i][0] + best[i + 1][r - j] >= best[i][r] - tol:
                counts.append(j)
                r -= j
                break
    return tuple(counts)


def enumerate_cardinality(m: int, d: int) -> np.ndarray:
    """Meta-allocations: each bidder takes at most one meta-item j (= j+1 items), total <= d."""
    out = []
    for choice in itertools.product(range(-1, d), repeat=m):
        if sum(c + 1 for c in choice) <= d:
            mask = np.zeros((m, d), dtype=bool)
            for i, c in enumerate(choice):
                if c >= 0:
                    mask[i, c] = True
            out.append(mask)
    return np.array(out)


def symmetric_bidders_dp(n: int) -> WelfareOracle:
    """Exact oracle over the n meta-items of a symmetric-bidder auction.

    Column j of the input holds a bidder's value for receiving j+1 items
    (the curve with V(0) = 0 dropped). Negative entries are fine.
    """

    def allocate_mask(values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        m, d = values.shape
        if d != n:
            raise ValueError(f"expected {n} meta-items, got {d}")
        curves = [[0.0, *row] for row in values]
        counts = cardinality_allocate(curves, n)
        mask = np.zeros((m, n), dtype=bool)
        for i, c in enumerate(counts):
            if c > 0:
                mask[i, c - 1] = True
        return mask

    return WelfareOracle(
        name="symmetric_bidders_dp",
        allocate_mask=allocate_mask,
        alpha=1.0,
        enumerate=enumerate_cardinality,
        spec={"kind": "symmetric_bidders_dp", "n": n},
    )


# -- meta-settings ------------------------------------------------------------


@dataclass(frozen=True)
class MetaSetting:
    """A real setting re-expressed over ``d`` meta-items with additive bidders.

    ``g`` maps real allocations (bidder -> frozenset of items) to meta
    allocations (set of (bidder, meta-item) pairs); ``h`` goes back.
    """

    d: int
    g: Callable[[Mapping[int, frozenset]], frozenset]
    h: Callable[[Iterable[tuple[int, int]]], dict[int, frozenset]]
    meta_oracle: WelfareOracle
    feasible: Callable[[np.ndarray], bool]


def _independent_set_greedy(conflict: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Greedy by value over a conflict structure on (bidder, meta-item) pairs."""

    def allocate_mask(values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        m, d = values.shape
        flat = values.reshape(-1)
        order = sorted(range(m * d), key=lambda k: (-flat[k], k))
        chosen: list[int] = []
        for k in order:
            if flat[k] <= 0:
                break
            if all(not conflict[k, c] for c in chosen):
                chosen.append(k)
        mask = np.zeros(m * d, dtype=bool)
        mask[chosen] = True
        return mask.reshape(m, d)

    return allocate_mask


def _meta_setting(demand_lists: Sequence[Sequence[Iterable[int]]], d: int) -> MetaSetting:
    lists = [[frozenset(s) for s in lst] for lst in demand_lists]
    m = len(lists)
    for i, lst in enumerate(lists):
        if not lst:
            raise ValueError(f"bidder {i}: empty demand list")
        if len(lst) > d:
            raise ValueError(f"bidder {i}: more than {d} demand sets")
        for s in lst:
            if not s:
                raise ValueError(f"bidder {i}: empty demand set")

    def pair_set(i: int, j: int) -> frozenset | None:
        return lists[i][j] if j < len(lists[i]) else None

    # conflict[(i,a),(k,b)]: same bidder, or overlapping bundles, or an undefined slot
    conflict = np.zeros((m * d, m * d), dtype=bool)
    for i, a, k, b in itertools.product(range(m), range(d), range(m), range(d)):
        if (i, a) == (k, b):
            continue
        sa, sb = pair_set(i, a), pair_set(k, b)
        conflict[i * d + a, k * d + b] = i == k or sa is None or sb is None or bool(sa & sb)

    def feasible(mask: np.ndarray) -> bool:
        ks = np.flatnonzero(mask.reshape(-1))
        if any(pair_set(k // d, k % d) is None for k in ks):
            return False
        return not any(conflict[a, b] for a in ks for b in ks if a != b)

    def enumerate_fn(mm: int, dd: int) -> np.ndarray:
        out = []
        for choice in itertools.product(range(-1, d), repeat=m):
            mask = np.zeros((m, d), dtype=bool)
            for i, c in enumerate(choice):
                if c >= 0:
                    mask[i, c] = True
            if feasible(mask):
                out.append(mask)
        return np.array(out)

    def g(real: Mapping[int, frozenset]) -> frozenset:
        out = set()
        for i, items in real.items():
            items = frozenset(items)
            if items and items in lists[i]:
                out.add((i, lists[i].index(items)))
        return frozenset(out)

    def h(meta: Iterable[tuple[int, int]]) -> dict[int, frozenset]:
        return {i: lists[i][j] for i, j in meta}

    greedy = _independent_set_greedy(conflict)
    oracle = WelfareOracle(
        name="meta_greedy",
        allocate_mask=greedy,
        alpha=1.0 / max(1, max(len(s) for lst in lists for s in lst)) if d == 1 else 1.0 / (
            1 + max(len(s) for lst in lists for s in lst)
        ),
        enumerate=enumerate_fn,
    )
    return MetaSetting(d=d, g=g, h=h, meta_oracle=oracle, feasible=feasible)


def single_minded_meta(demand_sets: Sequence[Iterable[int]]) -> MetaSetting:
    """One meta-item; bidder i holding it means receiving bundle S_i.

    The meta oracle is greedy by value over the conflict graph, whose
    worst-case ratio is 1/max|S_i| (a conflicting neighbour set of the greedy
    pick contains at most |S_i| pairwise-disjoint bundles).
    """
    return _meta_setting([[s] for s in demand_sets], 1)


def d_minded_meta(demand_lists: Sequence[Sequence[Iterable[int]]]) -> MetaSetting:
    """Meta-item j of bidder i stands for bundle S_ij; unit demand over meta-items."""
    d = max(len(lst) for lst in demand_lists)
    return _meta_setting(demand_lists, d)


def symmetric_meta(m: int, n: int) -> MetaSetting:
    """Meta-setting for cardinality bidders: meta-item j means exactly j+1 items."""

    def g(real: Mapping[int, frozenset]) -> frozenset:
        return frozenset((i, len(items) - 1) for i, items in real.items() if items)

    def h(meta: Iterable[tuple[int, int]]) -> dict[int, frozenset]:
        out, nxt = {}, 0
        for i, j in sorted(meta):
            out[i] = frozenset(range(nxt, nxt + j + 1))
            nxt += j + 1
        return out

    def feasible(mask: np.ndarray) -> bool:
        return bool((mask.sum(axis=1) <= 1).all() and (np.nonzero(mask)[1] + 1).sum() <= n)

    return MetaSetting(d=n, g=g, h=h, meta_oracle=symmetric_bidders_dp(n), feasible=feasible)


# -- wrappers -----------------------------------------------------------------


def clamp_negative_wrapper(inner: WelfareOracle) -> WelfareOracle:
    """Make a non-negative-input oracle safe for arbitrary-sign inputs.

    Negative coordinates are zeroed before the call and any pair whose
    original coordinate was negative is un-allocated afterwards. Only valid
    for downward-closed feasibility.
    """
    if not inner.downward_closed:
        raise OracleConfigError(f"{inner.name} is not downward-closed; clamping would break feasibility")

    def allocate_mask(values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.asarray(inner.allocate_mask(np.maximum(values, 0.0)), dtype=bool) & (values >= 0)

    def clamped_batch(values: np.ndarray) -> np.ndarray:
        return inner.batch(np.maximum(values, 0.0)) & (values >= 0)

    return WelfareOracle(
        name=f"clamped({inner.name})",
        allocate_mask=allocate_mask,
        alpha=inner.alpha,
        downward_closed=True,
        batch=clamped_batch if inner.batch is not None else None,
        enumerate=inner.enumerate,
        randomized=inner.randomized,
        spec=None if inner.spec is None else {**inner.spec, "clamp_negative": True},
    )


def derandomize_trials(gamma: float, bit_budget: int, tau: float) -> int:
    """Trials needed so the best-of-trials oracle is (alpha - gamma)-good on all
    inputs of ``bit_budget`` bits with probability >= 1 - 2**-tau."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return math.ceil((bit_budget + tau) * math.log(2) / gamma)


def derandomize_gamma(trials: int, eta: float) -> float:
    """Slack gamma for which one input fails with probability <= eta, since
    (1 - gamma)**trials <= exp(-gamma * trials)."""
    return math.log(1.0 / eta) / trials


def derandomize(
    inner: WelfareOracle, trials: int, seed: int, eta: float = 1e-6
) -> WelfareOracle:
    """Turn a randomized oracle into a deterministic one.

    ``inner.allocate_mask`` must accept ``(values, rng)`` when randomized.
    Randomness for every trial is fixed up front from ``seed``; each call
    replays the same trials and keeps the highest-welfare allocation
    (earliest trial on ties). The reported ``gamma`` is the approximation
    slack achieved with per-input failure probability ``eta``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    trial_seeds = [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(trials)]

    def allocate_mask(values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if not inner.randomized:
            return np.asarray(inner.allocate_mask(values), dtype=bool)
        best, best_w = None, -math.inf
        for s in trial_seeds:
            mask = np.asarray(inner.allocate_mask(values, np.random.default_rng(s)), dtype=bool)
            w = welfare(values, mask)
            if w > best_w:
                best, best_w = mask, w
        return best

    gamma = min(inner.alpha, derandomize_gamma(trials, eta))
    return WelfareOracle(
        name=f"derandomized({inner.name})",
        allocate_mask=allocate_mask,
        alpha=inner.alpha,
        downward_closed=inner.downward_closed,
        batch=inner.batch if not inner.randomized else None,
        enumerate=inner.enumerate,
        randomized=False,
        info={"gamma": gamma, "trials": trials, "eta": eta},
    )


def uniform_random_bidder(m: int = 2) -> WelfareOracle:
    """Randomized rule: each item goes to a uniformly random bidder (if they value it).

    Only useful as a test subject for :func:`derandomize`; with ``m``
    bidders it is a 1/m approximation in expectation on non-negative inputs.
    """

    def allocate_mask(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        m, n = values.shape
        mask = np.zeros((m, n), dtype=bool)
        for j in range(n):
            mask[rng.integers(m), j] = True
        return mask & (values > 0)

    return WelfareOracle(
        name="uniform_random_bidder",
        allocate_mask=allocate_mask,  # type: ignore[arg-type]
        alpha=1.0 / m,
        randomized=True,
        enumerate=enumerate_itemwise,
    )


# -- registry -------------------------------------------------------------------

_REGISTRY: dict[str, Callable[..., WelfareOracle]] = {
    "exact_single_item": exact_single_item,
    "greedy_matching": greedy_matching,
    "exact_matching": exact_matching,
    "symmetric_bidders_dp": symmetric_bidders_dp,
}


def register_oracle(kind: str, factory: Callable[..., WelfareOracle]) -> None:
    _REGISTRY[kind] = factory


def registered_kinds() -> list[str]:
    return sorted(_REGISTRY)


def oracle_from_spec(spec: Mapping | str, n_items: int | None = None) -> WelfareOracle:
    """Resolve an instance's ``welfare_oracle`` entry to an oracle object."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind not in _REGISTRY:
        raise KeyError(f"unknown welfare oracle {kind!r}; known: {registered_kinds()}")
    params = {k: v for k, v in spec.items() if k not in ("kind", "clamp_negative")}
    if kind == "symmetric_bidders_dp" and "n" not in params:
        params["n"] = n_items
    oracle = _REGISTRY[kind](**params)
    if spec.get("clamp_negative"):
        oracle = clamp_negative_wrapper(oracle)
    return replace(oracle, spec=dict(spec))
