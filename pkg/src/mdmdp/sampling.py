"""Building the proxy distribution D' from D, or from samples alone."""

from __future__ import annotations

import itertools
import logging
import math
from typing import Callable, Sequence

import numpy as np

from .model import Instance, Type, validate_instance, instance_to_dict
from .reduced_form import EmpiricalPrior

log = logging.getLogger(__name__)

EXHAUSTIVE_CAP = 100_000


def support_size(inst: Instance) -> int:
    return math.prod(inst.type_counts)


def exhaustive_dprime(inst: Instance) -> EmpiricalPrior:
    """D' = D: every profile of the product support with its product probability."""
    profiles = np.array(list(itertools.product(*[range(k) for k in inst.type_counts])), dtype=int)
    probs = np.ones(len(profiles))
    for i in range(inst.m):
        probs *= inst.probs(i)[profiles[:, i]]
    return EmpiricalPrior(profiles, inst.type_counts, weights=probs, exhaustive=True)


def sample_profiles(inst: Instance, count: int, rng: np.random.Generator) -> np.ndarray:
    cols = [rng.choice(k, size=count, p=inst.probs(i)) for i, k in enumerate(inst.type_counts)]
    return np.stack(cols, axis=1).astype(int)


def build_dprime(
    inst: Instance,
    count: int | None = None,
    seed: int = 0,
    exhaustive: bool | None = None,
    cap: int = EXHAUSTIVE_CAP,
) -> EmpiricalPrior:
    """Uniform distribution over ``count`` i.i.d. profiles of D, or D itself.

    ``exhaustive=None`` picks the full support whenever it has at most
    ``cap`` profiles. Sampled profiles are patched so that every (bidder,
    type) occurs: one extra profile is appended per missing type, with the
    other coordinates drawn fresh.
    """
    if exhaustive is None:
        exhaustive = count is None and support_size(inst) <= cap
    if exhaustive:
        if support_size(inst) > cap:
            raise ValueError(f"support has {support_size(inst)} profiles, above the cap {cap}")
        return exhaustive_dprime(inst)
    if count is None:
        count = dprime_size_default(inst.n, inst.T, 0.1)
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    profiles = sample_profiles(inst, count, rng)
    extra = []
    for i, k in enumerate(inst.type_counts):
        present = np.bincount(profiles[:, i], minlength=k)
        for b in np.flatnonzero(present == 0):
            row = sample_profiles(inst, 1, rng)[0]
            row[i] = b
            extra.append(row)
    if extra:
        profiles = np.vstack([profiles, np.array(extra)])
    return EmpiricalPrior(profiles, inst.type_counts)


def dprime_size_default(n: int, T: int, eps: float, C: float = 10.0, support: int | None = None) -> int:
    """C * n * T / eps^2 profiles, floored at max(T, 1) and capped at the support size."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    count = math.ceil(C * n * T / eps**2 - 1e-9)
    if eps >= 1:
        count = max(T, 1)
    count = max(count, T, 1)
    if support is not None:
        count = min(count, support)
    return count


def sample_only_adapter(
    sampler: Callable[[np.random.Generator], Sequence[Type]],
    count: int,
    seed: int = 0,
    n_items: int | None = None,
    welfare_oracle: dict | None = None,
    expected_labels: Sequence[Sequence[str]] | None = None,
) -> tuple[Instance, EmpiricalPrior]:
    """Build an instance and D' from a sampling oracle alone.

    ``sampler(rng)`` returns one profile as a sequence of :class:`Type`
    (one per bidder). Type sets and marginals are estimated from the draws;
    types never drawn do not exist in the estimated instance. When
    ``expected_labels`` lists the labels each bidder could have, every one
    that never showed up is logged as a warning.
    """
    if count < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    draws = [list(sampler(rng)) for _ in range(count)]
    m = len(draws[0])
    seen: list[dict[Type, int]] = [{} for _ in range(m)]
    rows = []
    for prof in draws:
        if len(prof) != m:
            raise ValueError("sampler returned profiles of different lengths")
        row = []
        for i, t in enumerate(prof):
            idx = seen[i].setdefault(t, len(seen[i]))
            row.append(idx)
        rows.append(row)
    profiles = np.array(rows, dtype=int)
    if expected_labels is not None:
        for i, labels in enumerate(expected_labels):
            drawn = {t.label for t in seen[i]}
            for label in labels:
                if label not in drawn:
                    log.warning("bidder %d type %r never observed; excluded", i, label)
    if n_items is None:
        n_items = len(draws[0][0].values)
    bidders = []
    for i in range(m):
        counts = np.bincount(profiles[:, i], minlength=len(seen[i]))
        types = sorted(seen[i], key=seen[i].get)
        bidders.append({
            "types": [
                {"label": t.label, "values": list(t.values), "prob": c / count}
                for t, c in zip(types, counts)
            ]
        })
    raw = {"items": n_items, "bidders": bidders, "welfare_oracle": welfare_oracle or {"kind": "exact_matching"}}
    inst = validate_instance(raw)
    return inst, EmpiricalPrior(profiles, inst.type_counts)


def known_type_sampler(inst: Instance) -> Callable[[np.random.Generator], list[Type]]:
    """A sampling oracle drawing profiles from an instance's prior."""

    def draw(rng: np.random.Generator) -> list[Type]:
        return [inst.types[i][rng.choice(k, p=inst.probs(i))] for i, k in enumerate(inst.type_counts)]

    return draw


def restrict_to_observed(inst: Instance, observed: Sequence[Sequence[str]]) -> Instance:
    """Drop types that were never observed, warning about each, and renormalize."""
    raw = instance_to_dict(inst)
    for i, b in enumerate(raw["bidders"]):
        keep = [t for t in b["types"] if t["label"] in set(observed[i])]
        for t in b["types"]:
            if t["label"] not in set(observed[i]):
                log.warning("bidder %d type %r never observed; excluded", i, t["label"])
        total = sum(t["prob"] for t in keep)
        for t in keep:
            t["prob"] /= total
        b["types"] = keep
    return validate_instance(raw)
