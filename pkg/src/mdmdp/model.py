"""Domain types, instance validation and the JSON schema shared by every module."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

INSTANCE_SCHEMA = "mdmdp.instance/1"
REDUCED_FORM_SCHEMA = "mdmdp.reduced_form/1"
MECHANISM_SCHEMA = "mdmdp.mechanism/1"

PROB_TOL = 1e-9
EXACT_MASS_TOL = 1e-12


class InstanceError(ValueError):
    """Raised when a serialized instance violates the schema or its invariants.

    ``violations`` holds every problem found, not just the first one.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Type:
    label: str
    values: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Instance:
    """A validated auction instance: additive bidders with finite, independent type sets."""

    types: tuple[tuple[Type, ...], ...]
    prior: tuple[tuple[float, ...], ...]
    n_items: int
    budgets: tuple[float, ...] | None = None
    welfare_oracle: Mapping[str, Any] = field(default_factory=lambda: {"kind": "exact_matching"})

    @property
    def m(self) -> int:
        return len(self.types)

    @property
    def n(self) -> int:
        return self.n_items

    @property
    def type_counts(self) -> tuple[int, ...]:
        return tuple(len(t) for t in self.types)

    @property
    def T(self) -> int:
        return self.n_items * sum(self.type_counts)

    @property
    def n_type_slots(self) -> int:
        return sum(self.type_counts)

    @property
    def v_max(self) -> float:
        return max((max(t.values, default=0.0) for ts in self.types for t in ts), default=0.0)

    def values(self, bidder: int) -> np.ndarray:
        """Value matrix of shape (|T_i|, n) for one bidder."""
        return np.array([t.values for t in self.types[bidder]], dtype=float).reshape(-1, self.n_items)

    def probs(self, bidder: int) -> np.ndarray:
        return np.array(self.prior[bidder], dtype=float)

    def type_index(self, bidder: int, label: str) -> int:
        for k, t in enumerate(self.types[bidder]):
            if t.label == label:
                return k
        raise KeyError(f"bidder {bidder} has no type {label!r}")

    def slot_offsets(self) -> np.ndarray:
        """Offset of bidder i's first type among all (bidder, type) slots."""
        return np.concatenate([[0], np.cumsum(self.type_counts)[:-1]]).astype(int)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.types == other.types
            and self.prior == other.prior
            and self.n_items == other.n_items
            and self.budgets == other.budgets
            and dict(self.welfare_oracle) == dict(other.welfare_oracle)
        )

    __hash__ = None  # type: ignore[assignment]


def make_instance(
    values: Sequence[Sequence[Sequence[float]]],
    probs: Sequence[Sequence[float]],
    oracle: str | Mapping[str, Any] = "exact_matching",
    labels: Sequence[Sequence[str]] | None = None,
    budgets: Sequence[float] | None = None,
) -> Instance:
    """Convenience constructor from nested lists; goes through full validation."""
    raw_bidders = []
    for i, (vals, ps) in enumerate(zip(values, probs)):
        types = []
        for k, (v, p) in enumerate(zip(vals, ps)):
            label = labels[i][k] if labels is not None else f"t{k}"
            types.append({"label": label, "values": list(v), "prob": p})
        raw_bidders.append({"types": types})
    if budgets is not None:
        for b, budget in zip(raw_bidders, budgets):
            b["budget"] = budget
    n = len(values[0][0]) if values and values[0] else 0
    spec = {"kind": oracle} if isinstance(oracle, str) else dict(oracle)
    return validate_instance(
        {"schema": INSTANCE_SCHEMA, "items": n, "bidders": raw_bidders, "welfare_oracle": spec}
    )


def validate_instance(raw: Mapping[str, Any] | str) -> Instance:
    """Validate a parsed (or JSON text) instance document.

    Probabilities summing to 1 within 1e-9 are renormalized; anything
    further off is an error. All violations are collected before raising.
    """
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InstanceError([f"malformed JSON: {exc}"]) from exc
    if not isinstance(raw, Mapping):
        raise InstanceError(["instance document must be a JSON object"])

    errors: list[str] = []
    schema = raw.get("schema", INSTANCE_SCHEMA)
    if schema != INSTANCE_SCHEMA:
        errors.append(f"unsupported schema {schema!r}")
    n = raw.get("items")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise InstanceError(errors + [f"items must be a positive integer, got {n!r}"])
    bidders = raw.get("bidders")
    if not isinstance(bidders, list) or not bidders:
        raise InstanceError(errors + ["bidders must be a non-empty list"])

    types: list[tuple[Type, ...]] = []
    prior: list[tuple[float, ...]] = []
    budgets: list[float] = []
    any_budget = False
    for i, b in enumerate(bidders):
        raw_types = b.get("types") if isinstance(b, Mapping) else None
        if not raw_types:
            errors.append(f"bidder {i}: empty type set")
            continue
        seen: set[str] = set()
        ts, ps = [], []
        for k, t in enumerate(raw_types):
            label = str(t.get("label", f"t{k}"))
            if label in seen:
                errors.append(f"bidder {i}: duplicate label {label!r}")
            seen.add(label)
            vals = t.get("values")
            if not isinstance(vals, list) or len(vals) != n:
                errors.append(f"bidder {i} type {label!r}: values must have length {n}")
                continue
            try:
                vals = tuple(float(v) for v in vals)
            except (TypeError, ValueError):
                errors.append(f"bidder {i} type {label!r}: non-numeric value")
                continue
            if not all(math.isfinite(v) for v in vals):
                errors.append(f"bidder {i} type {label!r}: non-finite value")
            elif any(v < 0 for v in vals):
                errors.append(f"bidder {i} type {label!r}: negative value")
            p = t.get("prob")
            if not isinstance(p, (int, float)) or isinstance(p, bool) or not math.isfinite(p) or p <= 0:
                errors.append(f"bidder {i} type {label!r}: probability mass must be > 0, got {p!r}")
                p = 0.0
            ts.append(Type(label, vals))
            ps.append(float(p))
        total = math.fsum(ps)
        if ps and all(p > 0 for p in ps):
            if abs(total - 1.0) > PROB_TOL:
                errors.append(f"bidder {i}: probabilities sum to {total:.10g}")
            elif abs(total - 1.0) > EXACT_MASS_TOL:
                # left alone below EXACT_MASS_TOL so that re-validating is a no-op
                ps = [p / total for p in ps]
        types.append(tuple(ts))
        prior.append(tuple(ps))
        budget = b.get("budget") if isinstance(b, Mapping) else None
        if budget is not None:
            any_budget = True
            if not isinstance(budget, (int, float)) or budget < 0:
                errors.append(f"bidder {i}: budget < 0 ({budget!r})")
            budgets.append(float(budget))
        else:
            budgets.append(math.inf)

    oracle = raw.get("welfare_oracle", {"kind": "exact_matching"})
    if isinstance(oracle, str):
        oracle = {"kind": oracle}
    if not isinstance(oracle, Mapping) or "kind" not in oracle:
        errors.append("welfare_oracle must be an object with a 'kind'")
        oracle = {"kind": "exact_matching"}

    if errors:
        raise InstanceError(errors)
    return Instance(
        types=tuple(types),
        prior=tuple(prior),
        n_items=n,
        budgets=tuple(budgets) if any_budget else None,
        welfare_oracle=dict(oracle),
    )


def reduced_form_index(inst: Instance) -> list[tuple[int, str, int]]:
    """(bidder, type-label, item) triples in canonical order; length T."""
    return [
        (i, t.label, j)
        for i, ts in enumerate(inst.types)
        for t in ts
        for j in range(inst.n_items)
    ]


def price_index(inst: Instance) -> list[tuple[int, str]]:
    return [(i, t.label) for i, ts in enumerate(inst.types) for t in ts]


def instance_to_dict(inst: Instance) -> dict[str, Any]:
    bidders = []
    for i, ts in enumerate(inst.types):
        b: dict[str, Any] = {
            "types": [
                {"label": t.label, "values": list(t.values), "prob": p}
                for t, p in zip(ts, inst.prior[i])
            ]
        }
        if inst.budgets is not None and math.isfinite(inst.budgets[i]):
            b["budget"] = inst.budgets[i]
        bidders.append(b)
    return {
        "schema": INSTANCE_SCHEMA,
        "items": inst.n_items,
        "bidders": bidders,
        "welfare_oracle": dict(inst.welfare_oracle),
    }


@dataclass(frozen=True, eq=False)
class ReducedForm:
    """Interim allocation probabilities laid out along ``reduced_form_index``."""

    index: tuple[tuple[int, str, int], ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(values) != len(self.index):
            raise ValueError(f"expected {len(self.index)} entries, got {len(values)}")
        object.__setattr__(self, "values", values)

    @classmethod
    def of(cls, inst: Instance, values: Iterable[float]) -> "ReducedForm":
        return cls(tuple(reduced_form_index(inst)), np.asarray(list(values), dtype=float))

    def __getitem__(self, key: tuple[int, str, int]) -> float:
        return float(self.values[self.index.index(key)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReducedForm):
            return NotImplemented
        return self.index == other.index and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": REDUCED_FORM_SCHEMA,
            "entries": [
                {"bidder": i, "type": lab, "item": j, "value": float(v)}
                for (i, lab, j), v in zip(self.index, self.values)
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ReducedForm":
        entries = d["entries"]
        return cls(
            tuple((int(e["bidder"]), str(e["type"]), int(e["item"])) for e in entries),
            np.array([float(e["value"]) for e in entries]),
        )


# Virtual weights share the reduced-form index set.
VirtualWeights = ReducedForm


@dataclass(frozen=True, eq=False)
class PriceRule:
    index: tuple[tuple[int, str], ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(values) != len(self.index):
            raise ValueError(f"expected {len(self.index)} prices, got {len(values)}")
        object.__setattr__(self, "values", values)

    @classmethod
    def of(cls, inst: Instance, values: Iterable[float]) -> "PriceRule":
        return cls(tuple(price_index(inst)), np.asarray(list(values), dtype=float))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PriceRule):
            return NotImplemented
        return self.index == other.index and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]

    def to_dict(self) -> list[dict[str, Any]]:
        return [
            {"bidder": i, "type": lab, "price": float(v)} for (i, lab), v in zip(self.index, self.values)
        ]

    @classmethod
    def from_dict(cls, entries: Sequence[Mapping[str, Any]]) -> "PriceRule":
        return cls(
            tuple((int(e["bidder"]), str(e["type"])) for e in entries),
            np.array([float(e["price"]) for e in entries]),
        )


@dataclass(frozen=True, eq=False)
class Mechanism:
    """A lottery over virtual implementations plus an interim price rule.

    ``marginals`` are the per-(bidder, type) probabilities used as the
    denominators of the virtual transformations (those of D' at solve time).
    ``welfare_oracle`` names the oracle the atoms were built with; ``oracle``
    optionally holds that oracle object itself and is not serialized.
    """

    mixture: tuple[tuple[float, np.ndarray], ...]
    prices: PriceRule
    rebate: float
    index: tuple[tuple[int, str, int], ...]
    marginals: np.ndarray
    welfare_oracle: Mapping[str, Any] = field(default_factory=lambda: {"kind": "exact_matching"})
    oracle: Any = field(default=None, repr=False)

    def __post_init__(self):
        if not self.mixture:
            raise ValueError("mixture must be non-empty")
        lams = np.array([lam for lam, _ in self.mixture])
        if np.any(lams < 0) or abs(lams.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must be a distribution, got sum {lams.sum()!r}")
        if self.rebate < 0:
            raise ValueError("rebate must be non-negative")
        mix = tuple((float(lam), np.asarray(w, dtype=float)) for lam, w in self.mixture)
        object.__setattr__(self, "mixture", mix)
        object.__setattr__(self, "marginals", np.asarray(self.marginals, dtype=float))

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([lam for lam, _ in self.mixture])

    @property
    def weights(self) -> np.ndarray:
        return np.vstack([w for _, w in self.mixture])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mechanism):
            return NotImplemented
        return (
            len(self.mixture) == len(other.mixture)
            and all(
                la == lb and np.array_equal(wa, wb)
                for (la, wa), (lb, wb) in zip(self.mixture, other.mixture)
            )
            and self.prices == other.prices
            and self.rebate == other.rebate
            and self.index == other.index
            and np.array_equal(self.marginals, other.marginals)
            and dict(self.welfare_oracle) == dict(other.welfare_oracle)
        )

    __hash__ = None  # type: ignore[assignment]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": MECHANISM_SCHEMA,
            "index": [list(k) for k in self.index],
            "mixture": [{"lambda": lam, "weights": w.tolist()} for lam, w in self.mixture],
            "prices": self.prices.to_dict(),
            "rebate": self.rebate,
            "marginals": self.marginals.tolist(),
            "welfare_oracle": dict(self.welfare_oracle),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Mechanism":
        if d.get("schema") != MECHANISM_SCHEMA:
            raise ValueError(f"unsupported mechanism schema {d.get('schema')!r}")
        return cls(
            mixture=tuple((float(a["lambda"]), np.array(a["weights"], dtype=float)) for a in d["mixture"]),
            prices=PriceRule.from_dict(d["prices"]),
            rebate=float(d["rebate"]),
            index=tuple((int(i), str(lab), int(j)) for i, lab, j in d["index"]),
            marginals=np.array(d["marginals"], dtype=float),
            welfare_oracle=dict(d.get("welfare_oracle", {"kind": "exact_matching"})),
        )


def dumps(obj: Any) -> str:
    """Canonical JSON text (sorted keys, fixed float repr) so outputs are byte-stable."""
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    elif isinstance(obj, Instance):
        obj = instance_to_dict(obj)
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def load_instance(path: str) -> Instance:
    with open(path) as fh:
        text = fh.read()
    return validate_instance(text)


def load_mechanism(path: str) -> Mechanism:
    with open(path) as fh:
        d = json.load(fh)
    if "mechanism" in d and "schema" not in d:
        d = d["mechanism"]
    return Mechanism.from_dict(d)
