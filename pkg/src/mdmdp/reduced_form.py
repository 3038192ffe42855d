"""Virtual transformations and exact reduced forms over an explicit finite D'."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Instance, ReducedForm, VirtualWeights, reduced_form_index
from .welfare import WelfareOracle, OracleConfigError


@dataclass(frozen=True, eq=False)
class EmpiricalPrior:
    """A finite distribution over type profiles.

    ``profiles`` is an (P, m) array of type indices. Sampled priors are
    uniform over their rows; exhaustive ones carry the product
    probabilities in ``weights`` so that D' equals D exactly.
    """

    profiles: np.ndarray
    type_counts: tuple[int, ...]
    weights: np.ndarray | None = None
    exhaustive: bool = False
    _unique: tuple = field(default=(), repr=False)
    _uniform: bool = field(default=False, repr=False)

    def __post_init__(self):
        profiles = np.asarray(self.profiles, dtype=int).reshape(-1, len(self.type_counts))
        object.__setattr__(self, "profiles", profiles)
        object.__setattr__(self, "_uniform", self.weights is None)
        if self.weights is None:
            w = np.full(len(profiles), 1.0 / max(len(profiles), 1))
        else:
            w = np.asarray(self.weights, dtype=float)
            w = w / w.sum()
        object.__setattr__(self, "weights", w)
        uniq, inverse = np.unique(profiles, axis=0, return_inverse=True)
        uw = np.bincount(inverse.reshape(-1), weights=w, minlength=len(uniq))
        object.__setattr__(self, "_unique", (uniq, uw))
        for i, k in enumerate(self.type_counts):
            seen = np.bincount(profiles[:, i], minlength=k)
            if (seen == 0).any():
                missing = np.flatnonzero(seen == 0).tolist()
                raise ValueError(f"bidder {i}: types {missing} never appear in D'")

    @property
    def m(self) -> int:
        return len(self.type_counts)

    @property
    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct profiles and their total probability."""
        return self._unique

    def marginal_counts(self) -> list[np.ndarray]:
        """Number of rows with t_i = B, per bidder."""
        return [np.bincount(self.profiles[:, i], minlength=k) for i, k in enumerate(self.type_counts)]

    def marginals(self) -> list[np.ndarray]:
        if self._uniform:
            return [c / len(self.profiles) for c in self.marginal_counts()]
        uniq, uw = self._unique
        return [
            np.bincount(uniq[:, i], weights=uw, minlength=k) for i, k in enumerate(self.type_counts)
        ]

    def flat_marginals(self) -> np.ndarray:
        return np.concatenate(self.marginals())


def virtual_transform(w: np.ndarray | VirtualWeights, marginals, n_items: int) -> list[np.ndarray]:
    """Per-bidder virtual value tables f_i, shape (|T_i|, n): f_ij(B) = w_ij(B) / Pr[t_i = B]."""
    wv = w.values if isinstance(w, ReducedForm) else np.asarray(w, dtype=float)
    out, pos = [], 0
    for i, probs in enumerate(marginals):
        probs = np.asarray(probs, dtype=float)
        if (probs <= 0).any():
            raise ValueError(f"bidder {i}: zero-probability type in virtual transform")
        k = len(probs)
        block = wv[pos : pos + k * n_items].reshape(k, n_items)
        out.append(block / probs[:, None])
        pos += k * n_items
    if pos != len(wv):
        raise ValueError(f"weight vector has {len(wv)} entries, expected {pos}")
    return out


class ReducedFormMap:
    """w -> R^A_{D'}(w), precomputing the profile/index bookkeeping once.

    Every profile of D' is pushed through the oracle in one batched call;
    entries come out as (weighted) counts of wins divided by the mass of
    profiles where the bidder has that type.
    """

    def __init__(self, inst: Instance, dprime: EmpiricalPrior, oracle: WelfareOracle):
        if oracle.randomized:
            raise OracleConfigError(f"{oracle.name} is randomized; wrap it with derandomize() first")
        if dprime.type_counts != inst.type_counts:
            raise ValueError("D' type counts do not match the instance")
        self.inst = inst
        self.oracle = oracle
        self.n = inst.n_items
        self.T = inst.T
        uniq, uw = dprime.support
        self.profiles = uniq
        self.profile_weights = uw
        offsets = inst.slot_offsets()
        slot = offsets[None, :] + uniq  # (P, m) flat (bidder, type) slot
        self.entry_index = slot[:, :, None] * self.n + np.arange(self.n)[None, None, :]
        self.marginals = dprime.marginals()
        flat_marg = np.concatenate(self.marginals)
        self.slot_marginals = flat_marg
        self.entry_marginals = np.repeat(flat_marg, self.n)
        self.calls = 0

    def virtual_values(self, w: np.ndarray) -> np.ndarray:
        f = np.asarray(w, dtype=float) / self.entry_marginals
        return f[self.entry_index]

    def allocations(self, w: np.ndarray) -> np.ndarray:
        return self.oracle.allocate_many(self.virtual_values(w))

    def __call__(self, w: np.ndarray) -> np.ndarray:
        self.calls += 1
        alloc = self.allocations(w)
        mass = alloc * self.profile_weights[:, None, None]
        won = np.bincount(self.entry_index.reshape(-1), weights=mass.reshape(-1), minlength=self.T)
        return np.clip(won / self.entry_marginals, 0.0, 1.0)


def reduced_form_of(
    oracle: WelfareOracle, w: np.ndarray | VirtualWeights, dprime: EmpiricalPrior, inst: Instance
) -> ReducedForm:
    """Exact reduced form of the virtual implementation A(f) under D'."""
    wv = w.values if isinstance(w, ReducedForm) else np.asarray(w, dtype=float)
    return ReducedForm(tuple(reduced_form_index(inst)), ReducedFormMap(inst, dprime, oracle)(wv))


def virtual_welfare(rf: ReducedForm | np.ndarray, w: ReducedForm | np.ndarray) -> float:
    """R . w, the expected virtual welfare when rf is the oracle's own reduced form at w."""
    if isinstance(rf, ReducedForm) and isinstance(w, ReducedForm) and rf.index != w.index:
        raise ValueError("reduced form and weights use different index sets")
    a = rf.values if isinstance(rf, ReducedForm) else np.asarray(rf, dtype=float)
    b = w.values if isinstance(w, ReducedForm) else np.asarray(w, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(a @ b)
