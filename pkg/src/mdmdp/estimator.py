"""scikit-learn style front end: ``fit`` an instance, ``predict`` outcomes for reported profiles."""

from __future__ import annotations

from typing import Any, Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .decompose import decompose_solution, run_mechanism, simulate
from .model import Instance, validate_instance
from .revenue import SolverConfig, solve
from .sampling import build_dprime
from .welfare import oracle_from_spec
from .wso import WsoConfig


def check_instance(X: Any) -> Instance:
    if isinstance(X, Instance):
        return X
    if isinstance(X, (str, Mapping)):
        return validate_instance(X)
    raise TypeError(f"expected an Instance, a JSON string or a dict, got {type(X).__name__}")


class RevenueMaximizer(BaseEstimator):
    """Approximately revenue-optimal BIC mechanism for one instance.

    ``fit(inst)`` solves and decomposes; afterwards ``mechanism_``,
    ``report_`` and ``revenue_`` are available. ``predict`` runs the
    mechanism on rows of reported type labels; ``score`` is the Monte Carlo
    revenue under the instance's prior.
    """

    def __init__(
        self,
        eps: float = 0.01,
        seed: int = 0,
        dprime_count: int | None = None,
        dprime_exhaustive: bool | None = None,
        wso_delta: float = 1e-9,
        wso_iters: int | None = None,
        search_bits: int = 40,
    ):
        self.eps = eps
        self.seed = seed
        self.dprime_count = dprime_count
        self.dprime_exhaustive = dprime_exhaustive
        self.wso_delta = wso_delta
        self.wso_iters = wso_iters
        self.search_bits = search_bits

    def _config(self) -> SolverConfig:
        return SolverConfig(
            search_bits=self.search_bits,
            wso=WsoConfig(delta=self.wso_delta, inner_iters=self.wso_iters, certify_every=10),
        )

    def fit(self, X, y=None):
        inst = check_instance(X)
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        oracle = oracle_from_spec(inst.welfare_oracle, inst.n_items)
        dprime = build_dprime(inst, self.dprime_count, self.seed, self.dprime_exhaustive)
        report = solve(inst, dprime, oracle, self.eps, self._config())
        decompose_solution(report, inst, dprime, oracle)
        self.instance_ = inst
        self.dprime_ = dprime
        self.report_ = report
        self.mechanism_ = report.mechanism
        self.revenue_ = report.revenue
        return self

    def predict(self, X):
        """Allocation (frozenset of (bidder, item)) and payments for each row of type labels."""
        check_is_fitted(self, "mechanism_")
        rows = [X] if X and isinstance(X[0], str) else list(X)
        rng = np.random.default_rng(self.seed)
        return [run_mechanism(self.mechanism_, self.instance_, row, rng) for row in rows]

    def score(self, X=None, y=None, draws: int = 10_000) -> float:
        check_is_fitted(self, "mechanism_")
        return simulate(self.mechanism_, self.instance_, draws, self.seed).revenue
