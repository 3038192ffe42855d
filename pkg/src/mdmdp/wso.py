"""The weird separation oracle.

Given a candidate point pi and an approximate linear optimizer ``approx``
(w -> a point A(w) of the feasible polytope), an inner ellipsoid searches
over (w, t) for a direction certifying that pi beats every answer A gave.
Finding one yields the cut w*.x <= t*; failing to find one means pi is
accepted, and the points A(w) met along the way contain pi in their hull.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from .ellipsoid import Hyperplane, default_iterations, ellipsoid_feasible, lp_solve


@dataclass
class WsoConfig:
    """Inner-run parameters.

    ``inner_iters=None`` derives N from the volume rule in dimension d+1.
    ``certify_every > 0`` additionally solves, every that many inner
    iterations, the LP deciding whether any (w, t) with margin delta is
    still consistent with the answers collected so far; if none is, the run
    stops and accepts (the hull condition already holds).
    """

    delta: float = 1e-9
    inner_iters: int | None = None
    K: float = 4.0
    vol_floor: float = 1e-12
    box_scale: float = 1.0
    certify_every: int = 0
    trace: TextIO | None = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.inner_iters is not None and self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")


@dataclass
class QueryRecord:
    w: np.ndarray
    t: float
    point: np.ndarray

    @property
    def value(self) -> float:
        return float(self.point @ self.w)


@dataclass
class WsoResult:
    accepted: bool
    hyperplane: Hyperplane | None
    query_log: list[QueryRecord] = field(default_factory=list)
    inner_iterations: int = 0
    certified: bool = False
    degenerate: bool = False

    @property
    def verdict(self) -> str:
        return "accept" if self.accepted else "violated"

    def weights(self) -> list[np.ndarray]:
        return [q.w for q in self.query_log]

    def points(self) -> np.ndarray:
        return np.array([q.point for q in self.query_log])


def inner_radius(d: int) -> float:
    """Radius of the origin ball covering [-1,1]^d x [-d, d]."""
    return math.sqrt(d + d * d)


def _hull_gap(pi: np.ndarray, points: np.ndarray, d: int, box: float = 1.0) -> tuple[float, np.ndarray | None]:
    """max of pi.w - t over the box with t >= point_k.w for every k, and its maximizer (w, t)."""
    c = np.concatenate([pi, [-1.0]])
    A = np.hstack([points, -np.ones((len(points), 1))])
    bounds = [(-box, box)] * d + [(None, float(d))]
    res = lp_solve(c, A, np.zeros(len(points)), bounds=bounds)
    return (res.value, res.x) if res.ok else (math.inf, None)


def wso_query(
    pi: np.ndarray,
    approx: Callable[[np.ndarray], np.ndarray],
    cfg: WsoConfig | None = None,
) -> WsoResult:
    cfg = cfg or WsoConfig()
    pi = np.asarray(pi, dtype=float)
    if not np.all(np.isfinite(pi)):
        raise ValueError("candidate point has non-finite entries")
    d = len(pi)
    radius = inner_radius(d)
    n_iter = cfg.inner_iters or default_iterations(d + 1, radius, cfg.K, cfg.vol_floor)
    delta = cfg.delta
    log: list[QueryRecord] = []
    seen: set[bytes] = set()
    t_row = np.concatenate([-pi, [1.0]])
    e_t = np.zeros(d + 1)
    e_t[d] = 1.0
    trace = cfg.trace
    iteration = [0]

    def emit(w, t, value, cut):
        if trace is not None:
            trace.write(json.dumps({
                "iteration": iteration[0], "w": w.tolist(), "t": t,
                "value": value, "cut": None if cut is None else [cut.a.tolist(), cut.b],
            }) + "\n")

    def inner(z: np.ndarray) -> Hyperplane | None:
        iteration[0] += 1
        w, t = z[:d], float(z[d])
        k = int(np.argmax(np.abs(w))) if d else 0
        if d and abs(w[k]) > cfg.box_scale:
            a = np.zeros(d + 1)
            a[k] = math.copysign(1.0, w[k])
            return Hyperplane(a, cfg.box_scale)
        if t > d:
            return Hyperplane(e_t, float(d))
        if t - float(pi @ w) > -delta:
            return Hyperplane(t_row, -delta)
        point = np.asarray(approx(w), dtype=float)
        value = float(point @ w)
        key = w.tobytes()
        if key not in seen:
            seen.add(key)
            log.append(QueryRecord(w.copy(), t, point))
        if t >= value:
            emit(w, t, value, None)
            return None
        cut = Hyperplane(np.concatenate([point, [-1.0]]), 0.0)
        emit(w, t, value, cut)
        return cut

    certified = [False]
    probed: list[np.ndarray] = []

    def stop(_it: int) -> bool:
        # Either no (w, t) with margin delta survives the answers seen so far
        # (accept), or the LP's maximizer is itself a point the inner check
        # accepts (violated); otherwise its oracle answer joins the log.
        if not log:
            return False
        gap, z = _hull_gap(pi, np.array([q.point for q in log]), d, cfg.box_scale)
        if gap < delta:
            certified[0] = True
            return True
        if z is not None and inner(z) is None:
            probed.append(z)
            return True
        return False

    res = ellipsoid_feasible(
        inner,
        radius,
        d + 1,
        n_iter,
        should_stop=stop if cfg.certify_every else None,
        stop_every=cfg.certify_every,
    )
    found = res.x if res.accepted else (probed[0] if probed else None)
    if found is not None:
        w_star, t_star = found[:d], float(found[d])
        return WsoResult(False, Hyperplane(w_star, t_star), log, res.iterations)
    return WsoResult(True, None, log, res.iterations, certified=certified[0], degenerate=res.degenerate)


def contains_check(result: WsoResult, x: np.ndarray, tol: float = 1e-9) -> bool:
    """Whether the cut emitted by a rejecting WSO call keeps x."""
    if result.accepted:
        raise ValueError("contains_check needs a Violated result")
    return result.hyperplane.contains(np.asarray(x, dtype=float), tol)
