"""Command-line entry point: ``mdmdp solve | simulate | verify | oracle``.

Every subcommand writes one JSON document (to ``--output`` or stdout).
Exit codes: 0 success, 1 bad input, 2 decomposition failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .decompose import DecompositionFailure, check_compatible, decompose_solution, exact_interim, simulate
from .model import InstanceError, Mechanism, ReducedForm, dumps, load_instance
from .oracles import GuardExceeded, border_feasible, brute_force_opt, verify_bic_regret
from .revenue import SolverConfig, solve
from .sampling import build_dprime, exhaustive_dprime, support_size
from .welfare import OracleConfigError, oracle_from_spec
from .wso import WsoConfig

log = logging.getLogger("mdmdp")

EXIT_OK, EXIT_INPUT, EXIT_DECOMPOSITION = 0, 1, 2
EXACT_AUDIT_CAP = 50_000


def _emit(doc: dict, output: str | None) -> None:
    text = dumps(doc)
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _load_mechanism_doc(path: str) -> tuple[Mechanism, dict]:
    doc = _read_json(path)
    mech_doc = doc["mechanism"] if "mechanism" in doc else doc
    return Mechanism.from_dict(mech_doc), doc


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    oracle = oracle_from_spec(inst.welfare_oracle, inst.n_items)
    exhaustive = True if args.dprime_exhaustive else (False if args.dprime_count else None)
    dprime = build_dprime(inst, args.dprime_count, args.seed, exhaustive)
    cfg = SolverConfig(
        search_bits=args.search_bits,
        wso=WsoConfig(delta=args.wso_delta, inner_iters=args.wso_iters, certify_every=10),
    )
    report = solve(inst, dprime, oracle, args.eps, cfg)
    try:
        decompose_solution(report, inst, dprime, oracle)
    except DecompositionFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        doc = report.to_dict()
        doc["decomposition_residual"] = exc.residual
        doc["status"] = "decomposition_failure"
        _emit(doc, args.output)
        return EXIT_DECOMPOSITION
    doc = report.to_dict()
    doc["status"] = "ok"
    doc["dprime"] = {"profiles": int(len(dprime.support[0])), "exhaustive": bool(dprime.exhaustive)}
    _emit(doc, args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    inst = load_instance(args.instance)
    mech, _ = _load_mechanism_doc(args.mechanism)
    rep = simulate(mech, inst, args.draws, args.seed)
    _emit(rep.to_dict(inst), args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    inst = load_instance(args.instance)
    mech, doc = _load_mechanism_doc(args.mechanism)
    check_compatible(mech, inst)
    exact = args.samples is None and support_size(inst) <= EXACT_AUDIT_CAP
    if args.samples is None and not exact:
        args.samples = 10_000
    audit = verify_bic_regret(mech, inst, None if exact else args.samples, args.seed)
    out: dict = {"schema": "mdmdp.verification/1", "mode": "exact" if exact else "sampled"}
    out["bic"] = audit.to_dict()
    out["ir"] = {"min_slack": audit.min_ir_slack, "passed": bool(audit.min_ir_slack >= -args.tol)}
    out["bic"]["passed"] = bool(audit.max_regret <= args.tol + 3 * audit.max_regret_stderr)
    interim = exact_interim(mech, inst, exhaustive_dprime(inst).support) if exact else None
    if "pi_star" in doc and interim is not None:
        target = ReducedForm.from_dict(doc["pi_star"]).values
        out["decomposition"] = {"residual": float(np.max(np.abs(interim - target), initial=0.0))}
    else:
        out["decomposition"] = {"skipped": "needs a solve report and an enumerable prior"}
    if inst.n_items != 1:
        out["border"] = {"skipped": "skipped (n>1)"}
    elif interim is None:
        out["border"] = {"skipped": "support too large for exact interim rule"}
    else:
        out["border"] = {"feasible": border_feasible(interim, inst, tol=1e-7)}
    _emit(out, args.output)
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    try:
        opt = brute_force_opt(inst)
    except GuardExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _emit({
        "schema": "mdmdp.oracle/1",
        "opt_revenue": opt.revenue,
        "pi": opt.pi.to_dict(),
        "prices": opt.prices.to_dict(),
    }, args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdmdp", description="Revenue-maximizing mechanisms from welfare oracles.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute a mechanism for an instance")
    p.add_argument("instance")
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dprime-count", type=int, default=None)
    p.add_argument("--dprime-exhaustive", action="store_true")
    p.add_argument("--wso-delta", type=float, default=1e-9)
    p.add_argument("--wso-iters", type=int, default=None)
    p.add_argument("--search-bits", type=int, default=40)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo revenue and interim rule of a mechanism")
    p.add_argument("mechanism")
    p.add_argument("instance")
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="audit incentives, decomposition and (single item) Border feasibility")
    p.add_argument("mechanism")
    p.add_argument("instance")
    p.add_argument("--samples", type=int, default=None, help="Monte Carlo audit instead of exact enumeration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="brute-force optimal revenue")
    p.add_argument("instance")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("MDMDP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, OracleConfigError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
