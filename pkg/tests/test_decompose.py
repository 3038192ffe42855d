import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdmdp.decompose import (
    DecompositionFailure,
    assemble_mechanism,
    convex_decompose,
    decompose_solution,
    exact_interim,
    oracle_spec,
    run_mechanism,
    simulate,
)
from mdmdp.model import Mechanism, PriceRule, make_instance
from mdmdp.reduced_form import ReducedFormMap
from mdmdp.revenue import SolverConfig, solve
from mdmdp.sampling import exhaustive_dprime
from mdmdp.welfare import derandomize, exact_matching, exact_single_item, greedy_matching, oracle_from_spec
from mdmdp.wso import QueryRecord


@pytest.fixture(scope="module")
def setup():
    inst = make_instance([[[1, 2], [3, 0]], [[2, 2], [0, 1]]], [[0.4, 0.6], [0.5, 0.5]])
    dp = exhaustive_dprime(inst)
    approx = ReducedFormMap(inst, dp, exact_matching())
    return inst, dp, approx


def record(approx, w):
    w = np.asarray(w, dtype=float)
    return QueryRecord(w, 0.0, approx(w))


def rand_log(approx, T, k, seed):
    rng = np.random.default_rng(seed)
    return [record(approx, rng.uniform(-1, 1, size=T)) for _ in range(k)]


class TestConvexDecompose:
    def test_vertex(self, setup):
        inst, _, approx = setup
        rec = record(approx, np.linspace(-1, 1, inst.T))
        dec = convex_decompose(rec.point, [rec])
        assert dec.lambdas.tolist() == [1.0] and dec.residual == 0.0

    def test_zero_target(self, setup):
        inst, _, approx = setup
        zero = record(approx, -np.ones(inst.T))
        assert not zero.point.any()
        log = [record(approx, np.ones(inst.T)), zero]
        dec = convex_decompose(np.zeros(inst.T), log)
        assert dec.lambdas.tolist() == [1.0]
        assert np.array_equal(dec.weights[0], zero.w)

    def test_midpoint(self, setup):
        inst, _, approx = setup
        a = record(approx, np.ones(inst.T))
        b = record(approx, np.r_[np.ones(4), -np.ones(4)])
        assert not np.array_equal(a.point, b.point)
        dec = convex_decompose((a.point + b.point) / 2, [a, b])
        assert dec.lambdas == pytest.approx([0.5, 0.5])
        assert dec.residual <= 1e-6

    def test_outside_hull_fails(self, setup):
        inst, _, approx = setup
        rec = record(approx, np.ones(inst.T))
        with pytest.raises(DecompositionFailure) as exc:
            convex_decompose(rec.point + 0.1, [rec])
        assert exc.value.residual == pytest.approx(0.1)
        with pytest.raises(DecompositionFailure):
            convex_decompose(np.zeros(inst.T), [])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**31))
    def test_random_mixtures_recovered(self, setup, k, seed):
        inst, _, approx = setup
        log = rand_log(approx, inst.T, k, seed)
        lam = np.random.default_rng(seed + 1).dirichlet(np.ones(k))
        target = lam @ np.array([q.point for q in log])
        dec = convex_decompose(target, log)
        assert dec.residual <= 1e-6
        assert dec.lambdas.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(dec.lambdas >= 1e-12)
        assert np.max(np.abs(dec.reconstruct() - target)) <= 1e-6


class TestMechanism:
    def mech(self, setup, lams, ws, prices=None, rebate=0.0):
        inst, _, approx = setup
        recs = [record(approx, w) for w in ws]
        prices = PriceRule.of(inst, np.zeros(inst.n_type_slots) if prices is None else prices)
        return assemble_mechanism(list(zip(lams, [r.w for r in recs])), prices, rebate, inst, approx.slot_marginals)

    def test_null_atom(self, setup):
        inst = setup[0]
        mech = self.mech(setup, [1.0], [-np.ones(inst.T)], prices=[1.0, 2.0, 0.5, 0.0], rebate=0.01)
        alloc, pay = run_mechanism(mech, inst, ["t0", "t1"])
        assert alloc == frozenset()
        assert pay.tolist() == pytest.approx([0.99, -0.01])

    def test_two_atoms_sum_to_one(self, setup):
        inst = setup[0]
        mech = self.mech(setup, [0.3, 0.7], [np.ones(inst.T), -np.ones(inst.T)])
        assert sum(mech.lambdas) == pytest.approx(1.0)

    def test_run_is_deterministic_given_seed(self, setup):
        inst = setup[0]
        mech = self.mech(setup, [0.5, 0.5], [np.ones(inst.T), -np.ones(inst.T)])
        outs = {run_mechanism(mech, inst, ["t1", "t0"], seed)[0] for seed in range(40)}
        assert len(outs) == 2
        for seed in range(5):
            a = run_mechanism(mech, inst, ["t1", "t0"], seed)
            b = run_mechanism(mech, inst, ["t1", "t0"], seed)
            assert a[0] == b[0] and np.array_equal(a[1], b[1])

    def test_unknown_label(self, setup):
        inst = setup[0]
        mech = self.mech(setup, [1.0], [np.ones(inst.T)])
        with pytest.raises((KeyError, ValueError)):
            run_mechanism(mech, inst, ["t0", "nope"])
        with pytest.raises(ValueError):
            run_mechanism(mech, inst, ["t0"])

    def test_exact_interim_commutes_with_reduced_form(self, setup):
        inst, dp, approx = setup
        rng = np.random.default_rng(3)
        ws = [rng.uniform(-1, 1, inst.T) for _ in range(3)]
        lams = [0.2, 0.3, 0.5]
        mech = self.mech(setup, lams, ws)
        expected = sum(lam * approx(w) for lam, w in zip(lams, ws))
        assert np.allclose(exact_interim(mech, inst, dp.support), expected, atol=1e-12)

    def test_simulation_matches_interim(self, setup):
        inst, dp, approx = setup
        mech = self.mech(setup, [0.4, 0.6], [np.ones(inst.T), np.r_[np.ones(4), -np.ones(4)]],
                         prices=[0.5, 1.0, 0.2, 0.3])
        target = exact_interim(mech, inst, dp.support)
        sim = simulate(mech, inst, 100_000, seed=0)
        null_se = np.sqrt(target * (1 - target) / np.repeat(sim.type_counts, inst.n_items))
        assert np.all(np.abs(sim.interim - target) <= 3 * null_se + 1e-9)
        rev = 0.4 * 0.5 + 0.6 * 1.0 + 0.5 * 0.2 + 0.5 * 0.3
        assert abs(sim.revenue - rev) <= 3 * sim.revenue_stderr
        with pytest.raises(ValueError):
            simulate(mech, inst, 0)

    def test_simulation_is_unbiased_across_seeds(self, setup):
        inst, dp, _ = setup
        mech = self.mech(setup, [0.4, 0.6], [np.ones(inst.T), np.r_[np.ones(4), -np.ones(4)]])
        target = exact_interim(mech, inst, dp.support)
        live = (target > 0) & (target < 1)
        z = []
        for seed in range(100):
            sim = simulate(mech, inst, 2000, seed=seed)
            se = np.sqrt(target * (1 - target) / np.repeat(sim.type_counts, inst.n_items))
            z.append((sim.interim - target)[live] / se[live])
        z = np.array(z)
        assert np.all(np.abs(z.mean(axis=0)) <= 4 / np.sqrt(len(z)))
        assert np.all(np.abs(z.std(axis=0) - 1) <= 0.25)


def test_decompose_solution_attaches_mechanism():
    inst = make_instance([[[1.0], [2.0]], [[1.0], [3.0]]], [[0.5, 0.5], [0.7, 0.3]], oracle="exact_single_item")
    dp = exhaustive_dprime(inst)
    rep = solve(inst, dp, exact_single_item(), 0.01, SolverConfig(search_bits=10))
    mech = decompose_solution(rep, inst, dp, exact_single_item())
    assert rep.mechanism is mech and rep.residual <= 1e-6
    assert np.allclose(exact_interim(mech, inst, dp.support), rep.pi_star.values, atol=1e-6)
    assert mech.rebate == 0.01
    assert "mechanism" in rep.to_dict()


def test_mechanism_runs_the_oracle_it_was_built_with():
    # declared oracle is exact matching, but the solve uses greedy; the two
    # disagree on (2, 2 / 1.5, 0) so the atoms only reproduce pi_star under greedy
    inst = make_instance([[[2.0, 2.0], [0.0, 1.0]], [[1.5, 0.0], [1.0, 1.0]]], [[0.5, 0.5], [0.5, 0.5]])
    dp = exhaustive_dprime(inst)
    orc = greedy_matching()
    rep = solve(inst, dp, orc, 0.01, SolverConfig(search_bits=10))
    mech = decompose_solution(rep, inst, dp, orc)
    assert mech.welfare_oracle == {"kind": "greedy_matching"}
    assert np.allclose(exact_interim(mech, inst, dp.support), rep.pi_star.values, atol=1e-6)
    reloaded = Mechanism.from_dict(mech.to_dict())
    assert reloaded.oracle is None
    assert np.allclose(exact_interim(reloaded, inst, dp.support), rep.pi_star.values, atol=1e-6)


def test_unregistered_oracle_is_marked():
    orc = derandomize(exact_single_item(), trials=2, seed=0)
    assert oracle_spec(orc) == {"kind": orc.name, "unregistered": True}
    assert oracle_spec(oracle_from_spec({"kind": "exact_single_item", "clamp_negative": True})) == {
        "kind": "exact_single_item", "clamp_negative": True}
