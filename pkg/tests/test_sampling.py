import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdmdp.model import Type, make_instance
from mdmdp.sampling import (
    build_dprime,
    dprime_size_default,
    exhaustive_dprime,
    known_type_sampler,
    restrict_to_observed,
    sample_only_adapter,
    support_size,
)


def two_by_two(p0=0.3, p1=0.6):
    return make_instance([[[1.0], [2.0]], [[0.5], [3.0]]], [[p0, 1 - p0], [p1, 1 - p1]])


def test_exhaustive_is_the_prior():
    inst = two_by_two()
    dp = build_dprime(inst, exhaustive=True)
    assert dp.exhaustive
    profiles, weights = dp.support
    assert len(profiles) == support_size(inst) == 4
    assert weights.sum() == pytest.approx(1.0)
    assert np.allclose(dp.marginals()[0], [0.3, 0.7])
    assert np.allclose(dp.marginals()[1], [0.6, 0.4])


def test_default_chooses_exhaustive_below_cap():
    inst = two_by_two()
    assert build_dprime(inst).exhaustive
    assert not build_dprime(inst, count=10).exhaustive
    with pytest.raises(ValueError, match="cap"):
        build_dprime(inst, exhaustive=True, cap=3)


def test_seeded_sampling_is_reproducible():
    inst = two_by_two()
    a = build_dprime(inst, count=50, seed=9).support[0]
    b = build_dprime(inst, count=50, seed=9).support[0]
    assert np.array_equal(a, b)


def test_marginals_concentrate():
    inst = two_by_two()
    marg = build_dprime(inst, count=1000, seed=123).marginals()
    assert np.max(np.abs(marg[0] - [0.3, 0.7])) < 0.05
    assert np.max(np.abs(marg[1] - [0.6, 0.4])) < 0.05


def test_rare_types_are_patched_in():
    inst = make_instance([[[1.0], [2.0], [3.0]]], [[0.998, 0.001, 0.001]])
    dp = build_dprime(inst, count=5, seed=0)
    assert (dp.marginal_counts()[0] > 0).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10**6))
def test_patched_marginals_always_positive(count, seed):
    inst = make_instance([[[1.0], [2.0], [4.0]], [[1.0], [0.0]]], [[0.9, 0.05, 0.05], [0.97, 0.03]])
    dp = build_dprime(inst, count=count, seed=seed)
    assert all((c > 0).all() for c in dp.marginal_counts())
    assert len(dp.support[0]) <= count + 3


def test_size_default():
    assert dprime_size_default(1, 2, 0.1) == 2000
    assert dprime_size_default(1, 2, 0.1, support=16) == 16
    assert dprime_size_default(3, 5, 2.0) == 5
    assert dprime_size_default(0, 0, 5.0) == 1
    with pytest.raises(ValueError):
        dprime_size_default(1, 2, 0.0)


def constant_sampler(rng):
    return [Type("only", (1.0,))]


def fair_sampler(rng):
    return [Type("lo", (1.0,)) if rng.random() < 0.5 else Type("hi", (2.0,))]


class TestSampleOnly:
    def test_single_type(self):
        inst, dp = sample_only_adapter(constant_sampler, 20, seed=1)
        assert inst.type_counts == (1,)
        assert dp.marginals()[0].tolist() == [1.0]

    def test_fair_coin(self):
        inst, dp = sample_only_adapter(fair_sampler, 10_000, seed=5)
        assert inst.type_counts == (2,)
        assert np.all(np.abs(dp.marginals()[0] - 0.5) < 0.02)
        assert sum(inst.probs(0)) == pytest.approx(1.0)

    def test_zero_samples(self):
        with pytest.raises(ValueError):
            sample_only_adapter(fair_sampler, 0)

    def test_unseen_type_warned_and_excluded(self, caplog):
        with caplog.at_level(logging.WARNING, logger="mdmdp.sampling"):
            inst, _ = sample_only_adapter(constant_sampler, 5, expected_labels=[["only", "ghost"]])
        assert [t.label for t in inst.types[0]] == ["only"]
        assert "'ghost' never observed" in caplog.text

    def test_round_trip_through_known_sampler(self):
        src = two_by_two(0.5, 0.5)
        inst, dp = sample_only_adapter(known_type_sampler(src), 4000, seed=2)
        assert inst.type_counts == (2, 2)
        for i in range(2):
            assert np.all(np.abs(dp.marginals()[i] - 0.5) < 0.05)


def test_restrict_to_observed(caplog):
    inst = two_by_two()
    with caplog.at_level(logging.WARNING, logger="mdmdp.sampling"):
        small = restrict_to_observed(inst, [["t1"], ["t0", "t1"]])
    assert small.type_counts == (1, 2)
    assert small.probs(0).tolist() == [1.0]
    assert "never observed" in caplog.text
    assert exhaustive_dprime(small).support[0].shape == (2, 2)
