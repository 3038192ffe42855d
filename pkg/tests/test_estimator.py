import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mdmdp.estimator import RevenueMaximizer, check_instance
from mdmdp.model import dumps, instance_to_dict, make_instance

PAIR = make_instance([[[1.0], [2.0]], [[1.0], [3.0]]], [[0.5, 0.5], [0.7, 0.3]], oracle="exact_single_item")


def test_params_round_trip_through_clone():
    est = RevenueMaximizer(eps=0.05, search_bits=8)
    assert est.get_params()["eps"] == 0.05
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(seed=3).seed == 3


def test_accepts_instance_dict_or_json():
    for X in (PAIR, instance_to_dict(PAIR), dumps(PAIR)):
        assert check_instance(X) == PAIR
    with pytest.raises(TypeError):
        check_instance(3.0)


def test_fit_predict_score():
    est = RevenueMaximizer(search_bits=12)
    with pytest.raises(NotFittedError):
        est.predict(["t0", "t0"])
    est.fit(PAIR)
    assert est.report_.residual <= 1e-6
    assert est.revenue_ == est.report_.revenue
    outs = est.predict([["t1", "t0"], ["t0", "t1"]])
    assert len(outs) == 2
    alloc, pay = est.predict(["t1", "t1"])[0]
    assert len(alloc) <= 1 and pay.shape == (2,)
    assert abs(est.score(draws=20_000) - est.revenue_) < 0.05


def test_predict_is_reproducible():
    est = RevenueMaximizer(search_bits=10, seed=4).fit(PAIR)
    a = est.predict([["t1", "t1"]] * 5)
    b = est.predict([["t1", "t1"]] * 5)
    assert [x[0] for x in a] == [x[0] for x in b]
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))


def test_bad_eps():
    with pytest.raises(ValueError):
        RevenueMaximizer(eps=0).fit(PAIR)
