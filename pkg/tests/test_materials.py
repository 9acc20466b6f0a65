import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plasthom import tensor as T
from plasthom.errors import AssumptionViolated, InputError
from plasthom.materials import (ElasticDensity, HardeningDensity, MaterialModel, WeightField,
                                eval_H, eval_W, validate_assumptions)

from conftest import LAMINATE

pts = arrays(np.float64, (3,), elements=st.floats(-5, 5, allow_nan=False))
shifts = arrays(np.int64, (3,), elements=st.integers(-4, 4))
weights = st.sampled_from([WeightField(), WeightField("laminate", 1.0, 4.0, axis=1, fraction=0.3),
                           WeightField("checkerboard", 2.0, 5.0)])


@given(weights, pts, shifts)
def test_weights_are_periodic(w, x, k):
    assert w(x + k) == w(x)


def test_laminate_weights():
    w = WeightField("laminate", 1.0, 4.0)
    assert w(np.array([0.25, 0.9])) == 1.0
    assert w(np.array([0.75, 0.1])) == 4.0
    assert w.mean == 2.5
    assert WeightField.from_dict({"kind": "two_phase_laminate", "weight": 1, "b": 4}) == w
    with pytest.raises(InputError):
        WeightField("laminate", 1.0)
    with pytest.raises(InputError):
        WeightField("homogeneous", -1.0)


def test_quadratic_catalog_values(laminate):
    f = np.diag([1.0, 2.0, 3.0])
    assert eval_W(laminate, [0.25, 0.5], f) == pytest.approx(14.0)
    assert eval_W(laminate, [0.75, 0.5], f) == pytest.approx(56.0)
    assert eval_H(laminate, [0.25, 0.0], np.eye(3)) == 0.0
    p = T.expm(0.2 * np.diag([1.0, -1.0, 0.0]))
    assert eval_H(laminate, [0.75, 0.0], p) == pytest.approx(3 * np.sum((p - np.eye(3)) ** 2))
    assert eval_H(laminate, [0.25, 0.0], T.expm(0.4 * np.diag([1.0, -1.0, 0.0]))) == math.inf


def test_model_config(laminate):
    assert MaterialModel.from_dict(laminate.to_dict()) == laminate
    assert laminate.W.constants == (1.0, 5.0, 4.0)
    assert laminate.c_K == pytest.approx(2 * (math.sqrt(3) + math.expm1(0.5)))
    with pytest.raises(InputError):
        MaterialModel.from_dict({**LAMINATE, "q": 3})
    with pytest.raises(InputError):
        MaterialModel.from_dict({"W": LAMINATE["W"]})


@given(weights, st.integers(0, 100))
def test_catalog_satisfies_assumptions(w, seed):
    model = MaterialModel(ElasticDensity(w), HardeningDensity(w))
    rep = validate_assumptions(model, samples=200, seed=seed)
    assert rep.passed
    c1, c2, c3 = model.W.constants
    assert rep.observed["c1"] >= c1 * (1 - 1e-9)
    assert rep.observed["c2"] <= c2 * (1 + 1e-9)
    assert rep.observed["c3"] <= c3 * (1 + 1e-9)


def test_cubic_growth_is_caught():
    w = WeightField()
    model = MaterialModel(ElasticDensity(w, 3.0, declared=(1.0, 2.0, 3.0)), HardeningDensity(w))
    with pytest.raises(AssumptionViolated, match="growth") as info:
        validate_assumptions(model, samples=50)
    assert info.value.witness is not None
    with pytest.raises(InputError):
        ElasticDensity(w, 3.0)


@given(arrays(np.float64, (3, 3), elements=st.floats(-2, 2, allow_nan=False)))
def test_elastic_gradient(f):
    dens = ElasticDensity(WeightField("homogeneous", 2.5))
    e = np.random.default_rng(0).normal(size=(3, 3))
    h = 1e-6
    fd = (dens.value(2.5, f + h * e) - dens.value(2.5, f - h * e)) / (2 * h)
    assert np.sum(dens.grad(2.5, f) * e) == pytest.approx(fd, rel=1e-6, abs=1e-6)
