import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plasthom import tensor as T
from plasthom.energy import (DeformationField, GridDomain, PlasticField, cell_grad, cell_grad_T,
                             cell_mean, cell_mean_T, cell_terms, energy_total, grad_fd, k_violations,
                             quadratic_stiffness, sobolev_seminorms)
from plasthom.errors import EpsNonPositive, InputError
from plasthom.gluing import random_smooth_fields

seeds = st.integers(0, 2 ** 31 - 1)


def smooth_pair(dom, seed, p_amp=0.3):
    return random_smooth_fields(dom, np.random.default_rng(seed), p_amp=p_amp)


def test_affine_field_energy(homogeneous, laminate):
    dom = GridDomain.box((1.0, 1.0), (8, 8))
    A = np.array([[1.1, 0.2], [0.0, 0.9]])
    y = DeformationField.affine(dom, A, [0.3, -0.1])
    P = PlasticField.constant(dom)
    e = energy_total(homogeneous, 0.5, y, P, dom)
    assert e.elastic == pytest.approx(np.sum(A ** 2) + 1.0)
    assert e.hardening == 0.0 and e.regularization == 0.0
    # laminate: half of each period at weight 1, half at 4
    e = energy_total(laminate, 0.25, DeformationField.identity(dom), P, dom)
    assert e.elastic == pytest.approx(3 * 2.5)


def test_three_dimensional_identity(homogeneous):
    dom = GridDomain.box((1.0, 1.0, 1.0), (4, 4, 4))
    e = energy_total(homogeneous, 1.0, DeformationField.identity(dom), PlasticField.constant(dom), dom)
    assert e.total == pytest.approx(3.0)


@settings(max_examples=10)
@given(seeds, st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_energy_is_additive_over_masks(seed, a, b):
    from conftest import LAMINATE
    from plasthom.materials import MaterialModel
    model = MaterialModel.from_dict(LAMINATE)
    dom = GridDomain.box((1.0, 1.0), (12, 12))
    y, P = smooth_pair(dom, seed)
    m = dom.box_mask((0, 0), (a, b))
    parts = [energy_total(model, 0.25, y, P, dom, mask=k) for k in (m, ~m)]
    whole = energy_total(model, 0.25, y, P, dom)
    assert parts[0].total + parts[1].total == pytest.approx(whole.total, rel=1e-12)


@settings(max_examples=8)
@given(seeds, st.sampled_from([2, 3]))
def test_gradients_against_central_differences(seed, dim):
    from conftest import LAMINATE
    from plasthom.materials import MaterialModel
    model = MaterialModel.from_dict(LAMINATE)
    rng = np.random.default_rng(seed)
    dom = GridDomain.box((1.0,) * dim, (4,) * dim)
    y = dom.node_coords() + 0.05 * rng.normal(size=dom.node_shape + (dim,))
    b = 2 if dim == 2 else 3
    m = np.zeros(dom.node_shape + (3, 3))
    m[..., :b, :b] = 0.1 * rng.normal(size=dom.node_shape + (b, b))
    P = T.retract_sl3(T.expm(m), block=b)
    t = cell_terms(model, 0.5, y, P, dom, grads=("y", "P"))

    def total(yy, pp):
        s = cell_terms(model, 0.5, yy, pp, dom)
        return np.sum(s.elastic) + np.sum(s.hardening) + np.sum(s.regularization)

    h = 1e-6
    dy = rng.normal(size=y.shape)
    fd = (total(y + h * dy, P) - total(y - h * dy, P)) / (2 * h)
    assert np.sum(t.grad_y * dy) == pytest.approx(fd, rel=1e-5)
    dp = np.zeros(P.shape)
    dp[..., :b, :b] = rng.normal(size=P.shape[:-2] + (b, b))
    fd = (total(y, P + h * dp) - total(y, P - h * dp)) / (2 * h)
    assert np.sum(t.grad_P * dp) == pytest.approx(fd, rel=1e-5)


@given(seeds)
def test_q1_operators_are_adjoint(seed):
    rng = np.random.default_rng(seed)
    dom = GridDomain.box((1.0, 2.0), (3, 5))
    u = rng.normal(size=dom.node_shape + (2,))
    g = rng.normal(size=dom.cell_shape + (2, 2))
    assert np.sum(cell_grad(u, dom.spacing) * g) == pytest.approx(np.sum(u * cell_grad_T(g, dom.spacing)))
    c = rng.normal(size=dom.cell_shape + (2,))
    assert np.sum(cell_mean(u, 2) * c) == pytest.approx(np.sum(u * cell_mean_T(c, 2)))


def test_grad_fd_orders():
    errs = []
    for n in (8, 16, 32):
        dom = GridDomain.box((1.0, 1.0), (n, n))
        x = dom.node_coords()
        quad = x[..., 0] ** 2 + 3 * x[..., 0] * x[..., 1]
        g = grad_fd(quad, dom)
        np.testing.assert_allclose(g[..., 0], 2 * x[..., 0] + 3 * x[..., 1], atol=1e-10)
        s = np.sin(3 * x[..., 0]) * np.cos(2 * x[..., 1])
        errs.append(np.abs(grad_fd(s, dom)[..., 0] - 3 * np.cos(3 * x[..., 0]) * np.cos(2 * x[..., 1])).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_stiffness_is_hessian_of_quadratic_energy(homogeneous, rng):
    dom = GridDomain.box((1.0, 1.0), (5, 5))
    y = rng.normal(size=dom.node_shape + (2,))
    P = PlasticField.constant(dom)
    t = cell_terms(homogeneous, 1.0, y, P, dom, grads=("y",))
    K = quadratic_stiffness(dom, np.ones(dom.cell_shape), np.broadcast_to(np.eye(2), dom.cell_shape + (2, 2)))
    np.testing.assert_allclose(K @ y.reshape(-1, 2), t.grad_y.reshape(-1, 2), atol=1e-12)


def test_outside_k_gives_infinite_energy(homogeneous):
    dom = GridDomain.box((1.0, 1.0), (4, 4))
    vals = PlasticField.constant(dom).values
    vals[2, 2] = T.expm(np.diag([0.5, -0.5, 0.0]))
    assert k_violations(homogeneous, vals, dom).sum() == 1
    assert energy_total(homogeneous, 1.0, DeformationField.identity(dom), vals, dom).total == math.inf


def test_input_checks(homogeneous):
    dom = GridDomain.box((1.0, 1.0), (4, 4))
    with pytest.raises(InputError):
        PlasticField(np.broadcast_to(2 * np.eye(3), dom.node_shape + (3, 3)))
    with pytest.raises(EpsNonPositive):
        energy_total(homogeneous, 0.0, DeformationField.identity(dom), PlasticField.constant(dom), dom)
    with pytest.raises(InputError):
        GridDomain.box((1.0, 1.0), (1, 4))
    with pytest.raises(InputError):
        dom.with_mask(np.ones((3, 3), bool))


def test_seminorms(homogeneous):
    dom = GridDomain.box((2.0, 1.0), (8, 4))
    s = sobolev_seminorms(DeformationField.identity(dom), PlasticField.constant(dom), dom)
    assert s["grad_y_sq"] == pytest.approx(2 * 2.0)
    assert s["grad_P_q"] == 0.0 and s["P_sup_dist"] == 0.0
