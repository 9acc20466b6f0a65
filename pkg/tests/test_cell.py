import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plasthom import tensor as T
from plasthom.cell import CellProblemConfig, hhom, whom, whom_cell
from plasthom.errors import InputError, OutsideK
from plasthom.finsler import FROBENIUS, sample_in_k
from plasthom.materials import HardeningDensity, MaterialModel, ElasticDensity, WeightField

seeds = st.integers(0, 2 ** 31 - 1)
SMALL = CellProblemConfig(lambdas=(1, 2), resolution=8)


@settings(max_examples=8)
@given(seeds, st.sampled_from([2, 3]))
def test_homogeneous_density_has_no_fluctuation(seed, dim):
    from conftest import HOMOGENEOUS
    model = MaterialModel.from_dict(HOMOGENEOUS)
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(3, 3))
    G = sample_in_k(FROBENIUS, 0.5, rng, 1)[0]
    cfg = CellProblemConfig(lambdas=(1,), resolution=8, dim=dim)
    if dim == 2:
        F[2, :2] = F[:2, 2] = 0.0
        F[2, 2] = 1.0
        G = np.eye(3)
        G[:2, :2] += 0.1 * rng.normal(size=(2, 2))
        G = T.retract_sl3(G, block=2)
    val = whom(model, F, G, cfg).value
    assert val == pytest.approx(np.sum((F @ np.linalg.inv(G)) ** 2), rel=1e-9)


def test_laminate_bounds_and_periodic_limit(laminate):
    F = np.diag([1.0, 0.0, 0.0])
    res = whom(laminate, F, np.eye(3), CellProblemConfig(lambdas=(1, 2, 4), resolution=16))
    vals = res.values
    # Dirichlet cells decrease towards the periodic value 1.6 from above
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 1.6
    per = whom_cell(laminate, F, np.eye(3), 1.0, CellProblemConfig(lambdas=(1,), resolution=16,
                                                                    boundary="periodic"))
    assert per.value == pytest.approx(1.6, rel=1e-12)
    red = whom(laminate, F, np.eye(3), CellProblemConfig(lambdas=(1, 2), resolution=16,
                                                         reduction="laminate"))
    np.testing.assert_allclose(red.values, 1.6, rtol=1e-12)


def test_solvers_agree(laminate):
    F = np.array([[1.0, 0.3, 0.0], [0.1, 0.8, 0.0], [0.0, 0.0, 1.0]])
    G = T.expm(0.2 * np.array([[0.3, 1.0, 0.0], [0.0, -0.3, 0.0], [0.0, 0.0, 0.0]]))
    vals = [whom_cell(laminate, F, G, 1.0, CellProblemConfig(lambdas=(1,), method=m)).value
            for m in ("direct", "lbfgs", "gd")]
    assert vals[1] == pytest.approx(vals[0], rel=1e-9)
    assert vals[2] == pytest.approx(vals[0], rel=1e-9)


def test_nonquadratic_uses_iterative_solver():
    w = WeightField("laminate", 1.0, 2.0)
    model = MaterialModel(ElasticDensity(w, 2.5, declared=(1.0, 3.0, 3.0)), HardeningDensity(w))
    with pytest.raises(InputError):
        whom_cell(model, np.eye(3), np.eye(3), 1.0, CellProblemConfig(lambdas=(1,), method="direct"))
    s = whom_cell(model, np.diag([1.2, 1.0, 1.0]), np.eye(3), 1.0, CellProblemConfig(lambdas=(1,)))
    assert s.converged


def test_results_serialize(laminate):
    res = whom(laminate, np.eye(3), np.eye(3), SMALL)
    rows = res.rows()
    assert [r["lambda"] for r in rows] == [1.0, 2.0]
    assert {"F00", "G22", "value", "iterations", "converged"} <= set(rows[0])
    assert '"spread"' in res.to_json()


def test_hhom_exact_for_aligned_phases(laminate):
    p = T.expm(0.2 * np.diag([1.0, -1.0, 0.0]))
    assert hhom(laminate, p) == pytest.approx(2.0 * np.sum((p - np.eye(3)) ** 2), rel=1e-14)


def test_hhom_first_order_for_misaligned_phases():
    w = WeightField("laminate", 1.0, 3.0, fraction=0.3)
    model = MaterialModel(ElasticDensity(w), HardeningDensity(w))
    p = T.expm(0.2 * np.diag([1.0, -1.0, 0.0]))
    exact = w.mean * np.sum((p - np.eye(3)) ** 2)
    errs = [abs(hhom(model, p, r) - exact) for r in (8, 16, 32, 64, 128)]
    assert errs[-1] <= 2.0 / 128 * exact
    assert max(errs[1:]) <= errs[0]


def test_config_validation(laminate):
    with pytest.raises(InputError):
        CellProblemConfig(lambdas=(2, 1))
    with pytest.raises(InputError):
        CellProblemConfig(resolution=4)
    with pytest.raises(InputError):
        CellProblemConfig(lambdas=(1.05,), resolution=8)
    with pytest.raises(OutsideK):
        whom(laminate, np.eye(3), T.expm(np.diag([1.0, -1.0, 0.0])), SMALL)
    with pytest.raises(OutsideK):
        hhom(laminate, T.expm(np.diag([1.0, -1.0, 0.0])))
    assert CellProblemConfig.from_dict(SMALL.to_dict()) == SMALL
