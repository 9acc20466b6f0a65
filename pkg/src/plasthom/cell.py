"""Cell problems for the homogenized densities.

``W_hom(F, G)`` is approximated on cubes ``(0, lam)^d`` by minimizing the
discrete elastic energy of ``x -> F x + u(x)`` with plastic strain ``G``
over fluctuations ``u`` vanishing on the boundary (or, optionally,
periodic ones).  ``H_hom(F)`` is the cell average of ``H(., F)``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from . import tensor as T
from .energy import (GridDomain, PlasticField, _psum, cell_terms, elastic_energy_grad,
                     plane_background, quadratic_stiffness)
from .errors import InputError, NoConvergence, OutsideK
from .materials import MaterialModel

METHODS = ("auto", "direct", "lbfgs", "gd")
BOUNDARIES = ("dirichlet", "periodic")


@dataclass(frozen=True)
class CellProblemConfig:
    """Cell-problem settings.

    ``method``: ``gd`` is steepest descent with Armijo backtracking,
    ``lbfgs`` the quasi-Newton variant, ``direct`` a sparse solve of the
    normal equations (quadratic densities only); ``auto`` picks ``direct``
    when available.  ``boundary="periodic"`` is an extension for comparison.
    """

    lambdas: tuple = (1, 2, 4, 8)
    resolution: int = 8
    dim: int = 2
    method: str = "auto"
    boundary: str = "dirichlet"
    max_iter: int = 20000
    gtol: float = 1e-7
    armijo: float = 1e-4
    shrink: float = 0.5
    reduction: str | None = None

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        if not lams or any(b <= a for a, b in zip(lams, lams[1:])) or lams[0] <= 0:
            raise InputError("lambda ladder must be positive and strictly increasing")
        object.__setattr__(self, "lambdas", lams)
        if self.resolution < 8:
            raise InputError("resolution must be >= 8 per unit length")
        if self.dim not in (2, 3):
            raise InputError("dimension must be 2 or 3")
        if self.method not in METHODS:
            raise InputError(f"method must be one of {METHODS}")
        if self.boundary not in BOUNDARIES:
            raise InputError(f"boundary must be one of {BOUNDARIES}")
        if self.reduction not in (None, "laminate"):
            raise InputError("reduction must be None or 'laminate'")
        for lam in lams:
            n = lam * self.resolution
            if abs(n - round(n)) > 1e-9:
                raise InputError(f"lambda {lam} times resolution is not an integer")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambdas" in d:
            d["lambdas"] = tuple(d["lambdas"])
        return cls(**d)


@dataclass
class CellSolve:
    lam: float
    value: float
    iterations: int
    converged: bool
    grad_norm: float
    fluctuation: np.ndarray = field(repr=False)
    seconds: float = 0.0


@dataclass
class WhomResult:
    F: np.ndarray
    G: np.ndarray
    solves: list

    @property
    def values(self) -> list:
        return [s.value for s in self.solves]

    @property
    def lambdas(self) -> list:
        return [s.lam for s in self.solves]

    @property
    def value(self) -> float:
        """Value at the largest cell size."""
        return self.solves[-1].value

    @property
    def spread(self) -> float:
        """Relative change between the last two cell sizes (0 for a single rung)."""
        if len(self.solves) < 2:
            return 0.0
        a, b = self.solves[-2].value, self.solves[-1].value
        return abs(a - b) / max(abs(b), 1e-300)

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.solves)

    @property
    def fluctuation(self) -> np.ndarray:
        return self.solves[-1].fluctuation

    def rows(self) -> list[dict]:
        out = []
        for s in self.solves:
            row = {f"F{i}{j}": float(self.F[i, j]) for i in range(3) for j in range(3)}
            row.update({f"G{i}{j}": float(self.G[i, j]) for i in range(3) for j in range(3)})
            row.update(**{"lambda": s.lam}, value=s.value, iterations=s.iterations,
                       converged=s.converged)
            out.append(row)
        return out

    def to_json(self) -> str:
        return json.dumps({"F": self.F.tolist(), "G": self.G.tolist(), "rows": self.rows(),
                           "value": self.value, "spread": self.spread,
                           "converged": self.converged}, indent=2)


# -- degrees of freedom -------------------------------------------------------------------

class _Dofs:
    """Maps free fluctuation values to nodal arrays for either boundary condition."""

    def __init__(self, domain: GridDomain, boundary: str, axis: int | None = None):
        shape = domain.node_shape
        idx = np.indices(shape)
        if axis is not None:
            i, n = idx[axis], shape[axis]
            if boundary == "dirichlet":
                owner = np.where((i > 0) & (i < n - 1), i - 1, -1)
            else:
                owner = i % (n - 1)
        elif boundary == "dirichlet":
            inner = np.all([(i > 0) & (i < n - 1) for i, n in zip(idx, shape)], axis=0)
            owner = np.full(shape, -1)
            owner[inner] = np.arange(int(inner.sum()))
        else:
            cells = domain.cell_shape
            wrapped = tuple(i % c for i, c in zip(idx, cells))
            owner = np.ravel_multi_index(wrapped, cells)
        self.owner = owner
        self.count = int(owner.max()) + 1
        self.dim = domain.dim
        self.active = owner >= 0

    def expand(self, u):
        u = u.reshape(self.count, self.dim)
        full = np.zeros(self.owner.shape + (self.dim,))
        full[self.active] = u[self.owner[self.active]]
        return full

    def restrict(self, g):
        out = np.zeros((self.count, self.dim))
        np.add.at(out, self.owner[self.active], g[self.active])
        return out.ravel()

    def matrix(self):
        n = self.owner.size
        act = self.active.ravel()
        return sp.csr_matrix((np.ones(int(act.sum())), (self.owner.ravel()[act], np.arange(n)[act])),
                             shape=(self.count, n))


def _stiffness(model, G, domain):
    """Scalar stiffness of the quadratic elastic energy (per displacement component)."""
    ginv = T.inverse(G)
    c = (ginv @ ginv.T)[: domain.dim, : domain.dim]
    a = model.W.weight(domain.cell_centers())
    return quadratic_stiffness(domain, a, np.broadcast_to(c, a.shape + c.shape))


def _cell_domain(lam, config):
    n = int(round(lam * config.resolution))
    return GridDomain.box((lam,) * config.dim, (n,) * config.dim)


def check_in_k(model: MaterialModel, G) -> np.ndarray:
    g = np.asarray(T.SL3Element(G).value)
    if not bool(model.in_k(g)):
        raise OutsideK("G lies outside K")
    return g


def whom_cell(model: MaterialModel, F, G, lam: float,
              config: CellProblemConfig | None = None) -> CellSolve:
    """Discrete ``lam^-d inf_u sum W(x, (F + grad u) G^-1)`` over admissible fluctuations."""
    config = config or CellProblemConfig()
    F = T.as_mat3(F)
    G = check_in_k(model, G)
    t0 = time.perf_counter()
    dom = _cell_domain(lam, config)
    d = dom.dim
    vol = float(lam) ** d
    P = PlasticField.constant(dom, G)
    axis = None
    if config.reduction == "laminate":
        wf = model.W.weight
        if wf.kind != "laminate" or wf.axis >= d:
            raise InputError("the laminate reduction needs a laminate weight along a grid axis")
        axis = wf.axis
    dofs = _Dofs(dom, config.boundary, axis)

    def fun(u):
        e, g = elastic_energy_grad(model, 1.0, dofs.expand(u), P, dom, background=F)
        return e / vol, dofs.restrict(g) / vol

    x0 = np.zeros(dofs.count * d)
    e0, g0 = fun(x0)
    g0n = float(np.linalg.norm(g0))
    target = max(config.gtol * g0n, 1e-13)
    method = config.method
    if method == "auto":
        method = "direct" if model.W.quadratic else "lbfgs"
    if method == "direct" and not model.W.quadratic:
        raise InputError("direct cell solves need a quadratic elastic density")

    if g0n <= 1e-13:
        x, nit = x0, 0
    elif method == "direct":
        x, nit = _direct_solve(fun, x0, g0, dofs, model, G, dom, vol, config.boundary)
    elif method == "lbfgs":
        res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                       options={"maxiter": config.max_iter, "maxcor": 20, "ftol": 1e-16,
                                "gtol": target / math.sqrt(x0.size), "maxls": 50})
        x, nit = res.x, int(res.nit)
    else:
        x, nit = _gradient_descent(fun, x0, target, config)

    e, g = fun(x)
    gn = float(np.linalg.norm(g))
    converged = gn <= max(target, 1e-12 * max(1.0, g0n)) or (method == "direct")
    value = _psum(cell_terms(model, 1.0, dofs.expand(x), P, dom, background=F).elastic) / vol
    solve = CellSolve(float(lam), value, nit, bool(converged), gn, dofs.expand(x),
                      time.perf_counter() - t0)
    if not converged:
        raise NoConvergence(f"cell problem at lambda={lam} stopped with |grad| = {gn:.3g} "
                            f"(target {target:.3g}) after {nit} iterations", best=solve)
    return solve


def _direct_solve(fun, x0, g0, dofs, model, G, dom, vol, boundary):
    d = dom.dim
    R = dofs.matrix()
    K = (R @ _stiffness(model, G, dom) @ R.T).tocsc() / vol
    # constants lie in the kernel of the periodic problem; pin the first node
    keep = slice(1, None) if boundary == "periodic" else slice(None)
    lu = spla.splu(K[keep][:, keep].tocsc())
    x = x0.reshape(dofs.count, d).copy()
    g = g0
    for _ in range(2):  # solve plus one refinement step against round-off
        x[keep] -= lu.solve(g.reshape(dofs.count, d)[keep])
        _, g = fun(x.ravel())
    return x.ravel(), 1


def _gradient_descent(fun, x, target, config):
    e, g = fun(x)
    step = 1.0
    for it in range(1, config.max_iter + 1):
        gg = float(g @ g)
        if math.sqrt(gg) <= target:
            return x, it - 1
        while True:
            xn = x - step * g
            en, gn = fun(xn)
            if en <= e - config.armijo * step * gg:
                break
            step *= config.shrink
            if step < 1e-30:
                return x, it
        x, e, g = xn, en, gn
        step /= config.shrink
    return x, config.max_iter


def whom(model: MaterialModel, F, G, config: CellProblemConfig | None = None) -> WhomResult:
    """Run the cell problem along the ladder of cell sizes."""
    config = config or CellProblemConfig()
    F = T.as_mat3(F)
    G = check_in_k(model, G)
    solves = []
    for lam in config.lambdas:
        try:
            solves.append(whom_cell(model, F, G, lam, config))
        except NoConvergence as exc:
            solves.append(exc.best)
            exc.best = WhomResult(F, G, solves)
            raise
    return WhomResult(F, G, solves)


def hhom(model: MaterialModel, F, resolution: int = 8, dim: int = 3) -> float:
    """Cell average of ``H(., F)`` by midpoint quadrature on a ``resolution^dim`` grid."""
    p = T.SL3Element(F).value
    if not bool(model.in_k(p)):
        raise OutsideK("F lies outside K")
    dom = GridDomain.box((1.0,) * dim, (int(resolution),) * dim)
    mean_weight = _psum(model.H.weight(dom.cell_centers())) / dom.cell_shape[0] ** dim
    return float(mean_weight * np.sum((p - T.IDENTITY) ** 2))


def plane_macro(F2) -> np.ndarray:
    """Embed a 2x2 macroscopic gradient as ``[[F2, 0], [0, 1]]``."""
    f = plane_background(2)
    f[:2, :2] = np.asarray(F2, float)
    return f
