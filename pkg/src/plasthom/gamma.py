"""Desk-scale Gamma-convergence experiments in two dimensions.

``minimize_Feps`` minimizes the oscillating functional on a grid resolving
every period; ``minimize_Fhom`` minimizes the homogenized one, whose
elastic density is read from a table of cell-problem solutions.  What is
compared is the minimum value along a ladder of periods: Gamma-convergence
itself is not computable, convergence of minima under equi-coercivity is
its observable consequence.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from . import tensor as T
from .cell import CellProblemConfig, check_in_k, plane_macro, whom_cell
from .energy import (EnergyBreakdown, GridDomain, _psum, _retract_T, cell_grad, cell_grad_T,
                     cell_mean, cell_mean_T, cell_terms, energy_total, k_violations, l2_distance,
                     quadratic_stiffness, sobolev_seminorms, sup_distance)
from .errors import InputError, NoConvergence, TableOutOfRange
from .materials import MaterialModel

_BIG = 1e30
P_MODES = ("free", "fixed", "identity")


# -- configuration ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Two-dimensional experiment on the box ``(0, extent)``.

    ``y = F_bc x + b_bc`` on the boundary.  ``p_mode="free"`` leaves the
    plastic strain unconstrained; ``"fixed"`` pins boundary nodes to ``P_bc``;
    ``"identity"`` imposes ``P = I`` everywhere (purely elastic problem).
    """

    model: MaterialModel
    extent: tuple = (1.0, 1.0)
    F_bc: tuple = ((1.1, 0.0), (0.0, 1.0))
    b_bc: tuple = (0.0, 0.0)
    p_mode: str = "free"
    P_bc: tuple | None = None
    eps_ladder: tuple = (0.5, 0.25, 0.125, 0.0625)
    cells_per_period: int = 8
    hom_resolution: int = 16
    table_nodes: int = 5
    table_margin: float = 0.5
    table_min_halfwidth: float = 0.05
    tol: float = 1e-8
    max_outer: int = 200
    p_inner: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        object.__setattr__(self, "eps_ladder", tuple(float(e) for e in self.eps_ladder))
        if len(self.extent) != 2:
            raise InputError("experiments run in two dimensions")
        f = np.asarray(self.F_bc, float)
        if f.shape != (2, 2) or np.linalg.det(f) <= 0:
            raise InputError("F_bc must be a 2x2 matrix with positive determinant")
        if self.p_mode not in P_MODES:
            raise InputError(f"p_mode must be one of {P_MODES}")
        if self.p_mode == "fixed":
            if self.P_bc is None:
                raise InputError("fixed plastic boundary data needs P_bc")
            p = np.asarray(self.P_bc, float)
            if p.shape != (3, 3) or np.any(p[2, :2]) or np.any(p[:2, 2]) or p[2, 2] != 1.0:
                raise InputError("P_bc must have the plane form [[p, 0], [0, 1]]")
            check_in_k(self.model, p)
        if self.cells_per_period < 8:
            raise InputError("cells_per_period must be >= 8")
        if not self.eps_ladder:
            raise InputError("epsilon ladder is empty")
        for eps in self.eps_ladder:
            if not eps > 0:
                raise InputError("epsilon values must be positive")
            for e in self.extent:
                k = e / eps
                if abs(k - round(k)) > 1e-9:
                    raise InputError(f"eps = {eps} does not divide the extent {e}")

    @property
    def F_bc3(self) -> np.ndarray:
        return plane_macro(self.F_bc)

    @property
    def P_bc3(self) -> np.ndarray:
        return np.eye(3) if self.P_bc is None else np.asarray(T.SL3Element(self.P_bc).value)

    def eps_domain(self, eps: float) -> GridDomain:
        res = tuple(int(round(self.cells_per_period * e / eps)) for e in self.extent)
        return GridDomain.box(self.extent, res)

    def hom_domain(self) -> GridDomain:
        return GridDomain.box(self.extent, tuple(int(round(self.hom_resolution * e))
                                                 for e in self.extent))

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "model"}
        d["model"] = self.model.to_dict()
        d["F_bc"] = np.asarray(self.F_bc, float).tolist()
        d["P_bc"] = None if self.P_bc is None else np.asarray(self.P_bc, float).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "model" not in d:
            raise InputError("experiment config lacks 'model'")
        d["model"] = MaterialModel.from_dict(d["model"])
        for k in ("extent", "eps_ladder", "b_bc"):
            if k in d:
                d[k] = tuple(d[k])
        if "F_bc" in d:
            d["F_bc"] = tuple(tuple(r) for r in d["F_bc"])
        if d.get("P_bc") is not None:
            d["P_bc"] = tuple(tuple(r) for r in d["P_bc"])
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown experiment fields: {sorted(extra)}")
        return cls(**d)


# -- SL(2) logarithm in coordinates ------------------------------------------------------------

def _g(c):
    """``s / sinh(s)`` with ``cosh(s) = c`` and its derivative in ``c``."""
    c = np.asarray(c, float)
    u = c - 1.0
    small = np.abs(u) < 1e-3
    g = np.empty_like(c)
    dg = np.empty_like(c)
    us = u[small]
    g[small] = 1 - us / 3 + 2 * us ** 2 / 15 - 2 * us ** 3 / 35
    dg[small] = -1 / 3 + 4 * us / 15 - 6 * us ** 2 / 35
    big = ~small
    cb = c[big]
    if np.any(cb <= -1.0):
        raise InputError("plastic block has no real logarithm")
    gb = np.where(cb > 1, np.arccosh(np.maximum(cb, 1.0)) / np.sqrt(np.abs(cb ** 2 - 1)),
                  np.arccos(np.clip(cb, -1.0, 1.0)) / np.sqrt(np.abs(1 - cb ** 2)))
    g[big] = gb
    dg[big] = (1 - cb * gb) / (cb ** 2 - 1)
    return g, dg


def sl2_log_coords(p2) -> np.ndarray:
    """Coordinates ``(eta11, eta12, eta21)`` of ``log p`` for ``p`` in SL(2)."""
    p2 = np.asarray(p2, float)
    c = 0.5 * (p2[..., 0, 0] + p2[..., 1, 1])
    g, _ = _g(c)
    return np.stack([g * (p2[..., 0, 0] - c), g * p2[..., 0, 1], g * p2[..., 1, 0]], axis=-1)


def sl2_log_coords_T(p2, gc) -> np.ndarray:
    """Adjoint of the derivative of ``sl2_log_coords`` at ``p2`` applied to ``gc``."""
    p2 = np.asarray(p2, float)
    c = 0.5 * (p2[..., 0, 0] + p2[..., 1, 1])
    g, dg = _g(c)
    m = np.zeros(p2.shape)
    m[..., 0, 0] = gc[..., 0]
    m[..., 0, 1] = gc[..., 1]
    m[..., 1, 0] = gc[..., 2]
    shifted = p2 - c[..., None, None] * np.eye(2)
    inner = np.sum(m * shifted, axis=(-2, -1))
    trm = m[..., 0, 0] + m[..., 1, 1]
    out = g[..., None, None] * m
    out += (0.5 * (dg * inner - g * trm))[..., None, None] * np.eye(2)
    return out


def sl2_from_coords(eta) -> np.ndarray:
    eta = np.asarray(eta, float)
    m = np.zeros(eta.shape[:-1] + (3, 3))
    m[..., 0, 0] = eta[..., 0]
    m[..., 1, 1] = -eta[..., 0]
    m[..., 0, 1] = eta[..., 1]
    m[..., 1, 0] = eta[..., 2]
    return T.retract_sl3(T.expm(m), block=2)


# -- homogenized density table -------------------------------------------------------------------

_E_BASIS = np.eye(4).reshape(4, 2, 2)


@dataclass(eq=False)
class WhomTable:
    """Homogenized elastic density ``W_hom(F, G)`` for plane gradients.

    Stores, on a grid of log-coordinates ``eta`` of ``G``, the coefficients
    of the quadratic ``E -> W_hom(E G, G) = e.Q e + l.e + c`` with
    ``e = vec(E)``.  Coefficients are multilinear in ``eta``; the quadratic
    is exact in ``F``.  For ``x``-independent quadratic ``W`` the stored
    coefficients are constant, so the interpolation is exact.
    """

    halfwidth: float
    nodes: int
    quad: np.ndarray
    lin: np.ndarray
    const: np.ndarray
    solves: int = 0
    seconds: float = 0.0

    @property
    def step(self) -> float:
        return 2.0 * self.halfwidth / (self.nodes - 1)

    def _locate(self, eta):
        x = (np.asarray(eta, float) + self.halfwidth) / self.step
        if np.any(x < -1e-9) or np.any(x > self.nodes - 1 + 1e-9):
            worst = float(np.max(np.abs(eta)))
            raise TableOutOfRange(f"log-coordinate {worst:.4g} outside the table "
                                  f"half-width {self.halfwidth:.4g}")
        i = np.clip(np.floor(x).astype(int), 0, self.nodes - 2)
        return i, np.clip(x - i, 0.0, 1.0)

    def _interp(self, arr, i, t, grad):
        val = 0.0
        dval = [0.0, 0.0, 0.0]
        trail = (None,) * (arr.ndim - 3)
        for s in np.ndindex(2, 2, 2):
            w = [t[..., k] if s[k] else 1.0 - t[..., k] for k in range(3)]
            a = arr[i[..., 0] + s[0], i[..., 1] + s[1], i[..., 2] + s[2]]
            val = val + (w[0] * w[1] * w[2])[(...,) + trail] * a
            if grad:
                for k in range(3):
                    dw = (1.0 if s[k] else -1.0) / self.step
                    others = [w[m] for m in range(3) if m != k]
                    dval[k] = dval[k] + (dw * others[0] * others[1])[(...,) + trail] * a
        return val, dval

    def evaluate(self, E2, eta, grad: bool = False):
        """Density at ``F = E G``; with ``grad`` also d/dE and d/d(eta)."""
        i, t = self._locate(eta)
        e = np.asarray(E2, float).reshape(E2.shape[:-2] + (4,))
        Q, dQ = self._interp(self.quad, i, t, grad)
        L, dL = self._interp(self.lin, i, t, grad)
        C, dC = self._interp(self.const, i, t, grad)
        Qe = np.einsum("...ij,...j->...i", Q, e)
        val = np.sum(e * Qe, axis=-1) + np.sum(L * e, axis=-1) + C
        if not grad:
            return val, None, None
        gE = (2.0 * Qe + L).reshape(E2.shape)
        geta = np.stack([np.einsum("...i,...ij,...j->...", e, dQ[k], e) + np.sum(dL[k] * e, axis=-1)
                         + dC[k] for k in range(3)], axis=-1)
        return val, gE, geta

    def __call__(self, F2, G):
        """``W_hom`` for a single plane gradient ``F2`` and plastic strain ``G``."""
        G = np.asarray(G, float)
        E2 = np.asarray(F2, float) @ np.linalg.inv(G[:2, :2])
        v, _, _ = self.evaluate(E2[None], sl2_log_coords(G[:2, :2])[None])
        return float(v[0])

    def to_dict(self):
        return {"halfwidth": self.halfwidth, "nodes": self.nodes, "solves": self.solves,
                "seconds": self.seconds}


def table_halfwidth(config: ExperimentConfig) -> float:
    """Half-width of the ``eta`` box: boundary data plus the configured margin."""
    f = np.asarray(config.F_bc, float)
    w, v = np.linalg.eigh(f.T @ f)
    u = (v * np.sqrt(w)) @ v.T
    u /= math.sqrt(np.linalg.det(u))
    pts = [sl2_log_coords(u)]
    if config.p_mode == "fixed":
        pts.append(sl2_log_coords(config.P_bc3[:2, :2]))
    r = max(float(np.max(np.abs(p))) for p in pts)
    return max((1.0 + config.table_margin) * r, config.table_min_halfwidth)


def _table_node(args):
    model, eta, res = args
    G = sl2_from_coords(np.asarray(eta))
    cfg = CellProblemConfig(lambdas=(1,), resolution=res, boundary="periodic")
    G2 = G[:2, :2]

    def w(E2):
        return whom_cell(model, plane_macro(E2 @ G2), G, 1.0, cfg).value

    c = w(np.zeros((2, 2)))
    plus = [w(e) for e in _E_BASIS]
    minus = [w(-e) for e in _E_BASIS]
    lin = np.array([(p - m) / 2 for p, m in zip(plus, minus)])
    quad = np.diag([(p + m) / 2 - c for p, m in zip(plus, minus)])
    for k in range(4):
        for l in range(k + 1, 4):
            s = w(_E_BASIS[k] + _E_BASIS[l])
            quad[k, l] = quad[l, k] = (s - quad[k, k] - quad[l, l] - lin[k] - lin[l] - c) / 2
    return quad, lin, c


def build_whom_table(config: ExperimentConfig, jobs: int = 1) -> WhomTable:
    """Tabulate the homogenized density with periodic unit-cell solves."""
    t0 = time.perf_counter()
    n = int(config.table_nodes)
    if n < 2:
        raise InputError("table needs at least two nodes per axis")
    hw = table_halfwidth(config)
    axis = np.linspace(-hw, hw, n)
    etas = [(a, b, c) for a in axis for b in axis for c in axis]
    for eta in (etas[0], etas[-1]):
        check_in_k(config.model, sl2_from_coords(np.asarray(eta)))
    args = [(config.model, e, config.cells_per_period) for e in etas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_table_node, args, chunksize=max(1, len(args) // (4 * jobs))))
    else:
        out = [_table_node(a) for a in args]
    quad = np.array([o[0] for o in out]).reshape(n, n, n, 4, 4)
    lin = np.array([o[1] for o in out]).reshape(n, n, n, 4)
    const = np.array([o[2] for o in out]).reshape(n, n, n)
    return WhomTable(hw, n, quad, lin, const, 15 * len(etas), time.perf_counter() - t0)


# -- discrete functionals -----------------------------------------------------------------------

def _inv2(p2):
    d = p2[..., 0, 0] * p2[..., 1, 1] - p2[..., 0, 1] * p2[..., 1, 0]
    out = np.empty(p2.shape)
    out[..., 0, 0] = p2[..., 1, 1]
    out[..., 1, 1] = p2[..., 0, 0]
    out[..., 0, 1] = -p2[..., 0, 1]
    out[..., 1, 0] = -p2[..., 1, 0]
    return out / d[..., None, None]


class _Functional:
    """Common interface: breakdown, value and nodal gradients."""

    def __init__(self, model: MaterialModel, domain: GridDomain):
        self.model = model
        self.domain = domain

    def terms(self, y, P, grads=()):
        raise NotImplementedError

    def value(self, y, P) -> float:
        return self.terms(y, P)[0]


class EpsFunctional(_Functional):
    def __init__(self, model, domain, eps):
        super().__init__(model, domain)
        self.eps = eps

    def terms(self, y, P, grads=()):
        t = cell_terms(self.model, self.eps, y, P, self.domain, grads=grads)
        val = _psum(t.elastic) + _psum(t.hardening) + _psum(t.regularization)
        return val, t.grad_y, t.grad_P

    def breakdown(self, y, P) -> EnergyBreakdown:
        return energy_total(self.model, self.eps, y, P, self.domain)

    def quadratic_y(self) -> bool:
        return self.model.W.quadratic

    def stiffness(self, P):
        pc = T.retract_sl3(cell_mean(P, 2), block=2)
        pinv = _inv2(pc[..., :2, :2])
        a = self.model.W.weight(self.domain.cell_centers() / self.eps)
        return quadratic_stiffness(self.domain, a, pinv @ np.swapaxes(pinv, -1, -2))


class HomFunctional(_Functional):
    """``W_hom(grad y, P) + H_hom(P) + |grad P|^q`` with ``W_hom`` from a table."""

    def __init__(self, model, domain, table: WhomTable, hbar: float):
        super().__init__(model, domain)
        self.table = table
        self.hbar = hbar

    def _cells(self, y, P, grad):
        h = self.domain.spacing
        vol = self.domain.cell_volume
        gy = cell_grad(y, h)
        pm = cell_mean(P, 2)
        pc = T.retract_sl3(pm, block=2)
        pc2 = pc[..., :2, :2]
        pinv2 = _inv2(pc2)
        E2 = gy @ pinv2
        eta = sl2_log_coords(pc2)
        w, gE, geta = self.table.evaluate(E2, eta, grad)
        hh = self.hbar * np.sum((pc - T.IDENTITY) ** 2, axis=(-2, -1))
        gp = cell_grad(P, h)
        gp2 = np.sum(gp ** 2, axis=(-3, -2, -1))
        r = gp2 ** (self.model.q / 2.0)
        return dict(h=h, vol=vol, gy=gy, pm=pm, pc=pc, pc2=pc2, pinv2=pinv2, E2=E2, w=w, gE=gE,
                    geta=geta, hh=hh, gp=gp, gp2=gp2, r=r)

    def terms(self, y, P, grads=()):
        c = self._cells(y, P, bool(grads))
        vol = c["vol"]
        val = (_psum(c["w"]) + _psum(c["hh"]) + _psum(c["r"])) * vol
        gyn = gPn = None
        if "y" in grads:
            gyn = cell_grad_T(c["gE"] @ np.swapaxes(c["pinv2"], -1, -2) * vol, c["h"])
        if "P" in grads:
            pinv2_t = np.swapaxes(c["pinv2"], -1, -2)
            g2 = -np.swapaxes(c["E2"], -1, -2) @ c["gE"] @ pinv2_t
            g2 += sl2_log_coords_T(c["pc2"], c["geta"])
            gpc = 2.0 * self.hbar * (c["pc"] - T.IDENTITY)
            gpc[..., :2, :2] += g2
            gm = _retract_T(c["pm"], gpc * vol, 2)
            gPn = cell_mean_T(gm, 2)
            q = self.model.q
            with np.errstate(divide="ignore", invalid="ignore"):
                k = np.where(c["gp2"] > 0, q * c["gp2"] ** (q / 2.0 - 1.0), 0.0) * vol
            gPn += cell_grad_T(k[..., None, None, None] * c["gp"], c["h"])
        return val, gyn, gPn

    def breakdown(self, y, P) -> EnergyBreakdown:
        c = self._cells(y, P, False)
        vol = c["vol"]
        hard = _psum(c["hh"]) * vol
        if np.any(k_violations(self.model, P, self.domain)):
            hard = math.inf
        return EnergyBreakdown(_psum(c["w"]) * vol, hard, _psum(c["r"]) * vol)

    def quadratic_y(self) -> bool:
        return False


# -- alternating minimization -------------------------------------------------------------------------

@dataclass
class MinResult:
    y: np.ndarray = field(repr=False)
    P: np.ndarray = field(repr=False)
    energy: EnergyBreakdown
    iterations: int
    converged: bool
    seconds: float
    history: list = field(default_factory=list, repr=False)
    projections: int = 0

    @property
    def value(self) -> float:
        return self.energy.total


def _p_of(X):
    m = np.broadcast_to(np.eye(3), X.shape[:-2] + (3, 3)).copy()
    m[..., :2, :2] += X
    return m


def _project_into_k(model, P):
    """Pull nodes outside K back along the group path from I."""
    bad = ~np.asarray(model.in_k(P))
    count = int(bad.sum())
    if count:
        lg = T.logm(P[bad])
        up = 0.5 * (model.norm.value(lg) + model.norm.value(-lg))
        s = np.minimum(1.0, model.k_radius / up * (1 - 1e-9))
        P = P.copy()
        P[bad] = T.retract_sl3(T.expm(s[:, None, None] * lg), block=2)
    return P, count


def _y_step(fun: _Functional, y, P, free, lbfgs_iter=2000):
    if fun.quadratic_y():
        _, g, _ = fun.terms(y, P, grads=("y",))
        K = fun.stiffness(P)
        idx = np.flatnonzero(free.ravel())
        lu = spla.splu(K[idx][:, idx].tocsc())
        y = y.copy()
        flat = y.reshape(-1, 2)
        for _ in range(2):  # solve plus one refinement step
            flat[idx] -= lu.solve(g.reshape(-1, 2)[idx])
            _, g, _ = fun.terms(y, P, grads=("y",))
        return y
    mask = free

    def f(u):
        yy = y.copy()
        yy[mask] = u.reshape(-1, 2)
        v, g, _ = fun.terms(yy, P, grads=("y",))
        return v, g[mask].ravel()

    res = minimize(f, y[mask].ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": lbfgs_iter, "ftol": 1e-15, "gtol": 1e-12, "maxcor": 20})
    y = y.copy()
    y[mask] = res.x.reshape(-1, 2)
    return y


def _p_step(fun: _Functional, y, X, free, iters):
    def f(v):
        XX = X.copy()
        XX[free] = v.reshape(-1, 2, 2)
        m = _p_of(XX)
        dt = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
        if np.any(dt <= 1e-8):
            return _BIG, np.zeros_like(v)
        P = T.retract_sl3(m, block=2)
        try:
            val, _, gP = fun.terms(y, P, grads=("P",))
        except TableOutOfRange:
            return _BIG, np.zeros_like(v)
        gX = _retract_T(m, gP, 2)[..., :2, :2]
        return val, gX[free].ravel()

    res = minimize(f, X[free].ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": iters, "ftol": 1e-15, "gtol": 1e-12, "maxcor": 20})
    X = X.copy()
    X[free] = res.x.reshape(-1, 2, 2)
    return X


def _alternate(fun: _Functional, config: ExperimentConfig) -> MinResult:
    t0 = time.perf_counter()
    dom = fun.domain
    x = dom.node_coords()
    F = np.asarray(config.F_bc, float)
    y = x @ F.T + np.asarray(config.b_bc, float)
    boundary = dom.boundary_nodes()
    free_y = ~boundary
    P = np.broadcast_to(config.P_bc3 if config.p_mode == "fixed" else np.eye(3),
                        dom.node_shape + (3, 3)).copy()
    free_p = {"free": np.ones(dom.node_shape, bool), "fixed": ~boundary,
              "identity": np.zeros(dom.node_shape, bool)}[config.p_mode]
    X = P[..., :2, :2] - np.eye(2)
    e = fun.value(y, P)
    hist = [e]
    converged = False
    projections = 0
    it = 0
    for it in range(1, config.max_outer + 1):
        y = _y_step(fun, y, P, free_y)
        if np.any(free_p):
            X = _p_step(fun, y, X, free_p, config.p_inner)
        P = T.retract_sl3(_p_of(X), block=2)
        P, nproj = _project_into_k(fun.model, P)
        projections += nproj
        X = P[..., :2, :2] - np.eye(2)
        e_new = fun.value(y, P)
        hist.append(e_new)
        rel = abs(e - e_new) / max(abs(e_new), 1e-300)
        e = e_new
        if rel < config.tol:
            converged = True
            break
    res = MinResult(y, P, fun.breakdown(y, P), it, converged, time.perf_counter() - t0, hist,
                    projections)
    if not converged:
        raise NoConvergence(f"alternating minimization did not settle in {config.max_outer} "
                            f"sweeps (last relative change {rel:.3g})", best=res)
    return res


def minimize_Feps(config: ExperimentConfig, eps: float) -> MinResult:
    if eps not in config.eps_ladder:
        replace(config, eps_ladder=(eps,))  # commensurability check
    return _alternate(EpsFunctional(config.model, config.eps_domain(eps), eps), config)


def mean_hardening_weight(model: MaterialModel, resolution: int) -> float:
    dom = GridDomain.box((1.0, 1.0), (resolution, resolution))
    return _psum(model.H.weight(dom.cell_centers())) / resolution ** 2


def minimize_Fhom(config: ExperimentConfig, table: WhomTable | None = None,
                  jobs: int = 1) -> tuple[MinResult, WhomTable]:
    table = table or build_whom_table(config, jobs)
    hbar = mean_hardening_weight(config.model, config.cells_per_period)
    fun = HomFunctional(config.model, config.hom_domain(), table, hbar)
    res = _alternate(fun, config)
    # the accepted iterate must lie inside the table
    table._locate(sl2_log_coords(T.retract_sl3(cell_mean(res.P, 2), block=2)[..., :2, :2]))
    return res, table


def prolong(u) -> np.ndarray:
    """Bilinear refinement of a 2D nodal field onto the grid with half the spacing."""
    u = np.asarray(u, float)
    n0, n1 = u.shape[:2]
    out = np.zeros((2 * n0 - 1, 2 * n1 - 1) + u.shape[2:])
    out[::2, ::2] = u
    out[1::2, ::2] = 0.5 * (u[:-1] + u[1:])
    out[:, 1::2] = 0.5 * (out[:, :-2:2] + out[:, 2::2])
    return out


def requadrature(config: ExperimentConfig, res: MinResult, eps: float) -> float:
    """Energy of the ``eps`` minimizer, refined, under the period ``eps / 2``."""
    dom = config.eps_domain(eps / 2)
    P = T.retract_sl3(prolong(res.P), block=2)
    return EpsFunctional(config.model, dom, eps / 2).breakdown(prolong(res.y), P).total


# -- convergence table -----------------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    eps: float
    min_Feps: float
    min_Fhom: float
    gap: float
    iterations: int
    seconds: float
    converged: bool = True

    @property
    def rel_gap(self) -> float:
        return self.gap / max(abs(self.min_Fhom), 1e-300)


@dataclass
class ConvergenceTable:
    rows: list
    hom: MinResult = field(repr=False)
    table: WhomTable = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def gaps(self) -> list:
        return [r.gap for r in self.rows]

    @property
    def final_rel_gap(self) -> float:
        return self.rows[-1].rel_gap

    def trend_ok(self, slack: float = 0.10, atol: float | None = None) -> bool:
        """Gaps non-increasing up to ``slack``; gaps below ``atol`` count as zero."""
        if atol is None:
            atol = 1e-9 * max(abs(self.hom.value), 1.0)
        g = self.gaps
        return all(b <= a * (1 + slack) + atol for a, b in zip(g, g[1:]))

    def csv_rows(self) -> list[dict]:
        out = [{"eps": r.eps, "min_Feps": r.min_Feps, "min_Fhom": r.min_Fhom, "gap": r.gap,
                "rel_gap": r.rel_gap, "iterations": r.iterations, "seconds": r.seconds,
                "converged": r.converged} for r in self.rows]
        out.append({"eps": 0.0, "min_Feps": "", "min_Fhom": self.hom.value, "gap": "",
                    "rel_gap": "", "iterations": self.hom.iterations,
                    "seconds": self.hom.seconds, "converged": self.hom.converged})
        return out

    def to_dict(self):
        return {"rows": self.csv_rows(), "final_rel_gap": self.final_rel_gap,
                "trend_ok": self.trend_ok(), "table": self.table.to_dict(),
                "hom_energy": self.hom.energy.to_dict(), "diagnostics": self.diagnostics}


def _run_eps(args):
    config, eps = args
    try:
        res = minimize_Feps(config, eps)
    except NoConvergence as exc:
        res = exc.best
    return eps, res


def _common_nodes(res: MinResult, config: ExperimentConfig, eps: float, coarse: int):
    """Subsample nodal fields onto the coarsest grid of the ladder."""
    fine = config.eps_domain(eps).cell_shape[0]
    k = fine // coarse
    return res.y[::k, ::k], res.P[::k, ::k]


def convergence_table(config: ExperimentConfig, jobs: int = 1) -> ConvergenceTable:
    """Minimum values of ``F_eps`` along the ladder next to the homogenized minimum."""
    hom, table = minimize_Fhom(config, jobs=jobs)
    args = [(config, eps) for eps in config.eps_ladder]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = dict(ex.map(_run_eps, args))
    else:
        results = dict(_run_eps(a) for a in args)
    rows = []
    for eps in config.eps_ladder:
        r = results[eps]
        rows.append(ConvergenceRow(eps, r.value, hom.value, abs(r.value - hom.value), r.iterations,
                                   r.seconds, r.converged))

    # coercivity witness and tau-diagnostics on the coarsest common grid
    model = config.model
    coarse_res = min(config.eps_domain(e).cell_shape[0] for e in config.eps_ladder)
    coarse = GridDomain.box(config.extent, (coarse_res, coarse_res))
    diag = {"coercivity": [], "y_l2_steps": [], "P_sup_steps": [], "Pinv_sup_steps": [],
            "inverse_bound_ok": True, "projections": [results[e].projections for e in config.eps_ladder]}
    diag["requadrature"] = [[eps, results[eps].value, requadrature(config, results[eps], eps)]
                            for eps in config.eps_ladder]
    lower = model.W.c1 / model.c_K ** 2
    prev = None
    for eps in config.eps_ladder:
        r = results[eps]
        dom = config.eps_domain(eps)
        gy = sobolev_seminorms(r.y, r.P, dom, model.q)["grad_y_sq"]
        diag["coercivity"].append(bool(r.value >= lower * gy))
        cur = _common_nodes(r, config, eps, coarse_res)
        if prev is not None:
            dp = sup_distance(prev[1], cur[1])
            dpi = sup_distance(T.inverse(prev[1]), T.inverse(cur[1]))
            diag["y_l2_steps"].append(l2_distance(prev[0], cur[0], coarse))
            diag["P_sup_steps"].append(dp)
            diag["Pinv_sup_steps"].append(dpi)
            if dpi > model.c_K ** 2 * dp + 1e-12:
                diag["inverse_bound_ok"] = False
        prev = cur
    return ConvergenceTable(rows, hom, table, diag)


def experiment_summary(ct: ConvergenceTable) -> str:
    return json.dumps(ct.to_dict(), indent=2, default=float)
