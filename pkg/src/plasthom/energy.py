"""Grid fields and the discretized functional.

Fields live on the nodes of a uniform box grid; integrals use one-point
quadrature at cell centres, where gradients come from the multilinear (Q1)
element of the cell.  Both are exact for affine fields.

In two dimensions the plastic strain is stored as a 3x3 matrix
``diag(p, 1)`` and the deformation gradient is embedded as
``[[grad y, 0], [0, 1]]`` (plane strain).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import EpsNonPositive, InputError
from .materials import MaterialModel


# -- domain ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridDomain:
    """Box ``origin + [0, extent]`` split into ``resolution`` cells per axis.

    ``mask`` (boolean, one entry per cell) selects a subdomain; ``None``
    means every cell.
    """

    dim: int
    origin: tuple
    extent: tuple
    resolution: tuple
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise InputError("dimension must be 2 or 3")
        for name in ("origin", "extent", "resolution"):
            v = tuple(getattr(self, name))
            if len(v) != self.dim:
                raise InputError(f"{name} needs {self.dim} entries")
            object.__setattr__(self, name, v)
        if any(r < 2 for r in self.resolution):
            raise InputError("resolution must be >= 2 per axis")
        if any(not e > 0 for e in self.extent):
            raise InputError("extent must be positive")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != self.cell_shape:
                raise InputError(f"mask shape {m.shape} does not match cells {self.cell_shape}")
            m = m.copy()
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    @classmethod
    def box(cls, extent=(1.0, 1.0), resolution=(16, 16), origin=None):
        d = len(extent)
        return cls(d, tuple(origin or (0.0,) * d), tuple(float(e) for e in extent),
                   tuple(int(r) for r in resolution))

    @property
    def spacing(self) -> np.ndarray:
        return np.array(self.extent) / np.array(self.resolution)

    @property
    def cell_shape(self) -> tuple:
        return tuple(int(r) for r in self.resolution)

    @property
    def node_shape(self) -> tuple:
        return tuple(int(r) + 1 for r in self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return self.cell_volume * int(np.count_nonzero(self.cell_mask))

    @property
    def cell_mask(self) -> np.ndarray:
        return np.ones(self.cell_shape, bool) if self.mask is None else self.mask

    def axes(self, centers: bool = False):
        h = self.spacing
        if centers:
            return [o + h[k] * (np.arange(r) + 0.5)
                    for k, (o, r) in enumerate(zip(self.origin, self.resolution))]
        return [o + h[k] * np.arange(r + 1) for k, (o, r) in enumerate(zip(self.origin, self.resolution))]

    def node_coords(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def cell_centers(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(centers=True), indexing="ij"), axis=-1)

    def with_mask(self, mask) -> "GridDomain":
        return GridDomain(self.dim, self.origin, self.extent, self.resolution, mask)

    def box_mask(self, lo, hi) -> np.ndarray:
        """Cells whose centre lies in the open box ``(lo, hi)``."""
        c = self.cell_centers()
        return np.all((c > np.asarray(lo)) & (c < np.asarray(hi)), axis=-1)

    def boundary_nodes(self) -> np.ndarray:
        b = np.zeros(self.node_shape, bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            b[tuple(idx)] = True
            idx[k] = -1
            b[tuple(idx)] = True
        return b

    def node_mask(self, cell_mask=None) -> np.ndarray:
        """Nodes that are corners of at least one selected cell."""
        cm = self.cell_mask if cell_mask is None else np.asarray(cell_mask, bool)
        nm = np.zeros(self.node_shape, bool)
        for s in itertools.product((0, 1), repeat=self.dim):
            nm[tuple(slice(k, k + n) for k, n in zip(s, self.cell_shape))] |= cm
        return nm

    def to_dict(self):
        d = {"dim": self.dim, "origin": list(self.origin), "extent": list(self.extent),
             "resolution": list(self.resolution)}
        return d


# -- fields ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DeformationField:
    """Nodal deformation, shape ``node_shape + (dim,)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise InputError("deformation has non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def affine(cls, domain: GridDomain, A, b=None):
        x = domain.node_coords()
        A = np.asarray(A, float)
        b = np.zeros(domain.dim) if b is None else np.asarray(b, float)
        return cls(x @ A.T + b)

    @classmethod
    def identity(cls, domain: GridDomain):
        return cls.affine(domain, np.eye(domain.dim))


@dataclass(frozen=True, eq=False)
class PlasticField:
    """Nodal plastic strain, shape ``node_shape + (3, 3)``, every node in SL(3)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[-2:] != (3, 3):
            raise InputError("plastic field nodes must be 3x3")
        dev = np.abs(T.det(v) - 1.0)
        if np.any(dev > T.DET_TOL):
            raise InputError(f"plastic field leaves SL(3): max |det - 1| = {dev.max():.3g}")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, domain: GridDomain, p=None):
        p = np.eye(3) if p is None else np.asarray(p, float)
        return cls(np.broadcast_to(p, domain.node_shape + (3, 3)).copy())


@dataclass(frozen=True)
class EnergyBreakdown:
    elastic: float
    hardening: float
    regularization: float

    @property
    def total(self) -> float:
        if math.isinf(self.hardening):
            return math.inf
        return self.elastic + self.hardening + self.regularization

    @property
    def finite(self) -> bool:
        return math.isfinite(self.total)

    def to_dict(self):
        return {"elastic": self.elastic, "hardening": self.hardening,
                "regularization": self.regularization, "total": self.total}


def _values(f):
    return f.values if hasattr(f, "values") else np.asarray(f, dtype=float)


# -- Q1 cell operators -----------------------------------------------------------------

def _corners(d):
    return list(itertools.product((0, 1), repeat=d))


def _corner_slices(s, cells):
    return tuple(slice(k, k + n) for k, n in zip(s, cells))


def cell_mean(u, dim: int) -> np.ndarray:
    """Average of the ``2^dim`` corner values of each cell."""
    cells = tuple(n - 1 for n in u.shape[:dim])
    out = None
    for s in _corners(dim):
        v = u[_corner_slices(s, cells)]
        out = v.copy() if out is None else out + v
    return out / 2 ** dim


def cell_mean_T(g, dim: int) -> np.ndarray:
    cells = g.shape[:dim]
    out = np.zeros(tuple(n + 1 for n in cells) + g.shape[dim:])
    for s in _corners(dim):
        out[_corner_slices(s, cells)] += g
    return out / 2 ** dim


def cell_grad(u, h) -> np.ndarray:
    """Q1 gradient at cell centres: shape ``cells + u.shape[dim:] + (dim,)``."""
    d = len(h)
    cells = tuple(n - 1 for n in u.shape[:d])
    out = np.zeros(cells + u.shape[d:] + (d,))
    c = 1.0 / 2 ** (d - 1)
    for s in _corners(d):
        v = u[_corner_slices(s, cells)]
        for k in range(d):
            out[..., k] += ((2 * s[k] - 1) * c / h[k]) * v
    return out


def cell_grad_T(g, h) -> np.ndarray:
    """Adjoint of ``cell_grad``."""
    d = len(h)
    cells = g.shape[:d]
    out = np.zeros(tuple(n + 1 for n in cells) + g.shape[d:-1])
    c = 1.0 / 2 ** (d - 1)
    w = np.array([c / hk for hk in h])
    for s in _corners(d):
        sign = np.array([2 * sk - 1 for sk in s], float)
        out[_corner_slices(s, cells)] += g @ (sign * w)
    return out


def grad_fd(field, domain: GridDomain) -> np.ndarray:
    """Nodal gradient: central differences inside, second-order one-sided on the boundary.

    Returns shape ``node_shape + component_shape + (dim,)``.
    """
    u = _values(field)
    h = domain.spacing
    parts = np.gradient(u, *h, axis=tuple(range(domain.dim)), edge_order=2)
    return np.stack(parts, axis=-1)


# -- the functional ----------------------------------------------------------------------

def plane_background(dim: int) -> np.ndarray:
    """Constant part of the embedded deformation gradient: identity on the unused axes."""
    b = np.zeros((3, 3))
    for k in range(dim, 3):
        b[k, k] = 1.0
    return b


def embed_gradient(gy, background) -> np.ndarray:
    d = gy.shape[-1]
    f = np.broadcast_to(background, gy.shape[:-2] + (3, 3)).copy()
    f[..., :d, :d] += gy
    return f


def _retract_cells(m, dim):
    return T.retract_sl3(m, block=2 if dim == 2 else 3)


def _retract_T(m, g, dim):
    """Adjoint of the determinant retraction at ``m`` applied to ``g``."""
    b = 2 if dim == 2 else 3
    mb = m[..., :b, :b]
    gb = g[..., :b, :b]
    if b == 2:
        dt = mb[..., 0, 0] * mb[..., 1, 1] - mb[..., 0, 1] * mb[..., 1, 0]
        inv_t = np.stack([np.stack([mb[..., 1, 1], -mb[..., 1, 0]], -1),
                          np.stack([-mb[..., 0, 1], mb[..., 0, 0]], -1)], -2) / dt[..., None, None]
    else:
        dt = T.det(mb)
        inv_t = T.cofactor(mb) / dt[..., None, None]
    s = dt ** (-1.0 / b)
    inner = np.sum(gb * mb, axis=(-2, -1))
    out = np.array(g, copy=True)
    out[..., :b, :b] = s[..., None, None] * gb - (s * inner / b)[..., None, None] * inv_t
    return out


@dataclass
class CellTerms:
    """Per-cell densities (already multiplied by the cell volume) and gradients."""

    elastic: np.ndarray
    hardening: np.ndarray
    regularization: np.ndarray
    grad_y: np.ndarray | None = None
    grad_P: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def cell_terms(model: MaterialModel, eps: float, y, P, domain: GridDomain,
               background=None, mask=None, grads: tuple = ()) -> CellTerms:
    """Evaluate the three integrands on every selected cell.

    ``grads`` may contain ``"y"`` and/or ``"P"``; gradients are with respect
    to the nodal values (``P`` unconstrained, i.e. before any projection to
    SL(3)) of the discrete energy summed over the selected cells.  Membership
    of ``P`` in K is not checked here.
    """
    if not eps > 0:
        raise EpsNonPositive(f"eps must be positive, got {eps}")
    d = domain.dim
    h = domain.spacing
    yv = _values(y)
    pv = _values(P)
    bg = plane_background(d) if background is None else np.asarray(background, float)
    cm = domain.cell_mask if mask is None else np.asarray(mask, bool)
    vol = domain.cell_volume * cm

    x = domain.cell_centers() / eps
    a = model.W.weight(x)
    b = model.H.weight(x)

    gy = cell_grad(yv, h)
    f = embed_gradient(gy, bg)
    pm = cell_mean(pv, d)
    pc = _retract_cells(pm, d)
    pinv = T.inverse(pc)
    e = f @ pinv
    w = model.W.value(a, e)
    hh = model.H.value(b, pc)
    gp = cell_grad(pv, h)
    gp2 = np.sum(gp ** 2, axis=(-3, -2, -1))
    r = gp2 ** (model.q / 2.0)

    out = CellTerms(w * vol, hh * vol, r * vol)
    if not grads:
        return out
    ge = model.W.grad(a, e) * vol[..., None, None]
    pinv_t = np.swapaxes(pinv, -1, -2)
    if "y" in grads:
        gf = ge @ pinv_t
        out.grad_y = cell_grad_T(gf[..., :d, :d], h)
    if "P" in grads:
        gpc = -np.swapaxes(e, -1, -2) @ ge @ pinv_t
        gpc += model.H.grad(b, pc) * vol[..., None, None]
        gm = _retract_T(pm, gpc, d)
        gn = cell_mean_T(gm, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(gp2 > 0, model.q * gp2 ** (model.q / 2.0 - 1.0), 0.0) * vol
        gn += cell_grad_T(c[..., None, None, None] * gp, h)
        out.grad_P = gn
    return out


def quadratic_stiffness(domain: GridDomain, weight, metric):
    """Sparse Hessian of ``sum_cells vol * weight * grad u . metric grad u`` times two.

    ``weight`` has shape ``cells``, ``metric`` shape ``cells + (d, d)``; ``u``
    is one scalar nodal component (row-major node numbering).
    """
    d = domain.dim
    h = domain.spacing
    corners = _corners(d)
    cw = 1.0 / 2 ** (d - 1)
    w = np.array([[(2 * s[k] - 1) * cw / h[k] for k in range(d)] for s in corners])
    coef = (2.0 * domain.cell_volume * np.asarray(weight)).reshape(-1)
    ke = np.einsum("ik,ckl,jl->cij", w, np.asarray(metric).reshape(-1, d, d), w) * coef[:, None, None]
    base = np.indices(domain.cell_shape).reshape(d, -1)
    nodes = np.stack([np.ravel_multi_index(tuple(base[k] + s[k] for k in range(d)), domain.node_shape)
                      for s in corners], axis=-1)
    rows = np.repeat(nodes[:, :, None], len(corners), axis=2)
    cols = np.repeat(nodes[:, None, :], len(corners), axis=1)
    n = int(np.prod(domain.node_shape))
    return sp.coo_matrix((ke.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def _psum(v) -> float:
    # numpy reduces contiguous 1-D arrays pairwise; fix the order explicitly
    return float(np.sum(np.ascontiguousarray(v).ravel()))


def k_violations(model: MaterialModel, P, domain: GridDomain, mask=None) -> np.ndarray:
    """Boolean node field marking contributing nodes of ``P`` outside K."""
    pv = _values(P)
    nm = domain.node_mask(mask)
    bad = np.zeros(domain.node_shape, bool)
    if np.any(nm):
        bad[nm] = ~model.in_k(pv[nm])
    return bad


def energy_total(model: MaterialModel, eps: float, y, P, domain: GridDomain,
                 mask=None, background=None, check_k: bool = True) -> EnergyBreakdown:
    """Discrete ``F_eps(y, P, A)`` on the cells selected by ``mask`` (default: domain mask)."""
    t = cell_terms(model, eps, y, P, domain, background, mask)
    hard = _psum(t.hardening)
    if check_k and np.any(k_violations(model, P, domain, mask)):
        hard = math.inf
    return EnergyBreakdown(_psum(t.elastic), hard, _psum(t.regularization))


def elastic_energy_grad(model: MaterialModel, eps: float, y, P, domain: GridDomain,
                        background=None, mask=None) -> tuple[float, np.ndarray]:
    """Elastic part of the discrete energy and its gradient in nodal ``y``."""
    t = cell_terms(model, eps, y, P, domain, background, mask, grads=("y",))
    return _psum(t.elastic), t.grad_y


def sobolev_seminorms(y, P, domain: GridDomain, q: float = 4.0, mask=None) -> dict:
    """Discrete ``|grad y|_2^2``, ``|grad P|_q^q``, ``|y|_2^2`` and ``sup |P - I|``."""
    d = domain.dim
    h = domain.spacing
    cm = domain.cell_mask if mask is None else np.asarray(mask, bool)
    vol = domain.cell_volume * cm
    yv = _values(y)
    pv = _values(P)
    gy = cell_grad(yv, h)
    gp = cell_grad(pv, h)
    ym = cell_mean(yv, d)
    nm = domain.node_mask(cm)
    return {
        "grad_y_sq": _psum(np.sum(gy ** 2, axis=(-2, -1)) * vol),
        "grad_P_q": _psum(np.sum(gp ** 2, axis=(-3, -2, -1)) ** (q / 2.0) * vol),
        "y_sq": _psum(np.sum(ym ** 2, axis=-1) * vol),
        "P_sup_dist": float(np.max(T.frob(pv[nm] - T.IDENTITY))) if np.any(nm) else 0.0,
    }


def l2_distance(y1, y2, domain: GridDomain, mask=None) -> float:
    cm = domain.cell_mask if mask is None else np.asarray(mask, bool)
    diff = cell_mean(_values(y1) - _values(y2), domain.dim)
    return math.sqrt(_psum(np.sum(diff ** 2, axis=-1) * domain.cell_volume * cm))


def sup_distance(p1, p2) -> float:
    return float(np.max(T.frob(_values(p1) - _values(p2))))
