"""Gluing two deformation/plastic-strain pairs across an annulus.

Given open sets ``A' ⋐ A`` and ``B`` (cell masks on one grid), the gap
``A \\ A'`` is cut into ``N`` layers by distance to ``A'``.  A cut-off
``phi_j`` drops from 1 to 0 inside layer ``j``; the glued pair is
``(phi y1 + (1 - phi) y2, gamma(phi, P2, P1))`` where ``gamma`` runs along
a path in SL(3).  ``fe_check`` picks the cheapest layer and evaluates both
sides of the gluing inequality with concrete constants.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from . import tensor as T
from .energy import (EnergyBreakdown, GridDomain, _psum, _values, cell_grad, cell_mean,
                     energy_total)
from .errors import InputError, NotCompactlyContained, OutsideK
from .finsler import GROUP_EXP, GeodesicCache, gamma_interp, sample_in_k, velocity_constant
from .materials import MaterialModel


# -- distances and layers ---------------------------------------------------------------------

def _half_grid_distance(domain: GridDomain, cells) -> np.ndarray:
    """Euclidean distance to the closed union of ``cells``, sampled on the half-step grid.

    Points of the half-step grid are nodes (even indices) and cell centres
    (odd indices).  For grid-aligned boxes the nearest point of the union
    lies on this grid, so the transform is exact there.
    """
    d = domain.dim
    fine = tuple(2 * n + 1 for n in domain.cell_shape)
    inside = np.zeros(fine, bool)
    idx = np.nonzero(cells)
    for s in np.ndindex(*(3,) * d):
        inside[tuple(2 * i + k for i, k in zip(idx, s))] = True
    if not inside.any():
        raise InputError("inner set is empty")
    return ndimage.distance_transform_edt(~inside, sampling=domain.spacing / 2.0)


def _nodes(fine, d):
    return fine[(slice(0, None, 2),) * d]


def _centers(fine, d):
    return fine[(slice(1, None, 2),) * d]


@dataclass(eq=False)
class AnnulusDecomposition:
    domain: GridDomain
    inner: np.ndarray      # A'
    outer: np.ndarray      # A
    other: np.ndarray      # B
    N: int
    delta: float
    node_dist: np.ndarray = field(repr=False)
    cell_dist: np.ndarray = field(repr=False)

    def C(self, j: int) -> np.ndarray:
        if j == 0:
            return self.inner.copy()
        return self.outer & (self.cell_dist < j * self.delta / self.N)

    def D(self, j: int) -> np.ndarray:
        if not 1 <= j <= self.N:
            raise InputError(f"layer index must lie in 1..{self.N}")
        return self.C(j) & ~self.C(j - 1)

    @property
    def layer_width(self) -> float:
        return self.delta / self.N

    @property
    def diag(self) -> float:
        return float(np.linalg.norm(self.domain.spacing))

    @property
    def mollified(self) -> bool:
        """One smoothing pass is applied when a layer spans at least six cell diagonals."""
        return self.layer_width >= 6.0 * self.diag


def max_layers(domain: GridDomain, delta: float) -> int:
    """Largest ``N`` whose layers the grid can resolve without breaking the gradient bound."""
    return int(math.floor(delta / (2.0 * float(np.linalg.norm(domain.spacing)))))


def build_annuli(domain: GridDomain, inner, outer, other, N: int) -> AnnulusDecomposition:
    """Layers ``C_j = {x in A : dist(x, A') < j delta / N}`` and ``D_j = C_j \\ C_{j-1}``."""
    inner = np.asarray(inner, bool)
    outer = np.asarray(outer, bool)
    other = np.asarray(other, bool)
    for m in (inner, outer, other):
        if m.shape != domain.cell_shape:
            raise InputError("masks must match the domain cells")
    if N < 2:
        raise InputError("N must be >= 2")
    if np.any(inner & ~outer):
        raise NotCompactlyContained("A' is not contained in A")
    d = domain.dim
    fine = _half_grid_distance(domain, inner)
    # closure of the complement of A, plus the outer boundary of the box
    comp = np.zeros(fine.shape, bool)
    idx = np.nonzero(~outer)
    for s in np.ndindex(*(3,) * d):
        comp[tuple(2 * i + k for i, k in zip(idx, s))] = True
    for k in range(d):
        sl = [slice(None)] * d
        sl[k] = 0
        comp[tuple(sl)] = True
        sl[k] = -1
        comp[tuple(sl)] = True
    delta = float(fine[comp].min())
    h = float(np.max(domain.spacing))
    if delta <= 2.0 * h + 1e-12:
        raise NotCompactlyContained(f"dist(A', boundary of A) = {delta:.4g} is within two grid spacings")
    nmax = max_layers(domain, delta)
    if N > nmax:
        raise NotCompactlyContained(f"N = {N} layers do not fit in a gap of {delta:.4g} "
                                    f"at this resolution (max {nmax})")
    return AnnulusDecomposition(domain, inner, outer, other, int(N), delta,
                                _nodes(fine, d).copy(), _centers(fine, d).copy())


# -- cut-off -----------------------------------------------------------------------------------

@dataclass(eq=False)
class CutoffField:
    phi: np.ndarray        # nodal values in [0, 1]
    bound: float           # declared bound 2N/delta
    observed: float        # max Q1 gradient over cells
    j: int


def build_cutoff(dec: AnnulusDecomposition, j: int) -> CutoffField:
    """Cut-off between ``C_{j-1}`` and ``C_j``.

    A clamped linear ramp in ``dist(x, A')``, pulled inwards from both layer
    boundaries by a margin so that, after the optional smoothing pass, every
    cell with fractional corner values has its centre in ``D_j``.
    """
    if not 1 <= j <= dec.N:
        raise InputError(f"layer index must lie in 1..{dec.N}")
    margin = (1.5 if dec.mollified else 0.5) * dec.diag
    lo = (j - 1) * dec.layer_width + margin
    hi = j * dec.layer_width - margin
    phi = np.clip((hi - dec.node_dist) / (hi - lo), 0.0, 1.0)
    if dec.mollified:
        phi = ndimage.uniform_filter(phi, size=3, mode="nearest")
        # there the whole stencil is constant; undo the filter's round-off
        phi[dec.node_dist <= (j - 1) * dec.layer_width + 0.5 * dec.diag] = 1.0
        phi[dec.node_dist >= j * dec.layer_width - 0.5 * dec.diag] = 0.0
    bound = 2.0 * dec.N / dec.delta
    g = cell_grad(phi, dec.domain.spacing)
    observed = float(np.max(np.linalg.norm(g, axis=-1)))
    if observed > bound * (1 + 1e-9):
        raise AssertionError(f"cut-off gradient {observed} exceeds {bound}")
    return CutoffField(phi, bound, observed, j)


# -- gluing --------------------------------------------------------------------------------------

@dataclass(eq=False)
class GluedPair:
    y: np.ndarray
    P: np.ndarray
    phi: np.ndarray

    @property
    def det_error(self) -> float:
        return float(np.max(np.abs(T.det(self.P) - 1.0)))


def _check_k(model, P, name, nodes=None):
    pv = P if nodes is None else P[nodes]
    if pv.size and not np.all(model.in_k(pv)):
        raise OutsideK(f"{name} has nodes outside K")


def glue(model: MaterialModel, phi, y1, P1, y2, P2, mode: str = GROUP_EXP,
         cache: GeodesicCache | None = None, check_k: bool = True) -> GluedPair:
    """``(phi y1 + (1 - phi) y2, gamma(phi, P2, P1))`` at every node.

    ``phi`` is a nodal field or a ``CutoffField``.  Nodes with ``phi`` equal
    to 0 or 1 take the corresponding endpoint verbatim.
    """
    phi = np.asarray(phi.phi if isinstance(phi, CutoffField) else phi, float)
    y1, y2 = _values(y1), _values(y2)
    P1, P2 = _values(P1), _values(P2)
    mid = (phi > 0.0) & (phi < 1.0)
    if check_k:
        _check_k(model, P1, "P1", mid)
        _check_k(model, P2, "P2", mid)
    y = phi[..., None] * y1 + (1.0 - phi[..., None]) * y2
    y = np.where((phi == 1.0)[..., None], y1, np.where((phi == 0.0)[..., None], y2, y))
    P = np.where((phi >= 1.0)[..., None, None], P1, P2).copy()
    if np.any(mid):
        if mode == GROUP_EXP:
            P[mid] = gamma_interp(model.norm, phi[mid], P2[mid], P1[mid], mode)
        else:
            P[mid] = np.array([gamma_interp(model.norm, t, f, g, mode, cache=cache)
                               for t, f, g in zip(phi[mid], P2[mid], P1[mid])])
    return GluedPair(y, P, phi)


# -- constants ------------------------------------------------------------------------------------

@dataclass(frozen=True)
class GluingConstants:
    """Ingredients of the constant ``c`` in ``M_sigma``.

    ``velocity`` bounds ``|d gamma/dt| / |G - F|`` and ``endpoint`` bounds the
    endpoint derivatives of ``gamma``; both are measured on random pairs in K
    and inflated by ``safety``.
    """

    c1: float
    c2: float
    c_K: float
    h_bound: float
    velocity: float
    endpoint: float
    q: float
    safety: float = 1.5

    @property
    def c_elastic(self) -> float:
        # W <= c2 (c_K^2 |F|^2 + 1), |F|^2 <= 1 + 3(|g1|^2 + |g2|^2 + |grad phi|^2 |y1 - y2|^2)
        return 3.0 * self.c2 * self.c_K ** 2

    @property
    def c_regularization(self) -> float:
        return 3.0 ** (self.q - 1) * max(self.velocity, self.endpoint) ** self.q

    @property
    def c_lower(self) -> float:
        # |grad y|^2 <= c_K^2 |grad y P^-1|^2 <= c_K^2 / c1 W
        return max(1.0, self.c_K ** 2 / self.c1)

    @property
    def c(self) -> float:
        return max(self.c_elastic, self.h_bound, self.c_regularization) * self.c_lower

    def to_dict(self):
        d = asdict(self)
        d.update(c_elastic=self.c_elastic, c_regularization=self.c_regularization,
                 c_lower=self.c_lower, c=self.c)
        return d


def endpoint_lipschitz(norm, pairs, mode: str = GROUP_EXP, ts=(0.25, 0.5, 0.75),
                       h: float = 1e-6, seed: int = 0) -> float:
    """Largest observed ``|gamma(t, F + hE, G) - gamma(t, F, G)| / |hE|`` (and likewise in G)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for f, g in pairs:
        for t in ts:
            base = gamma_interp(norm, t, f, g, mode)
            for which in (0, 1):
                e = T.project_sl3(rng.normal(size=(3, 3)))
                e /= T.frob(e)
                if which == 0:
                    fp, gp = f @ T.expm(h * e), g
                    step = T.frob(fp - f)
                else:
                    fp, gp = f, g @ T.expm(h * e)
                    step = T.frob(gp - g)
                worst = max(worst, float(T.frob(gamma_interp(norm, t, fp, gp, mode) - base) / step))
    return worst


_CONSTANT_CACHE: dict = {}


def gluing_constants(model: MaterialModel, mode: str = GROUP_EXP, pairs: int = 32,
                     seed: int = 0, safety: float = 1.5) -> GluingConstants:
    key = (json.dumps(model.to_dict(), sort_keys=True), mode, pairs, seed, safety)
    if key not in _CONSTANT_CACHE:
        rng = np.random.default_rng(seed)
        pts = sample_in_k(model.norm, model.k_radius, rng, 2 * pairs).reshape(pairs, 2, 3, 3)
        v = float(np.max(velocity_constant(model.norm, pts, mode)))
        e = endpoint_lipschitz(model.norm, pts[: min(pairs, 8)], mode, seed=seed)
        _CONSTANT_CACHE[key] = GluingConstants(
            model.W.c1, model.W.c2, model.c_K, model.h_bound,
            safety * v, safety * e, model.q, safety)
    return _CONSTANT_CACHE[key]


# -- the inequality ---------------------------------------------------------------------------------

@dataclass
class FEReport:
    lhs: EnergyBreakdown
    energy_A: EnergyBreakdown
    energy_B: EnergyBreakdown
    cross_integral: float
    M_sigma: float
    sigma: float
    N: int
    N_required: int
    N_conditions_met: bool
    delta: float
    layer: int
    layer_integrals: list
    gap_integral: float
    pigeonhole_ok: bool
    constants: dict
    cutoff_bound: float
    cutoff_observed: float
    det_error: float
    satisfied: bool

    @property
    def rhs(self) -> float:
        return ((1.0 + self.sigma) * (self.energy_A.total + self.energy_B.total)
                + self.M_sigma * self.cross_integral + self.sigma)

    @property
    def slack_without_cross(self) -> float:
        """``rhs - lhs`` with the ``M_sigma`` term dropped (diagnostic only)."""
        return self.rhs - self.M_sigma * self.cross_integral - self.lhs.total

    def to_dict(self):
        d = asdict(self)
        for k in ("lhs", "energy_A", "energy_B"):
            d[k] = getattr(self, k).to_dict()
        d["rhs"] = self.rhs
        d["slack_without_cross"] = self.slack_without_cross
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)


def _cell_integrand(y1, y2, P1, P2, domain, q):
    h = domain.spacing
    gy1 = np.sum(cell_grad(y1, h) ** 2, axis=(-2, -1))
    gy2 = np.sum(cell_grad(y2, h) ** 2, axis=(-2, -1))
    gp1 = np.sum(cell_grad(P1, h) ** 2, axis=(-3, -2, -1)) ** (q / 2.0)
    gp2 = np.sum(cell_grad(P2, h) ** 2, axis=(-3, -2, -1)) ** (q / 2.0)
    return (1.0 + gy1 + gy2 + gp1 + gp2) * domain.cell_volume


def fe_check(model: MaterialModel, eps: float, domain: GridDomain, inner, outer, other,
             y1, P1, y2, P2, sigma: float, N: int | None = None, mode: str = GROUP_EXP,
             constants: GluingConstants | None = None) -> FEReport:
    """Glue ``(y1, P1)`` on ``A`` with ``(y2, P2)`` on ``B`` and test the gluing inequality.

    ``N`` defaults to the smaller of the count the constants demand and the
    largest count the grid resolves; ``N_conditions_met`` says whether the
    former was reachable.
    """
    if not sigma > 0:
        raise InputError("sigma must be positive")
    y1, y2, P1, P2 = (_values(v) for v in (y1, y2, P1, P2))
    inner = np.asarray(inner, bool)
    outer = np.asarray(outer, bool)
    other = np.asarray(other, bool)
    consts = constants or gluing_constants(model, mode)
    c = consts.c
    gap = outer & ~inner & other
    gap_vol = domain.cell_volume * int(gap.sum())
    n_req = int(math.floor(max(c / sigma, 2.0 * c * gap_vol / sigma))) + 1
    probe = build_annuli(domain, inner, outer, other, 2) if N is None else None
    if N is None:
        N = max(2, min(n_req, max_layers(domain, probe.delta)))
    dec = build_annuli(domain, inner, outer, other, N)

    dens = _cell_integrand(y1, y2, P1, P2, domain, model.q)
    layer_int = [_psum(dens * (dec.D(j) & other)) for j in range(1, N + 1)]
    ell = int(np.argmin(layer_int)) + 1
    total_gap = _psum(dens * gap)
    pigeon = layer_int[ell - 1] <= total_gap / N + 1e-9 * max(1.0, total_gap)

    cut = build_cutoff(dec, ell)
    glued = glue(model, cut, y1, P1, y2, P2, mode)
    lhs = energy_total(model, eps, glued.y, glued.P, domain, mask=inner | other)
    ea = energy_total(model, eps, y1, P1, domain, mask=outer)
    eb = energy_total(model, eps, y2, P2, domain, mask=other)

    pw = (np.sum((y1 - y2) ** 2, axis=-1)
          + T.frob(P1 - P2) ** model.q)
    cross_mask = outer & other & ~inner
    cross = _psum(cell_mean(pw, domain.dim) * cross_mask * domain.cell_volume)
    r = 2.0 * N / dec.delta
    m_sigma = c * (r ** 2 + r ** model.q)

    report = FEReport(lhs, ea, eb, cross, m_sigma, float(sigma), int(N), n_req, N >= n_req,
                      dec.delta, ell, layer_int, total_gap, bool(pigeon), consts.to_dict(),
                      cut.bound, cut.observed, glued.det_error, False)
    rhs = report.rhs
    report.satisfied = bool(lhs.total <= rhs + 1e-9 * max(1.0, abs(rhs)))
    return report


# -- random trials ------------------------------------------------------------------------------------

def random_smooth_fields(domain: GridDomain, rng: np.random.Generator, y_amp: float = 0.1,
                         p_amp: float = 0.35, modes: int = 3):
    """Smooth random ``(y, P)``: identity plus a few Fourier modes, ``P = exp(eta)``.

    ``eta`` is trace-free with ``|eta| <= p_amp`` pointwise, so ``P`` lies in
    every K of radius ``>= p_amp`` for the Frobenius norm.  In two dimensions
    ``eta`` lives in the leading 2x2 block.
    """
    d = domain.dim
    x = domain.node_coords()

    def smooth(ncomp):
        out = np.zeros(domain.node_shape + (ncomp,))
        for _ in range(modes):
            k = rng.integers(-3, 4, size=d)
            ph = rng.uniform(0, 2 * np.pi, size=ncomp)
            amp = rng.normal(size=ncomp)
            out += amp * np.cos(2 * np.pi * (x @ k)[..., None] + ph)
        return out / modes

    y = x + y_amp * smooth(d)
    b = d if d == 3 else 2
    raw = smooth(b * b).reshape(domain.node_shape + (b, b))
    eta = np.zeros(domain.node_shape + (3, 3))
    eta[..., :b, :b] = raw
    eta = T.project_sl3(eta) if b == 3 else eta
    if b == 2:
        tr = eta[..., 0, 0] + eta[..., 1, 1]
        eta[..., 0, 0] -= tr / 2
        eta[..., 1, 1] -= tr / 2
    nrm = T.frob(eta)
    eta *= (p_amp / max(float(nrm.max()), 1e-300))
    P = T.retract_sl3(T.expm(eta), block=b)
    return y, P


def random_boxes(rng: np.random.Generator, dim: int = 2):
    """Boxes ``A' ⋐ A`` and an overlapping box ``B`` inside the unit cube."""
    lo_a = rng.uniform(0.0, 0.2, dim)
    hi_a = rng.uniform(0.8, 1.0, dim)
    gap = rng.uniform(0.15, 0.22, dim)
    lo_i, hi_i = lo_a + gap, hi_a - gap
    c = rng.uniform(0.3, 0.7, dim)
    half = rng.uniform(0.2, 0.35, dim)
    return (lo_i, hi_i), (lo_a, hi_a), (np.clip(c - half, 0, 1), np.clip(c + half, 0, 1))


@dataclass
class TrialSummary:
    reports: list
    sigmas: tuple
    seconds: float

    @property
    def satisfied(self) -> int:
        return sum(r.satisfied for r in self.reports)

    @property
    def pigeonhole(self) -> int:
        return sum(r.pigeonhole_ok for r in self.reports)

    @property
    def all_ok(self) -> bool:
        return self.satisfied == self.pigeonhole == len(self.reports)

    def rows(self) -> list[dict]:
        keys = ("sigma", "N", "layer", "lhs", "rhs", "energy_A", "energy_B", "cross_integral",
                "M_sigma", "gap_integral", "pigeonhole_ok", "det_error", "satisfied")
        out = []
        for i, r in enumerate(self.reports):
            d = r.to_dict()
            for k in ("lhs", "energy_A", "energy_B"):
                d[k] = d[k]["total"]
            out.append({"trial": i // len(self.sigmas), **{k: d[k] for k in keys}})
        return out


def fe_trials(model: MaterialModel, trials: int = 100, sigmas=(0.5, 0.1), resolution: int = 64,
              eps: float = 0.25, seed: int = 0, mode: str = GROUP_EXP) -> TrialSummary:
    """Seeded random field pairs on random overlapping boxes, checked at every ``sigma``.

    ``random_boxes`` keeps every gap at 0.15 or more, so two layers always fit
    at the default resolution.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    dom = GridDomain.box((1.0, 1.0), (resolution, resolution))
    consts = gluing_constants(model, mode)
    reports = []
    for _ in range(trials):
        inner, outer, other = (dom.box_mask(*b) for b in random_boxes(rng))
        y1, P1 = random_smooth_fields(dom, rng)
        y2, P2 = random_smooth_fields(dom, rng)
        for s in sigmas:
            reports.append(fe_check(model, eps, dom, inner, outer, other, y1, P1, y2, P2, s,
                                    mode=mode, constants=consts))
    return TrialSummary(reports, tuple(sigmas), time.perf_counter() - t0)
