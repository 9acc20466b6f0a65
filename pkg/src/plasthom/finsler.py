"""Left-invariant Finsler structure on SL(3).

A Minkowski norm ``delta_I`` on sl(3) is translated to every tangent space
by ``delta(F, M) = delta_I(F^-1 M)``.  Distances are computed by minimizing
the energy of discrete paths whose consecutive nodes are joined by
one-parameter subgroup segments; by left invariance the length of such a
segment is exactly ``delta_I(log(Phi_i^-1 Phi_{i+1}))``, so every reported
length is the true length of an admissible curve.
"""
from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import tensor as T
from .errors import InputError, LogDivergence, NoConvergence, NotTangent, OutsideK

# Frobenius-orthonormal basis of sl(3)
_SL3_BASIS = np.zeros((8, 3, 3))
_k = 0
for _i in range(3):
    for _j in range(3):
        if _i != _j:
            _SL3_BASIS[_k, _i, _j] = 1.0
            _k += 1
_SL3_BASIS[6] = np.diag([1.0, -1.0, 0.0]) / np.sqrt(2.0)
_SL3_BASIS[7] = np.diag([1.0, 1.0, -2.0]) / np.sqrt(6.0)
_SL3_BASIS.setflags(write=False)
del _i, _j, _k


def sl3_coords(m) -> np.ndarray:
    return np.einsum("...ij,kij->...k", np.asarray(m), _SL3_BASIS)


def sl3_from_coords(c) -> np.ndarray:
    return np.einsum("...k,kij->...ij", np.asarray(c), _SL3_BASIS)


@dataclass(frozen=True)
class MinkowskiNorm:
    """Norm on sl(3).

    ``frobenius`` is ``|M|``; ``weighted_deviatoric`` is ``weight * |M|``
    (sl(3) is already deviatoric, so only the scale differs).
    """

    kind: str = "frobenius"
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("frobenius", "weighted_deviatoric"):
            raise InputError(f"unknown norm kind {self.kind!r}")
        if self.kind == "frobenius" and self.weight != 1.0:
            raise InputError("the frobenius norm has no weight")
        if not self.weight > 0:
            raise InputError("norm weight must be positive")

    @property
    def c4(self) -> float:
        return float(self.weight)

    @property
    def c5(self) -> float:
        return float(self.weight)

    @property
    def symmetric(self) -> bool:
        return True

    def value(self, m) -> np.ndarray | float:
        return self.weight * T.frob(T.project_sl3(m))

    def energy_grad(self, m) -> np.ndarray:
        """Gradient of ``delta_I(M)^2 / 2`` on sl(3)."""
        return self.weight ** 2 * T.project_sl3(m)

    def to_dict(self):
        return {"kind": self.kind, "weight": self.weight}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        return cls(kind=d.get("kind", "frobenius"), weight=float(d.get("weight", 1.0)))


FROBENIUS = MinkowskiNorm()


def delta_I(norm: MinkowskiNorm, m) -> float:
    return float(norm.value(T.as_mat3(m)))


def delta(norm: MinkowskiNorm, f, m) -> float:
    """Norm of the tangent vector ``m`` at ``f``; ``m`` must lie in ``f sl(3)``."""
    x = T.inverse(T.as_mat3(f)) @ T.as_mat3(m)
    tr = np.trace(x)
    if abs(tr) > 1e-6:
        raise NotTangent(f"tr(F^-1 M) = {tr:.3e}; M is not tangent to SL(3) at F")
    return float(norm.value(T.project_sl3(x)))


@dataclass
class DiscretePath:
    """Nodes ``Phi(i/n)``, ``i = 0..n``, each in SL(3)."""

    nodes: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim != 3 or self.nodes.shape[1:] != (3, 3) or len(self.nodes) < 2:
            raise InputError("a path needs at least two 3x3 nodes")
        dev = np.abs(T.det(self.nodes) - 1.0)
        if np.any(dev > T.DET_TOL):
            raise InputError(f"path node leaves SL(3): max |det - 1| = {dev.max():.2e}")

    @property
    def n(self) -> int:
        return len(self.nodes) - 1

    def segment_logs(self) -> np.ndarray:
        return T.logm(T.inverse_sl3(self.nodes[:-1]) @ self.nodes[1:])

    def refine(self) -> "DiscretePath":
        """Insert subgroup midpoints; the length is unchanged."""
        xi = self.segment_logs()
        mids = T.retract_sl3(self.nodes[:-1] @ T.expm(0.5 * xi))
        out = np.empty((2 * self.n + 1, 3, 3))
        out[0::2] = self.nodes
        out[1::2] = mids
        return DiscretePath(out)

    def sample(self, t) -> np.ndarray:
        """Point at parameter ``t`` on the piecewise-subgroup interpolant."""
        t = float(t)
        if t <= 0.0:
            return self.nodes[0].copy()
        if t >= 1.0:
            return self.nodes[-1].copy()
        s = t * self.n
        i = min(int(np.floor(s)), self.n - 1)
        a = self.nodes[i]
        xi = T.logm(T.inverse_sl3(a) @ self.nodes[i + 1])
        return T.retract_sl3(a @ T.expm((s - i) * xi))


def finsler_length(norm: MinkowskiNorm, path: DiscretePath) -> float:
    """Length of the piecewise-subgroup curve through the path nodes.

    By left invariance ``delta(Phi_i, Phi_i xi) = delta_I(xi)`` along each
    segment ``Phi_i exp(s xi)``, so the midpoint rule is exact here.
    """
    xi = path.segment_logs()
    return float(np.sum(norm.value(xi)))


@dataclass
class GeodesicResult:
    path: DiscretePath
    length: float
    converged: bool
    iterations: int


def group_path(f0, f1, n: int) -> DiscretePath:
    f0 = np.asarray(f0, dtype=float)
    x = T.logm(T.inverse_sl3(f0) @ np.asarray(f1, dtype=float))
    t = np.linspace(0.0, 1.0, n + 1)
    nodes = f0 @ T.expm(t[:, None, None] * x)
    nodes = T.retract_sl3(nodes)
    nodes[0] = f0
    nodes[-1] = f1
    return DiscretePath(nodes)


def _path_energy(norm, nodes, n):
    """Discrete energy ``(n/2) sum delta_I(xi_i)^2`` and its gradient w.r.t. nodes."""
    inv = T.inverse_sl3(nodes[:-1])
    x = inv @ nodes[1:]
    xi = T.logm(x)
    val = 0.5 * n * float(np.sum(norm.value(xi) ** 2))
    g = n * norm.energy_grad(xi)
    gx = T.logm_frechet(np.swapaxes(x, -1, -2), g)
    inv_t = np.swapaxes(inv, -1, -2)
    grad = np.zeros_like(nodes)
    grad[1:] += inv_t @ gx
    grad[:-1] -= inv_t @ gx @ np.swapaxes(x, -1, -2)
    return val, grad


def _minimize_path(norm, path: DiscretePath, tol: float, maxiter: int):
    n = path.n
    base = path.nodes.copy()
    total_it = 0
    converged = False
    while total_it < maxiter:
        interior = base[1:-1]

        def nodes_of(c):
            eta = sl3_from_coords(c.reshape(n - 1, 8))
            a = np.eye(3) + eta
            raw = interior @ a
            s = T.det(raw) ** (-1.0 / 3.0)
            nodes = base.copy()
            nodes[1:-1] = raw * s[:, None, None]
            return nodes, a, raw, s

        def fun(c):
            nodes, a, raw, s = nodes_of(c)
            val, gn = _path_energy(norm, nodes, n)
            gi = gn[1:-1]
            # chain rule through Phi = s * B (I + eta), s = det(B (I + eta))^(-1/3)
            ge = s[:, None, None] * (np.swapaxes(interior, -1, -2) @ gi)
            inner = np.sum(gi * raw, axis=(-2, -1)) * s
            ge = ge - (inner / 3.0)[:, None, None] * np.swapaxes(np.linalg.inv(a), -1, -2)
            return val, sl3_coords(ge).ravel()

        c0 = np.zeros(8 * (n - 1))
        e_start = fun(c0)[0]
        res = minimize(fun, c0, jac=True, method="L-BFGS-B",
                       options={"maxiter": maxiter - total_it, "ftol": 1e-16,
                                "gtol": 1e-14, "maxcor": 30})
        total_it += max(res.nit, 1)
        if res.fun <= e_start:
            base = nodes_of(res.x)[0]
        if e_start - res.fun <= tol * max(e_start, 1e-300):
            converged = True
            break
    return DiscretePath(base), converged, total_it


def geodesic(norm: MinkowskiNorm, f0, f1, n: int = 32, init: DiscretePath | None = None,
             tol: float = 1e-10, maxiter: int = 10000) -> GeodesicResult:
    """Shortest discrete path from ``f0`` to ``f1`` with ``n`` segments.

    The discrete energy is minimized over interior nodes; every iterate is
    retracted to SL(3).  The start is the group path
    ``f0 exp(t log(f0^-1 f1))`` unless ``init`` is given.  Lengths are upper
    bounds of the distance with an ``O(1/n^2)`` excess.
    """
    if n < 2:
        raise InputError("geodesic needs n >= 2")
    f0 = np.asarray(T.SL3Element(f0).value)
    f1 = np.asarray(T.SL3Element(f1).value)
    if np.max(np.abs(f0 - f1)) == 0.0:
        return GeodesicResult(DiscretePath(np.repeat(f0[None], n + 1, axis=0)), 0.0, True, 0)
    path = init if init is not None else group_path(f0, f1, n)
    if path.n != n:
        raise InputError("initial path has the wrong number of segments")
    path, converged, it = _minimize_path(norm, path, tol, maxiter)
    if not converged:
        raise NoConvergence(f"geodesic solver hit the iteration cap ({maxiter})",
                            best=GeodesicResult(path, finsler_length(norm, path), False, it))
    return GeodesicResult(path, finsler_length(norm, path), True, it)


def distance(norm: MinkowskiNorm, f0, f1, n: int = 32) -> float:
    return geodesic(norm, f0, f1, n).length


def d_sym(norm: MinkowskiNorm, f0, f1, n: int = 32) -> float:
    return 0.5 * (distance(norm, f0, f1, n) + distance(norm, f1, f0, n))


# -- exponential map -----------------------------------------------------------

def _initial_body_velocity(path: DiscretePath) -> np.ndarray:
    """Second-order extrapolation of ``Phi^-1 Phi'`` to ``t = 0``."""
    xi = path.segment_logs()
    n = path.n
    if n >= 3:
        w = (15.0 * xi[0] - 10.0 * xi[1] + 3.0 * xi[2]) / 8.0
    else:
        w = xi[0]
    return T.project_sl3(n * w)


def log_map(norm: MinkowskiNorm, f, g, n: int = 32) -> np.ndarray:
    """Initial velocity at ``f`` of the shortest path to ``g``.

    The returned tangent ``M`` satisfies ``delta(f, M) = D(f, g)``.
    """
    f = np.asarray(T.SL3Element(f).value)
    res = geodesic(norm, f, g, n)
    if res.length == 0.0:
        return np.zeros((3, 3))
    w = _initial_body_velocity(res.path)
    w = w * (res.length / norm.value(w))
    return f @ w


def exp_map(norm: MinkowskiNorm, f, m, n: int = 32, tol: float = 1e-7,
            maxiter: int = 50) -> np.ndarray:
    """Endpoint of the unit-time geodesic from ``f`` with initial velocity ``m``.

    Found by shooting: the target ``G = f exp(X)`` is corrected with Broyden
    updates in sl(3) coordinates until ``log_map(f, G) = m``.
    """
    f = np.asarray(T.SL3Element(f).value)
    body = T.inverse_sl3(f) @ T.as_mat3(m)
    if abs(np.trace(body)) > 1e-6:
        raise NotTangent("velocity is not tangent to SL(3) at F")
    body = T.project_sl3(body)
    if T.frob(body) == 0.0:
        return f.copy()
    target = sl3_coords(body)
    scale = max(1.0, float(np.linalg.norm(target)))

    def residual(x):
        g = T.retract_sl3(f @ T.expm(sl3_from_coords(x)))
        v = sl3_coords(T.inverse_sl3(f) @ log_map(norm, f, g, n))
        return g, target - v

    x = target.copy()
    g, r = residual(x)
    jac_inv = np.eye(8)
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * scale:
            return g
        dx = jac_inv @ r
        x_new = x + dx
        g_new, r_new = residual(x_new)
        dr = r - r_new
        denom = dx @ jac_inv @ dr
        if abs(denom) > 1e-300:
            jac_inv = jac_inv + np.outer(dx - jac_inv @ dr, dx @ jac_inv) / denom
        x, g, r = x_new, g_new, r_new
    raise NoConvergence(f"exp_map shooting did not converge (residual {np.linalg.norm(r):.2e})")


# -- interpolation between plastic strains ---------------------------------------

class GeodesicCache:
    """Thread-safe store of solved geodesics keyed by endpoint bytes."""

    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(norm, f, g, n):
        return (norm.kind, norm.weight, n, np.asarray(f).tobytes(), np.asarray(g).tobytes())

    def get(self, norm, f, g, n):
        k = self.key(norm, f, g, n)
        with self._lock:
            hit = self._data.get(k)
        if hit is None:
            hit = geodesic(norm, f, g, n).path
            with self._lock:
                self._data.setdefault(k, hit)
        return hit

    def __len__(self):
        return len(self._data)


_DEFAULT_CACHE = GeodesicCache()

GEODESIC_EXACT = "geodesic-exact"
GROUP_EXP = "group-exp"
_MODES = (GEODESIC_EXACT, GROUP_EXP)


def gamma_interp(norm: MinkowskiNorm, t, f, g, mode: str = GROUP_EXP,
                 k_radius: float | None = None, n: int = 32,
                 cache: GeodesicCache | None = None) -> np.ndarray:
    """Point at parameter ``t`` on the path from ``f`` (t=0) to ``g`` (t=1).

    ``t`` may be an array matching stacks ``f``, ``g`` of shape ``(..., 3, 3)``
    in ``group-exp`` mode.  Endpoints are returned verbatim.
    """
    if mode not in _MODES:
        raise InputError(f"mode must be one of {_MODES}")
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if k_radius is not None:
        for name, p in (("F", f), ("G", g)):
            if not np.all(in_k(norm, p, k_radius, tol=1e-6)):
                raise OutsideK(f"endpoint {name} lies outside K (radius {k_radius})")
    t = np.asarray(t, dtype=float)
    if mode == GROUP_EXP:
        tb = np.broadcast_to(t, np.broadcast_shapes(t.shape, f.shape[:-2], g.shape[:-2]))
        fb = np.broadcast_to(f, tb.shape + (3, 3))
        gb = np.broadcast_to(g, tb.shape + (3, 3))
        out = np.array(fb, dtype=float)
        mid = (tb > 0.0) & (tb < 1.0)
        out[tb >= 1.0] = gb[tb >= 1.0]
        if np.any(mid):
            fm, gm, tm = fb[mid], gb[mid], tb[mid]
            x = T.logm(T.inverse_sl3(fm) @ gm)
            out[mid] = T.retract_sl3(fm @ T.expm(tm[:, None, None] * x))
        return out
    if f.ndim != 2 or g.ndim != 2:
        raise InputError("geodesic-exact mode interpolates one pair at a time")
    if t.ndim == 0:
        tv = float(t)
        if tv <= 0.0:
            return f.copy()
        if tv >= 1.0:
            return g.copy()
    path = (cache or _DEFAULT_CACHE).get(norm, f, g, n)
    if t.ndim == 0:
        return path.sample(float(t))
    return np.array([f.copy() if s <= 0 else g.copy() if s >= 1 else path.sample(s)
                     for s in t.ravel()]).reshape(t.shape + (3, 3))


# -- the set K ------------------------------------------------------------------

def dsym_bounds(norm: MinkowskiNorm, p) -> tuple[np.ndarray, np.ndarray]:
    """Cheap lower/upper bounds of ``D_sym(I, P)`` for a stack of matrices.

    Upper: both group paths ``exp(+-t log P)`` are admissible.  Lower: along
    any curve the diagonal of the body velocity in singular-vector frames
    is the rate of change of the log singular values, so
    ``D >= c4 |log sigma(P)|``.
    """
    p = np.asarray(p, dtype=float)
    sv = np.linalg.svd(p, compute_uv=False)
    lower = norm.c4 * np.sqrt(np.sum(np.log(sv) ** 2, axis=-1))
    try:
        lg = T.logm(p)
        upper = 0.5 * (norm.value(lg) + norm.value(-lg))
    except LogDivergence:
        if p.ndim == 2:
            upper = np.array(np.inf)
        else:
            upper = np.full(p.shape[:-2], np.inf)
            for idx in np.ndindex(p.shape[:-2]):
                try:
                    lg = T.logm(p[idx])
                    upper[idx] = 0.5 * (norm.value(lg) + norm.value(-lg))
                except LogDivergence:
                    pass
    return np.asarray(lower), np.asarray(upper)


def dsym_identity(norm: MinkowskiNorm, p, n: int = 32) -> float:
    """``D_sym(I, P)``: exact for symmetric positive definite ``P``, else solved."""
    lo, up = dsym_bounds(norm, p)
    if np.isfinite(up) and up - lo <= 1e-13 * max(1.0, float(up)):
        return float(up)
    return d_sym(norm, np.eye(3), p, n)


def in_k(norm: MinkowskiNorm, p, radius: float, tol: float = 1e-6, n: int = 32) -> np.ndarray:
    """Membership ``D_sym(I, P) <= radius + tol`` for a stack of matrices.

    The bracket from ``dsym_bounds`` settles almost every point; geodesics
    are solved only inside the undecided band.
    """
    p = np.asarray(p, dtype=float)
    lo, up = dsym_bounds(norm, p)
    inside = up <= radius + tol
    undecided = (~inside) & (lo <= radius + tol)
    if np.any(undecided):
        inside = np.array(inside, copy=True)
        if p.ndim == 2:
            return np.asarray(d_sym(norm, np.eye(3), p, n) <= radius + tol)
        for idx in zip(*np.nonzero(undecided)):
            try:
                inside[idx] = d_sym(norm, np.eye(3), p[idx], n) <= radius + tol
            except (LogDivergence, NoConvergence):
                inside[idx] = False
    return np.asarray(inside)


def sample_in_k(norm: MinkowskiNorm, radius: float, rng: np.random.Generator, count: int,
                block: int = 3, spread: float = 1.25) -> np.ndarray:
    """Random points of K by rejection from ``exp`` of a ball in sl(3)."""
    out = []
    while len(out) < count:
        m = T.random_sl3_tangent(rng, count, spread * radius / norm.c4, block=block)
        p = T.retract_sl3(T.expm(m))
        ok = in_k(norm, p, radius, tol=0.0)
        out.extend(p[ok])
    return np.array(out[:count])


# -- probes ------------------------------------------------------------------------

@dataclass
class ProbeReport:
    k_radius: float
    pairs: int
    passed: int
    worst_excursion: float
    failures: list = field(default_factory=list)

    @property
    def pass_rate(self) -> float:
        return self.passed / self.pairs if self.pairs else 1.0

    def to_json(self) -> str:
        d = asdict(self)
        d["pass_rate"] = self.pass_rate
        return json.dumps(d, indent=2)


def convexity_probe(norm: MinkowskiNorm, k_radius: float, pairs: int, seed: int = 0,
                    n: int = 16, tol: float = 1e-4) -> ProbeReport:
    """Check that shortest paths between random points of K stay in K."""
    if pairs < 1:
        raise InputError("pairs must be >= 1")
    rng = np.random.default_rng(seed)
    pts = sample_in_k(norm, k_radius, rng, 2 * pairs)
    passed = 0
    worst = -np.inf
    failures = []
    for i in range(pairs):
        f, g = pts[2 * i], pts[2 * i + 1]
        nodes = geodesic(norm, f, g, n).path.nodes
        lo, up = dsym_bounds(norm, nodes)
        dist = np.where(up <= k_radius, up, np.nan)
        for j in np.nonzero(np.isnan(dist))[0]:
            dist[j] = d_sym(norm, np.eye(3), nodes[j], n)
        exc = float(np.max(dist) - k_radius)
        worst = max(worst, exc)
        if exc <= tol:
            passed += 1
        else:
            failures.append({"pair": i, "excursion": exc})
    return ProbeReport(k_radius, pairs, passed, worst, failures)


def velocity_constant(norm: MinkowskiNorm, pairs: np.ndarray, mode: str = GROUP_EXP,
                      samples: int = 64, n: int = 16) -> np.ndarray:
    """Per-pair ratio ``max_t |d/dt gamma(t, F, G)| / |G - F|``.

    Speeds are central differences of ``gamma_interp`` on a uniform
    ``t`` grid with ``samples`` intervals; ``pairs`` has shape ``(m, 2, 3, 3)``.
    """
    t = np.linspace(0.0, 1.0, samples + 1)
    out = np.empty(len(pairs))
    for k, (f, g) in enumerate(pairs):
        if mode == GROUP_EXP:
            pts = gamma_interp(norm, t, np.broadcast_to(f, (len(t), 3, 3)),
                               np.broadcast_to(g, (len(t), 3, 3)), mode)
        else:
            path = geodesic(norm, f, g, n).path
            pts = np.array([path.sample(s) for s in t])
        speed = T.frob(np.diff(pts, axis=0)) * samples
        out[k] = np.max(speed) / T.frob(g - f)
    return out
