"""Periodic elastic and hardening densities and their hypothesis checks.

Densities are products of a Q-periodic weight field ``a(x)`` with a
function of the matrix argument:

* elastic   ``W(x, F) = a(x) |F|^p``  (``p = 2`` for the shipped catalog)
* hardening ``H(x, P) = a(x) |P - I|^2`` on K, ``+inf`` outside

K is the ball ``{P : D_sym(I, P) <= r}`` of the Finsler distance.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import AssumptionViolated, InputError
from .finsler import FROBENIUS, MinkowskiNorm, in_k

INFINITE = math.inf


@dataclass(frozen=True)
class WeightField:
    """Piecewise-constant Q-periodic weight.

    kinds: ``homogeneous`` (``a``), ``laminate`` (``a`` on ``[0, fraction)``
    along ``axis``, ``b`` on ``[fraction, 1)``), ``checkerboard`` (``a`` where
    ``sum floor(2 x_i)`` is even, else ``b``).
    """

    kind: str = "homogeneous"
    a: float = 1.0
    b: float | None = None
    axis: int = 0
    fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in ("homogeneous", "laminate", "checkerboard"):
            raise InputError(f"unknown weight kind {self.kind!r}")
        if self.kind != "homogeneous" and self.b is None:
            raise InputError(f"{self.kind} weight needs both a and b")
        if not (0.0 < self.fraction < 1.0):
            raise InputError("volume fraction must lie in (0, 1)")
        if self.axis not in (0, 1, 2):
            raise InputError("axis must be 0, 1 or 2")
        for w in self.values:
            if not (w > 0 and math.isfinite(w)):
                raise InputError("weights must be positive and finite")

    @property
    def values(self) -> tuple:
        return (self.a,) if self.kind == "homogeneous" else (self.a, self.b)

    @property
    def wmin(self) -> float:
        return float(min(self.values))

    @property
    def wmax(self) -> float:
        return float(max(self.values))

    @property
    def mean(self) -> float:
        if self.kind == "homogeneous":
            return float(self.a)
        if self.kind == "laminate":
            return float(self.fraction * self.a + (1 - self.fraction) * self.b)
        return 0.5 * float(self.a + self.b)

    def __call__(self, x) -> np.ndarray:
        """Weight at points ``x`` of shape ``(..., k)`` with ``k <= 3``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "homogeneous":
            return np.full(x.shape[:-1], float(self.a))
        z = x - np.floor(x)
        z[z >= 1.0] = 0.0  # -tiny - floor(-tiny) rounds to 1
        if self.kind == "laminate":
            zi = z[..., self.axis] if self.axis < x.shape[-1] else np.zeros(x.shape[:-1])
            return np.where(zi < self.fraction, float(self.a), float(self.b))
        parity = np.sum(np.floor(2.0 * z), axis=-1).astype(int) % 2
        return np.where(parity == 0, float(self.a), float(self.b))

    def to_dict(self):
        d = {"kind": self.kind, "a": self.a}
        if self.kind != "homogeneous":
            d["b"] = self.b
        if self.kind == "laminate":
            d.update(axis=self.axis, fraction=self.fraction)
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "homogeneous")
        aliases = {"homogeneous_quadratic": "homogeneous", "two_phase_laminate": "laminate"}
        kind = aliases.get(kind, kind)
        a = d.get("a", d.get("weight"))
        if a is None:
            raise InputError("weight field needs 'a' (or 'weight')")
        return cls(kind=kind, a=float(a), b=None if d.get("b") is None else float(d["b"]),
                   axis=int(d.get("axis", 0)), fraction=float(d.get("fraction", 0.5)))


@dataclass(frozen=True)
class ElasticDensity:
    """``W(x, F) = a(x) |F|^exponent`` with growth constants ``c1, c2, c3``.

    For ``exponent == 2`` the constants follow from the weights
    (``c1 = min a``, ``c2 = max a + 1``, ``c3 = max a``); any other exponent
    requires them to be declared.
    """

    weight: WeightField = field(default_factory=WeightField)
    exponent: float = 2.0
    declared: tuple | None = None

    def __post_init__(self):
        if self.exponent != 2.0 and self.declared is None:
            raise InputError("non-quadratic densities must declare c1, c2, c3")

    @property
    def constants(self) -> tuple[float, float, float]:
        if self.declared is not None:
            return tuple(float(c) for c in self.declared)
        return self.weight.wmin, self.weight.wmax + 1.0, self.weight.wmax

    @property
    def c1(self):
        return self.constants[0]

    @property
    def c2(self):
        return self.constants[1]

    @property
    def c3(self):
        return self.constants[2]

    @property
    def quadratic(self) -> bool:
        return self.exponent == 2.0

    def value(self, a, f) -> np.ndarray:
        """Density for precomputed weights ``a`` and matrices ``f``."""
        sq = np.sum(np.square(f), axis=(-2, -1))
        if self.quadratic:
            return a * sq
        return a * sq ** (self.exponent / 2.0)

    def grad(self, a, f) -> np.ndarray:
        """Derivative with respect to ``F``."""
        f = np.asarray(f)
        if self.quadratic:
            return 2.0 * np.asarray(a)[..., None, None] * f
        sq = np.sum(np.square(f), axis=(-2, -1))
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(sq > 0, self.exponent * sq ** (self.exponent / 2.0 - 1.0), 0.0)
        return (a * c)[..., None, None] * f

    def __call__(self, x, f) -> np.ndarray:
        return self.value(self.weight(x), f)

    def to_dict(self):
        d = self.weight.to_dict()
        if self.exponent != 2.0:
            d["exponent"] = self.exponent
        if self.declared is not None:
            d["constants"] = list(self.declared)
        return d

    @classmethod
    def from_dict(cls, d):
        c = d.get("constants")
        return cls(WeightField.from_dict(d), float(d.get("exponent", 2.0)),
                   None if c is None else tuple(float(v) for v in c))


@dataclass(frozen=True)
class HardeningDensity:
    """``H(x, P) = a(x) |P - I|^2`` on K, infinite elsewhere."""

    weight: WeightField = field(default_factory=WeightField)
    k_radius: float = 0.5

    def __post_init__(self):
        if not self.k_radius > 0:
            raise InputError("K radius must be positive")

    def value(self, a, p) -> np.ndarray:
        """Finite branch only; callers decide membership in K."""
        return a * np.sum(np.square(np.asarray(p) - T.IDENTITY), axis=(-2, -1))

    def grad(self, a, p) -> np.ndarray:
        return 2.0 * np.asarray(a)[..., None, None] * (np.asarray(p) - T.IDENTITY)

    def to_dict(self):
        return self.weight.to_dict()


@dataclass(frozen=True)
class MaterialModel:
    W: ElasticDensity
    H: HardeningDensity
    q: float = 4.0
    norm: MinkowskiNorm = FROBENIUS

    def __post_init__(self):
        if not self.q > 3:
            raise InputError("regularization exponent q must exceed 3")

    @property
    def k_radius(self) -> float:
        return self.H.k_radius

    @property
    def rho(self) -> float:
        """Bound on the Frobenius-metric distance from I to any point of K."""
        r = self.k_radius / self.norm.c4
        return r if self.norm.symmetric else 2.0 * r

    @property
    def c_K(self) -> float:
        """Constant with ``|F| + |F^-1| <= c_K`` on K.

        Along a curve with body velocity ``Omega``, ``|Phi'| <= |Phi| |Omega|``,
        so ``|P - I| <= exp(rho) - 1`` and likewise for ``P^-1``.
        """
        return 2.0 * (math.sqrt(3.0) + math.expm1(self.rho))

    @property
    def h_lipschitz(self) -> float:
        """Lipschitz constant of ``H(x, .)`` on K, uniform in ``x``."""
        return 2.0 * self.H.weight.wmax * math.expm1(self.rho)

    @property
    def h_bound(self) -> float:
        """``sup H`` on K."""
        return self.H.weight.wmax * math.expm1(self.rho) ** 2

    def in_k(self, p, tol: float = 1e-6) -> np.ndarray:
        return in_k(self.norm, p, self.k_radius, tol=tol)

    def to_dict(self):
        return {"W": self.W.to_dict(), "H": self.H.to_dict(), "q": self.q,
                "K_radius": self.k_radius, "norm": self.norm.to_dict()}

    @classmethod
    def from_dict(cls, d):
        for key in ("W", "H", "q", "K_radius"):
            if key not in d:
                raise InputError(f"material config lacks field {key!r}")
        return cls(W=ElasticDensity.from_dict(d["W"]),
                   H=HardeningDensity(WeightField.from_dict(d["H"]), float(d["K_radius"])),
                   q=float(d["q"]), norm=MinkowskiNorm.from_dict(d.get("norm")))

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))


def _point3(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] > 3:
        raise InputError("points have at most three coordinates")
    return x


def eval_W(model: MaterialModel, x, f) -> float:
    return float(model.W(_point3(x), T.as_mat3(f)))


def eval_H(model: MaterialModel, x, p) -> float:
    """Hardening at ``x``; ``math.inf`` when ``P`` lies outside K."""
    p = np.asarray(T.SL3Element(p).value)
    if not bool(model.in_k(p)):
        return INFINITE
    return float(model.H.value(model.H.weight(_point3(x)), p))


# -- hypothesis checks ------------------------------------------------------------

@dataclass
class ValidationReport:
    samples: int
    declared: dict
    observed: dict
    passed: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _random_matrices(rng, count):
    dirs = rng.normal(size=(count, 3, 3))
    dirs /= T.frob(dirs)[:, None, None]
    scales = 10.0 ** rng.uniform(-2.0, 1.0, size=count)
    scales[0] = 10.0
    return dirs * scales[:, None, None]


def validate_assumptions(model: MaterialModel, samples: int = 1000, seed: int = 0,
                         rtol: float = 1e-9) -> ValidationReport:
    """Monte-Carlo check of 2-coercivity/quadratic growth, the 2-Lipschitz bound
    of ``W`` and the Lipschitz bound of ``H`` on K.

    Observed constants are the extreme ratios over the samples; the first
    sample always has ``|F| = 10`` so super-quadratic growth is caught.
    """
    if samples < 1:
        raise InputError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    c1, c2, c3 = model.W.constants
    x = rng.uniform(0.0, 1.0, size=(samples, 3))
    f1 = _random_matrices(rng, samples)
    pert = _random_matrices(rng, samples) * rng.uniform(1e-3, 1.0, size=samples)[:, None, None]
    f2 = f1 + pert
    w1 = model.W(x, f1)
    w2 = model.W(x, f2)
    n1 = T.frob(f1)
    n2 = T.frob(f2)

    lower = w1 / n1 ** 2
    upper = w1 / (n1 ** 2 + 1.0)
    lip = np.abs(w1 - w2) / ((1.0 + n1 + n2) * T.frob(f1 - f2))

    def witness(i, **extra):
        return {"x": x[i].tolist(), "F1": f1[i].tolist(), "F2": f2[i].tolist(), **extra}

    i = int(np.argmax(upper))
    if upper[i] > c2 * (1 + rtol):
        raise AssumptionViolated(
            f"growth W <= c2(|F|^2 + 1) fails: W/(|F|^2+1) = {upper[i]:.6g} > c2 = {c2}",
            witness(i, ratio=float(upper[i])))
    i = int(np.argmin(lower))
    if lower[i] < c1 * (1 - rtol):
        raise AssumptionViolated(
            f"coercivity c1|F|^2 <= W fails: W/|F|^2 = {lower[i]:.6g} < c1 = {c1}",
            witness(i, ratio=float(lower[i])))
    i = int(np.argmax(lip))
    if lip[i] > c3 * (1 + rtol):
        raise AssumptionViolated(
            f"2-Lipschitz bound fails: ratio {lip[i]:.6g} > c3 = {c3}",
            witness(i, ratio=float(lip[i])))

    # H on K: points drawn from exp of small sl(3) balls lie in K by the upper bound
    m = T.random_sl3_tangent(rng, (samples, 2), model.k_radius / model.norm.c5)
    p = T.retract_sl3(T.expm(m))
    a = model.H.weight(x)
    h1 = model.H.value(a, p[:, 0])
    h2 = model.H.value(a, p[:, 1])
    dp = T.frob(p[:, 0] - p[:, 1])
    ok = dp > 0
    hl = np.zeros(samples)
    hl[ok] = np.abs(h1 - h2)[ok] / dp[ok]
    lh = model.h_lipschitz
    i = int(np.argmax(hl))
    if hl[i] > lh * (1 + rtol):
        raise AssumptionViolated(
            f"Lipschitz bound of H on K fails: ratio {hl[i]:.6g} > {lh:.6g}",
            {"x": x[i].tolist(), "P1": p[i, 0].tolist(), "P2": p[i, 1].tolist()})

    return ValidationReport(
        samples=samples,
        declared={"c1": c1, "c2": c2, "c3": c3, "H_lipschitz": lh, "c_K": model.c_K},
        observed={"c1": float(lower.min()), "c2": float(upper.max()), "c3": float(lip.max()),
                  "H_lipschitz": float(hl.max())},
    )
