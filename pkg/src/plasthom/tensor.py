"""Small-matrix algebra on 3x3 tensors and the SL(3) / sl(3) constraint.

Every function accepts a single matrix of shape ``(3, 3)`` or a stack of
shape ``(..., 3, 3)`` and operates elementwise over the leading axes.
``expm`` and ``logm`` additionally accept square blocks of any size; they
are used internally on 6x6 block matrices to get Frechet derivatives.
"""
from __future__ import annotations

import numpy as np

from .errors import InputError, LogDivergence, NonPositiveDeterminant, SingularMatrix

DET_TOL = 1e-9
TRACE_TOL = 1e-12

IDENTITY = np.eye(3)
IDENTITY.setflags(write=False)


def as_mat3(m) -> np.ndarray:
    a = np.array(m, dtype=float)
    if a.shape[-2:] != (3, 3):
        if a.shape[-1:] == (9,):
            a = a.reshape(a.shape[:-1] + (3, 3))
        else:
            raise InputError(f"expected a 3x3 matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("matrix has non-finite entries")
    return a


def det(m) -> np.ndarray | float:
    """Determinant by cofactor expansion along the first row."""
    a = np.asarray(m, dtype=float)
    d = (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
         - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
         + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))
    return d


def cofactor(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    c = np.empty(a.shape)
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            # cyclic index order absorbs the (-1)^(i+j) sign
            c[..., i, j] = a[..., i1, j1] * a[..., i2, j2] - a[..., i1, j2] * a[..., i2, j1]
    return c


def inverse(m) -> np.ndarray:
    """Inverse as transposed cofactor over determinant.

    Raises ``SingularMatrix`` when ``|det| <= 1e-12`` for any matrix in the stack.
    """
    a = np.asarray(m, dtype=float)
    d = det(a)
    if np.any(np.abs(d) <= 1e-12):
        raise SingularMatrix("matrix is singular (|det| <= 1e-12)")
    return np.swapaxes(cofactor(a), -1, -2) / np.asarray(d)[..., None, None]


def inverse_sl3(m) -> np.ndarray:
    """Inverse of a unit-determinant matrix: the transposed cofactor matrix."""
    return np.swapaxes(cofactor(m), -1, -2)


def project_sl3(m) -> np.ndarray:
    """Trace-free part ``m - tr(m)/3 I`` (orthogonal projection onto sl(3))."""
    a = np.asarray(m, dtype=float)
    tr = np.trace(a, axis1=-2, axis2=-1)
    return a - (tr / 3.0)[..., None, None] * IDENTITY


def retract_sl3(m, block: int = 3) -> np.ndarray:
    """Rescale to unit determinant: ``det(m)^(-1/3) m``.

    With ``block=2`` only the leading 2x2 block is rescaled (by
    ``det^(-1/2)``); this keeps plane-strain embeddings ``diag(B, 1)`` intact.
    """
    a = np.array(m, dtype=float)
    if block == 3:
        d = det(a)
    elif block == 2:
        d = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    else:
        raise InputError("block must be 2 or 3")
    d = np.asarray(d)
    if np.any(d <= 1e-8):
        raise NonPositiveDeterminant("retraction needs det > 1e-8")
    s = d ** (-1.0 / block)
    if block == 3:
        return a * s[..., None, None]
    a[..., :2, :2] *= s[..., None, None]
    return a


def frob(m) -> np.ndarray | float:
    return np.sqrt(np.sum(np.square(m), axis=(-2, -1)))


# -- exponential / logarithm -------------------------------------------------

_EXP_TERMS = 18


def expm(m) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Taylor core."""
    a = np.asarray(m, dtype=float)
    n = a.shape[-1]
    nrm = np.max(np.sum(np.abs(a), axis=-2)) if a.size else 0.0
    s = max(0, int(np.ceil(np.log2(nrm / 0.25)))) if nrm > 0.25 else 0
    x = a / 2.0 ** s
    eye = np.broadcast_to(np.eye(n), a.shape)
    out = eye + x
    term = x
    for k in range(2, _EXP_TERMS):
        term = term @ x / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def _sqrt_db(a, tol=1e-14, maxiter=60):
    """Square root by the product form of the Denman-Beavers iteration."""
    n = a.shape[-1]
    eye = np.eye(n)
    m = a.copy()
    y = a.copy()
    for _ in range(maxiter):
        with np.errstate(all="ignore"):
            try:
                minv = np.linalg.inv(m)
            except np.linalg.LinAlgError:
                raise LogDivergence("square-root iteration hit a singular iterate") from None
        if not np.all(np.isfinite(minv)):
            raise LogDivergence("square-root iteration hit a singular iterate")
        y = y @ (eye + minv) / 2.0
        m = (eye + (m + minv) / 2.0) / 2.0
        if np.max(np.abs(m - eye)) < tol:
            return y
    raise LogDivergence("square-root iteration did not contract")


def logm(m, max_roots: int = 40) -> np.ndarray:
    """Principal matrix logarithm by inverse scaling and squaring.

    Square roots are taken until ``|A - I|_F <= 0.25``, then the Gregory
    series ``2 atanh(Z)`` with ``Z = (A - I)(A + I)^-1`` is summed.  Matrices
    with eigenvalues on the closed negative real axis have no real principal
    logarithm and raise ``LogDivergence``.
    """
    a = np.array(m, dtype=float)
    n = a.shape[-1]
    eye = np.eye(n)
    if not np.all(np.isfinite(a)):
        raise LogDivergence("non-finite input")
    s = 0
    while np.max(frob(a - eye)) > 0.25:
        if s >= max_roots:
            raise LogDivergence("inverse scaling failed to contract towards I")
        a = _sqrt_db(a)
        s += 1
    z = np.linalg.solve(np.swapaxes(a + eye, -1, -2), np.swapaxes(a - eye, -1, -2))
    z = np.swapaxes(z, -1, -2)
    z2 = z @ z
    out = z.copy()
    term = z
    zn = np.max(frob(z)) if z.size else 0.0
    k = 1
    while True:
        term = term @ z2
        k += 2
        out = out + term / k
        if zn ** k < 1e-18:
            break
    out = 2.0 * out * 2.0 ** s
    if not np.all(np.isfinite(out)):
        raise LogDivergence("logarithm produced non-finite entries")
    return out


def mat_exp(m) -> np.ndarray:
    return expm(as_mat3(m))


def mat_log(m) -> np.ndarray:
    return logm(as_mat3(m))


def _block_frechet(fun, a, e):
    n = a.shape[-1]
    big = np.zeros(a.shape[:-2] + (2 * n, 2 * n))
    big[..., :n, :n] = a
    big[..., n:, n:] = a
    big[..., :n, n:] = e
    return fun(big)[..., :n, n:]


def logm_frechet(a, e) -> np.ndarray:
    """Frechet derivative ``L_log(A)[E]`` via the 2n x 2n block trick."""
    a = np.asarray(a, dtype=float)
    e = np.asarray(e, dtype=float)
    scale = np.max(np.abs(e)) if e.size else 0.0
    if scale == 0.0:
        return np.zeros_like(e)
    # the derivative is linear in E; keep the block close to the diagonal
    f = 1e-2 / scale
    return _block_frechet(logm, a, e * f) / f


def expm_frechet(a, e) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return _block_frechet(expm, a, np.asarray(e, dtype=float))


# -- typed wrappers ----------------------------------------------------------

class SL3Element:
    """A 3x3 matrix with determinant 1 (within ``DET_TOL``).

    ``mode="retract"`` rescales inputs with positive determinant,
    ``mode="reject"`` raises instead of touching the value.
    """

    __slots__ = ("_value",)

    def __init__(self, value, mode: str = "retract"):
        a = as_mat3(value)
        if a.ndim != 2:
            raise InputError("SL3Element holds a single matrix")
        d = det(a)
        if abs(d - 1.0) > DET_TOL:
            if mode == "reject":
                raise NonPositiveDeterminant(f"det = {d!r} is not 1") if d <= 0 else InputError(
                    f"det = {d!r} deviates from 1 by more than {DET_TOL}")
            a = retract_sl3(a)
        a.setflags(write=False)
        self._value = a

    @property
    def value(self) -> np.ndarray:
        return self._value

    def __array__(self, dtype=None, copy=None):
        return self._value if dtype is None else self._value.astype(dtype)

    def __repr__(self):
        return f"SL3Element({self._value.tolist()})"

    @classmethod
    def identity(cls):
        return cls(np.eye(3))


class Sl3Tangent:
    """A trace-free 3x3 matrix; non-zero traces are projected away."""

    __slots__ = ("_value",)

    def __init__(self, value):
        a = as_mat3(value)
        if abs(np.trace(a)) > TRACE_TOL:
            a = project_sl3(a)
        a.setflags(write=False)
        self._value = a

    @property
    def value(self) -> np.ndarray:
        return self._value

    def __array__(self, dtype=None, copy=None):
        return self._value if dtype is None else self._value.astype(dtype)

    def __repr__(self):
        return f"Sl3Tangent({self._value.tolist()})"


def random_sl3_tangent(rng: np.random.Generator, size=None, scale: float = 1.0,
                       block: int = 3) -> np.ndarray:
    """Random trace-free matrices with Frobenius norm uniform in ``[0, scale]``."""
    shape = (() if size is None else np.atleast_1d(size).tolist())
    shape = tuple(shape)
    m = np.zeros(shape + (3, 3))
    m[..., :block, :block] = rng.normal(size=shape + (block, block))
    tr = np.trace(m, axis1=-2, axis2=-1)
    for i in range(block):
        m[..., i, i] -= tr / block
    m /= frob(m)[..., None, None]
    r = rng.uniform(0.0, scale, size=shape)
    return m * np.asarray(r)[..., None, None]
