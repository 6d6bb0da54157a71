"""Algebra of traceless symmetric 3x3 tensors and the quartic bulk potential.

Tensors are stored as 5 coordinates in a fixed orthonormal basis of S0
(with respect to A:B = A_ij B_ij).  Every array routine here takes the
component axis first, so a single tensor is shape (5,) and a field on an
(nx, ny, nz) grid is shape (5, nx, ny, nz).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQ2 = np.sqrt(2.0)
SQ6 = np.sqrt(6.0)

# E1 = diag(1,-1,0)/sqrt2, E2 = diag(1,1,-2)/sqrt6, E3..E5 symmetric off-diagonal
BASIS = np.zeros((5, 3, 3))
BASIS[0] = np.diag([1.0, -1.0, 0.0]) / SQ2
BASIS[1] = np.diag([1.0, 1.0, -2.0]) / SQ6
for _k, (_i, _j) in enumerate([(0, 1), (0, 2), (1, 2)], start=2):
    BASIS[_k, _i, _j] = BASIS[_k, _j, _i] = 1.0 / SQ2


class DegenerateTensor(ValueError):
    """Leading eigenvalue is not separated; nearest-point projection undefined."""


def additive_k(a, b, c):
    """Constant k making min f = 0, from the uniaxial reduction.

    On Q = s(n⊗n - I/3) the potential is k - (a/3)s² - (2b/27)s³ + (c/9)s⁴,
    minimized at s_*.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    s = s_star(a, b, c)
    return (a / 3.0) * s**2 + (2.0 * b / 27.0) * s**3 - (c / 9.0) * s**4


def s_star(a, b, c):
    return (b + np.sqrt(b * b + 24.0 * a * c)) / (4.0 * c)


@dataclass(frozen=True)
class MaterialParams:
    """Bulk-potential coefficients.  ``k`` and ``s_star`` are derived."""

    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    eta_core: float | None = None
    k: float = field(init=False)
    s_star: float = field(init=False)

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("a, b must be nonnegative")
        if self.c <= 0:
            raise ValueError("c must be positive")
        object.__setattr__(self, "k", float(additive_k(self.a, self.b, self.c)))
        object.__setattr__(self, "s_star", float(s_star(self.a, self.b, self.c)))
        if self.eta_core is None:
            object.__setattr__(self, "eta_core", default_eta_core(self))

    def as_dict(self):
        return {"a": self.a, "b": self.b, "c": self.c, "eta_core": self.eta_core}


def default_eta_core(mp):
    """Half of f at the midpoint of two orthogonal vacuum states."""
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    mid = 0.5 * (uniaxial(e1, mp.s_star) + uniaxial(e2, mp.s_star))
    return 0.5 * float(bulk_potential(mid, mp))


@dataclass(frozen=True)
class QTensor:
    """A single point of S0, as 5 basis coordinates."""

    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(5)
        object.__setattr__(self, "c", c)

    @classmethod
    def from_matrix(cls, m, tol=1e-10):
        return cls(from_matrix(m, tol=tol))

    @property
    def matrix(self):
        return to_matrix(self.c)

    @property
    def norm(self):
        return float(np.sqrt(self.c @ self.c))

    def invariants(self):
        t2, t3 = invariants(self.c)
        return float(t2), float(t3)


def _coords(q):
    return q.c if isinstance(q, QTensor) else np.asarray(q, dtype=float)


def to_matrix(q):
    """Coordinates (5, ...) -> matrices (..., 3, 3)."""
    c = _coords(q)
    return np.moveaxis(np.tensordot(BASIS, c, axes=([0], [0])), (0, 1), (-2, -1))


def from_matrix(m, tol=1e-10):
    """Matrices (..., 3, 3) -> coordinates (5, ...).

    Raises ValueError if any input is not symmetric traceless within
    ``tol * (1 + |M|)``.
    """
    m = np.asarray(m, dtype=float)
    scale = 1.0 + np.sqrt(np.sum(m * m, axis=(-2, -1)))
    asym = np.sqrt(np.sum((m - np.swapaxes(m, -1, -2)) ** 2, axis=(-2, -1)))
    tr = np.abs(np.trace(m, axis1=-2, axis2=-1))
    if np.any(asym > tol * scale):
        raise ValueError("matrix is not symmetric")
    if np.any(tr > tol * scale):
        raise ValueError("matrix is not traceless")
    return np.tensordot(BASIS, m, axes=([1, 2], [-2, -1])) if m.ndim == 2 else \
        np.moveaxis(np.einsum("kij,...ij->...k", BASIS, m), -1, 0)


def _entries(c):
    """Matrix entries (m11, m22, m33, m12, m13, m23) from coordinates."""
    m11 = c[0] / SQ2 + c[1] / SQ6
    m22 = -c[0] / SQ2 + c[1] / SQ6
    m33 = -2.0 * c[1] / SQ6
    return m11, m22, m33, c[2] / SQ2, c[3] / SQ2, c[4] / SQ2


def _sym_coords(p11, p22, p33, p12, p13, p23):
    """Projection of a symmetric matrix onto S0 coordinates."""
    return np.stack([
        (p11 - p22) / SQ2,
        (p11 + p22 - 2.0 * p33) / SQ6,
        SQ2 * p12,
        SQ2 * p13,
        SQ2 * p23,
    ])


def invariants(q):
    """(tr Q², tr Q³), vectorized over trailing axes."""
    c = _coords(q)
    m11, m22, m33, m12, m13, m23 = _entries(c)
    t2 = np.sum(c * c, axis=0)
    det = (m11 * (m22 * m33 - m23 * m23)
           - m12 * (m12 * m33 - m23 * m13)
           + m13 * (m12 * m23 - m22 * m13))
    return t2, 3.0 * det


def bulk_potential(q, mp):
    """f(Q); values inside the rounding band of the four terms are returned as 0."""
    t2, t3 = invariants(q)
    terms = (mp.k, 0.5 * mp.a * t2, mp.b / 3.0 * t3, 0.25 * mp.c * t2 * t2)
    f = terms[0] - terms[1] - terms[2] + terms[3]
    band = 8 * np.finfo(float).eps * (abs(terms[0]) + np.abs(terms[1]) + np.abs(terms[2]) + np.abs(terms[3]))
    return np.where(f <= band, 0.0, f) if np.ndim(f) else (0.0 if f <= band else float(f))


def square_coords(q):
    """S0 coordinates of the traceless part of Q²."""
    m11, m22, m33, m12, m13, m23 = _entries(_coords(q))
    return _sym_coords(
        m11 * m11 + m12 * m12 + m13 * m13,
        m12 * m12 + m22 * m22 + m23 * m23,
        m13 * m13 + m23 * m23 + m33 * m33,
        m11 * m12 + m12 * m22 + m13 * m23,
        m11 * m13 + m12 * m23 + m13 * m33,
        m12 * m13 + m22 * m23 + m23 * m33,
    )


def bulk_gradient(q, mp):
    """Df(Q) within S0: -aQ - bQ² + (b/3)|Q|²I + c|Q|²Q, in coordinates."""
    c = _coords(q)
    t2 = np.sum(c * c, axis=0)
    return (mp.c * t2 - mp.a) * c - mp.b * square_coords(c)


def bulk_lipschitz(mp, bound):
    """Crude Lipschitz constant of Df on {|Q| <= bound}."""
    return mp.a + 2.0 * mp.b * bound + 3.0 * mp.c * bound * bound


def uniaxial(n, s):
    """Coordinates of s(n⊗n - I/3); n has shape (3, ...), need not be unit."""
    n = np.asarray(n, dtype=float)
    n = n / np.sqrt(np.sum(n * n, axis=0))
    m11, m22, m33 = n[0] ** 2 - 1 / 3, n[1] ** 2 - 1 / 3, n[2] ** 2 - 1 / 3
    return s * _sym_coords(m11, m22, m33, n[0] * n[1], n[0] * n[2], n[1] * n[2])


def leading_director(q):
    """Leading eigenvector and gap between the two largest eigenvalues.

    Returns (n, gap) with n of shape (3, ...) (sign arbitrary).
    """
    w, v = np.linalg.eigh(to_matrix(q))
    gap = w[..., 2] - w[..., 1]
    n = np.moveaxis(v[..., :, 2], -1, 0)
    return n, gap


def project_vacuum(q, mp, gap_tol=None):
    """Nearest point of the vacuum manifold: s_*(n⊗n - I/3), n leading eigenvector."""
    c = _coords(q)
    n, gap = leading_director(c)
    norm = np.sqrt(np.sum(c * c, axis=0))
    tol = 1e-8 * (1.0 + norm) if gap_tol is None else gap_tol
    if np.any(gap <= tol):
        raise DegenerateTensor("leading eigenvalue gap %.3g <= %.3g" % (np.min(gap), np.min(tol)))
    out = uniaxial(n, mp.s_star)
    # points already on the manifold are returned untouched (exact idempotence)
    on = np.sqrt(np.sum((out - c) ** 2, axis=0)) <= 1e-13 * (1.0 + norm)
    out = np.where(on, c, out)
    return QTensor(out) if isinstance(q, QTensor) else out


def vacuum_distance(q, mp):
    c = _coords(q)
    p = project_vacuum(c, mp)
    return np.sqrt(np.sum((c - p) ** 2, axis=0))
