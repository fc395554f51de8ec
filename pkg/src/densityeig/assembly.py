"""B-spline Galerkin discretization of weighted polyharmonic eigenproblems on (0, L).

The weak problem

    sum_d  int A_d u^(d) phi^(d) dx  =  lambda  int rho u phi dx

is discretized with an open uniform B-spline basis of degree ``p``.  The
boundary space ``W^{m,2} cap W^{k,2}_0`` is realized by dropping the first and
last ``k`` basis functions: the j-th endpoint derivative of a spline only
depends on its first (last) j+1 coefficients.

Coefficients ``A_d`` and the density ``rho`` are piecewise constant on the
elements, so Gauss quadrature with ``p + 1`` points is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numba
import numpy as np

from .eig import NotPositiveDefiniteError, cholesky

__all__ = [
    "AssemblyError",
    "BasisDescriptor",
    "DensityField",
    "GramSet",
    "ProblemSpec",
    "assemble",
    "build_basis",
    "dump_problem",
    "eval_basis",
    "gauss_rule",
    "load_problem",
    "problem_from_dict",
    "problem_to_dict",
]


class AssemblyError(ValueError):
    """Raised for inconsistent discretization input."""


@dataclass
class ProblemSpec:
    """Operator, boundary space and discretization parameters.

    ``A`` holds ``m + 1`` per-element coefficient arrays ``A_0 .. A_m``.
    ``p`` defaults to ``m + 2``.  ``b`` defaults to 0 when every ``A_d >= 0``
    and ``k >= 1``, and to 1 otherwise.
    """

    L: float
    m: int
    k: int
    A: list
    n_e: int
    p: int | None = None
    b: float | None = None

    def __post_init__(self):
        self.L = float(self.L)
        if not self.L > 0:
            raise AssemblyError(f"interval length must be positive, got {self.L}")
        if self.m < 1:
            raise AssemblyError(f"operator order m must be >= 1, got {self.m}")
        if not 0 <= self.k <= self.m:
            raise AssemblyError(f"boundary order k must satisfy 0 <= k <= m, got k={self.k}")
        if self.n_e < 2:
            raise AssemblyError(f"need at least 2 elements, got {self.n_e}")
        if self.p is None:
            self.p = self.m + 2
        if self.p < self.m:
            raise AssemblyError(f"spline degree p={self.p} < m={self.m} is not H^m-conforming")
        if self.n_e + self.p - 2 * self.k < 1:
            raise AssemblyError("constrained space is empty (n_e + p - 2k < 1)")
        if len(self.A) != self.m + 1:
            raise AssemblyError(f"expected {self.m + 1} coefficient arrays, got {len(self.A)}")
        coeffs = []
        for d, a in enumerate(self.A):
            a = np.asarray(a, dtype=float)
            if a.ndim == 0:
                a = np.full(self.n_e, float(a))
            if a.shape != (self.n_e,):
                raise AssemblyError(f"A_{d} has shape {a.shape}, expected ({self.n_e},)")
            coeffs.append(a)
        self.A = coeffs
        if np.any(self.A[self.m] <= 0):
            raise AssemblyError("leading coefficient A_m must be positive on every element")
        if self.b is None:
            nonneg = all(np.all(a >= 0) for a in self.A)
            self.b = 0.0 if (nonneg and self.k >= 1) else 1.0
        self.b = float(self.b)
        if self.b < 0:
            raise AssemblyError(f"shift b must be >= 0, got {self.b}")

    @classmethod
    def polyharmonic(cls, m, k, n_e, L=1.0, p=None, b=None):
        """(-d^2/dx^2)^m with unit leading coefficient and no lower-order terms."""
        A = [np.zeros(n_e) for _ in range(m)] + [np.ones(n_e)]
        return cls(L=L, m=m, k=k, A=A, n_e=n_e, p=p, b=b)

    @property
    def h(self):
        return self.L / self.n_e

    @property
    def dof(self):
        return self.n_e + self.p - 2 * self.k

    def midpoints(self):
        return (np.arange(self.n_e) + 0.5) * self.h

    def with_shift(self, b):
        return ProblemSpec(L=self.L, m=self.m, k=self.k, A=[a.copy() for a in self.A],
                           n_e=self.n_e, p=self.p, b=b)


@dataclass
class DensityField:
    """Piecewise-constant positive mass density on a uniform element mesh."""

    values: np.ndarray
    L: float = 1.0
    widths: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        if self.values.ndim != 1 or self.values.size < 1:
            raise AssemblyError("density must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.values)):
            raise AssemblyError("density has non-finite entries")
        if np.min(self.values) <= 0:
            e = int(np.argmin(self.values))
            raise AssemblyError(f"density must be positive (element {e} has {self.values[e]})")
        self.widths = np.full(self.values.size, float(self.L) / self.values.size)

    @classmethod
    def uniform(cls, value, n_e, L=1.0):
        return cls(np.full(n_e, float(value)), L=L)

    @property
    def n_e(self):
        return self.values.size

    @property
    def mass(self):
        return float(np.dot(self.values, self.widths))

    def scaled(self, t):
        return DensityField(self.values * t, L=self.L)


@dataclass
class BasisDescriptor:
    knots: np.ndarray
    active: np.ndarray
    dof: int
    p: int
    k: int
    n_e: int
    L: float

    @property
    def n_basis(self):
        return self.n_e + self.p


@dataclass
class GramSet:
    """Stiffness ``K``, weighted mass ``M`` and Sobolev Gram ``S`` on the active basis.

    ``M_factor`` is the lower Cholesky factor of ``M`` computed during the
    positive-definiteness check.
    """

    K: np.ndarray
    M: np.ndarray
    S: np.ndarray
    M_factor: np.ndarray


def build_basis(spec):
    """Open uniform knot vector with the first and last ``k`` functions removed."""
    p, n_e, k = spec.p, spec.n_e, spec.k
    if p < spec.m:
        raise AssemblyError(f"spline degree p={p} < m={spec.m}")
    dof = n_e + p - 2 * k
    if dof < 1:
        raise AssemblyError("constrained space is empty")
    interior = np.arange(1, n_e) * (spec.L / n_e)
    knots = np.concatenate([np.zeros(p + 1), interior, np.full(p + 1, spec.L)])
    active = np.arange(k, n_e + p - k)
    return BasisDescriptor(knots=knots, active=active, dof=dof, p=p, k=k, n_e=n_e, L=spec.L)


@numba.njit(cache=True)
def _ders_basis_funs(span, x, p, n, knots):
    # Cox-de Boor with derivatives; ders[d, j] is the d-th derivative of
    # basis function span - p + j at x.
    ders = np.zeros((n + 1, p + 1))
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    for j in range(p + 1):
        ders[0, j] = ndu[j, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1 = 0
        s2 = 1
        a[0, 0] = 1.0
        for kk in range(1, n + 1):
            d = 0.0
            rk = r - kk
            pk = p - kk
            if r >= kk:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = kk - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, kk] = -a[s1, kk - 1] / ndu[pk + 1, r]
                d += a[s2, kk] * ndu[r, pk]
            ders[kk, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for kk in range(1, n + 1):
        for j in range(p + 1):
            ders[kk, j] *= fac
        fac *= p - kk
    return ders


def _span(knots, p, n_basis, x):
    if x >= knots[n_basis]:
        return n_basis - 1
    span = int(np.searchsorted(knots, x, side="right")) - 1
    return min(max(span, p), n_basis - 1)


def eval_basis(basis, x, order=0):
    """Values of the ``order``-th derivative of every active basis function at ``x``.

    Orders above ``p`` give all zeros.
    """
    x = float(x)
    if not -1e-14 * basis.L <= x <= basis.L * (1 + 1e-14):
        raise AssemblyError(f"x={x} outside [0, {basis.L}]")
    x = min(max(x, 0.0), basis.L)
    full = np.zeros(basis.n_basis)
    if order > basis.p:
        return full[basis.active]
    span = _span(basis.knots, basis.p, basis.n_basis, x)
    ders = _ders_basis_funs(span, x, basis.p, order, basis.knots)
    full[span - basis.p: span + 1] = ders[order]
    return full[basis.active]


def gauss_rule(q):
    """Gauss-Legendre nodes and weights on [-1, 1], exact to degree 2q - 1."""
    if not 1 <= q <= 16:
        raise AssemblyError(f"quadrature order must be in 1..16, got {q}")
    return np.polynomial.legendre.leggauss(q)


@lru_cache(maxsize=32)
def _element_tables(L, n_e, p, m):
    """Per-element quadrature data for the full (unconstrained) basis.

    Returns ``(points, weights, values, grams)`` with ``values[e, d, i, j]`` the
    d-th derivative of local function j at quadrature point i of element e and
    ``grams[e, d]`` the local Gram matrix of the d-th derivatives.
    """
    q = p + 1
    nodes, w = gauss_rule(q)
    h = L / n_e
    knots = np.concatenate([np.zeros(p + 1), np.arange(1, n_e) * h, np.full(p + 1, L)])
    points = (np.arange(n_e)[:, None] + 0.5 * (nodes[None, :] + 1.0)) * h
    weights = 0.5 * h * w
    nder = min(m, p)
    values = np.zeros((n_e, m + 1, q, p + 1))
    for e in range(n_e):
        for i in range(q):
            values[e, : nder + 1, i, :] = _ders_basis_funs(p + e, points[e, i], p, nder, knots)
    grams = np.einsum("edij,i,edil->edjl", values, weights, values)
    grams = 0.5 * (grams + grams.swapaxes(-1, -2))
    for arr in (points, weights, values, grams):
        arr.flags.writeable = False
    return points, weights, values, grams


def element_tables(spec):
    return _element_tables(spec.L, spec.n_e, spec.p, spec.m)


def _scatter(local, n_e, p, n_basis):
    glob = np.zeros((n_basis, n_basis))
    for e in range(n_e):
        glob[e: e + p + 1, e: e + p + 1] += local[e]
    return glob


def _rho_values(rho, n_e):
    vals = rho.values if isinstance(rho, DensityField) else np.asarray(rho, dtype=float)
    if vals.shape != (n_e,):
        raise AssemblyError(f"density has {vals.size} entries, problem has {n_e} elements")
    return vals


def stiffness_matrix(spec, basis=None):
    basis = basis or build_basis(spec)
    _, _, _, grams = element_tables(spec)
    local = sum(spec.A[d][:, None, None] * grams[:, d] for d in range(spec.m + 1))
    K = _scatter(local, spec.n_e, spec.p, basis.n_basis)
    return K[np.ix_(basis.active, basis.active)]


def mass_matrix(spec, rho, basis=None):
    basis = basis or build_basis(spec)
    vals = _rho_values(rho, spec.n_e)
    _, _, _, grams = element_tables(spec)
    M = _scatter(vals[:, None, None] * grams[:, 0], spec.n_e, spec.p, basis.n_basis)
    return M[np.ix_(basis.active, basis.active)]


def sobolev_matrix(spec, basis=None):
    basis = basis or build_basis(spec)
    _, _, _, grams = element_tables(spec)
    S = _scatter(grams[:, 0] + grams[:, spec.m], spec.n_e, spec.p, basis.n_basis)
    return S[np.ix_(basis.active, basis.active)]


def assemble(spec, basis, rho):
    """Assemble ``K``, ``M_rho`` and ``S`` on the active basis.

    ``rho`` may be a :class:`DensityField` or a raw per-element array; a
    non-positive-definite mass matrix raises :class:`AssemblyError` naming the
    failing pivot.
    """
    vals = _rho_values(rho, spec.n_e)
    K = stiffness_matrix(spec, basis)
    M = mass_matrix(spec, vals, basis)
    S = sobolev_matrix(spec, basis)
    try:
        factor = cholesky(M)
    except NotPositiveDefiniteError as exc:
        raise AssemblyError(f"weighted mass matrix is not positive definite "
                            f"(pivot {exc.pivot}); density leaves the admissible set") from exc
    return GramSet(K=K, M=M, S=S, M_factor=factor)


def sample_functions(spec, coeffs, per_element):
    """Evaluate coefficient vectors (columns of ``coeffs``) at ``per_element``
    equispaced sub-cell midpoints of every element.  Returns ``(x, values)``."""
    basis = build_basis(spec)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim == 1:
        coeffs = coeffs[:, None]
    full = np.zeros((basis.n_basis, coeffs.shape[1]))
    full[basis.active] = coeffs
    h = spec.h
    xs = ((np.arange(spec.n_e)[:, None] + (np.arange(per_element)[None, :] + 0.5) / per_element) * h).ravel()
    out = np.zeros((xs.size, coeffs.shape[1]))
    for i, x in enumerate(xs):
        e = min(int(x // h), spec.n_e - 1)
        ders = _ders_basis_funs(spec.p + e, x, spec.p, 0, basis.knots)
        out[i] = ders[0] @ full[e: e + spec.p + 1]
    return xs, out


def problem_to_dict(spec, rho=None):
    doc = {
        "L": spec.L,
        "m": spec.m,
        "k": spec.k,
        "n_e": spec.n_e,
        "p": spec.p,
        "b": spec.b,
        "A": [a.tolist() for a in spec.A],
    }
    if rho is not None:
        doc["rho"] = _rho_values(rho, spec.n_e).tolist()
    return doc


def problem_from_dict(doc):
    """Inverse of :func:`problem_to_dict`; returns ``(spec, density or None)``."""
    try:
        spec = ProblemSpec(L=doc["L"], m=int(doc["m"]), k=int(doc["k"]), A=doc["A"],
                           n_e=int(doc["n_e"]), p=doc.get("p"), b=doc.get("b"))
    except KeyError as exc:
        raise AssemblyError(f"problem document is missing field {exc.args[0]!r}") from None
    rho = None
    if doc.get("rho") is not None:
        rho = DensityField(doc["rho"], L=spec.L)
        if rho.n_e != spec.n_e:
            raise AssemblyError(f"rho has {rho.n_e} entries, problem has {spec.n_e} elements")
    return spec, rho


def load_problem(path):
    with open(path) as fh:
        return problem_from_dict(json.load(fh))


def dump_problem(spec, rho, path):
    Path(path).write_text(json.dumps(problem_to_dict(spec, rho), indent=2) + "\n")
