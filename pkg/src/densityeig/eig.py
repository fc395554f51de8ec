"""Dense symmetric (generalized) eigensolver.

``K c = lambda M c`` is reduced with the Cholesky factor of ``M`` to a standard
symmetric problem, which is tridiagonalized by Householder reflections and
diagonalized by implicit-shift QL.  Output is deterministic: eigenpairs are
sorted ascending (stable) and each eigenvector has its largest-magnitude entry
positive, ties going to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "ConvergenceError",
    "NotPositiveDefiniteError",
    "SpectralDecomposition",
    "cholesky",
    "generalized_eig",
    "sym_eig",
]

_EPS = np.finfo(float).eps


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, pivot, value):
        super().__init__(f"matrix is not positive definite: pivot {pivot} is {value!r}")
        self.pivot = pivot
        self.value = value


class ConvergenceError(np.linalg.LinAlgError):
    def __init__(self, index, iterations):
        super().__init__(f"QL iteration did not converge for eigenvalue {index} "
                         f"after {iterations} iterations")
        self.index = index
        self.iterations = iterations


@dataclass
class SpectralDecomposition:
    """Ascending eigenvalues with ``M``-orthonormal coefficient vectors (columns).

    ``scale`` is the largest eigenvalue magnitude of the whole discrete
    spectrum, used to judge when an eigenvalue is numerically zero.
    """

    lambdas: np.ndarray
    vectors: np.ndarray
    residual: float
    scale: float

    def __len__(self):
        return self.lambdas.size


def cholesky(M):
    """Lower-triangular ``L`` with ``L @ L.T == M``; raises on a non-positive pivot."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    L = np.zeros_like(M)
    for j in range(n):
        row = L[j, :j]
        pivot = M[j, j] - row @ row
        if not pivot > 0:
            raise NotPositiveDefiniteError(j, float(pivot))
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (M[j + 1:, j] - L[j + 1:, :j] @ row) / L[j, j]
    return L


@numba.njit(cache=True)
def _tred2(V):
    # Householder reduction of the symmetric matrix V (overwritten with the
    # accumulated orthogonal transform).  e[i] couples d[i-1] and d[i].
    n = V.shape[0]
    d = np.zeros(n)
    e = np.zeros(n)
    for j in range(n):
        d[j] = V[n - 1, j]
    for i in range(n - 1, 0, -1):
        scale = 0.0
        h = 0.0
        for kk in range(i):
            scale += abs(d[kk])
        if scale == 0.0:
            e[i] = d[i - 1]
            for j in range(i):
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
                V[j, i] = 0.0
        else:
            for kk in range(i):
                d[kk] /= scale
                h += d[kk] * d[kk]
            f = d[i - 1]
            g = np.sqrt(h)
            if f > 0:
                g = -g
            e[i] = scale * g
            h = h - f * g
            d[i - 1] = f - g
            for j in range(i):
                e[j] = 0.0
            for j in range(i):
                f = d[j]
                V[j, i] = f
                g = e[j] + V[j, j] * f
                for kk in range(j + 1, i):
                    g += V[kk, j] * d[kk]
                    e[kk] += V[kk, j] * f
                e[j] = g
            f = 0.0
            for j in range(i):
                e[j] /= h
                f += e[j] * d[j]
            hh = f / (h + h)
            for j in range(i):
                e[j] -= hh * d[j]
            for j in range(i):
                f = d[j]
                g = e[j]
                for kk in range(j, i):
                    V[kk, j] -= f * e[kk] + g * d[kk]
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
        d[i] = h
    for i in range(n - 1):
        V[n - 1, i] = V[i, i]
        V[i, i] = 1.0
        h = d[i + 1]
        if h != 0.0:
            for kk in range(i + 1):
                d[kk] = V[kk, i + 1] / h
            for j in range(i + 1):
                g = 0.0
                for kk in range(i + 1):
                    g += V[kk, i + 1] * V[kk, j]
                for kk in range(i + 1):
                    V[kk, j] -= g * d[kk]
        for kk in range(i + 1):
            V[kk, i + 1] = 0.0
    for j in range(n):
        d[j] = V[n - 1, j]
        V[n - 1, j] = 0.0
    V[n - 1, n - 1] = 1.0
    e[0] = 0.0
    return d, e


@numba.njit(cache=True)
def _tql(d, e, Z, eps, max_iter):
    # Implicit-shift QL on the tridiagonal (d, e); rotations accumulate into
    # the columns of Z.  Returns -1 on success, otherwise the failing index.
    n = d.size
    for i in range(1, n):
        e[i - 1] = e[i]
    if n > 0:
        e[n - 1] = 0.0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            if it == max_iter:
                return l
            it += 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0 else -r))
            s = 1.0
            c = 1.0
            p = 0.0
            underflow = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                for kk in range(Z.shape[0]):
                    f = Z[kk, i + 1]
                    Z[kk, i + 1] = s * Z[kk, i] + c * f
                    Z[kk, i] = c * Z[kk, i] - s * f
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return -1


def _fix_signs(V, rtol=1e-6):
    # entries within rtol of the column maximum count as ties, so mirror-symmetric
    # modes do not flip sign with rounding noise
    A = np.abs(V)
    idx = np.argmax(A >= (1.0 - rtol) * A.max(axis=0), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def sym_eig(A):
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) of symmetric ``A``."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    V = np.array(np.tril(A) + np.tril(A, -1).T, dtype=float, order="C")
    d, e = _tred2(V)
    fail = _tql(d, e, V, _EPS, 30 * n)
    if fail >= 0:
        raise ConvergenceError(int(fail), 30 * n)
    order = np.argsort(d, kind="stable")
    return d[order], _fix_signs(V[:, order])


def _reduce(A, L):
    # L^-1 A L^-T, symmetrized from its lower triangle
    X = solve_triangular(L, A, lower=True)
    C = solve_triangular(L, X.T, lower=True)
    return np.tril(C) + np.tril(C, -1).T


def generalized_eig(K, M, count=None, M_factor=None, shift=None):
    """First ``count`` eigenpairs of ``K c = lambda M c`` with ``M`` positive definite.

    Vectors are ``M``-orthonormal.  ``M_factor`` may supply a precomputed lower
    Cholesky factor of ``M``.

    With ``shift=None`` the problem is reduced by the Cholesky factor of ``M``.
    Given a shift ``b`` with ``K + bM`` positive definite, the reduction uses
    the factor of ``K + bM`` instead and recovers ``lambda = 1/mu - b`` from
    the largest eigenvalues ``mu``; the absolute error then scales with the
    low end of the spectrum rather than with ``lambda_max``.
    """
    K = np.asarray(K, dtype=float)
    M = np.asarray(M, dtype=float)
    n = K.shape[0]
    count = n if count is None else int(count)
    if not 1 <= count <= n:
        raise ValueError(f"count {count} outside 1..{n}")
    if shift is None:
        L = cholesky(M) if M_factor is None else M_factor
        lam, Y = sym_eig(_reduce(K, L))
        V = solve_triangular(L.T, Y[:, :count], lower=False)
        scale = float(np.max(np.abs(lam)))
    else:
        C = cholesky(K + shift * M)
        mu, Y = sym_eig(_reduce(M, C))
        mu, Y = mu[::-1], Y[:, ::-1]
        if not mu[count - 1] > 0:
            raise NotPositiveDefiniteError(count - 1, float(mu[count - 1]))
        lam = 1.0 / mu[:count] - shift
        V = solve_triangular(C.T, Y[:, :count], lower=False) / np.sqrt(mu[:count])
        pos = mu[mu > 0]
        scale = float(max(np.max(np.abs(lam)), 1.0 / pos.min() - shift))
    V = _fix_signs(V)
    lam_c = lam[:count]
    R = K @ V - (M @ V) * lam_c
    denom = np.linalg.norm(K, "fro") + np.abs(lam_c) * np.linalg.norm(M, "fro")
    residual = float(np.max(np.linalg.norm(R, axis=0) / np.where(denom > 0, denom, 1.0)))
    return SpectralDecomposition(lambdas=lam_c.copy(), vectors=V, residual=residual,
                                 scale=scale)
