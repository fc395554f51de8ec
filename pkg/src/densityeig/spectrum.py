"""Symmetric functions of eigenvalue clusters and their density derivatives.

For an index set F (1-based, as eigenvalues are numbered) the elementary
symmetric functions

    Lambda_{F,h}[rho] = sum_{j_1 < ... < j_h in F} lambda_{j_1} ... lambda_{j_h}

are smooth in rho as long as F is a union of whole eigenvalue clusters.  When F
splits into clusters F_1..F_n with common values lambda_{F_k}, the derivative
along a density perturbation rho_dot is

    dLambda_{F,h}[rho][rho_dot] = -sum_k c_k sum_{l in F_k} int u_l^2 rho_dot dx

with M_rho-orthonormal eigenfunctions u_l.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .assembly import DensityField, assemble, build_basis, element_tables
from .eig import NotPositiveDefiniteError, generalized_eig

__all__ = [
    "ClusterError",
    "ClusterPartition",
    "GradientField",
    "MAX_CLUSTER_SIZE",
    "block_identity_check",
    "ck_coefficients",
    "detect_clusters",
    "differential",
    "eigenvalues",
    "elementary_symmetric",
    "lambda_fh",
    "shift_identity_check",
    "shifted_differential",
    "validate_F",
]

MAX_CLUSTER_SIZE = 20
DEFAULT_CLUSTER_TOL = 1e-6


class ClusterError(ValueError):
    """F does not consist of whole clusters at the current density."""


@dataclass
class ClusterPartition:
    clusters: list  # list of tuples of 1-based indices
    values: np.ndarray
    tol: float

    @property
    def sizes(self):
        return [len(c) for c in self.clusters]


@dataclass
class GradientField:
    """Per-element coefficients g with dLambda[rho][rho_dot] = sum_e g_e rho_dot_e."""

    values: np.ndarray
    widths: np.ndarray

    def apply(self, direction):
        return float(np.dot(self.values, direction))

    def l2(self):
        """Riesz representative in the width-weighted L^2 metric."""
        return self.values / self.widths


def eigenvalues(spec, rho, count):
    """Ascending ``lambda_1..lambda_count`` with M_rho-orthonormal eigenvectors.

    Reduces through ``K + bM`` (shift-invert) for relative accuracy on the low
    spectrum; falls back to the plain ``M`` reduction when ``K + bM`` is not
    positive definite.
    """
    basis = build_basis(spec)
    if count > basis.dof:
        raise ValueError(f"count exceeds dof ({count} > {basis.dof})")
    gram = assemble(spec, basis, rho)
    try:
        return generalized_eig(gram.K, gram.M, count, shift=spec.b)
    except NotPositiveDefiniteError:
        return generalized_eig(gram.K, gram.M, count, M_factor=gram.M_factor)


def detect_clusters(lambdas, tol_rel=DEFAULT_CLUSTER_TOL):
    lambdas = np.asarray(lambdas, dtype=float)
    clusters = []
    current = [1]
    for j in range(1, lambdas.size):
        if abs(lambdas[j] - lambdas[j - 1]) <= tol_rel * max(1.0, abs(lambdas[j - 1])):
            current.append(j + 1)
        else:
            clusters.append(tuple(current))
            current = [j + 1]
    if lambdas.size:
        clusters.append(tuple(current))
    values = np.array([np.mean(lambdas[np.array(c) - 1]) for c in clusters])
    return ClusterPartition(clusters=clusters, values=values, tol=tol_rel)


def validate_F(F, partition):
    """Split ``F`` into whole clusters of ``partition``.

    Returns ``(clusters, values)`` restricted to F.  The analyzed range must
    extend past ``max(F)`` for the check to be meaningful.
    """
    F = sorted(set(int(j) for j in F))
    if not F or F[0] < 1:
        raise ClusterError(f"index set must be non-empty and 1-based, got {F}")
    covered = {j for c in partition.clusters for j in c}
    missing = [j for j in F if j not in covered]
    if missing:
        raise ClusterError(f"indices {missing} lie outside the analyzed range")
    Fset = set(F)
    picked, values = [], []
    for c, v in zip(partition.clusters, partition.values):
        inside = Fset.intersection(c)
        if not inside:
            continue
        if len(inside) != len(c):
            raise ClusterError(f"F splits a cluster: {sorted(inside)} is part of cluster {list(c)}")
        picked.append(c)
        values.append(v)
    return picked, np.array(values)


def elementary_symmetric(values, h):
    """e_h(values) by the recurrence e_i <- e_i + x e_{i-1}; e_0 = 1."""
    values = np.asarray(values, dtype=float)
    if not 0 <= h <= values.size:
        raise ValueError(f"h={h} outside 0..{values.size}")
    e = np.zeros(h + 1)
    e[0] = 1.0
    for x in values:
        for i in range(h, 0, -1):
            e[i] += x * e[i - 1]
    return float(e[h])


def _check_size(n):
    if n > MAX_CLUSTER_SIZE:
        raise ValueError(f"|F| = {n} exceeds the supported maximum {MAX_CLUSTER_SIZE}")


def shift_identity_check(values, b, h, sign=-1.0):
    """Both sides of Lambda_h = sum_k (-b)^(h-k) C(|F|-k, h-k) Lambda~_k.

    ``sign`` replaces the -1 in (-b); anything but -1 is a deliberate fault
    used to exercise the verification harness.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    _check_size(n)
    direct = elementary_symmetric(values, h)
    shifted = values + b
    via = 0.0
    for k in range(h + 1):
        via += (sign * b) ** (h - k) * comb(n - k, h - k) * elementary_symmetric(shifted, k)
    return direct, via


def _compositions(sizes, h):
    ranges = [range(s + 1) for s in sizes]
    for hs in itertools.product(*ranges):
        if sum(hs) == h:
            yield hs


def block_identity_check(values, clusters, h):
    """Lambda_{F,h} directly and as the convolution over per-cluster blocks.

    ``values`` are the eigenvalues of F in order, ``clusters`` the partition
    of positions 0..|F|-1 into blocks.
    """
    values = np.asarray(values, dtype=float)
    direct = elementary_symmetric(values, h)
    blocks = [values[list(c)] for c in clusters]
    via = 0.0
    for hs in _compositions([b.size for b in blocks], h):
        term = 1.0
        for blk, hk in zip(blocks, hs):
            term *= elementary_symmetric(blk, hk)
        via += term
    return direct, via


def _binom(a, b):
    return comb(a, b) if 0 <= b <= a else 0


def ck_coefficients(values, sizes, h):
    """c_k = sum over compositions of C(|F_k|-1, h_k-1) lam_k^h_k prod_{j!=k} C(|F_j|, h_j) lam_j^h_j."""
    values = np.asarray(values, dtype=float)
    sizes = [int(s) for s in sizes]
    _check_size(sum(sizes))
    if not 1 <= h <= sum(sizes):
        raise ValueError(f"h={h} outside 1..{sum(sizes)}")
    c = np.zeros(len(sizes))
    for hs in _compositions(sizes, h):
        full = [_binom(s, hj) * values[j] ** hj for j, (s, hj) in enumerate(zip(sizes, hs))]
        for k, (s, hk) in enumerate(zip(sizes, hs)):
            w = _binom(s - 1, hk - 1)
            if w == 0:
                continue
            term = w * values[k] ** hk
            for j, f in enumerate(full):
                if j != k:
                    term *= f
            c[k] += term
    return c


def lambda_fh(spec, rho, F, h, decomposition=None):
    """Value of Lambda_{F,h} at rho (1-based F)."""
    F = sorted(F)
    dec = decomposition or eigenvalues(spec, rho, F[-1])
    return elementary_symmetric(dec.lambdas[np.array(F) - 1], h)


def squared_mass(spec, vectors):
    """``out[e, l] = int_{element e} u_l^2 dx`` for coefficient columns ``vectors``."""
    basis = build_basis(spec)
    _, weights, values, _ = element_tables(spec)
    full = np.zeros((basis.n_basis, vectors.shape[1]))
    full[basis.active] = vectors
    p = spec.p
    # u at quadrature points: (n_e, q, n_vec)
    windows = np.stack([full[e: e + p + 1] for e in range(spec.n_e)])
    u = np.einsum("eij,ejl->eil", values[:, 0], windows)
    return np.einsum("eil,i->el", u * u, weights)


def _analyze(spec, rho, F, tol_rel):
    F = sorted(set(int(j) for j in F))
    basis = build_basis(spec)
    count = min(F[-1] + 1, basis.dof)
    dec = eigenvalues(spec, rho, count)
    partition = detect_clusters(dec.lambdas, tol_rel)
    clusters, values = validate_F(F, partition)
    return dec, clusters, values


def differential(spec, rho, F, h, tol_rel=DEFAULT_CLUSTER_TOL, decomposition=None):
    """Per-element gradient of Lambda_{F,h} with respect to the density values."""
    if decomposition is None:
        dec, clusters, values = _analyze(spec, rho, F, tol_rel)
    else:
        dec = decomposition
        clusters, values = validate_F(F, detect_clusters(dec.lambdas, tol_rel))
    c = ck_coefficients(values, [len(cl) for cl in clusters], h)
    idx = [np.array(cl) - 1 for cl in clusters]
    sq = squared_mass(spec, dec.vectors[:, np.concatenate(idx)])
    g = np.zeros(spec.n_e)
    col = 0
    for ck, cl in zip(c, idx):
        g -= ck * sq[:, col: col + cl.size].sum(axis=1)
        col += cl.size
    return GradientField(values=g, widths=np.full(spec.n_e, spec.h))


def shifted_differential(spec, rho, F, h, b, tol_rel=DEFAULT_CLUSTER_TOL):
    """dLambda_{F,h} for a single cluster F via the shifted functions Lambda~ and
    the combinatorial shift identity; an independent route to :func:`differential`."""
    dec, clusters, values = _analyze(spec, rho, F, tol_rel)
    if len(clusters) != 1:
        raise ClusterError(f"shifted route needs a single cluster, F has {len(clusters)}")
    lam = values[0]
    n = len(clusters[0])
    sq = squared_mass(spec, dec.vectors[:, np.array(clusters[0]) - 1]).sum(axis=1)
    g = np.zeros(spec.n_e)
    for k in range(1, h + 1):
        dtilde = -lam * (lam + b) ** (k - 1) * comb(n - 1, k - 1) * sq
        g += (-b) ** (h - k) * comb(n - k, h - k) * dtilde
    return GradientField(values=g, widths=np.full(spec.n_e, spec.h))


def as_density(rho, spec):
    if isinstance(rho, DensityField):
        return rho
    return DensityField(rho, L=spec.L)
