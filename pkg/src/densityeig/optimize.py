"""Mass-constrained density optimization over box-constrained families.

Densities live in ``C cap L_M`` with ``C = {A <= rho <= B}`` and
``L_M = {int rho = M}``.  The feasible-set projection uses the width-weighted
Euclidean (discrete L^2) metric, in which it reduces to
``clip(rho + s, A, B)`` for a scalar ``s`` fixed by the mass.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .analysis import DEFAULT_SEED, ExperimentReport
from .assembly import DensityField, build_basis, element_tables
from .spectrum import (
    ClusterError,
    ck_coefficients,
    detect_clusters,
    differential,
    eigenvalues,
    elementary_symmetric,
    validate_F,
)

__all__ = [
    "BoxConstraint",
    "MassConstraint",
    "OptimizerConfig",
    "OptimizerTrace",
    "bangbang_fraction",
    "free_elements",
    "interior_scan",
    "project",
    "random_feasible",
    "run",
    "stationarity_residual",
    "tangent_gradient",
]


class InfeasibleError(ValueError):
    pass


@dataclass
class BoxConstraint:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        self.lower, self.upper = np.broadcast_arrays(self.lower, self.upper)
        self.lower, self.upper = self.lower.copy(), self.upper.copy()
        if not np.min(self.lower) > 0:
            raise InfeasibleError("lower bound must be positive")
        if np.any(self.lower >= self.upper):
            raise InfeasibleError("lower bound must be strictly below the upper bound")

    @classmethod
    def uniform(cls, lower, upper, n_e):
        return cls(np.full(n_e, float(lower)), np.full(n_e, float(upper)))

    def broadcast(self, n_e):
        if self.lower.size == n_e:
            return self
        if self.lower.size == 1:
            return BoxConstraint.uniform(self.lower[0], self.upper[0], n_e)
        raise InfeasibleError(f"box has {self.lower.size} entries, mesh has {n_e}")


@dataclass
class MassConstraint:
    M: float

    def check(self, box, widths, strict=False):
        lo, hi = float(box.lower @ widths), float(box.upper @ widths)
        ok = lo < self.M < hi if strict else lo <= self.M <= hi
        if not ok:
            raise InfeasibleError(f"mass {self.M} outside the attainable range [{lo}, {hi}]")


@dataclass
class OptimizerConfig:
    alpha0: float | None = None  # defaults to 0.1 * mean(rho0)
    tol: float = 1e-8
    max_iter: int = 2000
    armijo: float = 1e-4
    max_halvings: int = 40
    cluster_tol: float = 1e-6
    bangbang_eps: float = 1e-3


@dataclass
class OptimizerTrace:
    objective: list = field(default_factory=list)
    step: list = field(default_factory=list)
    pg_norm: list = field(default_factory=list)
    bangbang: list = field(default_factory=list)
    final: DensityField | None = None
    converged: bool = False
    line_search_failed: bool = False

    def write(self, csv_path, density_path=None):
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iterate", "objective", "step", "pg_norm", "bangbang_fraction"])
            for i, row in enumerate(zip(self.objective, self.step, self.pg_norm, self.bangbang)):
                w.writerow([i] + [repr(float(v)) for v in row])
        if density_path is not None and self.final is not None:
            doc = {"L": self.final.L, "rho": self.final.values.tolist()}
            with open(density_path, "w") as fh:
                json.dump(doc, fh, indent=2)
                fh.write("\n")


class OptimizationError(RuntimeError):
    def __init__(self, message, trace=None, iterate=None):
        super().__init__(message)
        self.trace = trace
        self.iterate = iterate


def _values(rho):
    return rho.values if isinstance(rho, DensityField) else np.asarray(rho, dtype=float)


def _widths(rho, L=None):
    if isinstance(rho, DensityField):
        return rho.widths
    vals = np.asarray(rho)
    return np.full(vals.size, (1.0 if L is None else L) / vals.size)


def project(rho, box, mass, L=None):
    """Weighted least-squares projection onto ``{A <= rho <= B, sum rho_e h_e = M}``."""
    L = rho.L if isinstance(rho, DensityField) else (1.0 if L is None else L)
    x = _values(rho)
    box = box.broadcast(x.size)
    h = _widths(rho, L)
    M = float(mass.M)
    mass.check(box, h)
    tol = 1e-12 * M
    A, B = box.lower, box.upper
    if np.all(x >= A) and np.all(x <= B) and abs(x @ h - M) <= tol:
        return DensityField(x, L=L)

    def excess(s):
        return np.clip(x + s, A, B) @ h - M

    lo, hi = float(np.min(A - x)), float(np.max(B - x))
    s = 0.5 * (lo + hi)
    for _ in range(200):
        s = 0.5 * (lo + hi)
        f = excess(s)
        if abs(f) <= tol:
            break
        if f > 0:
            hi = s
        else:
            lo = s
    # mass is piecewise linear in s; finish exactly on the current piece
    free = (x + s > A) & (x + s < B)
    if np.any(free):
        s_exact = s - excess(s) / h[free].sum()
        if abs(excess(s_exact)) <= abs(excess(s)):
            s = s_exact
    return DensityField(np.clip(x + s, A, B), L=L)


def bangbang_fraction(rho, box, eps=1e-3):
    """Width-weighted share of elements within ``eps (B - A)`` of a bound."""
    x = _values(rho)
    box = box.broadcast(x.size)
    h = _widths(rho)
    gap = np.minimum(x - box.lower, box.upper - x)
    on = gap <= eps * (box.upper - box.lower)
    return float(h[on].sum() / h.sum())


def tangent_gradient(grad, free=None):
    """Width-weighted projection of an L^2 gradient onto ``{sum h rho_dot = 0}``,
    optionally restricted to the ``free`` elements (active-set tangent space).
    Returns ``(projected, norm)``."""
    G = grad.l2()
    h = grad.widths
    mask = np.ones(G.size, bool) if free is None else np.asarray(free, bool)
    P = np.zeros_like(G)
    if mask.any():
        mean = (G[mask] @ h[mask]) / h[mask].sum()
        P[mask] = G[mask] - mean
    return P, float(np.sqrt(h @ (P * P)))


def free_elements(rho, box, eps=1e-9):
    x = _values(rho)
    box = box.broadcast(x.size)
    width = box.upper - box.lower
    return (x - box.lower > eps * width) & (box.upper - x > eps * width)


def _gradient_mapping(rho, direction, box, mass):
    target = project(rho.values + direction, box, mass, L=rho.L)
    d = target.values - rho.values
    return float(np.sqrt(rho.widths @ (d * d)))


def _evaluate(spec, rho, F, h, tol):
    dec = eigenvalues(spec, rho, min(max(F) + 1, build_basis(spec).dof))
    clusters, values = validate_F(F, detect_clusters(dec.lambdas, tol))
    obj = elementary_symmetric(dec.lambdas[np.array(sorted(F)) - 1], h)
    return obj, dec, clusters


def run(spec, rho0, F, h, sense, box, mass, config=None):
    """Projected gradient with Armijo backtracking on Lambda_{F,h} over C cap L_M."""
    config = config or OptimizerConfig()
    if sense not in ("min", "max"):
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")
    sign = 1.0 if sense == "max" else -1.0
    F = sorted(set(int(j) for j in F))
    box = box.broadcast(spec.n_e)
    rho = project(rho0 if isinstance(rho0, DensityField) else DensityField(rho0, L=spec.L), box, mass)
    alpha0 = config.alpha0 if config.alpha0 is not None else 0.1 * float(np.mean(rho.values))
    trace = OptimizerTrace()
    obj, dec, clusters0 = _evaluate(spec, rho, F, h, config.cluster_tol)
    for it in range(config.max_iter + 1):
        grad = differential(spec, rho, F, h, config.cluster_tol, decomposition=dec)
        G = sign * grad.l2()
        gnorm = float(np.sqrt(rho.widths @ (G * G)))
        pg = _gradient_mapping(rho, G, box, mass)
        trace.objective.append(obj)
        trace.pg_norm.append(pg)
        trace.bangbang.append(bangbang_fraction(rho, box, config.bangbang_eps))
        if pg <= config.tol or gnorm == 0.0:
            trace.step.append(0.0)
            trace.converged = True
            break
        if it == config.max_iter:
            trace.step.append(0.0)
            break
        alpha = alpha0
        accepted = False
        for _ in range(config.max_halvings + 1):
            trial = project(rho.values + alpha * G / gnorm, box, mass, L=rho.L)
            d = trial.values - rho.values
            predicted = float(rho.widths @ (G * d))
            try:
                t_obj, t_dec, t_clusters = _evaluate(spec, trial, F, h, config.cluster_tol)
            except ClusterError as exc:
                trace.final = rho
                raise OptimizationError(f"F no longer isolated at iterate {it + 1}: {exc}",
                                        trace, it + 1) from exc
            gain = sign * (t_obj - obj)
            if predicted > 0 and gain >= config.armijo * predicted:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            trace.step.append(0.0)
            trace.line_search_failed = True
            break
        if t_clusters != clusters0:
            trace.final = rho
            raise OptimizationError(f"F no longer isolated at iterate {it + 1}: cluster "
                                    f"structure changed from {clusters0} to {t_clusters}",
                                    trace, it + 1)
        trace.step.append(alpha)
        rho, obj, dec = trial, t_obj, t_dec
    trace.final = rho
    return trace


def _check_hypothesis(dec, F, zero_tol=1e3):
    # eigenvalues within zero_tol * eps * scale of zero count as zero
    lams = dec.lambdas[np.array(sorted(F)) - 1].copy()
    lams[np.abs(lams) <= zero_tol * np.finfo(float).eps * max(dec.scale, 1.0)] = 0.0
    if np.any(lams == 0) or not (np.all(lams > 0) or np.all(lams < 0)):
        raise ValueError("eigenvalues in F must be non-zero and share one sign")


def stationarity_residual(spec, rho, F, h, tol_rel=1e-6, zero_tol=1e3):
    """Coefficient of variation of w = sum_k c_k sum_{l in F_k} u_l^2 over (0, L).

    Zero exactly when the Lagrange condition w = const holds.  Eigenvalues
    with ``|lam| <= zero_tol * eps * scale`` count as zero.
    """
    F = sorted(set(int(j) for j in F))
    dec = eigenvalues(spec, rho, min(F[-1] + 1, build_basis(spec).dof))
    clusters, values = validate_F(F, detect_clusters(dec.lambdas, tol_rel))
    _check_hypothesis(dec, F, zero_tol)
    c = ck_coefficients(values, [len(cl) for cl in clusters], h)
    basis = build_basis(spec)
    _, weights, table, _ = element_tables(spec)
    p = spec.p
    w = np.zeros((spec.n_e, weights.size))
    for ck, cl in zip(c, clusters):
        full = np.zeros((basis.n_basis, len(cl)))
        full[basis.active] = dec.vectors[:, np.array(cl) - 1]
        for e in range(spec.n_e):
            u = table[e, 0] @ full[e: e + p + 1]
            w[e] += ck * np.sum(u * u, axis=1)
    W = np.broadcast_to(weights, w.shape)
    mean = np.sum(W * w) / np.sum(W)
    std = np.sqrt(np.sum(W * (w - mean) ** 2) / np.sum(W))
    return float(std / abs(mean))


def random_feasible(box, mass, n_e, rng, L=1.0, interior=False, max_tries=10000):
    """Uniform draw in the box projected onto the mass constraint; with
    ``interior`` the draw is redrawn until no coordinate touches a bound."""
    box = box.broadcast(n_e)
    for _ in range(max_tries):
        x = rng.uniform(box.lower, box.upper)
        rho = project(x, box, mass, L=L)
        if not interior or np.all(free_elements(rho, box, 0.0)):
            return rho
    raise RuntimeError(f"no strictly interior feasible density after {max_tries} draws")


def interior_scan(spec, box, mass, F, h, samples=100, seed=DEFAULT_SEED, tol=1e-6):
    """Tangential gradient norm of Lambda_{F,h} at random strictly interior
    feasible densities; every sample must stay above ``tol``."""
    rng = np.random.default_rng(seed)
    box = box.broadcast(spec.n_e)
    report = ExperimentReport("interior_scan")
    norms, means = [], []
    for i in range(samples):
        rho = random_feasible(box, mass, spec.n_e, rng, L=spec.L, interior=True)
        _check_hypothesis(eigenvalues(spec, rho, max(F)), F)
        grad = differential(spec, rho, F, h)
        P, norm = tangent_gradient(grad)
        norms.append(norm)
        means.append(float(grad.widths @ P / grad.widths.sum()))
        report.add(f"sample={i}", norm, tol, norm - tol)
    report.data = {"norms": np.array(norms), "tangent_means": np.array(means)}
    return report
