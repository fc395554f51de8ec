"""Numerical verification of the continuity and lower-bound inequalities.

Every experiment returns an :class:`ExperimentReport` whose rows carry the
observed quantity, the reference it is compared with, and a signed margin
(non-negative when the inequality holds).  A row passes when its margin is at
least ``-1e-9`` times the magnitude of the compared quantities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .assembly import DensityField, assemble, build_basis
from .eig import NotPositiveDefiniteError, cholesky, generalized_eig, sym_eig
from .spectrum import (
    block_identity_check,
    detect_clusters,
    eigenvalues,
    shift_identity_check,
)

__all__ = [
    "DEFAULT_SEED",
    "ExperimentReport",
    "ReportRow",
    "auchmuty_check",
    "auchmuty_suite",
    "garding_lower_bound",
    "homogeneity_check",
    "identity_checks",
    "lipschitz_check",
    "lipschitz_suite",
    "t_rho_crosscheck",
    "weakstar_densities",
    "weakstar_experiment",
]

DEFAULT_SEED = 0x5EED
SLACK = 1e-9


@dataclass
class ReportRow:
    parameter: str
    observed: float
    reference: float
    margin: float
    passed: bool = field(init=False)

    def __post_init__(self):
        scale = max(1.0, abs(self.observed), abs(self.reference))
        self.passed = bool(np.isfinite(self.margin) and self.margin >= -SLACK * scale)


@dataclass
class ExperimentReport:
    name: str
    rows: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    data: dict = field(default_factory=dict)

    def add(self, parameter, observed, reference, margin):
        self.rows.append(ReportRow(parameter, float(observed), float(reference), float(margin)))

    def extend(self, other, prefix=""):
        for r in other.rows:
            self.add(prefix + r.parameter, r.observed, r.reference, r.margin)
        if other.status == "error":
            self.status = "error"
            self.message = other.message

    @property
    def passed(self):
        if self.status == "inapplicable":
            return True
        return self.status == "ok" and all(r.passed for r in self.rows)

    @property
    def worst_margin(self):
        return min((r.margin for r in self.rows), default=float("nan"))

    def summary(self):
        return {"name": self.name, "pass": self.passed, "status": self.status,
                "worst_margin": self.worst_margin}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "parameter", "observed", "reference", "margin", "pass"])
            for r in self.rows:
                w.writerow([self.name, r.parameter, repr(r.observed), repr(r.reference),
                            repr(r.margin), int(r.passed)])


def _density(rho, spec):
    return rho if isinstance(rho, DensityField) else DensityField(rho, L=spec.L)


def lipschitz_check(spec, rho1, rho2, count):
    """|lam_n[rho1] - lam_n[rho2]| <= (min lam_n + 2b) / min(inf rho) * ||rho1 - rho2||_inf."""
    rho1, rho2 = _density(rho1, spec), _density(rho2, spec)
    report = ExperimentReport("lipschitz")
    dist = float(np.max(np.abs(rho1.values - rho2.values)))
    floor = min(rho1.values.min(), rho2.values.min())
    if not dist < floor:
        report.status = "inapplicable"
        report.message = f"proximity violated: ||rho1-rho2|| = {dist} >= {floor}"
        return report
    l1 = eigenvalues(spec, rho1, count).lambdas
    l2 = eigenvalues(spec, rho2, count).lambdas
    for n in range(count):
        lhs = abs(l1[n] - l2[n])
        bound = (min(l1[n], l2[n]) + 2 * spec.b) / floor * dist
        report.add(f"n={n + 1}", lhs, bound, bound - lhs)
    return report


def lipschitz_suite(spec, rho, count, pairs=50, seed=DEFAULT_SEED):
    """Random admissible pairs around ``rho``; every pair satisfies the proximity condition."""
    rho = _density(rho, spec)
    rng = np.random.default_rng(seed)
    report = ExperimentReport("lipschitz")
    for i in range(pairs):
        r1 = rho.values * (1.0 + 0.5 * rng.random(spec.n_e))
        # frac < 1/2 keeps the distance below min(r2) >= (1 - frac) min(r1)
        frac = rng.uniform(0.05, 0.45)
        r2 = r1 + frac * r1.min() * rng.uniform(-1.0, 1.0, spec.n_e)
        report.extend(lipschitz_check(spec, r1, r2, count), prefix=f"pair={i} ")
    return report


def weakstar_densities(rho_bar, theta, j, mode="oscillate"):
    """Oscillating family rho_bar (1 + theta cos(2 pi j e / n_e)), or the
    constant-shift control rho_bar + theta."""
    rho_bar = rho_bar.values if isinstance(rho_bar, DensityField) else np.asarray(rho_bar)
    n_e = rho_bar.size
    if mode == "oscillate":
        phase = 2.0 * np.pi * j * np.arange(n_e) / n_e
        return rho_bar * (1.0 + theta * np.cos(phase))
    if mode == "shift":
        return rho_bar + theta
    raise ValueError(f"unknown mode {mode!r}")


def weakstar_experiment(spec, rho_bar, theta, j_list, count=5, mode="oscillate"):
    """Eigenvalue deviations along a weakly* convergent, non-strongly convergent family.

    Passes when, for every n <= count, the deviation at the largest j is below
    10% of the deviation at the smallest j, the lambda_1 deviation decreases
    strictly in j and ends below 1% of lambda_1[rho_bar], and the sup distance
    stays at its nominal value to 1e-12.  ``data`` holds the full table.
    """
    rho_bar = _density(rho_bar, spec)
    if not 0 <= theta < 1:
        raise ValueError(f"amplitude must lie in [0, 1), got {theta}")
    j_list = sorted(int(j) for j in j_list)
    if not j_list or j_list[0] < 1:
        raise ValueError("j_list must contain positive integers")
    if j_list[-1] > spec.n_e // 8:
        raise ValueError(f"j={j_list[-1]} too large for the mesh (max n_e/8 = {spec.n_e // 8})")
    base = eigenvalues(spec, rho_bar, count).lambdas
    dev = np.zeros((len(j_list), count))
    sup = np.zeros(len(j_list))
    for i, j in enumerate(j_list):
        rj = weakstar_densities(rho_bar, theta, j, mode)
        sup[i] = np.max(np.abs(rj - rho_bar.values))
        dev[i] = np.abs(eigenvalues(spec, rj, count).lambdas - base)
    report = ExperimentReport(f"weakstar_{mode}")
    for n in range(count):
        ref = 0.1 * dev[0, n]
        report.add(f"n={n + 1} j={j_list[-1]} vs j={j_list[0]}", dev[-1, n], ref, ref - dev[-1, n])
    for i in range(1, len(j_list)):
        report.add(f"n=1 decrease j={j_list[i]}", dev[i, 0], dev[i - 1, 0], dev[i - 1, 0] - dev[i, 0])
    ref = 0.01 * abs(base[0])
    report.add(f"n=1 j={j_list[-1]} relative", dev[-1, 0], ref, ref - dev[-1, 0])
    target = theta * np.max(rho_bar.values) if mode == "oscillate" else theta
    for i, j in enumerate(j_list):
        report.add(f"sup j={j}", sup[i], target, 1e-12 - abs(sup[i] - target))
    report.data = {"j": np.array(j_list), "deviation": dev, "sup_distance": sup,
                   "base": base, "theta": theta}
    return report


def auchmuty_check(spec, rho, u, n, decomposition=None, gram=None):
    """-1/(2(b+lam_n)) <= (Q[u,u] + b||u||_rho^2)/2 - ||u - P_{n-1}u||_rho for one trial ``u``."""
    rho = _density(rho, spec)
    gram = gram or assemble(spec, build_basis(spec), rho)
    dec = decomposition or generalized_eig(gram.K, gram.M, n, M_factor=gram.M_factor)
    b = spec.b
    lam_n = dec.lambdas[n - 1]
    if not b + dec.lambdas[0] > 0:
        raise ValueError("need b + lambda_1 > 0")
    u = np.asarray(u, dtype=float)
    V = dec.vectors[:, : n - 1]
    w = u - V @ (V.T @ (gram.M @ u))
    rhs = 0.5 * (u @ gram.K @ u + b * (u @ gram.M @ u)) - np.sqrt(max(w @ gram.M @ w, 0.0))
    lhs = -1.0 / (2.0 * (b + lam_n))
    report = ExperimentReport("auchmuty")
    report.add(f"n={n}", rhs, lhs, rhs - lhs)
    return report


def auchmuty_suite(spec, rho, n_max=10, trials=100, seed=DEFAULT_SEED):
    """Random trials for every n <= n_max plus the equality case u = u_n/(b+lam_n).

    Equality rows compare |rhs - lhs| against ``1e-9 * |lhs|``.
    """
    rho = _density(rho, spec)
    gram = assemble(spec, build_basis(spec), rho)
    dec = generalized_eig(gram.K, gram.M, n_max, M_factor=gram.M_factor)
    rng = np.random.default_rng(seed)
    report = ExperimentReport("auchmuty")
    b = spec.b
    for n in range(1, n_max + 1):
        lam = dec.lambdas[n - 1]
        eq = auchmuty_check(spec, rho, dec.vectors[:, n - 1] / (b + lam), n, dec, gram).rows[0]
        tol = 1e-9 * abs(eq.reference)
        report.add(f"n={n} equality", abs(eq.observed - eq.reference), tol,
                   tol - abs(eq.observed - eq.reference))
        for t in range(trials):
            z = rng.standard_normal(gram.K.shape[0])
            z /= np.sqrt(z @ gram.M @ z)
            # radii spread around the minimizing scale 1/(b + lam_n)
            u = z * rng.uniform(0.0, 3.0) / (b + lam)
            if t % 2:
                u += dec.vectors[:, n - 1] / (b + lam)
            row = auchmuty_check(spec, rho, u, n, dec, gram).rows[0]
            report.add(f"n={n} trial={t}", row.observed, row.reference, row.margin)
    return report


def garding_lower_bound(spec, rho, count):
    """lam_n > -b + a_h/||rho||_inf with a_h the best discrete Garding constant."""
    rho = _density(rho, spec)
    gram = assemble(spec, build_basis(spec), rho)
    report = ExperimentReport("garding")
    b = spec.b
    try:
        a_h = generalized_eig(gram.K + b * gram.M, gram.S, 1).lambdas[0]
    except NotPositiveDefiniteError as exc:
        report.status = "error"
        report.message = str(exc)
        return report
    report.add("a_h > 0", a_h, 0.0, a_h)
    if not a_h > 0:
        report.status = "error"
        report.message = f"discrete Garding inequality fails: a_h = {a_h}"
        return report
    lam = generalized_eig(gram.K, gram.M, count, M_factor=gram.M_factor).lambdas
    bound = -b + a_h / rho.values.max()
    for n in range(count):
        report.add(f"n={n + 1}", lam[n], bound, lam[n] - bound)
    report.data = {"a_h": a_h}
    return report


def t_rho_crosscheck(spec, rho, count, b=None, rtol=1e-8):
    """Eigenvalues of (K + b M)^-1 M equal 1/(lam_n + b), descending."""
    rho = _density(rho, spec)
    b = spec.b if b is None else float(b)
    gram = assemble(spec, build_basis(spec), rho)
    report = ExperimentReport(f"t_rho b={b!r}")
    try:
        C = cholesky(gram.K + b * gram.M)
    except NotPositiveDefiniteError as exc:
        report.status = "error"
        report.message = f"K + bM is singular or indefinite ({exc})"
        return report
    Ci = np.linalg.solve(C, np.eye(C.shape[0]))
    T = Ci @ gram.M @ Ci.T
    T = np.tril(T) + np.tril(T, -1).T
    mu = sym_eig(T)[0][::-1][:count]
    lam = generalized_eig(gram.K, gram.M, count, M_factor=gram.M_factor).lambdas
    for n in range(count):
        expect = 1.0 / (lam[n] + b)
        err = abs(mu[n] - expect) / abs(expect)
        report.add(f"n={n + 1} rel err", err, rtol, rtol - err)
    report.add("min mu > 0", mu.min(), 0.0, mu.min())
    report.data = {"mu": mu, "lambda": lam}
    return report


def identity_checks(lambdas, b_values=(0.5, 1.0, 10.0), rtol=1e-10, comb_sign=-1.0):
    """Shift identity for every h and b, and the block identity for the detected
    clusters and for consecutive pairs, on F = 1..len(lambdas)."""
    lambdas = np.asarray(lambdas, dtype=float)
    n = lambdas.size
    report = ExperimentReport("identities")
    for b in b_values:
        for h in range(n + 1):
            direct, via = shift_identity_check(lambdas, b, h, sign=comb_sign)
            err = abs(direct - via) / max(abs(direct), 1e-300)
            report.add(f"comb b={b!r} h={h}", err, rtol, rtol - err)
    part = detect_clusters(lambdas)
    groupings = {
        "clusters": [[j - 1 for j in c] for c in part.clusters],
        "pairs": [list(range(i, min(i + 2, n))) for i in range(0, n, 2)],
    }
    for label, groups in groupings.items():
        for h in range(n + 1):
            direct, via = block_identity_check(lambdas, groups, h)
            err = abs(direct - via) / max(abs(direct), 1e-300)
            report.add(f"blocks {label} h={h}", err, rtol, rtol - err)
    return report


def homogeneity_check(spec, rho, count, t_values=(0.5, 2.0, 7.0), rtol=1e-10, vtol=1e-8):
    """t lam_n[t rho] = lam_n[rho]; eigenvectors agree after rescaling by sqrt(t)."""
    rho = _density(rho, spec)
    base = eigenvalues(spec, rho, count)
    report = ExperimentReport("homogeneity")
    for t in t_values:
        dec = eigenvalues(spec, rho.scaled(t), count)
        for n in range(count):
            err = abs(t * dec.lambdas[n] - base.lambdas[n]) / abs(base.lambdas[n])
            report.add(f"t={t!r} n={n + 1}", err, rtol, rtol - err)
        clusters = detect_clusters(base.lambdas).clusters
        simple = [c[0] - 1 for c in clusters if len(c) == 1]
        verr = float(np.max(np.abs(np.sqrt(t) * dec.vectors[:, simple] - base.vectors[:, simple]))
                     / np.max(np.abs(base.vectors[:, simple])))
        report.add(f"t={t!r} vectors", verr, vtol, vtol - verr)
    return report
