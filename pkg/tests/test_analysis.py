import csv

import numpy as np
import pytest

from densityeig.analysis import (
    ExperimentReport,
    auchmuty_check,
    auchmuty_suite,
    garding_lower_bound,
    homogeneity_check,
    identity_checks,
    lipschitz_check,
    lipschitz_suite,
    t_rho_crosscheck,
    weakstar_densities,
    weakstar_experiment,
)
from densityeig.assembly import DensityField, ProblemSpec, assemble, build_basis
from densityeig.eig import generalized_eig
from densityeig.spectrum import eigenvalues


@pytest.fixture
def beam(wavy_rho):
    spec = ProblemSpec.polyharmonic(2, 1, 24, b=1.0)
    return spec, wavy_rho(spec)


def test_report_margin_semantics(tmp_path):
    rep = ExperimentReport("demo")
    rep.add("ok", 1.0, 2.0, 1.0)
    rep.add("tiny", 1.0, 1.0, -1e-12)
    assert rep.passed
    rep.add("bad", 3.0, 2.0, -1.0)
    assert not rep.passed and rep.worst_margin == -1.0
    rep.write_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["name", "parameter", "observed", "reference", "margin", "pass"]
    assert [r[-1] for r in rows[1:]] == ["1", "1", "0"]


def test_lipschitz(beam):
    spec, rho = beam
    assert lipschitz_suite(spec, rho, 6, pairs=10).passed
    far = lipschitz_check(spec, rho, DensityField(rho.values * 3), 3)
    assert far.status == "inapplicable"


def test_lipschitz_bound_is_not_vacuous(beam):
    spec, rho = beam
    rep = lipschitz_check(spec, rho, DensityField(rho.values * 1.2), 3)
    assert rep.passed
    assert min(r.observed / r.reference for r in rep.rows) > 0.05


def test_auchmuty(beam):
    spec, rho = beam
    rep = auchmuty_suite(spec, rho, n_max=4, trials=20)
    assert rep.passed
    eq = [r for r in rep.rows if "equality" in r.parameter]
    assert len(eq) == 4


def test_auchmuty_equality_value(beam):
    spec, rho = beam
    gram = assemble(spec, build_basis(spec), rho)
    dec = generalized_eig(gram.K, gram.M, 3, M_factor=gram.M_factor)
    u = dec.vectors[:, 2] / (spec.b + dec.lambdas[2])
    row = auchmuty_check(spec, rho, u, 3, dec, gram).rows[0]
    assert row.observed == pytest.approx(-1 / (2 * (spec.b + dec.lambdas[2])), rel=1e-10)


def test_garding(beam):
    spec, rho = beam
    rep = garding_lower_bound(spec, rho, 8)
    assert rep.passed and rep.data["a_h"] > 0


def test_garding_neumann_needs_shift(wavy_rho):
    spec = ProblemSpec.polyharmonic(1, 0, 16, b=1.0)
    assert garding_lower_bound(spec, wavy_rho(spec), 4).passed


@pytest.mark.parametrize("b", [0.5, 1.0, 10.0])
def test_t_rho(beam, b):
    spec, rho = beam
    rep = t_rho_crosscheck(spec, rho, 10, b=b)
    assert rep.passed
    np.testing.assert_allclose(rep.data["mu"], 1 / (rep.data["lambda"] + b), rtol=1e-8)


def test_t_rho_singular_shift(wavy_rho):
    spec = ProblemSpec.polyharmonic(1, 0, 16)
    rep = t_rho_crosscheck(spec, wavy_rho(spec), 3, b=0.0)
    assert rep.status == "error" and not rep.passed


def test_identities_and_fault_injection():
    lam = np.array([2.0, 5.0, 5.0, 9.0, 14.0])
    assert identity_checks(lam).passed
    assert not identity_checks(lam, comb_sign=1.0).passed


def test_homogeneity(beam):
    spec, rho = beam
    assert homogeneity_check(spec, rho, 8).passed


def test_weakstar_densities():
    rho = DensityField.uniform(1.0, 64)
    r = weakstar_densities(rho, 0.5, 4)
    assert np.max(np.abs(r - 1.0)) == pytest.approx(0.5, abs=1e-12)
    assert r.mean() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(weakstar_densities(rho, 0.5, 4, mode="shift"), 1.5)


def test_weakstar_shift_mode_does_not_converge():
    spec = ProblemSpec.polyharmonic(1, 1, 64)
    rep = weakstar_experiment(spec, DensityField.uniform(1.0, 64), 0.5, [2, 8], mode="shift")
    assert not rep.passed


def test_weakstar_rejects_unresolved_frequency():
    spec = ProblemSpec.polyharmonic(1, 1, 32)
    with pytest.raises(ValueError):
        weakstar_experiment(spec, DensityField.uniform(1.0, 32), 0.5, [8])
