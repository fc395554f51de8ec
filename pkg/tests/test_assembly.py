import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from densityeig.assembly import (
    AssemblyError,
    DensityField,
    ProblemSpec,
    assemble,
    build_basis,
    dump_problem,
    eval_basis,
    gauss_rule,
    load_problem,
    mass_matrix,
    problem_from_dict,
    problem_to_dict,
    sample_functions,
    stiffness_matrix,
)


def full_basis(m, p, n_e, L=1.0):
    return build_basis(ProblemSpec.polyharmonic(m, 0, n_e, L=L, p=p, b=1.0))


@pytest.mark.parametrize("p,n_e", [(1, 4), (2, 5), (3, 8), (4, 6), (5, 7)])
@pytest.mark.parametrize("order", [0, 1, 2])
def test_basis_matches_scipy_bspline(p, n_e, order):
    basis = full_basis(1, p, n_e, L=2.0)
    xs = np.linspace(0, 2.0, 37)[1:-1]
    for i in range(basis.n_basis):
        c = np.zeros(basis.n_basis)
        c[i] = 1.0
        ours = np.array([eval_basis(basis, x, order)[i] for x in xs])
        if order > p:
            np.testing.assert_allclose(ours, 0.0)
            continue
        ref = BSpline(basis.knots, c, p)
        ref = ref.derivative(order) if order else ref
        np.testing.assert_allclose(ours, ref(xs), atol=1e-10, rtol=1e-10)


@given(st.integers(1, 5), st.integers(2, 12), st.floats(0.0, 1.0))
def test_partition_of_unity(p, n_e, x):
    basis = full_basis(1, p, n_e)
    vals = eval_basis(basis, x)
    assert vals.sum() == pytest.approx(1.0, abs=1e-13)
    assert np.all(vals >= -1e-14)


def test_hat_functions():
    basis = full_basis(1, 1, 4)
    assert basis.n_basis == 5
    np.testing.assert_allclose(eval_basis(basis, 0.25), [0, 1, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(eval_basis(basis, 0.125), [0.5, 0.5, 0, 0, 0], atol=1e-15)


def test_derivative_continuity_across_knots():
    basis = full_basis(2, 3, 5)
    rng = np.random.default_rng(1)
    c = rng.standard_normal(basis.n_basis)
    for knot in basis.knots[4:-4]:
        for order in (0, 1, 2):
            left = eval_basis(basis, knot - 1e-9, order) @ c
            right = eval_basis(basis, knot + 1e-9, order) @ c
            assert abs(left - right) < 1e-6 * (1 + abs(left))


@pytest.mark.parametrize("q", [1, 2, 3, 5, 8])
def test_gauss_exactness(q):
    x, w = gauss_rule(q)
    for deg in range(2 * q):
        exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
        assert w @ x**deg == pytest.approx(exact, abs=1e-13)
    with pytest.raises(AssemblyError):
        gauss_rule(0)


def test_linear_consistent_mass():
    spec = ProblemSpec.polyharmonic(1, 1, 4, p=1)
    M = mass_matrix(spec, DensityField.uniform(1.0, 4))
    h = 0.25
    ref = h / 6 * (4 * np.eye(3) + np.eye(3, k=1) + np.eye(3, k=-1))
    np.testing.assert_allclose(M, ref, atol=1e-15)
    K = stiffness_matrix(spec)
    np.testing.assert_allclose(K, (2 * np.eye(3) - np.eye(3, k=1) - np.eye(3, k=-1)) / h, atol=1e-12)


def test_single_dof_string():
    spec = ProblemSpec.polyharmonic(1, 1, 2, p=1)
    gram = assemble(spec, build_basis(spec), DensityField.uniform(1.0, 2))
    np.testing.assert_allclose(gram.K, [[4.0]])
    np.testing.assert_allclose(gram.M, [[1.0 / 3]])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=6, max_size=6),
       st.lists(st.floats(0.1, 10.0), min_size=6, max_size=6))
def test_mass_symmetric_and_linear_in_density(r1, r2):
    spec = ProblemSpec.polyharmonic(2, 1, 6)
    a, b = DensityField(r1), DensityField(r2)
    Ma, Mb = mass_matrix(spec, a), mass_matrix(spec, b)
    Mab = mass_matrix(spec, DensityField(np.add(r1, r2)))
    np.testing.assert_allclose(Ma, Ma.T, atol=1e-14)
    np.testing.assert_allclose(Mab, Ma + Mb, rtol=1e-12, atol=1e-14)
    assert np.all(np.linalg.eigvalsh(Ma) > 0)


@pytest.mark.parametrize("m,k", [(1, 1), (2, 1), (2, 2), (3, 2)])
def test_boundary_conformity(m, k):
    spec = ProblemSpec.polyharmonic(m, k, 8)
    basis = build_basis(spec)
    for x in (0.0, 1.0):
        for order in range(k):
            assert np.max(np.abs(eval_basis(basis, x, order))) < 1e-12
    assert np.max(np.abs(eval_basis(basis, 0.0, k))) > 1e-3


def test_stiffness_weighted_by_coefficients():
    spec = ProblemSpec(L=1.0, m=2, k=2, A=[0.0, 3.0, 1.0], n_e=6)
    K = stiffness_matrix(spec)
    K2 = stiffness_matrix(ProblemSpec.polyharmonic(2, 2, 6))
    K1 = stiffness_matrix(ProblemSpec(L=1.0, m=2, k=2, A=[0.0, 1.0, 1e-300], n_e=6))
    np.testing.assert_allclose(K, K2 + 3 * K1, rtol=1e-12, atol=1e-10)


def test_invalid_specs():
    with pytest.raises(AssemblyError):
        ProblemSpec.polyharmonic(2, 1, 8, p=1)
    with pytest.raises(AssemblyError):
        ProblemSpec(L=1.0, m=1, k=1, A=[0.0, 0.0], n_e=4)
    with pytest.raises(AssemblyError):
        ProblemSpec.polyharmonic(1, 1, 1)
    with pytest.raises(ValueError):
        DensityField([1.0, -1.0])


def test_default_shift():
    assert ProblemSpec.polyharmonic(1, 1, 4).b == 0.0
    assert ProblemSpec.polyharmonic(1, 0, 4).b == 1.0
    assert ProblemSpec(L=1.0, m=1, k=1, A=[-1.0, 1.0], n_e=4).b == 1.0


def test_json_roundtrip(tmp_path):
    spec = ProblemSpec(L=2.0, m=2, k=1, A=[0.5, [0.0, 1.0, 2.0, 0.0], 1.0], n_e=4, p=5, b=0.25)
    rho = DensityField([1.0, 2.0, 3.0, 4.0], L=2.0)
    path = tmp_path / "p.json"
    dump_problem(spec, rho, path)
    spec2, rho2 = load_problem(path)
    assert problem_to_dict(spec2, rho2) == problem_to_dict(spec, rho)
    doc = json.loads(path.read_text())
    doc["rho"] = None
    assert problem_from_dict(doc)[1] is None


def test_sampled_eigenfunction_shape():
    spec = ProblemSpec.polyharmonic(1, 1, 4, p=2)
    c = np.ones((spec.dof, 2))
    xs, vals = sample_functions(spec, c, 3)
    assert xs.shape == (12,) and vals.shape == (12, 2)
    assert np.all(np.diff(xs) > 0)
