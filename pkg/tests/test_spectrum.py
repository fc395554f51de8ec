import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_check
from densityeig.assembly import DensityField, ProblemSpec
from densityeig.spectrum import (
    MAX_CLUSTER_SIZE,
    ClusterError,
    block_identity_check,
    ck_coefficients,
    detect_clusters,
    differential,
    eigenvalues,
    elementary_symmetric,
    lambda_fh,
    shift_identity_check,
    shifted_differential,
    squared_mass,
    validate_F,
)

finite = st.floats(-5, 5, allow_nan=False)


@given(st.lists(finite, min_size=0, max_size=8), st.data())
def test_elementary_symmetric_brute_force(values, data):
    h = data.draw(st.integers(0, len(values)))
    brute = sum(math.prod(c) for c in itertools.combinations(values, h))
    assert elementary_symmetric(values, h) == pytest.approx(brute, rel=1e-10, abs=1e-9)


def test_elementary_symmetric_examples():
    assert elementary_symmetric([1, 2, 3], 2) == 11
    assert elementary_symmetric([1, 2, 3], 3) == 6
    assert elementary_symmetric([], 0) == 1
    with pytest.raises(ValueError):
        elementary_symmetric([1, 2], 3)


@settings(max_examples=50)
@given(st.lists(st.floats(0.1, 50), min_size=1, max_size=8), st.floats(0.0, 10.0), st.data())
def test_shift_identity(values, b, data):
    h = data.draw(st.integers(0, len(values)))
    direct, via = shift_identity_check(values, b, h)
    assert via == pytest.approx(direct, rel=1e-9)


def test_shift_identity_example():
    # lam = (1, 2), b = 1: Lambda~_1 = 5, Lambda~_2 = 6, Lambda_2 = 6 - 5 + 1 = 2
    direct, via = shift_identity_check([1.0, 2.0], 1.0, 2)
    assert direct == via == 2.0
    _, broken = shift_identity_check([1.0, 2.0], 1.0, 2, sign=1.0)
    assert broken != 2.0


def test_block_identity():
    vals = np.array([1.0, 1.0, 3.0, 4.0, 4.0, 4.0])
    for h in range(7):
        direct, via = block_identity_check(vals, [[0, 1], [2], [3, 4, 5]], h)
        assert via == pytest.approx(direct, rel=1e-12)


def test_ck_single_cluster():
    # one cluster of size n: c = C(n-1, h-1) lam^h
    for n in range(1, 6):
        for h in range(1, n + 1):
            c = ck_coefficients([2.0], [n], h)
            assert c[0] == pytest.approx(math.comb(n - 1, h - 1) * 2.0**h)


def test_ck_two_simple():
    # Lambda_2 = lam1 lam2; d/drho picks lam1 lam2 from each eigenvalue
    np.testing.assert_allclose(ck_coefficients([2.0, 3.0], [1, 1], 2), [6.0, 6.0])
    np.testing.assert_allclose(ck_coefficients([2.0, 3.0], [1, 1], 1), [2.0, 3.0])


def test_ck_size_limit():
    with pytest.raises(ValueError):
        ck_coefficients([1.0], [MAX_CLUSTER_SIZE + 1], 1)


def test_detect_and_validate_clusters():
    part = detect_clusters([1.0, 1.0 + 1e-9, 2.0, 3.0, 3.0])
    assert part.clusters == [(1, 2), (3,), (4, 5)]
    clusters, values = validate_F([1, 2, 3], part)
    assert clusters == [(1, 2), (3,)]
    np.testing.assert_allclose(values, [1.0, 2.0], rtol=1e-8)
    with pytest.raises(ClusterError):
        validate_F([2, 3], part)
    with pytest.raises(ClusterError):
        validate_F([0], part)
    with pytest.raises(ClusterError):
        validate_F([9], part)


def test_squared_mass_sums_to_density_normalization(wavy_rho):
    spec = ProblemSpec.polyharmonic(2, 2, 16)
    rho = wavy_rho(spec)
    dec = eigenvalues(spec, rho, 4)
    sq = squared_mass(spec, dec.vectors)
    np.testing.assert_allclose(rho.values @ sq, 1.0, rtol=1e-10)


@pytest.mark.parametrize("m,k", [(1, 1), (2, 2), (2, 1), (1, 0)])
def test_differential_simple_eigenvalue(m, k, wavy_rho):
    spec = ProblemSpec.polyharmonic(m, k, 24)
    F = [2] if k == 0 else [1]
    assert fd_check(spec, wavy_rho(spec), F, 1, directions=6) < 1e-5


def test_differential_euler_relation(wavy_rho):
    # Lambda_{F,h}[t rho] = t^-h Lambda_{F,h}[rho]
    spec = ProblemSpec.polyharmonic(2, 1, 24)
    rho = wavy_rho(spec)
    for F, h in ([1], 1), ([1, 2, 3], 2):
        g = differential(spec, rho, F, h)
        assert g.apply(rho.values) == pytest.approx(-h * lambda_fh(spec, rho, F, h), rel=1e-9)


def test_differential_cluster_and_mixed(cluster_problem):
    spec, rho = cluster_problem
    assert fd_check(spec, rho, [1, 2], 2, directions=5) < 1e-5
    assert fd_check(spec, rho, [1, 2, 3], 2, directions=5) < 1e-5
    with pytest.raises(ClusterError):
        differential(spec, rho, [1], 1)


def test_cluster_gradient_is_rotation_invariant(cluster_problem):
    spec, rho = cluster_problem
    dec = eigenvalues(spec, rho, 3)
    g = differential(spec, rho, [1, 2], 1, decomposition=dec)
    th = 0.7
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    dec.vectors[:, :2] = dec.vectors[:, :2] @ R
    g2 = differential(spec, rho, [1, 2], 1, decomposition=dec)
    np.testing.assert_allclose(g2.values, g.values, rtol=1e-10, atol=1e-12 * np.abs(g.values).max())


@pytest.mark.parametrize("b", [0.5, 1.0, 10.0])
def test_shifted_route_agrees(b, cluster_problem):
    spec, rho = cluster_problem
    for h in (1, 2):
        g = differential(spec, rho, [1, 2], h).values
        gs = shifted_differential(spec, rho, [1, 2], h, b).values
        np.testing.assert_allclose(gs, g, rtol=1e-8, atol=1e-10 * np.abs(g).max())
    with pytest.raises(ClusterError):
        shifted_differential(spec, rho, [1, 2, 3], 1, b)


def test_neumann_zero_eigenvalue_has_zero_gradient(wavy_rho):
    spec = ProblemSpec.polyharmonic(1, 0, 24)
    rho = wavy_rho(spec)
    dec = eigenvalues(spec, rho, 3)
    assert abs(dec.lambdas[0]) < 1e-8
    g = differential(spec, rho, [1], 1)
    assert np.abs(g.values).max() < 1e-8


def test_count_exceeds_dof():
    spec = ProblemSpec.polyharmonic(1, 1, 2, p=1)
    with pytest.raises(ValueError, match="count exceeds dof"):
        eigenvalues(spec, DensityField.uniform(1.0, 2), 2)
