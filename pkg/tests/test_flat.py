import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hktl import FlatHKn, Quaternion, check_norm_moment, flat_structure_at, mu_H
from hktl.errors import FixedPointError
from hktl.exterior import ext_d, interior_product
from hktl.flat import norm_moment_gap, qmul

from conftest import small_sample

quat = st.lists(st.floats(-10, 10), min_size=4, max_size=4)


def test_mu_examples():
    np.testing.assert_allclose(mu_H([1, 0, 0, 0]), [0.5, 0, 0], atol=0)
    np.testing.assert_allclose(mu_H([0, 0, 1, 0]), [-0.5, 0, 0], atol=0)


def test_mu_norm(rng):
    q = rng.normal(size=(100, 4))
    np.testing.assert_allclose(np.linalg.norm(mu_H(q), axis=1), 0.5 * np.sum(q * q, axis=1), rtol=1e-12)


def test_mu_equivariance(rng):
    q = rng.normal(size=(100, 4))
    th = rng.uniform(0, 2 * np.pi, size=100)
    e = np.zeros((100, 4))
    e[:, 0], e[:, 1] = np.cos(th), np.sin(th)
    np.testing.assert_allclose(mu_H(np.asarray(qmul(e, q))), mu_H(q), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(quat, quat)
def test_norm_multiplicative(a, b):
    p, q = Quaternion.from_array(a), Quaternion.from_array(b)
    assert (p * q).norm() == pytest.approx(p.norm() * q.norm(), rel=1e-12, abs=1e-12)


def test_quaternion_units():
    i, j, k = Quaternion.i, Quaternion.j, Quaternion.k
    np.testing.assert_array_equal((i * j).q, k.q)
    np.testing.assert_array_equal((j * i).q, -k.q)
    np.testing.assert_array_equal((i * i).q, [-1, 0, 0, 0])


def test_structure_validation():
    with pytest.raises(ValueError):
        FlatHKn(2, weights=[1])
    with pytest.raises(ValueError):
        FlatHKn(2, weights=[0, 0])
    assert FlatHKn(3).dim == 12


def test_flat_structure_at(flat1, rng):
    for x in rng.normal(size=(100, 4)):
        g, triple, kd, mu = flat_structure_at(flat1, x)
        assert kd["normX2"] == pytest.approx(2 * np.linalg.norm(mu), rel=1e-12)
    np.testing.assert_array_equal(g, np.eye(4))
    with pytest.raises(FixedPointError):
        flat_structure_at(flat1, np.zeros(4))


def test_mu_additive(flat2):
    np.testing.assert_allclose(flat2.mu([1, 0, 0, 0, 1, 0, 0, 0]), [1, 0, 0], atol=0)
    np.testing.assert_allclose(flat2.mu([1, 0, 0, 0, 0, 0, 1, 0]), [0, 0, 0], atol=0)


def test_triple_quaternionic(flat2):
    I, J, K = flat2.structure_matrices
    eye = np.eye(8)
    for A in (I, J, K):
        np.testing.assert_allclose(A @ A, -eye, atol=1e-14)
        np.testing.assert_allclose(A.T @ A, eye, atol=1e-14)
    np.testing.assert_allclose(I @ J, K, atol=1e-14)


def test_constant_triple_closed_and_moment(flat2, rng):
    for x in rng.normal(size=(10, 8)):
        for A in range(3):
            np.testing.assert_array_equal(ext_d(flat2.omegas[A])(x), 0.0)
            np.testing.assert_array_equal(ext_d(interior_product(flat2.X, flat2.omegas[A]))(x), 0.0)
            dmu = ext_d(flat2.moment_component(A))(x)
            np.testing.assert_allclose(dmu, flat2.alphas[A](x), atol=1e-12)


def test_X_generates_circle(flat1, rng):
    q = rng.normal(size=4)
    X = np.asarray(flat1.X(q))
    np.testing.assert_allclose(X, np.asarray(qmul(np.array([0, 1.0, 0, 0]), q)), atol=0)


def test_check_norm_moment_n1(flat1):
    rep = check_norm_moment(flat1, small_sample(500))
    assert rep.passed and rep["norm_moment_identity"].max <= 1e-12


def test_norm_moment_n2_point(flat2):
    x = np.array([1.0, 0, 0, 0, 0, 0, 1.0, 0])
    gap = float(norm_moment_gap(flat2)(x))
    assert gap == pytest.approx(-2.0, abs=1e-12)
    assert not check_norm_moment(flat2, small_sample(200)).passed


def test_shifted_moment_changes_sign(flat1):
    # along q = s * 1 the moment map is (s^2 / 2, 0, 0); c = (-0.5, 0, 0)
    gap = norm_moment_gap(flat1, shift=(-0.5, 0.0, 0.0))
    s = np.linspace(0.2, 1.8, 81)
    vals = np.array([float(gap(np.array([t, 0, 0, 0]))) for t in s])
    assert vals[0] > 0 and vals[-1] < 0
