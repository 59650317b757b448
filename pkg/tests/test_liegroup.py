import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from topoloc import liegroup as lg
from topoloc.errors import DomainError

import oracles

finite = st.floats(-5.0, 5.0, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)


@st.composite
def twists(draw, max_angle=3.0, min_angle=0.0):
    rho = draw(vec3)
    axis = draw(arrays(float, 3, elements=st.floats(-1, 1)).filter(lambda a: np.linalg.norm(a) > 1e-3))
    angle = draw(st.floats(min_angle, max_angle))
    return np.concatenate([rho, angle * axis / np.linalg.norm(axis)])


@st.composite
def transforms(draw):
    return lg.exp_se3(draw(twists()))


def test_exp_identity_and_pure_translation():
    assert np.array_equal(lg.exp_se3(np.zeros(6)), np.eye(4))
    T = lg.exp_se3([1, 2, 3, 0, 0, 0])
    assert np.allclose(T[:3, :3], np.eye(3), atol=0)
    assert np.allclose(T[:3, 3], [1, 2, 3], atol=1e-15)


def test_exp_quarter_yaw_matches_series():
    xi = np.array([0, 0, 0, 0, 0, np.pi / 2])
    T = lg.exp_se3(xi)
    assert np.allclose(T, oracles.expm_series(oracles.wedge(xi), 20), atol=1e-9)
    assert np.allclose(T[:3, :3], [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_log_identity_and_translation():
    assert np.array_equal(lg.log_se3(np.eye(4)), np.zeros(6))
    T = np.eye(4)
    T[:3, 3] = (1, 2, 3)
    assert np.allclose(lg.log_se3(T), [1, 2, 3, 0, 0, 0], atol=1e-15)


def test_log_rejects_half_turn():
    with pytest.raises(DomainError):
        lg.log_se3(lg.exp_se3([0, 0, 0, 0, 0, np.pi]))


@settings(max_examples=300)
@given(twists())
def test_exp_matches_scipy_expm(xi):
    assert np.allclose(lg.exp_se3(xi), oracles.exp_twist(xi), atol=1e-9, rtol=0)


@settings(max_examples=300)
@given(twists())
def test_exp_log_round_trip(xi):
    assert np.allclose(lg.log_se3(lg.exp_se3(xi)), xi, atol=1e-9, rtol=0)


@given(twists(max_angle=0.05))
def test_round_trip_across_series_switch(xi):
    assert np.allclose(lg.log_se3(lg.exp_se3(xi)), xi, atol=1e-12, rtol=0)
    assert np.allclose(lg.exp_se3(xi), oracles.exp_twist(xi), atol=1e-12, rtol=0)


def test_round_trip_at_series_threshold():
    for angle in (lg.SMALL_ANGLE * (1 - 1e-9), lg.SMALL_ANGLE, lg.SMALL_ANGLE * (1 + 1e-9)):
        xi = np.array([0.3, -0.2, 0.1, angle / np.sqrt(2), 0.0, angle / np.sqrt(2)])
        assert np.allclose(lg.exp_se3(xi), oracles.exp_twist(xi), atol=1e-14)
        assert np.allclose(lg.log_se3(lg.exp_se3(xi)), xi, atol=1e-14)


def test_batch_matches_single():
    rng = np.random.default_rng(0)
    xi = rng.normal(size=(20, 6))
    batch = lg.exp_se3(xi)
    for i in range(20):
        assert np.array_equal(batch[i], lg.exp_se3(xi[i]))
    assert np.allclose(lg.log_se3(batch), np.stack([lg.log_se3(T) for T in batch]), atol=0)


def test_adjoint_identity_and_pure_rotation():
    assert np.array_equal(lg.adjoint(np.eye(4)), np.eye(6))
    T = lg.exp_se3([0, 0, 0, 0.3, -0.2, 0.5])
    ad = lg.adjoint(T)
    assert np.array_equal(ad[:3, :3], T[:3, :3])
    assert np.array_equal(ad[3:, 3:], T[:3, :3])
    assert np.allclose(ad[:3, 3:], 0, atol=1e-16)


@settings(max_examples=200)
@given(transforms(), twists())
def test_adjoint_defining_identity(T, xi):
    lhs = oracles.wedge(lg.adjoint(T) @ xi)
    rhs = T @ oracles.wedge(xi) @ np.linalg.inv(T)
    assert np.allclose(lhs, rhs, atol=1e-10, rtol=0)


@settings(max_examples=200)
@given(transforms(), transforms())
def test_adjoint_is_homomorphism(A, B):
    assert np.allclose(lg.adjoint(A @ B), lg.adjoint(A) @ lg.adjoint(B), atol=1e-9, rtol=0)


def test_odot_examples():
    m = lg.odot(np.array([0, 0, 0, 1.0]))
    assert np.array_equal(m[:3, :3], np.eye(3))
    assert np.array_equal(m[:, 3:], np.zeros((4, 3)))
    q = np.array([1.0, 0, 0, 1])
    xi = np.array([0, 0, 0, 0, 0, 1.0])
    assert np.allclose(lg.odot(q) @ xi, [0, 1, 0, 0], atol=0)
    assert np.allclose(oracles.wedge(xi) @ q, [0, 1, 0, 0], atol=0)


def test_odot_swap_identity_1000_pairs():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        q = rng.normal(size=4)
        xi = rng.normal(size=6)
        assert np.allclose(lg.odot(q) @ xi, oracles.wedge(xi) @ q, atol=1e-12, rtol=0)


def test_odot_of_3_vector_uses_unit_scale():
    q = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(lg.odot(q), lg.odot(np.append(q, 1.0)))


@settings(max_examples=100, deadline=None)
@given(twists(max_angle=2.5))
def test_left_jacobian_matches_quadrature(xi):
    assert np.allclose(lg.left_jacobian(xi), oracles.left_jacobian(xi), atol=1e-9, rtol=0)
    assert np.allclose(lg.left_jacobian_inv(xi) @ lg.left_jacobian(xi), np.eye(6), atol=1e-9)


def test_left_jacobian_near_series_switch():
    rng = np.random.default_rng(2)
    for angle in np.geomspace(1e-6, 0.1, 40):
        axis = rng.normal(size=3)
        xi = np.concatenate([rng.normal(size=3), angle * axis / np.linalg.norm(axis)])
        assert np.allclose(lg.left_jacobian(xi), oracles.left_jacobian(xi), atol=1e-12, rtol=0)


@settings(max_examples=50, deadline=None)
@given(twists(max_angle=2.0), arrays(float, 6, elements=finite))
def test_jacobian_derivatives_match_finite_differences(xi, v):
    h = 1e-6
    for f, d in ((lg.left_jacobian, lg.d_left_jacobian_times), (lg.left_jacobian_inv, lg.d_left_jacobian_inv_times)):
        num = np.zeros((6, 6))
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            num[:, k] = (f(xi + e) @ v - f(xi - e) @ v) / (2 * h)
        assert np.allclose(d(xi, v), num, atol=1e-6 * (1 + np.abs(num).max()))


@settings(max_examples=200)
@given(transforms(), transforms())
def test_composition_stays_valid(A, B):
    assert lg.is_valid_transform(A @ B, tol=1e-9)
    assert np.allclose(lg.inverse(A) @ A, np.eye(4), atol=1e-12)


def test_long_product_drift_is_repaired_by_renormalize():
    T = np.eye(4)
    step = lg.exp_se3([0.1, 0.02, 0.0, 0.01, 0.02, 0.03])
    for _ in range(10000):
        T = T @ step
    R = lg.renormalize(T)
    assert lg.is_valid_transform(R, tol=1e-12)
    assert np.allclose(R, T, atol=1e-9)


def test_rotation_angle_and_rpy():
    T = lg.from_rpy_xyz(1, 2, 3, 0.0, 0.0, 0.4)
    assert np.isclose(lg.rotation_angle(T), 0.4, atol=1e-15)
    assert np.allclose(T[:3, 3], [1, 2, 3])
    R = lg.from_rpy_xyz(roll=0.1, pitch=0.2, yaw=0.3)[:3, :3]
    ref = expm(oracles.skew([0, 0, 0.3])) @ expm(oracles.skew([0, 0.2, 0])) @ expm(oracles.skew([0.1, 0, 0]))
    assert np.allclose(R, ref, atol=1e-14)


def test_covariance_compounding_of_identities():
    S = np.diag([1, 2, 3, 4, 5, 6.0]) * 1e-3
    assert np.allclose(lg.cov_compound(np.eye(4), S, S), 2 * S)
    T = lg.exp_se3([1, 0, 0, 0, 0, 0.5])
    ad = lg.adjoint(np.linalg.inv(T))
    assert np.allclose(lg.cov_inverse(T, S), ad @ S @ ad.T)
