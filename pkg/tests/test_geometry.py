import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from linkforge.errors import EvaluationError
from linkforge.geometry import (PlanarPoint, Rot2, Transform3, finite_diff_jacobian,
                                lift_to_3d, rot2_apply, rot_x, rot_y, rot_z)

angles = st.floats(-10.0, 10.0, allow_nan=False)


def random_transform(rng):
    R = rot_z(rng.uniform(-3, 3)) @ rot_y(rng.uniform(-3, 3)) @ rot_x(rng.uniform(-3, 3))
    return Transform3(R, rng.normal(size=3))


def test_rot2_identity_and_quarter_turn():
    assert np.allclose(rot2_apply(Rot2(0.0), (1.0, 0.0)), (1.0, 0.0), atol=0, rtol=0)
    assert np.allclose(rot2_apply(Rot2(math.pi / 2), (1.0, 0.0)), (0.0, 1.0), atol=1e-16)


def test_rot2_matches_matrix_product():
    v = np.array([0.2, 0.1])
    c, s = math.cos(0.3), math.sin(0.3)
    expected = np.array([[c, -s], [s, c]]) @ v
    assert np.allclose(rot2_apply(Rot2(0.3), v), expected, atol=1e-15)


@given(angles, angles)
def test_rot2_preserves_norm(theta, phi):
    v = (math.cos(phi), math.sin(phi))
    assert abs(np.linalg.norm(rot2_apply(Rot2(theta), v)) - 1.0) <= 1e-12


@given(angles)
def test_rot2_inverse_composes_to_identity(theta):
    r = Rot2(theta) @ Rot2(theta).inverse()
    assert np.allclose(r.matrix(), np.eye(2), atol=1e-12)
    assert abs(np.linalg.det(Rot2(theta).matrix()) - 1.0) <= 1e-12


def test_lift_identity_and_translation():
    assert np.array_equal(lift_to_3d(Transform3.identity(), PlanarPoint(0.1, 0.2)),
                          [0.1, 0.2, 0.0])
    T = Transform3(np.eye(3), [1.0, 0.0, 0.0])
    assert np.array_equal(lift_to_3d(T, (0.0, 0.0)), [1.0, 0.0, 0.0])


def test_lift_matches_homogeneous_product(rng):
    for _ in range(50):
        T = random_transform(rng)
        p = rng.normal(size=2)
        h = T.matrix() @ np.array([p[0], p[1], 0.0, 1.0])
        assert np.allclose(lift_to_3d(T, p), h[:3], atol=1e-12)


def test_transforms_orthonormal_associative_and_invertible(rng):
    for _ in range(1000):
        a, b, c = (random_transform(rng) for _ in range(3))
        assert np.allclose(a.rotation.T @ a.rotation, np.eye(3), atol=1e-10)
        left = a.compose(b).compose(c)
        right = a.compose(b.compose(c))
        assert np.allclose(left.matrix(), right.matrix(), atol=1e-10)
        p = rng.normal(size=3)
        assert np.allclose(a.inverse().apply(a.apply(p)), p, atol=1e-10)


def test_planar_check():
    assert Transform3(rot_z(0.4), [1.0, 2.0, 0.0]).is_planar()
    assert not Transform3(rot_x(0.4)).is_planar()


def test_fd_jacobian_of_linear_maps(rng):
    x = rng.normal(size=4)
    assert np.allclose(finite_diff_jacobian(lambda v: v, x), np.eye(4), atol=1e-9)
    A = rng.normal(size=(3, 4))
    assert np.allclose(finite_diff_jacobian(lambda v: A @ v, x), A, atol=1e-9)


def test_fd_jacobian_errors():
    with pytest.raises(EvaluationError), np.errstate(divide="ignore"):
        finite_diff_jacobian(lambda v: np.log(v), np.array([0.0]))
    with pytest.raises(ValueError):
        finite_diff_jacobian(lambda v: v, np.zeros(2), h=0.0)


def test_planar_point_rejects_nan():
    with pytest.raises(ValueError):
        PlanarPoint(float("nan"), 0.0)
