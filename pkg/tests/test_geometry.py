import math
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fadnet.errors import DegenerateGeometryError, DomainError, ProjectionError
from fadnet.geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    KeypointEstimate,
    alpha_from_yaw,
    corners2d,
    corners3d,
    decode_center2d,
    decode_depth,
    decode_dimensions,
    decode_location3d,
    decode_yaw,
    encode_center2d,
    encode_depth,
    encode_dimensions,
    encode_location3d,
    remake_label_2d,
    rotation_y,
    wrap_angle,
)

K = CameraIntrinsics(100.0, 100.0, 50.0, 30.0)


def kp(u, v):
    return KeypointEstimate(u, v, 0, 0.9)


def test_intrinsics_reject_nonpositive_focal():
    with pytest.raises(DomainError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0)


def test_center2d_examples():
    assert decode_center2d(kp(100, 50), 0, 0) == (100, 50)
    assert decode_center2d(kp(100, 50), -3.5, 2.25) == (96.5, 52.25)


@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(-50, 50), st.floats(-50, 50))
def test_center2d_roundtrip(u, v, du, dv):
    k = kp(u, v)
    assert encode_center2d(k, *decode_center2d(k, du, dv)) == pytest.approx((du, dv), abs=1e-9)


def test_depth_examples():
    assert decode_depth(0.0) == 1.0
    assert encode_depth(math.e) == pytest.approx(-1.0, abs=1e-15)
    for d in (0.1, 1, 10, 45, 80):
        assert abs(decode_depth(encode_depth(d)) - d) < 1e-9


def test_encode_depth_domain():
    with pytest.raises(DomainError):
        encode_depth(0.0)
    with pytest.raises(DomainError):
        encode_depth(-2.0)


def test_location_example():
    x, y, z = decode_location3d(kp(60, 40), 0.5, 0.5, encode_depth(10.0), K)
    assert (x, y, z) == pytest.approx((1.05, 1.05, 10.0), abs=1e-12)
    assert K.project([x, y, z]) == pytest.approx([60.5, 40.5], abs=1e-9)


def test_location_on_optical_axis():
    x, y, z = decode_location3d(kp(50, 30), 0, 0, encode_depth(7.0), K)
    assert (x, y) == pytest.approx((0, 0), abs=1e-12) and z == pytest.approx(7.0)


def test_location_degenerate_depth():
    # 1/sigmoid(800) - 1 underflows to exactly 0
    with pytest.raises(DegenerateGeometryError):
        decode_location3d(kp(50, 30), 0, 0, 800.0, K)


@settings(max_examples=200)
@given(
    st.floats(0, 1280), st.floats(0, 384), st.floats(-4, 4), st.floats(-4, 4), st.floats(0.5, 80)
)
def test_location_projection_roundtrip(u, v, du, dv, z):
    k = kp(u, v)
    x, y, zz = decode_location3d(k, du, dv, encode_depth(z), K)
    assert K.project([x, y, zz]) == pytest.approx([u + du, v + dv], abs=1e-9)
    assert encode_location3d(k, x, y, zz, K) == pytest.approx((du, dv, encode_depth(z)), abs=1e-9)


def test_dimensions():
    t = (1.5, 1.6, 3.9)
    assert decode_dimensions(t, 0, 0, 0) == t
    assert decode_dimensions(t, math.log(2), 0, 0)[0] == pytest.approx(3.0, abs=1e-15)
    rng = np.random.default_rng(0)
    for offs in rng.uniform(-1, 1, size=(100, 3)):
        back = encode_dimensions(t, *decode_dimensions(t, *offs))
        assert np.allclose(back, offs, atol=1e-12, rtol=0)


def test_yaw_examples():
    assert decode_yaw(1.0, 0.0, 0.0, 5.0) == 0.0
    assert decode_yaw(math.cos(math.pi / 4), math.sin(math.pi / 4), 1.0, 1.0) == pytest.approx(math.pi / 2)
    with pytest.raises(DegenerateGeometryError):
        decode_yaw(0.0, 0.0, 1.0, 1.0)


def test_yaw_handles_zero_depth_via_atan2():
    assert decode_yaw(1.0, 0.0, 2.0, 0.0) == pytest.approx(math.pi / 2)


@settings(max_examples=300)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-50, 50), st.floats(0.1, 80), st.floats(0.01, 100))
def test_yaw_range_and_scale_invariance(c, s, x, z, scale):
    if abs(c) + abs(s) < 1e-6:
        return
    theta = decode_yaw(c, s, x, z)
    assert -math.pi < theta <= math.pi
    assert decode_yaw(c * scale, s * scale, x, z) == pytest.approx(theta, abs=1e-12)


def test_wrap_angle_half_open():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    vals = wrap_angle(np.random.default_rng(1).uniform(-50, 50, 1000))
    assert np.all((vals > -math.pi) & (vals <= math.pi))


def test_alpha_yaw_inverse():
    theta = decode_yaw(math.cos(0.3), math.sin(0.3), 4.0, 12.0)
    assert alpha_from_yaw(theta, 4.0, 12.0) == pytest.approx(0.3)


def test_corners2d():
    pts = corners2d(Box2D(10, 20, 4, 6))
    assert pts.tolist() == [[8, 17], [12, 17], [8, 23], [12, 23]]
    assert np.all(corners2d(Box2D(3, 4, 0, 0)) == [3, 4])


def test_corners3d_unit_cube():
    pts = corners3d(Box3D(0, 0, 0, 2, 2, 2, 0.0))
    assert sorted(map(tuple, pts)) == sorted(itertools.product((-1.0, 1.0), repeat=3))


def test_corners3d_quarter_turn_handedness():
    # length runs along +x at yaw 0; a quarter turn takes it onto -z
    R = rotation_y(math.pi / 2)
    v = R @ np.array([2.0, 0.0, 0.0])
    assert v == pytest.approx([0.0, 0.0, -2.0], abs=1e-12)
    pts = corners3d(Box3D(0, 0, 0, 1.0, 1.0, 4.0, math.pi / 2))
    assert np.ptp(pts[:, 2]) == pytest.approx(4.0) and np.ptp(pts[:, 0]) == pytest.approx(1.0)


def _random_box(rng):
    return Box3D(*rng.uniform(-20, 20, 2), rng.uniform(5, 60), *rng.uniform(0.5, 5, 3),
                 rng.uniform(-math.pi, math.pi))


def test_corners3d_centroid_and_isometry():
    rng = np.random.default_rng(2)
    for _ in range(100):
        b = _random_box(rng)
        pts = corners3d(b)
        assert np.abs(pts.mean(axis=0) - b.center).max() < 1e-12
        other = corners3d(Box3D(b.x, b.y, b.z, b.H, b.W, b.L, rng.uniform(-math.pi, math.pi)))
        d1 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d2 = np.linalg.norm(other[:, None] - other[None], axis=-1)
        assert np.abs(d1 - d2).max() < 1e-10


def test_remake_centered_box():
    b = remake_label_2d(Box3D(0, 0, 10, 1.5, 1.6, 3.9, 0.0), K)
    assert (b.u, b.v) == pytest.approx((K.u0, K.v0))


def test_remake_fronto_parallel_scaling():
    # a flat box facing the camera: doubling z exactly halves the projected size
    near = remake_label_2d(Box3D(0, 0, 10, 2.0, 1e-9, 4.0, 0.0), K)
    far = remake_label_2d(Box3D(0, 0, 20, 2.0, 1e-9, 4.0, 0.0), K)
    assert far.w == pytest.approx(near.w / 2, rel=1e-6)
    assert far.h == pytest.approx(near.h / 2, rel=1e-6)


def test_remake_encloses_corners_without_margin():
    rng = np.random.default_rng(4)
    for _ in range(50):
        b = _random_box(rng)
        uv = K.project(corners3d(b))
        l, t, r, btm = remake_label_2d(b, K).ltrb
        assert np.all(uv[:, 0] >= l - 1e-9) and np.all(uv[:, 0] <= r + 1e-9)
        assert np.all(uv[:, 1] >= t - 1e-9) and np.all(uv[:, 1] <= btm + 1e-9)
        assert min(uv[:, 0]) == pytest.approx(l) and max(uv[:, 1]) == pytest.approx(btm)


def test_remake_is_not_clipped_and_order_free():
    b = Box3D(8.0, 0.0, 6.0, 1.5, 1.6, 3.9, 0.4)
    box = remake_label_2d(b, CameraIntrinsics(100, 100, 50, 30))
    assert box.ltrb[2] > 100  # extends past a 100-px-wide image
    pts = corners3d(b)[::-1]
    uv = K.project(pts)
    assert (uv[:, 0].min(), uv[:, 0].max()) == pytest.approx(
        (remake_label_2d(b, K).ltrb[0], remake_label_2d(b, K).ltrb[2])
    )


def test_remake_behind_camera():
    with pytest.raises(ProjectionError):
        remake_label_2d(Box3D(0, 0, 1.0, 1.5, 1.6, 3.9, math.pi / 2), K)
