import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monovel.errors import HorizonDegenerateError, InvalidArgumentError
from monovel.geometry import (BoundingBox2D, CameraIntrinsics, NormalizedBox, VehicleState,
                              backproject_bottom_center, box_to_world, planar_distance,
                              relative_velocity, world_to_box)

finite = st.floats(-1e3, 1e3, allow_nan=False)
positive = st.floats(0.5, 500.0)


def test_box_at_principal_point_maps_to_unit_box(cam):
    box = BoundingBox2D(cam.c_x, cam.c_y, cam.f_x, cam.f_y)
    for z_hat in (0.5, 10.0, 33.0):
        assert box_to_world(box, cam, z_hat) == NormalizedBox(0.0, 0.0, 1.0, 1.0)


def test_box_to_world_hand_example():
    cam = CameraIntrinsics(2.0, 2.0, 1.0, 1.0)
    assert box_to_world(BoundingBox2D(3, 5, 4, 2), cam, 1.0) == NormalizedBox(1.0, 2.0, 2.0, 1.0)


def test_box_to_world_linear_in_z_hat(cam):
    box = BoundingBox2D(120.0, 40.0, 10.0, 6.0)
    a, b = box_to_world(box, cam, 5.0), box_to_world(box, cam, 10.0)
    assert b.p_x == pytest.approx(2 * a.p_x, abs=1e-12)
    assert b.p_y == pytest.approx(2 * a.p_y, abs=1e-12)
    assert (b.p_w, b.p_h) == (a.p_w, a.p_h)


@pytest.mark.parametrize("z_hat", [0.0, -1.0])
def test_box_to_world_rejects_bad_depth(cam, z_hat):
    with pytest.raises(InvalidArgumentError):
        box_to_world(BoundingBox2D(1, 1, 1, 1), cam, z_hat)


def test_degenerate_box_rejected():
    with pytest.raises(InvalidArgumentError):
        BoundingBox2D(1, 1, 0, 1)


@settings(max_examples=200, deadline=None)
@given(bx=finite, by=finite, bw=positive, bh=positive, z_hat=st.floats(0.1, 100.0))
def test_box_to_world_round_trip(bx, by, bw, bh, z_hat):
    cam = CameraIntrinsics(712.0, 705.5, 640.0, 320.0)
    box = BoundingBox2D(bx, by, bw, bh)
    back = world_to_box(box_to_world(box, cam, z_hat), cam, z_hat)
    np.testing.assert_allclose([back.b_x, back.b_y, back.b_w, back.b_h], [bx, by, bw, bh], rtol=0, atol=1e-9)


def test_backproject_hand_example(cam):
    # bottom edge one focal length below the horizon -> z equals camera height
    box = BoundingBox2D(cam.c_x, cam.c_y + cam.f_y - 5.0, 8.0, 10.0)
    x, z = backproject_bottom_center(box, cam)
    assert z == pytest.approx(1.5, abs=1e-12)
    assert x == 0.0


def test_backproject_horizon_degenerate(cam):
    box = BoundingBox2D(cam.c_x, cam.c_y - 5.0, 8.0, 10.0)
    with pytest.raises(HorizonDegenerateError):
        backproject_bottom_center(box, cam)


@settings(max_examples=200, deadline=None)
@given(bx=st.floats(0, 192), bottom=st.floats(28.01, 200), bw=st.floats(0.5, 50), bh=st.floats(0.5, 20))
def test_backproject_then_project_round_trip(bx, bottom, bw, bh):
    cam = CameraIntrinsics(160.0, 160.0, 96.0, 28.0, 1.5)
    box = BoundingBox2D(bx, bottom - 0.5 * bh, bw, bh)
    x, z = backproject_bottom_center(box, cam)
    u, v = cam.project(x, cam.height_above_ground, z)
    assert abs(u - bx) < 1e-6
    assert abs(v - box.bottom) < 1e-6


def test_relative_velocity_examples():
    assert relative_velocity((10, 31), (10, 31), 0.5) == (0.0, 0.0)
    assert relative_velocity((10, 30), (10, 31), 0.5) == (0.0, -2.0)


@pytest.mark.parametrize("dt", [0.0, -0.1])
def test_relative_velocity_rejects_bad_dt(dt):
    with pytest.raises(InvalidArgumentError):
        relative_velocity((0, 1), (0, 1), dt)


@settings(max_examples=100, deadline=None)
@given(px=finite, pz=finite, dt=st.floats(1e-3, 10.0), k=st.floats(0.1, 10.0))
def test_relative_velocity_properties(px, pz, dt, k):
    assert relative_velocity((px, pz), (px, pz), dt) == (0.0, 0.0)
    v1 = relative_velocity((px, pz), (0.0, 0.0), dt)
    vk = relative_velocity((px, pz), (0.0, 0.0), dt * k)
    np.testing.assert_allclose(vk, np.array(v1) / k, rtol=1e-12, atol=1e-300)


def test_planar_distance_examples():
    assert planar_distance((0, 30)) == 30
    assert planar_distance((3, 4)) == 5
    assert planar_distance((-3, 4)) == 5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=3))
def test_planar_distance_triangle_inequality(pts):
    a, b, c = (np.array(p) for p in pts)
    d = lambda p, q: planar_distance(p - q)
    assert d(a, b) >= 0
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9


def test_vehicle_state_distance_invariant():
    s = VehicleState.from_kinematics((3.0, 4.0), (1.0, -1.0))
    assert s.distance == 5.0
    with pytest.raises(InvalidArgumentError):
        VehicleState((3.0, 4.0), (0.0, 0.0), 5.1)
    with pytest.raises(InvalidArgumentError):
        VehicleState((0.0, 0.0), (0.0, 0.0), 0.0)


def test_camera_validation():
    with pytest.raises(InvalidArgumentError):
        CameraIntrinsics(0.0, 1.0, 0, 0)
    with pytest.raises(InvalidArgumentError):
        CameraIntrinsics(1.0, 1.0, 0, 0, height_above_ground=0.0)
