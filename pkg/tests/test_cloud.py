import logging

import numpy as np
import pytest

from aerialcontact.cloud import (PointCloud, estimate_normal, load_cloud, principal_curvatures, sample_contact_region,
                                 sample_task_features, sample_task_indices, save_cloud, surface_feature)
from aerialcontact.errors import CloudParseError, DegenerateNeighborhoodError, EmptyCloudError, NoContactError
from aerialcontact.geom import Pose
from aerialcontact.synthetic import cylinder, fibonacci_sphere, plane_grid


@pytest.fixture(scope="module")
def sphere():
    return PointCloud(fibonacci_sphere(5000), orient_outward=True)


@pytest.fixture(scope="module")
def cyl():
    return PointCloud(cylinder(5000, 0.5, 2.0, seed=1))


@pytest.fixture(scope="module")
def plane():
    return PointCloud(plane_grid(0.5, 0.5, 0.01))


def test_load_xyz(tmp_path):
    f = tmp_path / "c.xyz"
    f.write_text("# three points\n0 0 0\n1 0 0\n\n0 1 0\n")
    c = load_cloud(f)
    assert len(c) == 3
    np.testing.assert_array_equal(c.points[1], [1, 0, 0])


def test_load_ply_cube(tmp_path):
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    body = "\n".join(" ".join(f"{v:g}" for v in row) + " 255" for row in corners)
    f = tmp_path / "cube.ply"
    f.write_text("ply\nformat ascii 1.0\ncomment unit cube\nelement vertex 8\nproperty float x\n"
                 "property float y\nproperty float z\nproperty uchar red\nelement face 0\n"
                 "property list uchar int vertex_indices\nend_header\n" + body + "\n")
    c = load_cloud(f)
    assert len(c) == 8
    np.testing.assert_array_equal(c.points, corners)


def test_nan_names_line(tmp_path):
    f = tmp_path / "bad.xyz"
    f.write_text("0 0 0\n1 nan 0\n")
    with pytest.raises(CloudParseError, match=":2:"):
        load_cloud(f)


def test_parse_errors(tmp_path):
    f = tmp_path / "short.ply"
    f.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                 "property float z\nend_header\n0 0 0\n1 1 1\n")
    with pytest.raises(CloudParseError):
        load_cloud(f)
    g = tmp_path / "two.xyz"
    g.write_text("0 0\n")
    with pytest.raises(CloudParseError, match=":1:"):
        load_cloud(g)
    with pytest.raises(OSError):
        load_cloud(tmp_path / "missing.xyz")
    e = tmp_path / "empty.xyz"
    e.write_text("# nothing\n")
    with pytest.raises(EmptyCloudError):
        load_cloud(e)


def test_save_load_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(50, 3))
    for name in ("c.ply", "c.xyz"):
        save_cloud(tmp_path / name, pts)
        np.testing.assert_array_equal(load_cloud(tmp_path / name).points, pts)


def test_dedup_keeps_first_and_order():
    c = PointCloud([[0, 0, 0], [1, 0, 0], [0, 0, 0], [2, 0, 0], [1, 0, 0]])
    np.testing.assert_array_equal(c.points, [[0, 0, 0], [1, 0, 0], [2, 0, 0]])


def test_plane_normal(plane):
    i = int(np.argmin(np.linalg.norm(plane.points, axis=1)))
    np.testing.assert_allclose(estimate_normal(plane, i, k=8), [0, 0, 1], atol=1e-9)


def test_sphere_normal(sphere):
    c = PointCloud(fibonacci_sphere(5000))
    i = int(np.argmax(c.points[:, 2]))
    n = estimate_normal(c, i, k=16)
    assert np.degrees(np.arccos(np.clip(n @ c.points[i] / np.linalg.norm(c.points[i]), -1, 1))) < 2.0


def test_collinear_is_degenerate():
    c = PointCloud(np.column_stack([np.linspace(0, 1, 20), np.zeros(20), np.zeros(20)]))
    with pytest.raises(DegenerateNeighborhoodError):
        estimate_normal(c, 5, k=8)
    with pytest.raises(DegenerateNeighborhoodError):
        surface_feature(c, 5, k=8)


def test_viewpoint_flips_normals():
    pts = plane_grid(0.2, 0.2, 0.02)
    up = PointCloud(pts, viewpoint=[0, 0, 1]).features(8).normals
    down = PointCloud(pts, viewpoint=[0, 0, -1]).features(8).normals
    np.testing.assert_allclose(up, -down, atol=1e-12)
    np.testing.assert_allclose(up[:, 2], 1.0, atol=1e-9)


def test_plane_curvature(plane):
    r = plane.features().curvatures
    assert np.nanmax(np.abs(r)) < 1e-3


def test_cylinder_curvature(cyl):
    t = cyl.features()
    core = t.valid & (np.abs(cyl.points[:, 2]) < 0.7)
    r = t.curvatures[core]
    assert np.median(r[:, 0]) == pytest.approx(2.0, rel=0.05)
    assert abs(np.median(r[:, 1])) < 0.1
    # the direction of highest curvature is perpendicular to the axis
    assert np.median(np.abs(t.k1[core, 2])) < 0.05
    i = int(np.flatnonzero(core)[0])
    k1, k2, ri = principal_curvatures(cyl, i)
    assert abs(k1 @ t.normals[i]) < 1e-6 and ri[0] >= ri[1]


def test_sphere_curvature_and_scale_law(sphere):
    r = sphere.features().curvatures
    np.testing.assert_allclose(np.median(r, axis=0), [1.0, 1.0], rtol=0.05)
    big = PointCloud(2.0 * sphere.points, orient_outward=True)
    np.testing.assert_allclose(np.median(big.features().curvatures, axis=0), [0.5, 0.5], rtol=0.05)


def test_frames_orthonormal_right_handed(sphere):
    rng = np.random.default_rng(0)
    for i in rng.choice(len(sphere), 100, replace=False):
        f = surface_feature(sphere, int(i))
        R = f.pose.rotation()
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(R[:, 2], sphere.features().normals[i], atol=1e-6)
        radial = sphere.points[i] / np.linalg.norm(sphere.points[i])
        assert np.degrees(np.arccos(np.clip(R[:, 2] @ radial, -1, 1))) < 2.0
        np.testing.assert_allclose(R[:, 1], np.cross(R[:, 2], R[:, 0]), atol=1e-9)


def test_plane_feature_at_origin(plane):
    i = int(np.argmin(np.linalg.norm(plane.points, axis=1)))
    f = surface_feature(plane, i)
    np.testing.assert_allclose(f.pose.p, [0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(f.normal, [0, 0, 1], atol=1e-9)
    np.testing.assert_allclose(f.r, [0, 0], atol=1e-3)


def test_k1_sign_is_deterministic(cyl):
    t = cyl.features()
    k1 = t.k1[t.valid]
    lead = np.where(np.abs(k1[:, 0]) > 1e-6, k1[:, 0], k1[:, 1])
    assert np.all(lead >= 0)


def test_contact_region_sampling(plane):
    link = Pose([0, 0, 0], [1, 0, 0, 0])
    a = sample_contact_region(plane, link, 0.05, n=500, seed=4)
    b = sample_contact_region(plane, link, 0.05, n=500, seed=4)
    assert len(a) == 500
    assert all(np.array_equal(x.pose.p, y.pose.p) for x, y in zip(a, b))
    assert max(np.linalg.norm(f.pose.p) for f in a) <= 0.05
    with pytest.raises(NoContactError):
        sample_contact_region(plane, Pose([0, 0, 0.5], [1, 0, 0, 0]), 0.05, n=10)


def test_contact_region_replacement_when_few(plane):
    few = sample_contact_region(plane, Pose([0, 0, 0], [1, 0, 0, 0]), 0.011, n=50, seed=0)
    assert len(few) == 50
    assert len({tuple(f.pose.p) for f in few}) <= 9


def test_task_sampling(plane):
    one = sample_task_features(plane, 1, seed=0)
    assert len(one) == 1 and np.allclose(one[0].r, 0, atol=1e-3)
    many = sample_task_features(plane, 50, seed=1)
    assert len(many) == 50
    assert [f.pose.p.tolist() for f in many] == [f.pose.p.tolist() for f in sample_task_features(plane, 50, seed=1)]


def test_task_sampling_skips_degenerate(caplog):
    line = np.column_stack([np.linspace(0, 1, 40), np.zeros(40), np.zeros(40)])
    c = PointCloud(line)
    with caplog.at_level(logging.WARNING):
        idx = sample_task_indices(c, 5, k=8, seed=0, max_retries=2)
    assert len(idx) == 0
    assert "degenerate" in caplog.text


def test_transformed_cloud_moves_features(plane):
    pose = Pose([1.0, 2.0, 3.0], [1, 0, 0, 0])
    moved = plane.transformed(pose)
    np.testing.assert_allclose(moved.points, plane.points + [1, 2, 3])
    np.testing.assert_allclose(moved.features().curvatures, plane.features().curvatures, atol=1e-9)
