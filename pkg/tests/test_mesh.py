from __future__ import annotations

import numpy as np
import pytest
import torch

from multirecon.camera import Camera, look_at, make_rays
from multirecon.mesh import (
    TriMesh,
    box_mesh,
    closest_points_on_mesh,
    extract_sdf_mesh,
    grid_points,
    icosphere,
    inside_grid,
    pixel_depths,
    point_inside_by_parity,
    points_inside_mesh,
    rasterize_instances,
)

from oracles import line_segment_distance


def capsule_sdf(a, b, r):
    def fn(x):
        ab = b - a
        t = np.clip((x - a) @ ab / (ab @ ab), 0.0, 1.0)
        return np.linalg.norm(x - (a + t[:, None] * ab), axis=1) - r

    return fn


def test_sphere_marching_cubes_radius():
    r = 0.7
    m = extract_sdf_mesh(lambda x: np.linalg.norm(x, axis=1) - r, [-1, -1, -1], [1, 1, 1], 32)
    cell = 2.0 / 32
    err = np.abs(np.linalg.norm(m.vertices, axis=1) - r)
    assert err.max() < 1.5 * cell
    assert m.is_closed() and m.manifold_defect() == 0
    assert abs(m.signed_volume() - 4 / 3 * np.pi * r**3) < 0.02


def test_marching_cubes_without_sign_change_is_empty():
    m = extract_sdf_mesh(lambda x: np.ones(len(x)), [-1, -1, -1], [1, 1, 1], 8)
    assert m.is_empty


def test_parity_box_exact():
    box = box_mesh([-1, -2, -0.5], [1, 2, 0.5])
    pts = np.array([[0, 0, 0], [0.99, 1.99, 0.49], [1.01, 0, 0], [0, 0, 0.6], [-0.999, 0, 0]])
    np.testing.assert_array_equal(points_inside_mesh(pts, box), [True, True, False, False, True])
    # a query on an axis through vertices and edges exercises the degenerate-hit retry
    assert point_inside_by_parity([0.0, 2.0 - 1e-9, 0.5 - 1e-9], box)


def test_parity_agrees_with_sdf_sign(rng):
    a, b, r = np.array([-0.3, 0.0, 0.0]), np.array([0.4, 0.2, 0.1]), 0.25
    sdf = capsule_sdf(a, b, r)
    m = extract_sdf_mesh(sdf, [-0.7, -0.4, -0.4], [0.8, 0.6, 0.5], 48)
    cell = 1.5 / 48
    pts = rng.uniform([-0.7, -0.4, -0.4], [0.8, 0.6, 0.5], (3000, 3))
    s = sdf(pts)
    far = np.abs(s) > 1.5 * cell
    agree = (points_inside_mesh(pts[far], m) == (s[far] < 0)).mean()
    assert agree == 1.0


def test_inside_grid_matches_pointwise_parity(rng):
    m = icosphere(2, 0.6, (0.05, -0.02, 0.01))
    axes, _ = grid_points([-0.8, -0.8, -0.8], [0.8, 0.8, 0.8], 12)
    grid = inside_grid(m, axes)
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], -1)
    np.testing.assert_array_equal(grid.ravel(), points_inside_mesh(pts, m))


def test_closest_points_bruteforce(rng):
    m = icosphere(1, 1.0)
    pts = rng.normal(size=(50, 3)) * 1.5
    _, d, _ = closest_points_on_mesh(pts, m, k=len(m.faces))
    # brute force by dense barycentric sampling of every face
    bary = np.array([(i / 40, j / 40) for i in range(41) for j in range(41 - i)])
    t = m.triangles()
    samples = t[:, 0, None] + bary[None, :, 0, None] * (t[:, 1] - t[:, 0])[:, None] + bary[None, :, 1, None] * (t[:, 2] - t[:, 0])[:, None]
    samples = samples.reshape(-1, 3)
    brute = np.array([np.linalg.norm(samples - p, axis=1).min() for p in pts])
    assert (d <= brute + 1e-12).all()
    assert np.abs(d - brute).max() < 0.01


def test_capsule_silhouette_matches_analytic_projection():
    res = 128
    cam = Camera(1.5 * res, 1.5 * res, (res - 1) / 2, (res - 1) / 2, res, res, *look_at([0, 0, 0], [0, 0, 1]))
    a, b, r = np.array([-0.35, -0.2, 3.0]), np.array([0.3, 0.25, 3.3]), 0.15
    m = extract_sdf_mesh(capsule_sdf(a, b, r), a.min() - 0.3 + np.zeros(3), np.maximum(a, b) + 0.3, 96)
    sil = rasterize_instances([m], cam).masks[0]
    o, d = make_rays(cam, cam.pixel_grid())
    ref = (line_segment_distance(o, d, a, b) <= r).reshape(res, res)
    iou = (sil & ref).sum() / (sil | ref).sum()
    assert iou > 0.97


def test_rasterizer_depth_order_and_masks():
    cam = Camera(30, 30, 15.5, 15.5, 32, 32, *look_at([0, 0, 0], [0, 0, 1]))
    near = icosphere(2, 0.5, (0.0, 0.0, 3.0))
    far = icosphere(2, 0.5, (0.3, 0.0, 4.0))
    r = rasterize_instances([far, near], cam)
    assert r.labels[16, 16] == 2
    assert np.isfinite(r.depths[0, 16, 16]) and r.depths[1, 16, 16] < r.depths[0, 16, 16]
    assert not (r.masks[0] & r.masks[1]).any()
    assert ((r.labels > 0) == r.coverage.any(0)).all()
    # sphere front surface depth at the centre pixel
    assert abs(r.depths[1, 16, 16] - 2.5) < 0.02


def test_pixel_depths_match_raster_and_are_differentiable():
    cam = Camera(30, 30, 15.5, 15.5, 32, 32, *look_at([0, 0, 0], [0, 0, 1]))
    m = icosphere(2, 0.5, (0.1, 0.0, 3.0))
    r = rasterize_instances([m], cam)
    cov = np.nonzero(r.face_ids[0].ravel() >= 0)[0]
    pix = np.stack([cov % 32, cov // 32], -1).astype(np.float64)
    s = torch.ones((), dtype=torch.float64, requires_grad=True)
    v = torch.as_tensor(m.vertices, dtype=torch.float64) * s
    d = pixel_depths(v, m.faces, r.face_ids[0].ravel()[cov], pix, cam)
    np.testing.assert_allclose(d.detach().numpy(), r.depths[0].ravel()[cov], atol=1e-9)
    # scaling the mesh about the camera centre scales every depth: d(depth)/ds = depth
    d.sum().backward()
    assert abs(s.grad.item() - d.sum().item()) < 1e-9


def test_mesh_io_roundtrip(tmp_path):
    m = icosphere(1, 0.3)
    m.save_obj(tmp_path / "a.obj")
    m.save_ply(tmp_path / "a.ply")
    for loaded in (TriMesh.load_obj(tmp_path / "a.obj"), TriMesh.load_ply(tmp_path / "a.ply")):
        np.testing.assert_allclose(loaded.vertices, m.vertices, atol=1e-6)
        np.testing.assert_array_equal(loaded.faces, m.faces)


def test_icosphere_and_box_are_closed_and_outward():
    for m in (icosphere(2), box_mesh()):
        assert m.is_closed()
        assert m.signed_volume() > 0
        c = m.vertices.mean(0)
        n = m.face_normals()
        centres = m.triangles().mean(1)
        assert ((n * (centres - c)).sum(-1) > 0).all()
