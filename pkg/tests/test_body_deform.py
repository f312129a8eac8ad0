from __future__ import annotations

import json

import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from multirecon.body import ParamBody, PoseParams, ShapeParams, load_body
from multirecon.camera import Camera, look_at, project_points
from multirecon.deform import (
    PosedBody,
    axis_angle_to_matrix,
    bone_transforms,
    deform_mesh_vertices,
    keypoints_2d,
    lbs_forward,
    lbs_inverse,
    posed_bounding_box,
    posed_joints,
)
from multirecon.errors import DataError


def random_pose(body, rng, deg=25.0, trans=(0.0, 0.0, 3.0)):
    rot = rng.normal(0, np.radians(deg), (body.num_joints, 3))
    return PoseParams(torch.as_tensor(trans, dtype=torch.float64) + torch.as_tensor(rng.normal(0, 0.1, 3)), torch.as_tensor(rot))


def test_axis_angle_matches_scipy(rng):
    r = rng.normal(size=(100, 3)) * 2.0
    r[:5] *= 1e-6
    r[5] = 0.0
    ours = axis_angle_to_matrix(torch.as_tensor(r)).numpy()
    np.testing.assert_allclose(ours, Rotation.from_rotvec(r).as_matrix(), atol=1e-12)


def test_axis_angle_gradient_finite_at_zero():
    r = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    axis_angle_to_matrix(r).sum().backward()
    assert torch.isfinite(r.grad).all()


def test_forward_kinematics_chain_oracle(body, rng):
    pose = random_pose(body, rng)
    G = bone_transforms(body, pose).numpy()
    # literal recursion: world rotation is the product of rotations along the chain,
    # position is the parent's position plus the parent's world rotation applied to the rest offset
    R = [None] * body.num_joints
    X = [None] * body.num_joints
    rot = Rotation.from_rotvec(pose.rotations.numpy()).as_matrix()
    for j in range(body.num_joints):
        p = body.parents[j]
        if p < 0:
            R[j], X[j] = rot[j], body.rest_joints[j] + pose.translation.numpy()
        else:
            R[j] = R[p] @ rot[j]
            X[j] = X[p] + R[p] @ (body.rest_joints[j] - body.rest_joints[p])
    np.testing.assert_allclose(G[:, :3, :3], np.stack(R), atol=1e-12)
    np.testing.assert_allclose(G[:, :3, 3], np.stack(X), atol=1e-12)
    np.testing.assert_allclose(posed_joints(body, pose).numpy(), np.stack(X), atol=1e-12)


def test_skinning_weights_are_a_partition_of_unity(body):
    w = body.skinning_weights
    assert (w >= 0).all()
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-12)


def test_zero_pose_is_identity(body):
    pose = PoseParams.zeros(body.num_joints)
    V = body.template()
    np.testing.assert_allclose(PosedBody(body, pose).template.numpy(), V.numpy(), atol=1e-12)


def test_rigid_pose_moves_template_rigidly(body, rng):
    rot = np.zeros((body.num_joints, 3))
    rot[0] = rng.normal(size=3)
    pose = PoseParams(torch.as_tensor([0.3, -0.2, 2.0]), torch.as_tensor(rot))
    V = body.template().numpy()
    R = Rotation.from_rotvec(rot[0]).as_matrix()
    root = body.rest_joints[0]
    expect = (V - root) @ R.T + root + [0.3, -0.2, 2.0]
    np.testing.assert_allclose(PosedBody(body, pose).template.numpy(), expect, atol=1e-7)


def test_lbs_forward_inverse_roundtrip(body, rng):
    pose = random_pose(body, rng, deg=15.0)
    V = body.template()
    # template vertices: the nearest-vertex weight lookup is exact, so the round trip is exact
    Xd = lbs_forward(V, pose, body, body.skinning_weights)
    back = lbs_inverse(Xd, pose, body)
    err = (back - V).norm(dim=1).numpy()
    assert np.percentile(err, 99) < 1e-6


def test_lbs_single_point_and_weight_check(body):
    pose = PoseParams.zeros(body.num_joints)
    x = torch.tensor([0.0, 0.1, 0.0], dtype=torch.float64)
    w = np.zeros(body.num_joints)
    w[0] = 1.0
    assert lbs_forward(x, pose, body, w).shape == (3,)
    with pytest.raises(ValueError):
        lbs_forward(x, pose, body, w * 0.5)


def test_lbs_gradient_matches_finite_differences(body, rng):
    pose = random_pose(body, rng)
    pts = body.template()[::50]
    w = body.skinning_weights[::50]
    rot = pose.rotations.clone().requires_grad_(True)
    out = lbs_forward(pts, PoseParams(pose.translation, rot), body, w)
    g = torch.randn_like(out)
    (out * g).sum().backward()
    eps = 1e-6
    for j, k in [(0, 0), (3, 1), (body.num_joints - 1, 2)]:
        d = torch.zeros_like(rot)
        d[j, k] = eps
        fp = (lbs_forward(pts, PoseParams(pose.translation, pose.rotations + d), body, w) * g).sum()
        fm = (lbs_forward(pts, PoseParams(pose.translation, pose.rotations - d), body, w) * g).sum()
        assert abs((fp - fm).item() / (2 * eps) - rot.grad[j, k].item()) < 1e-6 * max(1.0, abs(rot.grad[j, k].item()))


def test_shape_scales_joints_and_template(body):
    s = ShapeParams(torch.tensor([0.1, 0.0], dtype=torch.float64))
    np.testing.assert_allclose(body.joints_rest(s).numpy(), body.rest_joints * np.exp(0.1), atol=1e-12)
    r = ShapeParams(torch.tensor([0.0, 0.2], dtype=torch.float64))
    # template points lie on the capsule union; inflated radii keep them on their own capsule
    assert np.abs(body.sdf(body.template().numpy())).max() <= 1e-4
    assert body.sdf(body.template(r).numpy(), r).max() <= 1e-4


def test_posed_box_contains_posed_template(body, rng):
    pose = random_pose(body, rng)
    box = posed_bounding_box(body, pose, padding=0.05)
    assert box.contains(PosedBody(body, pose).template.numpy()).all()


def test_keypoints_project_joints(body, rng):
    cam = Camera(50, 50, 31.5, 31.5, 64, 64, *look_at([0, 0, 0], [0, 0, 1]))
    pose = random_pose(body, rng)
    pix, z, valid = keypoints_2d(body, pose, None, cam)
    J = posed_joints(body, pose).numpy()[body.keypoint_indices]
    ref, zr = project_points(cam, J)
    np.testing.assert_allclose(pix, ref)
    assert valid.all()


def test_deform_mesh_vertices_uses_nearest_weights(body, rng):
    pose = random_pose(body, rng)
    V = body.template().numpy()[:100] + 1e-4
    out = deform_mesh_vertices(V, pose, body)
    ref = lbs_forward(torch.as_tensor(V), pose, body, body.weights_at(V))
    torch.testing.assert_close(out, ref)


def test_body_dict_roundtrip(body, tmp_path):
    body.save(tmp_path / "b.json")
    b2 = load_body(tmp_path / "b.json")
    np.testing.assert_allclose(b2.rest_joints, body.rest_joints)
    np.testing.assert_allclose(b2.template_vertices, body.template_vertices)
    np.testing.assert_array_equal(b2.parents, body.parents)


def test_body_definition_errors(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"joints": [{"name": "a", "parent": None, "position": [0, 0, 0]}], "capsules": [{"from": "a", "to": "zz", "radius": 0.1}]}))
    with pytest.raises(DataError):
        load_body(tmp_path / "bad.json")
    with pytest.raises(DataError):
        load_body(tmp_path / "missing.json")


def test_pose_validation():
    with pytest.raises(ValueError):
        PoseParams(torch.zeros(3), torch.full((2, 3), float("nan"))).validate()
    with pytest.raises(ValueError):
        PoseParams(torch.zeros(3), torch.tensor([[7.0, 0.0, 0.0]])).validate()
