from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from multirecon.body import PoseParams
from multirecon.evalkit.metrics import (
    contact_distance,
    geometry_metrics,
    image_metrics,
    mask_metrics,
    pcdr,
    pose_metrics,
    psnr,
    ssim,
    volume_iou,
)
from multirecon.mesh import icosphere

from oracles import naive_ssim


def test_identical_meshes_score_perfectly():
    m = icosphere(3, 0.5)
    g = geometry_metrics(m, m, samples=2000)
    assert g.chamfer_cm < 0.05 and g.p2s_cm < 0.05
    assert g.nc > 0.99
    assert g.v_iou == pytest.approx(1.0)


def test_shifted_sphere_chamfer_is_about_the_shift():
    a = icosphere(4, 0.5)
    b = icosphere(4, 0.5, (0.02, 0.0, 0.0))
    g = geometry_metrics(a, b, samples=5000)
    # the mean of |d cos(theta)| over a sphere is d/2 per direction; the two directions sum to d
    assert g.chamfer_cm == pytest.approx(2.0, rel=0.1)


def test_volume_iou_of_nested_spheres():
    a = icosphere(4, 0.5)
    b = icosphere(4, 0.4)
    iou = volume_iou(a, b, resolution=64)
    assert iou == pytest.approx(0.4**3 / 0.5**3, abs=0.03)


def test_pcdr_oracle():
    gt = np.zeros((2, 3, 3))
    gt[0, :, 2] = [2.0, 2.1, 2.2]
    gt[1, :, 2] = [3.0, 3.0, 2.15]
    pred = gt.copy()
    assert pcdr(pred, gt) == 1.0
    swapped = pred[::-1].copy()
    # literal count: pairs (i, j) with sign agreement or |gt gap| < 0.15
    want = np.mean([(abs(gt[0, i, 2] - gt[1, j, 2]) < 0.15) or np.sign(gt[0, i, 2] - gt[1, j, 2]) == np.sign(swapped[0, i, 2] - swapped[1, j, 2]) for i in range(3) for j in range(3)])
    assert pcdr(swapped, gt) == pytest.approx(want)
    assert pcdr(gt[:1], gt[:1]) == 1.0


def test_contact_distance():
    a = np.array([[0.0, 0, 0], [1, 0, 0]])
    b = np.array([[0.005, 0, 0], [5, 0, 0]])
    pa = a + [0, 0.1, 0]
    assert contact_distance([pa, b], [a, b]) == pytest.approx(np.linalg.norm(pa[0] - b[0]))
    assert contact_distance([a, b + 1], [a, b + 1]) is None


def test_pose_metrics_zero_for_ground_truth(body):
    rng = np.random.default_rng(0)
    poses = [[PoseParams(torch.as_tensor([x, 0.0, 3.0]), torch.as_tensor(rng.normal(0, 0.2, (body.num_joints, 3)))) for x in (-0.4, 0.4)] for _ in range(2)]
    m = pose_metrics(body, poses, poses)
    assert m.mpjpe_mm == 0.0 and m.mve_mm == 0.0 and m.pcdr == 1.0
    shifted = [[PoseParams(p.translation + torch.tensor([0.0, 0.01, 0.0], dtype=torch.float64), p.rotations) for p in f] for f in poses]
    assert pose_metrics(body, shifted, poses).mpjpe_mm == pytest.approx(10.0)


def test_mask_metrics_values():
    gt = np.zeros((4, 4), bool)
    gt[:2] = True
    pred = np.zeros((4, 4), bool)
    pred[1:3] = True
    m = mask_metrics(pred, gt)
    assert m.iou == pytest.approx(4 / 12) and m.recall == pytest.approx(0.5) and m.f1 == pytest.approx(0.5)
    assert mask_metrics(np.zeros((2, 2)), np.zeros((2, 2))).iou == 1.0
    with pytest.raises(ValueError):
        mask_metrics(np.zeros((2, 2)), np.zeros((3, 2)))


def test_psnr_and_ssim(rng):
    a = rng.random((24, 20, 3))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-12)
    assert ssim(a, a) == pytest.approx(1.0)
    im = image_metrics(a, b)
    assert im.ssim < 1.0 and im.psnr > 20


def test_pcdr_drops_when_one_frame_swaps_depths(body):
    rng = np.random.default_rng(3)
    rot = [torch.as_tensor(rng.normal(0, 0.1, (body.num_joints, 3))) for _ in range(2)]
    gt = [[PoseParams(torch.tensor([x, 0.0, z], dtype=torch.float64), r) for x, z, r in ((-0.3, 3.0, rot[0]), (0.3, 3.6, rot[1]))] for _ in range(3)]
    pred = [list(f) for f in gt]
    pred[1] = [PoseParams(torch.tensor([x, 0.0, z], dtype=torch.float64), r) for x, z, r in ((-0.3, 3.6, rot[0]), (0.3, 3.0, rot[1]))]
    assert pose_metrics(body, pred, gt).pcdr < pose_metrics(body, gt, gt).pcdr == 1.0
