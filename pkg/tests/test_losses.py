from __future__ import annotations

import numpy as np
import pytest
import torch

from multirecon.mesh import icosphere, points_inside_mesh
from multirecon.optim.confidence import compute_confidence_split, confidence_from_scores, mask_iou
from multirecon.optim.losses import (
    LossWeights,
    depth_order_pairs,
    eikonal_points,
    loss_depth_order,
    loss_interpenetration,
    loss_mask,
    loss_rgb,
)
from multirecon.segment import MaskStore

import gradaudit
from oracles import interpenetration_bruteforce


@pytest.mark.parametrize("name", list(gradaudit.INSTANCES))
def test_gradient_matches_central_differences(name):
    closure, params = gradaudit.INSTANCES[name](np.random.default_rng(7))
    assert gradaudit.audit(closure, params) < 1e-3


def test_rgb_and_mask_values():
    r = torch.tensor([[0.2, 0.4, 0.6], [1.0, 0.0, 0.5]])
    o = torch.tensor([[0.0, 0.4, 1.0], [1.0, 1.0, 0.5]])
    assert loss_rgb(r, o).item() == pytest.approx((0.2 + 0 + 0.4 + 0 + 1.0 + 0) / 6)
    op = torch.tensor([[0.25, 0.5], [1.0, 0.0]])
    m = torch.tensor([[1.0, 0.0], [1.0, 1.0]])
    assert loss_mask(op, m).item() == pytest.approx(((0.75 + 0.5) + (0.0 + 1.0)) / 2)


def test_depth_order_pairs_literal():
    rng = np.random.default_rng(0)
    sam = rng.random((3, 5, 6)) < 0.5
    mesh = rng.random((3, 5, 6)) < 0.5
    fin = rng.random((3, 5, 6)) < 0.9
    got = {(p, q, v, u) for p, q, vs, us in depth_order_pairs(sam, mesh, fin) for v, u in zip(vs, us)}
    want = {
        (p, q, v, u)
        for p in range(3)
        for q in range(3)
        for v in range(5)
        for u in range(6)
        if p != q and sam[p, v, u] and mesh[q, v, u] and fin[p, v, u] and fin[q, v, u]
    }
    assert got == want


def test_depth_order_loss_value_and_direction():
    sam = np.zeros((2, 1, 2), bool)
    mesh = np.zeros((2, 1, 2), bool)
    sam[0, 0, 0] = True  # person 0 visible at pixel 0 ...
    mesh[1, 0, 0] = True  # ... where the mesh says person 1 covers it
    D = torch.tensor([[[3.5, np.inf]], [[3.0, 2.0]]], dtype=torch.float64, requires_grad=True)
    loss = loss_depth_order(sam, mesh, D)
    assert loss.item() == pytest.approx(np.log1p(np.exp(0.5)))
    loss.backward()
    # pushes person 0 nearer and person 1 farther
    assert D.grad[0, 0, 0] > 0 and D.grad[1, 0, 0] < 0


def test_interpenetration_matches_bruteforce():
    a = icosphere(2, 0.5, (0.0, 0.0, 0.0))
    b = icosphere(1, 0.4, (0.6, 0.1, 0.0))
    va = torch.as_tensor(a.vertices)
    vb = torch.as_tensor(b.vertices)
    got = loss_interpenetration([va, vb], [a, b]).item()
    meshes = [a, b]
    want = interpenetration_bruteforce([a.vertices, b.vertices], lambda p, q, v: points_inside_mesh(v, meshes[q]))
    assert got == pytest.approx(want, rel=1e-9)
    assert got > 0


def test_interpenetration_zero_when_apart():
    a = icosphere(1, 0.3, (0, 0, 0))
    b = icosphere(1, 0.3, (1, 0, 0))
    assert loss_interpenetration([torch.as_tensor(a.vertices), torch.as_tensor(b.vertices)], [a, b]).item() == 0.0


def test_eikonal_points_split():
    g = torch.Generator().manual_seed(0)
    surf = np.zeros((5, 3))
    pts = eikonal_points([-1, -1, -1], [1, 1, 1], surf, 100, g, sigma=0.01, dtype=torch.float64)
    assert pts.shape == (100, 3)
    assert (pts[:50].abs() <= 1).all()
    assert pts[50:].abs().max() < 0.1


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(rgb=-1.0)


def test_confidence_threshold_is_median():
    iou = np.array([[0.9, 0.8], [0.2, 0.4], [0.6, 0.6], [0.7, 0.1]])
    rec = confidence_from_scores(iou)
    assert rec.alpha == pytest.approx(np.median([0.85, 0.3, 0.6, 0.4]))
    assert rec.reliable.tolist() == [True, False, True, False]
    assert rec.reliable_frames == [0, 2] and rec.unreliable_frames == [1, 3]


def test_confidence_from_store():
    store = MaskStore.empty(2, 1, 4, 4)
    store.mesh[0, 0, :2] = True
    store.sam[0, 0, :2] = True
    store.mesh[1, 0, :2] = True
    store.sam[1, 0, 1:3] = True
    rec = compute_confidence_split(store)
    np.testing.assert_allclose(rec.iou[:, 0], [1.0, 1 / 3])
    assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
