from __future__ import annotations

import numpy as np
import pytest
import torch

from multirecon.camera import project_points
from multirecon.config import load_config
from multirecon.errors import NumericalError
from multirecon.optim.confidence import confidence_from_scores
from multirecon.optim.losses import LossWeights
from multirecon.optim.pipeline import (
    build_state,
    epoch_order,
    initial_poses,
    optimize_step,
    pose_only_phase,
    refresh,
    run_pipeline,
)


def _weights(cfg):
    return LossWeights(**cfg.weights.model_dump())


def _field_snapshot(state):
    return [p.detach().clone() for p in state.field_parameters()]


def test_unreliable_batch_leaves_field_bit_identical(tiny_scene, tiny_overrides):
    cfg = load_config(overrides=tiny_overrides)
    st = build_state(cfg, tiny_scene)
    refresh(st, tiny_scene, None, cfg, 0)
    rec = confidence_from_scores(np.array([[0.9, 0.9], [0.1, 0.1], [0.9, 0.8]]))
    before = _field_snapshot(st)
    pose_before = st.pose_param(1, 0).detach().clone()
    terms = optimize_step(st, tiny_scene, [1], rec, _weights(cfg), cfg)
    assert terms["reliable_frames"] == 0
    for a, b in zip(before, st.field_parameters()):
        assert torch.equal(a, b)
    assert not torch.equal(pose_before, st.pose_param(1, 0))
    optimize_step(st, tiny_scene, [0], rec, _weights(cfg), cfg)
    assert any(not torch.equal(a, b) for a, b in zip(before, st.field_parameters()))


def test_all_reliable_equals_ungated(tiny_scene, tiny_overrides):
    rec = confidence_from_scores(np.full((3, 2), 0.7))
    out = []
    for gating in ("true", "false"):
        cfg = load_config(overrides=tiny_overrides + [f"optim.gating={gating}"])
        st = build_state(cfg, tiny_scene)
        optimize_step(st, tiny_scene, [0, 2], rec, _weights(cfg), cfg)
        out.append(torch.cat([p.detach().flatten() for p in st.field_parameters()]))
    assert torch.equal(out[0], out[1])


def test_zero_outer_loops_returns_initialization(tiny_scene, tiny_overrides):
    cfg = load_config(overrides=tiny_overrides + ["optim.outer_loops=0"])
    st = run_pipeline(cfg, tiny_scene)
    init = initial_poses(tiny_scene, cfg)
    for f in range(3):
        for p in range(2):
            torch.testing.assert_close(st.pose_param(f, p).detach(), init[f][p].packed().to(st.pose_param(f, p).dtype))
    assert st.epoch == 0


def test_gated_epoch_order_alternates(tiny_scene, tiny_overrides):
    cfg = load_config(overrides=tiny_overrides)
    st = build_state(cfg, tiny_scene)
    st.confidence = confidence_from_scores(np.array([[0.9, 0.9], [0.1, 0.1], [0.8, 0.8]]))
    order = epoch_order(st, cfg)
    assert sorted(order) == [0, 1, 2]
    assert order[1] == 1  # reliable, unreliable, reliable


def test_initial_noise_is_deterministic_and_corrupts(tiny_scene):
    a = initial_poses(tiny_scene, load_config(overrides=["init.corrupt_frames=[1]"]))
    b = initial_poses(tiny_scene, load_config(overrides=["init.corrupt_frames=[1]"]))
    err = [float((a[f][0].rotations - tiny_scene.poses[f][0].rotations).norm()) for f in range(3)]
    torch.testing.assert_close(a[2][1].rotations, b[2][1].rotations)
    assert err[1] > 2 * max(err[0], err[2])


def _overlapping_state(tiny_scene, overrides):
    cfg = load_config(overrides=overrides + ["optim.inter_iters=3", "optim.lr_pose_inter=1e-2", "weights.depth=1.0"])
    st = build_state(cfg, tiny_scene)
    refresh(st, tiny_scene, None, cfg, 0)
    # claim the far person is in front wherever both meshes could be seen
    st.store.sam = st.store.mesh[:, ::-1].copy()
    return cfg, st


def test_pose_only_phase_along_rays_keeps_root_pixels(tiny_scene, tiny_overrides):
    cfg, st = _overlapping_state(tiny_scene, tiny_overrides + ["optim.pose_inter_along_ray=true", "optim.pose_inter_rot_scale=0", "optim.pose_inter_update=normalized"])
    before = [st.pose_param(f, p).detach().clone() for f in range(3) for p in range(2)]
    out = pose_only_phase(st, cfg, _weights(cfg))
    assert out["pose_phase_end"] <= out["pose_phase_start"]
    root = st.body.rest_joints[0]
    moved = 0.0
    for i, b in enumerate(before):
        a = st.poses[i].detach().double()
        torch.testing.assert_close(a[1:], b[1:].double())  # rotations untouched
        pa, _ = project_points(st.camera, (a[0].numpy() + root)[None])
        pb, _ = project_points(st.camera, (b[0].double().numpy() + root)[None])
        np.testing.assert_allclose(pa, pb, atol=1e-3)
        moved = max(moved, float((a[0] - b[0].double()).norm()))
    assert moved > 1e-3


def test_pose_only_phase_default_moves_everything(tiny_scene, tiny_overrides):
    cfg, st = _overlapping_state(tiny_scene, tiny_overrides)
    before = torch.stack([p.detach().clone() for p in st.poses])
    pose_only_phase(st, cfg, _weights(cfg))
    after = torch.stack([p.detach() for p in st.poses])
    assert (after[:, 1:] != before[:, 1:]).any()


def test_repeated_non_finite_steps_abort(tiny_scene, tiny_overrides, monkeypatch):
    import multirecon.optim.pipeline as pl

    cfg = load_config(overrides=tiny_overrides + ["optim.max_rejected_steps=2"])
    st = build_state(cfg, tiny_scene)
    refresh(st, tiny_scene, None, cfg, 0)
    monkeypatch.setattr(pl, "loss_rgb", lambda a, b: torch.tensor(float("nan"), dtype=a.dtype))
    t = optimize_step(st, tiny_scene, [0], None, _weights(cfg), cfg)
    assert "rejected" in t["event"] and st.lr_scale == 0.5
    with pytest.raises(NumericalError):
        optimize_step(st, tiny_scene, [0], None, _weights(cfg), cfg)
