"""Full evaluation of a trained state against a scene's ground truth."""
from __future__ import annotations

import math

import numpy as np
import torch

from ..mesh import rasterize_instances
from ..optim.pipeline import DeformedMeshes, current_canonical_meshes, render_frame
from ..optim.state import TrainState
from .metrics import geometry_metrics, image_metrics, mask_metrics, pose_metrics


def _mean(rows: list[dict]) -> dict:
    keys = rows[0].keys()
    out = {}
    for k in keys:
        vals = [r[k] for r in rows if r[k] is not None and math.isfinite(r[k])]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def evaluate_state(state: TrainState, scene, resolution: int, samples: int, frames: list[int], padding: float = 0.1) -> dict:
    """Reconstruction, pose, segmentation and rendering metrics; one flat dict per section."""
    report: dict[str, dict] = {}
    canon = current_canonical_meshes(state, resolution, padding)
    if scene.canonical_meshes is not None:
        rows = [geometry_metrics(canon[p], scene.canonical_meshes[p], samples, seed=p).as_dict() for p in range(state.num_persons)]
        report["geometry_canonical"] = _mean(rows)
    deformed = DeformedMeshes(state, canon)
    if scene.meshes is not None:
        rows = []
        for f in frames:
            world = deformed.world(f)
            rows += [geometry_metrics(world[p], scene.meshes[f][p], samples, seed=f * 97 + p).as_dict() for p in range(state.num_persons)]
        report["geometry_posed"] = _mean(rows)
    if scene.poses is not None:
        pm = pose_metrics(
            state.body,
            [state.frame_poses(f) for f in frames],
            [scene.poses[f] for f in frames],
            state.shapes,
            state.camera,
        )
        report["pose"] = pm.as_dict()
    if scene.masks is not None:
        sam = [mask_metrics(state.store.sam[f, p], scene.masks[f, p]).as_dict() for f in frames for p in range(state.num_persons)]
        mesh = []
        for f in frames:
            r = rasterize_instances(deformed.world(f), state.camera)
            mesh += [mask_metrics(r.masks[p], scene.masks[f, p]).as_dict() for p in range(state.num_persons)]
        report["masks_refined"] = _mean(sam)
        report["masks_mesh"] = _mean(mesh)
    rows = []
    with torch.no_grad():
        for f in frames:
            img = np.clip(render_frame(state, f, padding=padding).image, 0.0, 1.0)
            rows.append(image_metrics(img, scene.images[f]).as_dict())
    report["image"] = _mean(rows)
    return report
