"""Reconstruction, pose, segmentation and image metrics.

Conventions
-----------
* Chamfer (cm): sum of the two directional mean point-to-surface distances,
  so a rigid shift of a sphere by d gives about d.
* P2S (cm): directional, predicted surface samples to the ground-truth mesh.
* NC: mean cosine between a sample's face normal and the normal of the
  nearest face on the other mesh, averaged over both directions.
* V-IoU: parity voxelization of both meshes on a shared 128^3 grid.
* PCDR: fraction of cross-person joint pairs whose camera-depth order agrees
  with ground truth; pairs closer than 0.15 m in ground-truth depth count as
  correct.
* CD (mm): mean predicted distance between ground-truth contact pairs, i.e.
  cross-person template vertex pairs within 1 cm of each other.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..body import ParamBody, PoseParams, ShapeParams
from ..camera import Camera
from ..deform import PosedBody
from ..mesh import TriMesh, closest_points_on_mesh, grid_points, inside_grid, sample_surface


@dataclass
class GeometryMetrics:
    v_iou: float | None
    chamfer_cm: float
    p2s_cm: float
    nc: float

    def as_dict(self) -> dict:
        return asdict(self)


def volume_iou(pred: TriMesh, gt: TriMesh, resolution: int = 128) -> float | None:
    if not (pred.is_closed() and gt.is_closed()):
        return None
    lo = np.minimum(pred.vertices.min(0), gt.vertices.min(0))
    hi = np.maximum(pred.vertices.max(0), gt.vertices.max(0))
    pad = 1e-3 * float((hi - lo).max())
    axes, _ = grid_points(lo - pad, hi + pad, resolution)
    a = inside_grid(pred, axes)
    b = inside_grid(gt, axes)
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


def geometry_metrics(pred: TriMesh, gt: TriMesh, samples: int = 10000, seed: int = 0, voxel_resolution: int = 128) -> GeometryMetrics:
    if pred.is_empty or gt.is_empty:
        return GeometryMetrics(0.0 if not gt.is_empty else None, math.inf, math.inf, 0.0)
    rng = np.random.default_rng(seed)
    pp, pn = sample_surface(pred, samples, rng)
    gp, gn = sample_surface(gt, samples, rng)
    _, d_pg, f_pg = closest_points_on_mesh(pp, gt)
    _, d_gp, f_gp = closest_points_on_mesh(gp, pred)
    nc_pg = (pn * gt.face_normals()[f_pg]).sum(-1).mean()
    nc_gp = (gn * pred.face_normals()[f_gp]).sum(-1).mean()
    return GeometryMetrics(
        v_iou=volume_iou(pred, gt, voxel_resolution),
        chamfer_cm=100.0 * float(d_pg.mean() + d_gp.mean()),
        p2s_cm=100.0 * float(d_pg.mean()),
        nc=float(0.5 * (nc_pg + nc_gp)),
    )


@dataclass
class PoseMetrics:
    mpjpe_mm: float
    mve_mm: float
    cd_mm: float | None
    pcdr: float

    def as_dict(self) -> dict:
        return asdict(self)


def _posed(body: ParamBody, pose: PoseParams, shape: ShapeParams | None):
    pb = PosedBody(body, pose, shape)
    return pb.joints().detach().double().numpy(), pb.template.detach().double().numpy()


def pcdr(pred_joints: np.ndarray, gt_joints: np.ndarray, camera: Camera | None = None, threshold: float = 0.15) -> float:
    """Percentage of correct depth relations for one frame; joints are [P, J, 3] world."""
    P = len(gt_joints)
    if P < 2:
        return 1.0

    def depth(x):
        return camera.world_to_camera(x)[..., 2] if camera is not None else x[..., 2]

    zp = [depth(j) for j in pred_joints]
    zg = [depth(j) for j in gt_joints]
    correct, total = 0, 0
    for p in range(P):
        for q in range(p + 1, P):
            dg = zg[p][:, None] - zg[q][None, :]
            dp = zp[p][:, None] - zp[q][None, :]
            ok = (np.abs(dg) < threshold) | (np.sign(dg) == np.sign(dp))
            correct += int(ok.sum())
            total += ok.size
    return correct / total


def contact_distance(pred_verts: list[np.ndarray], gt_verts: list[np.ndarray], threshold: float = 0.01) -> float | None:
    """Mean predicted distance (m) of ground-truth contact pairs, or None without contact."""
    dists = []
    for p in range(len(gt_verts)):
        tree = cKDTree(gt_verts[p])
        for q in range(p + 1, len(gt_verts)):
            pairs = tree.query_ball_point(gt_verts[q], r=threshold)
            for j, lst in enumerate(pairs):
                for i in lst:
                    dists.append(np.linalg.norm(pred_verts[p][i] - pred_verts[q][j]))
    return float(np.mean(dists)) if dists else None


def pose_metrics(
    body: ParamBody,
    pred_poses: list[list[PoseParams]],
    gt_poses: list[list[PoseParams]],
    shapes: list[ShapeParams | None] | None = None,
    camera: Camera | None = None,
    contact_threshold: float = 0.01,
    depth_threshold: float = 0.15,
) -> PoseMetrics:
    """Averages over frames (outer list) and persons (inner list)."""
    P = len(gt_poses[0])
    shapes = shapes or [None] * P
    jerr, verr, pc, cds = [], [], [], []
    for pred_f, gt_f in zip(pred_poses, gt_poses):
        pj, pv, gj, gv = [], [], [], []
        for p in range(P):
            a, b = _posed(body, pred_f[p], shapes[p])
            c, d = _posed(body, gt_f[p], shapes[p])
            pj.append(a), pv.append(b), gj.append(c), gv.append(d)
            jerr.append(np.linalg.norm(a - c, axis=-1).mean())
            verr.append(np.linalg.norm(b - d, axis=-1).mean())
        pc.append(pcdr(np.stack(pj), np.stack(gj), camera, depth_threshold))
        cd = contact_distance(pv, gv, contact_threshold)
        if cd is not None:
            cds.append(cd)
    return PoseMetrics(
        mpjpe_mm=1000.0 * float(np.mean(jerr)),
        mve_mm=1000.0 * float(np.mean(verr)),
        cd_mm=1000.0 * float(np.mean(cds)) if cds else None,
        pcdr=float(np.mean(pc)),
    )


@dataclass
class MaskMetrics:
    iou: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return asdict(self)


def mask_metrics(pred: np.ndarray, gt: np.ndarray) -> MaskMetrics:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError("mask shapes differ")
    if not gt.any():
        v = 1.0 if not pred.any() else 0.0
        return MaskMetrics(v, v, v)
    tp = float((pred & gt).sum())
    fp = float((pred & ~gt).sum())
    fn = float((~pred & gt).sum())
    iou = tp / (tp + fp + fn)
    recall = tp / (tp + fn)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MaskMetrics(iou, recall, f1)


@dataclass
class ImageMetrics:
    psnr: float
    ssim: float

    def as_dict(self) -> dict:
        return asdict(self)


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(pred, np.float64) - np.asarray(gt, np.float64)) ** 2))
    return math.inf if mse == 0 else -10.0 * math.log10(mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pred: np.ndarray, gt: np.ndarray, window: int = 11, sigma: float = 1.5, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained windows and channels."""
    a = np.asarray(pred, np.float64)
    b = np.asarray(gt, np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    w = gaussian_window(window, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for ch in range(a.shape[-1]):
        x = np.lib.stride_tricks.sliding_window_view(a[..., ch], (window, window))
        y = np.lib.stride_tricks.sliding_window_view(b[..., ch], (window, window))
        mx = np.einsum("ijkl,kl->ij", x, w)
        my = np.einsum("ijkl,kl->ij", y, w)
        sxx = np.einsum("ijkl,kl->ij", x * x, w) - mx * mx
        syy = np.einsum("ijkl,kl->ij", y * y, w) - my * my
        sxy = np.einsum("ijkl,kl->ij", x * y, w) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def image_metrics(pred: np.ndarray, gt: np.ndarray) -> ImageMetrics:
    if np.shape(pred) != np.shape(gt):
        raise ValueError("image shapes differ")
    return ImageMetrics(psnr(pred, gt), ssim(pred, gt))
