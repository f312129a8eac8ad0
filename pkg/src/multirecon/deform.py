"""Skeletal deformation: forward kinematics and linear blend skinning.

All functions are differentiable with respect to the pose tensors and the
canonical points. Inverse skinning picks the blend weights of the deformed
template vertex nearest to the query (a discrete, gradient-free choice) and
then inverts the blended rigid transform analytically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial import cKDTree

from .body import ParamBody, PoseParams, ShapeParams
from .camera import Camera, project_points


def axis_angle_to_matrix(rvec: torch.Tensor) -> torch.Tensor:
    """Rodrigues' formula for [..., 3] axis-angle vectors; smooth at zero."""
    theta2 = (rvec * rvec).sum(-1, keepdim=True)
    small = theta2 < 1e-8
    theta2_safe = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(theta2_safe)
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / theta2_safe)
    x, y, z = rvec.unbind(-1)
    zero = torch.zeros_like(x)
    K = torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], dim=-1).reshape(*rvec.shape[:-1], 3, 3)
    eye = torch.eye(3, dtype=rvec.dtype, device=rvec.device).expand_as(K)
    return eye + a[..., None] * K + b[..., None] * (K @ K)


def _rigid(R: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    top = torch.cat([R, t[..., None]], dim=-1)
    bottom = torch.zeros(*R.shape[:-2], 1, 4, dtype=R.dtype, device=R.device)
    bottom[..., 0, 3] = 1.0
    return torch.cat([top, bottom], dim=-2)


def local_transforms(body: ParamBody, pose: PoseParams, shape: ShapeParams | None = None) -> torch.Tensor:
    """Per-joint transforms relative to the parent frame, [J, 4, 4]."""
    dtype = pose.rotations.dtype
    J = body.joints_rest(shape, dtype)
    R = axis_angle_to_matrix(pose.rotations)
    parents = torch.as_tensor(body.parents)
    offsets = J - torch.cat([torch.zeros(1, 3, dtype=dtype), J[parents[1:]]], dim=0)
    offsets = torch.cat([offsets[:1] + pose.translation[None], offsets[1:]], dim=0)
    return _rigid(R, offsets)


def bone_transforms(body: ParamBody, pose: PoseParams, shape: ShapeParams | None = None) -> torch.Tensor:
    """World transforms of every joint frame via forward kinematics, [J, 4, 4]."""
    local = local_transforms(body, pose, shape)
    chain = [local[0]]
    for j in range(1, body.num_joints):
        chain.append(chain[body.parents[j]] @ local[j])
    return torch.stack(chain)


def skinning_transforms(body: ParamBody, pose: PoseParams, shape: ShapeParams | None = None) -> torch.Tensor:
    """Transforms mapping shaped rest-pose points to posed points, [J, 4, 4]."""
    G = bone_transforms(body, pose, shape)
    J = body.joints_rest(shape, G.dtype)
    t = G[:, :3, 3] - (G[:, :3, :3] @ J[:, :, None])[..., 0]
    return _rigid(G[:, :3, :3], t)


def blend_transforms(transforms: torch.Tensor, weights, points: torch.Tensor) -> torch.Tensor:
    """x_d = sum_j w_j (T_j x_c) for points [N, 3] and weights [N, J]."""
    weights = torch.as_tensor(weights, dtype=points.dtype)
    M = torch.einsum("nj,jab->nab", weights, transforms)
    return (M[:, :3, :3] @ points[:, :, None])[..., 0] + M[:, :3, 3]


def _check_weights(weights: torch.Tensor) -> None:
    if (weights < -1e-12).any() or ((weights.sum(-1) - 1.0).abs() > 1e-5).any():
        raise ValueError("skinning weights must be non-negative and sum to 1 within 1e-5")


def lbs_forward(x_c, pose: PoseParams, body: ParamBody, weights, shape: ShapeParams | None = None) -> torch.Tensor:
    """Deform canonical points [N, 3] (or a single [3] point) with explicit weights."""
    x = torch.as_tensor(x_c, dtype=pose.rotations.dtype)
    single = x.ndim == 1
    x = x.reshape(-1, 3)
    w = torch.as_tensor(weights, dtype=x.dtype).reshape(len(x), -1)
    _check_weights(w)
    out = blend_transforms(skinning_transforms(body, pose, shape), w, x)
    return out[0] if single else out


class PosedBody:
    """A body in one pose, with cached transforms and a nearest-vertex index.

    The KD-tree over the deformed template stands in for a per-pose spatial
    grid: it answers "closest deformed template vertex" in O(log V).
    """

    def __init__(self, body: ParamBody, pose: PoseParams, shape: ShapeParams | None = None):
        self.body = body
        self.pose = pose
        self.shape = shape
        self.dtype = pose.rotations.dtype
        self.transforms = skinning_transforms(body, pose, shape)
        self._weights = torch.as_tensor(body.skinning_weights, dtype=self.dtype)
        self.template = blend_transforms(self.transforms, self._weights, body.template(shape, self.dtype))
        self._tree: cKDTree | None = None

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.template.detach().double().numpy(), leafsize=32)
        return self._tree

    def joints(self) -> torch.Tensor:
        G = bone_transforms(self.body, self.pose, self.shape)
        return G[:, :3, 3]

    def forward(self, x_c: torch.Tensor, weights=None) -> torch.Tensor:
        if weights is None:
            weights = self.body.weights_at(x_c, self.shape)
        return blend_transforms(self.transforms, weights, x_c)

    def nearest_weights(self, x_d: torch.Tensor) -> torch.Tensor:
        _, idx = self.tree.query(x_d.detach().double().reshape(-1, 3).numpy())
        return self._weights[torch.as_tensor(idx)]

    def inverse(self, x_d: torch.Tensor) -> torch.Tensor:
        if len(x_d) == 0:
            return x_d.clone()
        w = self.nearest_weights(x_d).to(x_d.dtype)
        M = torch.einsum("nj,jab->nab", w, self.transforms.to(x_d.dtype))
        rhs = (x_d - M[:, :3, 3])[:, :, None]
        return torch.linalg.solve(M[:, :3, :3], rhs)[..., 0]

    def box(self, padding: float = 0.1) -> "OrientedBox":
        return oriented_box(self.template.detach().double().numpy(), self.transforms[0, :3, :3], padding)


def lbs_inverse(x_d, pose: PoseParams, body: ParamBody, shape: ShapeParams | None = None) -> torch.Tensor:
    x = torch.as_tensor(x_d, dtype=pose.rotations.dtype)
    single = x.ndim == 1
    out = PosedBody(body, pose, shape).inverse(x.reshape(-1, 3))
    return out[0] if single else out


def posed_joints(body: ParamBody, pose: PoseParams, shape: ShapeParams | None = None) -> torch.Tensor:
    """3D joint positions J(theta, beta), [J, 3]."""
    return bone_transforms(body, pose, shape)[:, :3, 3]


def deform_mesh_vertices(vertices_c, pose: PoseParams, body: ParamBody, shape: ShapeParams | None = None) -> torch.Tensor:
    """Deform canonical mesh vertices; weights come from the nearest template vertex."""
    v = torch.as_tensor(vertices_c, dtype=pose.rotations.dtype)
    if len(v) == 0:
        return v.reshape(0, 3)
    w = body.weights_at(v, shape)
    return blend_transforms(skinning_transforms(body, pose, shape), w, v)


def keypoints_2d(body: ParamBody, pose: PoseParams, shape: ShapeParams | None, camera: Camera):
    """Projected keypoints in body-definition order.

    Returns ``(pixels [K, 2], depth [K], valid [K])``; keypoints behind the
    camera are flagged invalid so prompt construction can drop them.
    """
    J = posed_joints(body, pose, shape).detach().double().numpy()[body.keypoint_indices]
    pix, z = project_points(camera, J)
    valid = z > 1e-9
    pix = np.where(valid[:, None], pix, np.nan)
    return pix, z, valid


@dataclass
class OrientedBox:
    center: np.ndarray
    axes: np.ndarray  # columns are the box axes in world space
    half: np.ndarray

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        local = (np.asarray(points) - self.center) @ self.axes
        return (np.abs(local) <= self.half + tol).all(axis=-1)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray):
        """Slab test. Returns (t_near, t_far, hit) with t_near clamped at 0."""
        o = (np.asarray(origins) - self.center) @ self.axes
        d = np.asarray(dirs) @ self.axes
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-self.half - o) * inv
            t2 = (self.half - o) * inv
        lo = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        hi = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
        # rays parallel to a slab: inside -> unconstrained, outside -> miss
        parallel = d == 0
        outside = parallel & (np.abs(o) > self.half)
        lo = np.where(parallel, -np.inf, lo)
        hi = np.where(parallel, np.inf, hi)
        t_near = np.maximum(lo.max(axis=-1), 0.0)
        t_far = hi.min(axis=-1)
        hit = (t_far > t_near) & ~outside.any(axis=-1)
        return t_near, t_far, hit

    @property
    def corners(self) -> np.ndarray:
        signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=np.float64)
        return self.center + (signs * self.half) @ self.axes.T


def oriented_box(points: np.ndarray, rotation, padding: float = 0.0) -> OrientedBox:
    axes = np.asarray(rotation.detach().double() if isinstance(rotation, torch.Tensor) else rotation, dtype=np.float64)
    local = points @ axes
    lo = local.min(axis=0) - padding
    hi = local.max(axis=0) + padding
    return OrientedBox(center=axes @ ((lo + hi) / 2), axes=axes, half=(hi - lo) / 2)


def posed_bounding_box(body: ParamBody, pose: PoseParams, shape: ShapeParams | None = None, padding: float = 0.1) -> OrientedBox:
    """Box aligned with the root orientation enclosing the deformed template plus padding."""
    return PosedBody(body, pose, shape).box(padding)
