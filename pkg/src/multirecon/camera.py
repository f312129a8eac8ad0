"""Pinhole cameras, ray generation and projection.

Pixel coordinates are continuous with pixel ``(i, j)`` (column, row) centred
at ``(i, j)``; the valid range is ``[-0.5, W - 0.5] x [-0.5, H - 0.5]``.
Extrinsics map world to camera space, ``X_cam = R @ X_world + t``, with the
camera looking down +z, x to the right and y down.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import BehindCameraError, DataError, OutOfBoundsError


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("extrinsic rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points):
        """Works for numpy arrays and torch tensors of shape [..., 3]."""
        if isinstance(points, torch.Tensor):
            R = torch.as_tensor(self.rotation, dtype=points.dtype, device=points.device)
            t = torch.as_tensor(self.translation, dtype=points.dtype, device=points.device)
            return points @ R.T + t
        return np.asarray(points) @ self.rotation.T + self.translation

    def pixel_grid(self) -> np.ndarray:
        """All pixel centres in row-major order, shape [H*W, 2] as (u, v)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return np.stack([u.ravel(), v.ravel()], axis=-1).astype(np.float64)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            return cls(
                fx=float(d["fx"]),
                fy=float(d["fy"]),
                cx=float(d["cx"]),
                cy=float(d["cy"]),
                width=int(d["width"]),
                height=int(d["height"]),
                rotation=np.asarray(d["rotation"], dtype=np.float64),
                translation=np.asarray(d["translation"], dtype=np.float64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid camera description: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Camera":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from exc


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``target``.

    ``up`` is a world direction that should appear pointing up in the image.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = target - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    y = -(up - (up @ z) * z)
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    R = np.stack([x, y, z])
    return R, -R @ eye


def make_rays(camera: Camera, pixels) -> tuple[np.ndarray, np.ndarray]:
    """Ray origins and unit directions (world space) through ``pixels`` [N, 2]."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    u, v = pixels[:, 0], pixels[:, 1]
    bad = (u < -0.5) | (u > camera.width - 0.5) | (v < -0.5) | (v > camera.height - 0.5)
    if bad.any():
        raise OutOfBoundsError(f"pixel {pixels[np.argmax(bad)].tolist()} outside the image")
    d_cam = np.stack(
        [(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1
    )
    d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
    dirs = d_cam @ camera.rotation
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.center, dirs.shape).copy()
    return origins, dirs


def project_points(camera: Camera, points):
    """Project world points; returns (pixels [N, 2], camera depth [N]).

    Accepts numpy or torch input and keeps the type. Points with depth <= 0
    get non-finite pixels; callers decide how to treat them.
    """
    Xc = camera.world_to_camera(points)
    z = Xc[..., 2]
    u = camera.fx * Xc[..., 0] / z + camera.cx
    v = camera.fy * Xc[..., 1] / z + camera.cy
    if isinstance(Xc, torch.Tensor):
        return torch.stack([u, v], dim=-1), z
    return np.stack([u, v], axis=-1), z


def project_point(camera: Camera, x) -> np.ndarray:
    """Pixel coordinates of a single world point; raises if it is behind the camera."""
    pix, z = project_points(camera, np.asarray(x, dtype=np.float64).reshape(1, 3))
    if not z[0] > 0:
        raise BehindCameraError(f"point {np.asarray(x).tolist()} is behind the camera (z={z[0]:.4g})")
    return pix[0]


def orbit_camera(camera: Camera, target, angle_deg: float, up=(0.0, 1.0, 0.0)) -> Camera:
    """Same intrinsics, eye rotated by ``angle_deg`` about the world ``up`` axis through ``target``."""
    target = np.asarray(target, dtype=np.float64)
    k = np.asarray(up, dtype=np.float64)
    k = k / np.linalg.norm(k)
    a = np.radians(angle_deg)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    Rot = np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * K @ K
    eye = target + Rot @ (camera.center - target)
    R, t = look_at(eye, target, up)
    return Camera(camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height, R, t)
