"""Capsule-skeleton parametric body.

The body is a kinematic tree of joints with capsules hung between them. It
exposes what the reconstruction needs from a parametric human model: rest
joints, a dense template point set on the body surface, per-vertex skinning
weights, keypoint indices and shape-dependent scaling.

Body definition file (JSON)::

    {
      "name": str,
      "format_version": 1,
      "joints":   [{"name": str, "parent": str | null, "position": [x, y, z]}, ...],
      "capsules": [{"from": joint, "to": joint, "radius": meters}, ...],
      "keypoints": [joint, ...],          # optional, defaults to all joints
      "vertex_spacing": meters,           # optional, template sampling step
      "blend_band": meters                # optional, skinning blend width
    }

The first joint must be the root (``parent: null``) and every other parent
must appear before its children. A capsule is owned (skinned rigidly) by its
``from`` joint; ``from == to`` gives a sphere.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import torch
from scipy.spatial import cKDTree

from .errors import DataError

SHAPE_DIM = 2  # (log bone-length scale, log capsule-radius scale)


@dataclass
class PoseParams:
    """Global translation [3] (meters) and per-joint axis-angle rotations [J, 3] (radians)."""

    translation: torch.Tensor
    rotations: torch.Tensor

    @classmethod
    def zeros(cls, num_joints: int, dtype=torch.float64) -> "PoseParams":
        return cls(torch.zeros(3, dtype=dtype), torch.zeros(num_joints, 3, dtype=dtype))

    @classmethod
    def from_packed(cls, packed: torch.Tensor) -> "PoseParams":
        """``packed`` is [J + 1, 3]: row 0 translation, rows 1.. joint rotations."""
        return cls(packed[0], packed[1:])

    def packed(self) -> torch.Tensor:
        return torch.cat([self.translation[None], self.rotations], dim=0)

    def conditioning(self) -> torch.Tensor:
        """Pose vector fed to the canonical field: non-root joint rotations."""
        return self.rotations[1:].reshape(-1)

    def validate(self) -> None:
        if not (torch.isfinite(self.translation).all() and torch.isfinite(self.rotations).all()):
            raise ValueError("pose contains non-finite values")
        if (self.rotations.norm(dim=-1) >= 2 * math.pi).any():
            raise ValueError("axis-angle magnitude must be below 2*pi")


@dataclass
class ShapeParams:
    coeffs: torch.Tensor

    @classmethod
    def zeros(cls, dtype=torch.float64) -> "ShapeParams":
        return cls(torch.zeros(SHAPE_DIM, dtype=dtype))

    def scales(self) -> tuple[float, float]:
        c = self.coeffs.detach().double()
        return math.exp(float(c[0])), math.exp(float(c[1]))


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=-1)


def _perp_basis(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


def _sample_capsule(a, b, r, h):
    """Surface samples of one capsule as (axis parameter t, offset vector)."""
    L = float(np.linalg.norm(b - a))
    u = (b - a) / L if L > 0 else np.array([0.0, 1.0, 0.0])
    e1, e2 = _perp_basis(u)
    ts, offs = [], []

    def ring(radius, axial, t):
        n = max(1, math.ceil(2 * math.pi * radius / h)) if radius > 1e-9 else 1
        ang = 2 * math.pi * (np.arange(n) + 0.5 * (len(ts) % 2)) / n
        o = radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2) + axial * u
        ts.append(np.full(n, t))
        offs.append(o)

    if L > 0:
        n_len = max(1, math.ceil(L / h))
        for k in range(1, n_len):
            ring(r, 0.0, k / n_len)
    n_lat = max(2, math.ceil(0.5 * math.pi * r / h))
    for sign, t in ((-1.0, 0.0), (1.0, 1.0)):
        for k in range(n_lat + 1):
            phi = 0.5 * math.pi * k / n_lat
            if k == 0 and sign > 0 and L == 0:
                continue  # equator already emitted by the other hemisphere
            ring(r * math.cos(phi), sign * r * math.sin(phi), t)
    return np.concatenate(ts), np.concatenate(offs)


class ParamBody:
    """Immutable articulated body; shared read-only by all persons."""

    def __init__(
        self,
        joint_names: list[str],
        parents: list[int],
        rest_joints: np.ndarray,
        capsules: list[tuple[int, int, float]],
        keypoint_indices: list[int] | None = None,
        vertex_spacing: float = 0.02,
        blend_band: float = 0.05,
        name: str = "body",
    ):
        self.name = name
        self.joint_names = list(joint_names)
        self.parents = np.asarray(parents, dtype=np.int64)
        self.rest_joints = np.asarray(rest_joints, dtype=np.float64).reshape(-1, 3)
        self.capsules = [(int(a), int(b), float(r)) for a, b, r in capsules]
        self.num_joints = len(self.joint_names)
        self.keypoint_indices = np.asarray(
            list(range(self.num_joints)) if keypoint_indices is None else keypoint_indices,
            dtype=np.int64,
        )
        self.vertex_spacing = float(vertex_spacing)
        self.blend_band = float(blend_band)
        self._check_tree()
        self._build_template()
        self._trees: dict[bytes, cKDTree] = {}

    def _check_tree(self) -> None:
        if self.parents[0] != -1:
            raise DataError("joint 0 must be the root")
        for j in range(1, self.num_joints):
            if not 0 <= self.parents[j] < j:
                raise DataError(f"joint {self.joint_names[j]!r}: parent must precede child")
        if self.rest_joints.shape != (self.num_joints, 3):
            raise DataError("rest joint array has the wrong shape")
        for a, b, r in self.capsules:
            if not (0 <= a < self.num_joints and 0 <= b < self.num_joints) or r <= 0:
                raise DataError(f"invalid capsule ({a}, {b}, {r})")

    # -- template -------------------------------------------------------
    def _build_template(self) -> None:
        caps_a = self.rest_joints[[c[0] for c in self.capsules]]
        caps_b = self.rest_joints[[c[1] for c in self.capsules]]
        radii = np.array([c[2] for c in self.capsules])
        cap_idx, t_all, off_all = [], [], []
        for ci, (a, b, r) in enumerate(zip(caps_a, caps_b, radii)):
            t, o = _sample_capsule(a, b, r, self.vertex_spacing)
            cap_idx.append(np.full(len(t), ci))
            t_all.append(t)
            off_all.append(o)
        cap_idx = np.concatenate(cap_idx)
        t_all = np.concatenate(t_all)
        off_all = np.concatenate(off_all)
        verts = caps_a[cap_idx] + t_all[:, None] * (caps_b - caps_a)[cap_idx] + off_all

        # keep only samples on the outer surface of the union
        keep = np.ones(len(verts), dtype=bool)
        for ci, (a, b, r) in enumerate(zip(caps_a, caps_b, radii)):
            inside = (_segment_distance(verts, a, b) - r < -1e-4) & (cap_idx != ci)
            keep &= ~inside
        self.template_capsule = cap_idx[keep]
        self.template_t = t_all[keep]
        self.template_offset = off_all[keep]
        self.template_vertices = verts[keep]
        ends = np.array([(self.capsules[c][0], self.capsules[c][1]) for c in self.template_capsule]).reshape(-1, 2)
        self._template_ends = (torch.as_tensor(ends[:, 0]), torch.as_tensor(ends[:, 1]))
        self.skinning_weights = self.compute_weights(self.template_vertices)

    def compute_weights(self, points: np.ndarray) -> np.ndarray:
        """Normalized inverse bone distance with a compact blend band.

        Each joint's distance is the distance to the nearest capsule axis it
        owns; joints further than ``nearest + blend_band`` get exactly zero.
        """
        points = np.asarray(points, dtype=np.float64)
        d = np.full((len(points), self.num_joints), np.inf)
        for a, b, _ in self.capsules:
            dist = _segment_distance(points, self.rest_joints[a], self.rest_joints[b])
            d[:, a] = np.minimum(d[:, a], dist)
        eps = 1e-6
        d_min = d.min(axis=1, keepdims=True)
        raw = np.clip(1.0 / (d + eps) - 1.0 / (d_min + self.blend_band + eps), 0.0, None)
        return raw / raw.sum(axis=1, keepdims=True)

    # -- shape dependent quantities --------------------------------------
    def joints_rest(self, shape: ShapeParams | None = None, dtype=torch.float64) -> torch.Tensor:
        J = torch.as_tensor(self.rest_joints, dtype=dtype)
        if shape is None:
            return J
        return J * torch.exp(shape.coeffs[0].to(dtype))

    def template(self, shape: ShapeParams | None = None, dtype=torch.float64) -> torch.Tensor:
        if shape is None:
            return torch.as_tensor(self.template_vertices, dtype=dtype)
        J = self.joints_rest(shape, dtype)
        a_idx, b_idx = self._template_ends
        t = torch.as_tensor(self.template_t, dtype=dtype)[:, None]
        off = torch.as_tensor(self.template_offset, dtype=dtype)
        return J[a_idx] + t * (J[b_idx] - J[a_idx]) + torch.exp(shape.coeffs[1].to(dtype)) * off

    def capsule_params(self, shape: ShapeParams | None = None):
        """Capsule endpoints and radii (numpy) in the shaped rest pose."""
        J = self.joints_rest(shape).detach().numpy()
        rs = 1.0 if shape is None else shape.scales()[1]
        a = J[[c[0] for c in self.capsules]]
        b = J[[c[1] for c in self.capsules]]
        r = np.array([c[2] for c in self.capsules]) * rs
        return a, b, r

    def sdf(self, points: np.ndarray, shape: ShapeParams | None = None) -> np.ndarray:
        """Exact signed distance of the capsule union in the shaped rest pose."""
        points = np.asarray(points, dtype=np.float64)
        a, b, r = self.capsule_params(shape)
        out = np.full(len(points), np.inf)
        for ai, bi, ri in zip(a, b, r):
            out = np.minimum(out, _segment_distance(points, ai, bi) - ri)
        return out

    def canonical_bounds(self, shape: ShapeParams | None = None, padding: float = 0.1):
        V = self.template(shape).detach().numpy()
        return V.min(axis=0) - padding, V.max(axis=0) + padding

    def weights_at(self, points, shape: ShapeParams | None = None) -> np.ndarray:
        """Skinning weights of canonical points, copied from the nearest template vertex."""
        key = b"" if shape is None else shape.coeffs.detach().double().numpy().tobytes()
        tree = self._trees.get(key)
        if tree is None:
            tree = cKDTree(self.template(shape).detach().numpy())
            self._trees[key] = tree
        pts = points.detach().double().numpy() if isinstance(points, torch.Tensor) else np.asarray(points)
        _, idx = tree.query(pts.reshape(-1, 3))
        return self.skinning_weights[idx]

    # -- io ---------------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ParamBody":
        try:
            names = [j["name"] for j in d["joints"]]
            index = {n: i for i, n in enumerate(names)}
            if len(index) != len(names):
                raise DataError("duplicate joint names")
            parents = [-1 if j["parent"] is None else index[j["parent"]] for j in d["joints"]]
            rest = np.array([j["position"] for j in d["joints"]], dtype=np.float64)
            caps = [(index[c["from"]], index[c["to"]], float(c["radius"])) for c in d["capsules"]]
            kp = [index[k] for k in d.get("keypoints", names)]
        except (KeyError, TypeError) as exc:
            raise DataError(f"invalid body definition: missing or unknown {exc}") from exc
        return cls(
            names,
            parents,
            rest,
            caps,
            kp,
            vertex_spacing=float(d.get("vertex_spacing", 0.02)),
            blend_band=float(d.get("blend_band", 0.05)),
            name=d.get("name", "body"),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "format_version": 1,
            "units": "meters",
            "joints": [
                {
                    "name": n,
                    "parent": None if p < 0 else self.joint_names[p],
                    "position": self.rest_joints[i].tolist(),
                }
                for i, (n, p) in enumerate(zip(self.joint_names, self.parents))
            ],
            "capsules": [
                {"from": self.joint_names[a], "to": self.joint_names[b], "radius": r}
                for a, b, r in self.capsules
            ],
            "keypoints": [self.joint_names[k] for k in self.keypoint_indices],
            "vertex_spacing": self.vertex_spacing,
            "blend_band": self.blend_band,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_body(path=None) -> ParamBody:
    """Load a body definition; ``None`` loads the bundled 21-joint capsule body."""
    if path is None:
        text = resources.files("multirecon").joinpath("data/capsule_body.json").read_text()
        source = "capsule_body.json"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataError(f"cannot read body file {path}: {exc}") from exc
        source = str(path)
    try:
        return ParamBody.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise DataError(f"{source}: {exc}") from exc


_DEFAULT: ParamBody | None = None


def default_body() -> ParamBody:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_body()
    return _DEFAULT
