"""Synthetic multi-person scenes with full ground truth.

People are textured capsule bodies animated by smooth joint curves. RGB
frames come from the layered volume renderer applied to the exact capsule
SDFs; masks and depths come from rasterizing the ground-truth meshes (the
canonical capsule union, marching-cubed and skinned), so they are consistent
with the meshes by construction.

Scene directory layout::

    scene.json            format_version, preset, seed, sizes, per-person shape + colors
    camera.json           intrinsics, world-to-camera rotation/translation, image size
    body.json             body definition (see multirecon.body)
    poses.json            {"frames": [{"index": f, "persons": [{"translation", "rotations"}]}]}
    frames/NNNNN.png      RGB frame f
    masks/NNNNN_pP.png    visible instance mask of person P
    depths/NNNNN_pP.pfm   person P's own nearest depth (inf where uncovered)
    meshes/NNNNN_pP.obj   ground-truth posed mesh
    meshes/canonical_pP.obj
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..body import ParamBody, PoseParams, ShapeParams, default_body, load_body
from ..camera import Camera, look_at
from ..deform import deform_mesh_vertices
from ..errors import DataError
from ..field import AnalyticField, DensityParams, FixedDensity, GradientBackground
from ..io import load_pfm, load_png, save_pfm, save_png
from ..mesh import RasterResult, TriMesh, extract_sdf_mesh, rasterize_instances
from ..render import PersonLayer, render_image

PRESETS = ("static", "pass-by", "occluding-cross", "close-contact", "overlap")
STATIC_PRESETS = ("static", "overlap")
FORMAT_VERSION = 1


@dataclass
class SceneSpec:
    num_persons: int = 2
    preset: str = "occluding-cross"
    num_frames: int = 20
    resolution: int = 64
    seed: int = 0
    samples: int = 32  # samples per ray and person for the ground-truth render
    mesh_resolution: int = 96
    density_b: float = 0.01

    def __post_init__(self):
        if not 1 <= self.num_persons <= 4:
            raise ValueError("num_persons must be in [1, 4]")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        if self.num_frames < 1 or self.resolution < 8:
            raise ValueError("need at least one frame and 8 pixels")


@dataclass
class Scene:
    camera: Camera
    body: ParamBody
    shapes: list[ShapeParams]
    poses: list[list[PoseParams]]  # [F][P]
    images: np.ndarray  # [F, H, W, 3]
    masks: np.ndarray | None = None  # [F, P, H, W]
    depths: np.ndarray | None = None  # [F, P, H, W]
    meshes: list[list[TriMesh]] | None = None  # [F][P]
    canonical_meshes: list[TriMesh] | None = None
    colors: list[np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return len(self.images)

    @property
    def num_persons(self) -> int:
        return len(self.shapes)

    def save(self, root) -> None:
        save_scene(self, root)


SyntheticScene = Scene


# ---------------------------------------------------------------------------
# motion


def _joint(body: ParamBody, name: str) -> int:
    return body.joint_names.index(name)


TURN_RANGE = 0.9  # radians either side of facing the camera


def _person_layout(preset: str, p: int, P: int):
    """(x0, x1, depth) of person p's root path across the sequence."""
    if preset == "static":
        return [(p - (P - 1) / 2) * 0.9] * 2 + [3.5 + 0.3 * p]
    if preset == "overlap":
        # standing people whose arms overlap the next person back
        return [(p - (P - 1) / 2) * 0.5] * 2 + [3.1 + 0.5 * p]
    if preset == "pass-by":
        x = 1.0 if p % 2 else -1.0
        return [x, -x, 3.2 + 0.5 * p]
    if preset == "occluding-cross":
        if p == 0:
            return [-1.1, 1.1, 3.0]
        x = (p - 1 - (P - 2) / 2) * 0.5
        return [x - 0.1, x + 0.1, 3.7 + 0.4 * (p - 1)]
    # close-contact: first two side by side with touching hands
    if p < 2:
        x = -0.6 if p == 0 else 0.6
        return [x, x, 3.4]
    return [(p - 2.5) * 0.9] * 2 + [4.2]


def make_motion(body: ParamBody, preset: str, num_persons: int, num_frames: int, rng: np.random.Generator) -> list[list[PoseParams]]:
    J = body.num_joints
    idx = {n: _joint(body, n) for n in body.joint_names}
    poses = [[None] * num_persons for _ in range(num_frames)]
    for p in range(num_persons):
        x0, x1, z = _person_layout(preset, p, num_persons)
        phase = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.2, 0.35)
        yaw = math.pi + rng.uniform(-0.2, 0.2)
        arm_drop = rng.uniform(0.1, 0.3)
        # moving subjects turn gradually, so a single camera sees them from several sides
        turn = TURN_RANGE * rng.choice([-1.0, 1.0])
        for f in range(num_frames):
            s = 0.0 if num_frames == 1 else f / (num_frames - 1)
            moving = preset not in STATIC_PRESETS
            w = 2 * math.pi * 1.5 * s + phase if moving else phase
            swing = amp * math.sin(w) if moving else 0.3 * amp
            rot = np.zeros((J, 3))
            rot[0] = [0.0, yaw + (turn * (2 * s - 1) if moving else 0.0), 0.0]
            rot[idx["l_hip"]] = [swing, 0, 0]
            rot[idx["r_hip"]] = [-swing, 0, 0]
            rot[idx["l_knee"]] = [-0.5 * amp * (1 - math.cos(w)), 0, 0]
            rot[idx["r_knee"]] = [-0.5 * amp * (1 + math.cos(w)), 0, 0]
            rot[idx["l_shoulder"]] = [-0.8 * swing, 0, -arm_drop]
            rot[idx["r_shoulder"]] = [0.8 * swing, 0, arm_drop]
            rot[idx["l_elbow"]] = [0.0, 0.0, -0.2 * amp * (1 + math.sin(w))]
            rot[idx["r_elbow"]] = [0.0, 0.0, 0.2 * amp * (1 - math.sin(w))]
            rot[idx["spine"]] = [0.05 * math.sin(w), 0.05 * math.cos(w), 0]
            if preset == "close-contact" and p < 2:
                # raise the inner arm to shoulder height toward the partner
                inner = "l_shoulder" if p == 0 else "r_shoulder"
                rot[idx[inner]] = [0.0, 0.0, 0.6 if p == 0 else -0.6]
            x = x0 + (x1 - x0) * s
            t = np.array([x, 0.05 * math.sin(2 * w) if moving else 0.0, z])
            poses[f][p] = PoseParams(torch.as_tensor(t), torch.as_tensor(rot))
    return poses


def _person_colors(body: ParamBody, rng: np.random.Generator) -> np.ndarray:
    shirt = rng.uniform(0.2, 0.9, 3)
    pants = rng.uniform(0.1, 0.6, 3)
    skin = np.array([0.85, 0.65, 0.5]) * rng.uniform(0.7, 1.05)
    cols = []
    for a, b, _ in body.capsules:
        na, nb = body.joint_names[a], body.joint_names[b]
        if "hip" in na or "hip" in nb or "knee" in na or "ankle" in na:
            cols.append(pants)
        elif "head" in nb or "wrist" in na or "foot" in nb:
            cols.append(skin)
        else:
            cols.append(shirt)
    return np.clip(np.stack(cols), 0.0, 1.0)


def default_camera(resolution: int) -> Camera:
    R, t = look_at([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0])
    f = 1.25 * resolution
    c = (resolution - 1) / 2
    return Camera(f, f, c, c, resolution, resolution, R, t)


def canonical_mesh(body: ParamBody, shape: ShapeParams, resolution: int) -> TriMesh:
    lo, hi = body.canonical_bounds(shape, padding=0.05)
    return extract_sdf_mesh(lambda x: body.sdf(x, shape), lo, hi, resolution)


def posed_mesh(mesh_c: TriMesh, body: ParamBody, pose: PoseParams, shape: ShapeParams | None) -> TriMesh:
    v = deform_mesh_vertices(mesh_c.vertices, pose, body, shape)
    return mesh_c.with_vertices(v.detach().double().numpy())


def render_frames(camera, body, shapes, poses, colors, samples: int, density_b: float, seed: int) -> np.ndarray:
    bg = GradientBackground()
    fields = [AnalyticField.from_body(body, s, c, stripe_period=0.12) for s, c in zip(shapes, colors)]
    density = FixedDensity(DensityParams(b=density_b))
    out = []
    for f, frame_poses in enumerate(poses):
        layers = [PersonLayer.build(fld, body, pose, density, shape) for fld, pose, shape in zip(fields, frame_poses, shapes)]
        img = render_image(camera, layers, samples, bg, frame_index=f, seed=seed, dtype=torch.float64)
        out.append(np.clip(img.image, 0.0, 1.0))
    return np.stack(out)


def generate_synthetic_scene(spec: SceneSpec | None = None, body: ParamBody | None = None, **kwargs) -> Scene:
    """Deterministic given ``spec.seed``; keyword arguments override ``spec`` fields."""
    if spec is None:
        spec = SceneSpec(**kwargs)
    elif kwargs:
        spec = SceneSpec(**{**spec.__dict__, **kwargs})
    body = body or default_body()
    rng = np.random.default_rng(spec.seed)
    shapes = [ShapeParams(torch.as_tensor(rng.uniform(-0.05, 0.05, 2))) for _ in range(spec.num_persons)]
    colors = [_person_colors(body, rng) for _ in range(spec.num_persons)]
    poses = make_motion(body, spec.preset, spec.num_persons, spec.num_frames, rng)
    camera = default_camera(spec.resolution)
    canon = [canonical_mesh(body, s, spec.mesh_resolution) for s in shapes]
    meshes, masks, depths = [], [], []
    for f in range(spec.num_frames):
        fm = [posed_mesh(canon[p], body, poses[f][p], shapes[p]) for p in range(spec.num_persons)]
        r = rasterize_instances(fm, camera)
        meshes.append(fm)
        masks.append(r.masks)
        depths.append(r.depths)
    images = render_frames(camera, body, shapes, poses, colors, spec.samples, spec.density_b, spec.seed)
    return Scene(
        camera=camera,
        body=body,
        shapes=shapes,
        poses=poses,
        images=images,
        masks=np.stack(masks),
        depths=np.stack(depths),
        meshes=meshes,
        canonical_meshes=canon,
        colors=colors,
        meta={"preset": spec.preset, "seed": spec.seed, "spec": dict(spec.__dict__)},
    )


def occlusion_fraction(scene: Scene, f: int, p: int, q: int) -> float:
    """Fraction of q's full silhouette hidden by p in frame f."""
    full_q = np.isfinite(scene.depths[f, q])
    if not full_q.any():
        return 0.0
    hidden = full_q & np.isfinite(scene.depths[f, p]) & (scene.depths[f, p] < scene.depths[f, q])
    return float(hidden.sum() / full_q.sum())


def scene_rasters(scene: Scene) -> list[RasterResult]:
    return [rasterize_instances(m, scene.camera) for m in scene.meshes]


# ---------------------------------------------------------------------------
# directory io


def _pose_dict(pose: PoseParams) -> dict:
    return {"translation": pose.translation.double().tolist(), "rotations": pose.rotations.double().tolist()}


def save_scene(scene: Scene, root) -> None:
    root = Path(root)
    try:
        for sub in ("frames", "masks", "depths", "meshes"):
            (root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create scene directory {root}: {exc}") from exc
    H, W = scene.images.shape[1:3]
    meta = {
        "format_version": FORMAT_VERSION,
        "num_frames": scene.num_frames,
        "num_persons": scene.num_persons,
        "width": W,
        "height": H,
        **{k: v for k, v in scene.meta.items() if k in ("preset", "seed", "spec")},
        "persons": [
            {
                "shape": s.coeffs.double().tolist(),
                "colors": None if scene.colors is None else np.asarray(scene.colors[p]).tolist(),
            }
            for p, s in enumerate(scene.shapes)
        ],
    }
    (root / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    scene.camera.save(root / "camera.json")
    scene.body.save(root / "body.json")
    poses = {"frames": [{"index": f, "persons": [_pose_dict(p) for p in fp]} for f, fp in enumerate(scene.poses)]}
    (root / "poses.json").write_text(json.dumps(poses, indent=1) + "\n")
    for f in range(scene.num_frames):
        save_png(root / "frames" / f"{f:05d}.png", scene.images[f])
        for p in range(scene.num_persons):
            if scene.masks is not None:
                save_png(root / "masks" / f"{f:05d}_p{p}.png", scene.masks[f, p])
            if scene.depths is not None:
                save_pfm(root / "depths" / f"{f:05d}_p{p}.pfm", scene.depths[f, p])
            if scene.meshes is not None:
                scene.meshes[f][p].save_obj(root / "meshes" / f"{f:05d}_p{p}.obj")
    if scene.canonical_meshes is not None:
        for p, m in enumerate(scene.canonical_meshes):
            m.save_obj(root / "meshes" / f"canonical_p{p}.obj")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_scene(root) -> Scene:
    """Load a scene directory; ground-truth parts are optional."""
    root = Path(root)
    if not (root / "scene.json").exists():
        raise DataError(f"{root / 'scene.json'}: missing scene description")
    meta = _read_json(root / "scene.json")
    if meta.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{root / 'scene.json'}: unsupported format_version {meta.get('format_version')}")
    try:
        F, P = int(meta["num_frames"]), int(meta["num_persons"])
        H, W = int(meta["height"]), int(meta["width"])
        persons = meta["persons"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{root / 'scene.json'}: missing or invalid field {exc}") from exc
    try:
        camera = Camera.load(root / "camera.json")
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"{root / 'camera.json'}: {exc}") from exc
    if (camera.width, camera.height) != (W, H):
        raise DataError(f"{root / 'camera.json'}: image size does not match scene.json")
    body = load_body(root / "body.json") if (root / "body.json").exists() else default_body()
    shapes = [ShapeParams(torch.as_tensor(p.get("shape", [0.0, 0.0]), dtype=torch.float64)) for p in persons]
    colors = [np.asarray(p["colors"]) if p.get("colors") is not None else None for p in persons]
    poses = None
    if (root / "poses.json").exists():
        pj = _read_json(root / "poses.json")
        try:
            poses = [
                [
                    PoseParams(torch.as_tensor(q["translation"], dtype=torch.float64), torch.as_tensor(q["rotations"], dtype=torch.float64))
                    for q in fr["persons"]
                ]
                for fr in pj["frames"]
            ]
            for fp in poses:
                for q in fp:
                    q.validate()
                    if q.rotations.shape != (body.num_joints, 3):
                        raise ValueError("rotation array does not match the body's joint count")
        except (KeyError, TypeError, ValueError, RuntimeError) as exc:
            raise DataError(f"{root / 'poses.json'}: {exc}") from exc
        if len(poses) != F or any(len(fp) != P for fp in poses):
            raise DataError(f"{root / 'poses.json'}: expected {F} frames x {P} persons")
    images = []
    for f in range(F):
        path = root / "frames" / f"{f:05d}.png"
        img = load_png(path)
        if img.shape != (H, W, 3):
            raise DataError(f"{path}: expected a {W}x{H} RGB image, got shape {img.shape}")
        images.append(img)

    def optional(kind, ext, loader):
        paths = [[root / kind / f"{f:05d}_p{p}.{ext}" for p in range(P)] for f in range(F)]
        if not all(x.exists() for row in paths for x in row):
            return None
        out = [[loader(x) for x in row] for row in paths]
        return out

    masks = optional("masks", "png", lambda x: load_png(x, as_mask=True))
    depths = optional("depths", "pfm", load_pfm)
    meshes = optional("meshes", "obj", TriMesh.load_obj)
    canon = None
    if all((root / "meshes" / f"canonical_p{p}.obj").exists() for p in range(P)):
        canon = [TriMesh.load_obj(root / "meshes" / f"canonical_p{p}.obj") for p in range(P)]
    masks_a = np.array(masks, dtype=bool) if masks is not None else None
    if masks_a is not None and masks_a.shape != (F, P, H, W):
        raise DataError(f"{root / 'masks'}: mask images do not match the frame size")
    return Scene(
        camera=camera,
        body=body,
        shapes=shapes,
        poses=poses,
        images=np.stack(images),
        masks=masks_a,
        depths=np.array(depths) if depths is not None else None,
        meshes=meshes,
        canonical_meshes=canon,
        colors=colors,
        meta={k: meta[k] for k in ("preset", "seed", "spec") if k in meta},
    )
