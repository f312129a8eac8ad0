"""Confidence-guided alternating optimization.

One epoch is a shuffled pass over all frames in small batches. Each step
renders random rays of the batch frames and minimizes the photometric, mask
and Eikonal objectives. Frames outside the reliable set are rendered with a
detached copy of the field, background and density parameters, so they only
move their own poses. Every ``pose_only_every`` epochs the depth-order and
interpenetration terms update the poses alone. Every ``refresh_every``
epochs (one outer loop) the canonical meshes are re-extracted, prompts are
rebuilt, the segmenter is re-run and the reliable set is recomputed.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
from pydantic import ValidationError
from torch.func import functional_call

from ..body import ParamBody, PoseParams, ShapeParams
from ..camera import Camera, make_rays
from ..config import RunConfig
from ..deform import blend_transforms, keypoints_2d, skinning_transforms
from ..errors import DataError, NumericalError
from ..field import BackgroundField, CanonicalField, LaplaceDensity
from ..mesh import TriMesh, extract_canonical_mesh, pixel_depths, rasterize_instances
from ..render import PersonLayer, ray_box_intervals, render_image, render_rays
from ..segment import ExternalSegmenter, MaskStore, OracleSegmenter, refresh_masks
from .confidence import ConfidenceRecord, compute_confidence_split
from .losses import LossWeights, eikonal_points, loss_depth_order, loss_eikonal, loss_interpenetration, loss_mask, loss_rgb
from .state import TrainState, make_optimizer, read_checkpoint, load_into, save_checkpoint

log = logging.getLogger(__name__)

DTYPE = torch.float32


class _Frozen(nn.Module):
    """Calls ``module`` with detached parameters: same values, no parameter gradients."""

    def __init__(self, module: nn.Module):
        super().__init__()
        self.inner = [module]  # list: keep it out of the parameter tree

    def forward(self, *args):
        m = self.inner[0]
        params = {k: v.detach() for k, v in m.named_parameters()}
        params.update(dict(m.named_buffers()))
        return functional_call(m, params, args)


# ---------------------------------------------------------------------------
# initialization


def initial_poses(scene, cfg: RunConfig) -> list[list[PoseParams]]:
    """Ground truth plus Gaussian noise (deterministic in the run seed), or poses from a file."""
    init = cfg.init
    if init.source == "file":
        from ..evalkit.synth import load_scene  # noqa: PLC0415 - avoid import cycle at module load

        path = Path(init.poses_file)
        data = json.loads(path.read_text()) if path.suffix == ".json" else None
        if data is None:
            return load_scene(path).poses
        return [
            [PoseParams(torch.as_tensor(q["translation"], dtype=torch.float64), torch.as_tensor(q["rotations"], dtype=torch.float64)) for q in fr["persons"]]
            for fr in data["frames"]
        ]
    if scene.poses is None:
        raise DataError("scene has no poses to initialize from; set init.source=file")
    rng = np.random.default_rng([cfg.seed, 1])
    corrupt = set(init.corrupt_frames)
    out = []
    for f, fp in enumerate(scene.poses):
        row = []
        for gt in fp:
            # per-component sigma chosen so the RMS rotation error per joint is the configured angle
            sig = math.radians(init.corrupt_rot_deg if f in corrupt else init.rot_noise_deg) / math.sqrt(3.0)
            rot = gt.rotations.double().numpy() + rng.normal(0.0, sig, gt.rotations.shape)
            trans = gt.translation.double().numpy() + rng.normal(0.0, init.trans_noise, 3)
            row.append(PoseParams(torch.as_tensor(trans), torch.as_tensor(rot)))
        out.append(row)
    return out


def field_frame(body, shape: ShapeParams | None, padding: float):
    lo, hi = body.canonical_bounds(shape, padding=0.0)
    center = (lo + hi) / 2
    V = body.template(shape).detach().numpy()
    rms = float(np.sqrt(((V - center) ** 2).sum(-1).mean()))
    scale = float((hi - lo).max() / 2 + padding)
    return center, scale, rms


def build_state(cfg: RunConfig, scene, poses: list[list[PoseParams]] | None = None) -> TrainState:
    torch.manual_seed(cfg.seed)  # network initialization
    body, P, F = scene.body, scene.num_persons, scene.num_frames
    poses = poses if poses is not None else initial_poses(scene, cfg)
    fields, densities = nn.ModuleList(), nn.ModuleList()
    for p in range(P):
        center, scale, rms = field_frame(body, scene.shapes[p], cfg.scene.box_padding)
        fields.append(
            CanonicalField(
                pose_dim=3 * (body.num_joints - 1),
                center=center,
                scale=scale,
                init_radius=cfg.field.init_radius or rms,
                n_freqs=cfg.field.n_freqs,
                width=cfg.field.width,
                depth=cfg.field.depth,
                softplus_beta=cfg.field.softplus_beta,
            ).to(DTYPE)
        )
        densities.append(LaplaceDensity(cfg.optim.density_b_init, cfg.optim.density_b_min).to(DTYPE))
    background = BackgroundField(F, n_freqs=cfg.field.background_n_freqs).to(DTYPE)
    pose_params = nn.ParameterList(
        [nn.Parameter(poses[f][p].packed().detach().to(DTYPE).clone()) for f in range(F) for p in range(P)]
    )
    opt = make_optimizer(fields, densities, background, pose_params, cfg.optim.lr_field, cfg.optim.lr_pose)
    H, W = scene.images.shape[1:3]
    return TrainState(
        body=body,
        camera=scene.camera,
        fields=fields,
        densities=densities,
        background=background,
        poses=pose_params,
        shapes=[ShapeParams(s.coeffs.detach().double().clone()) for s in scene.shapes],
        optimizer=opt,
        generator=torch.Generator().manual_seed(cfg.seed),
        store=MaskStore.empty(F, P, H, W),
        config=config_record(cfg),
        num_frames=F,
        num_persons=P,
    )


def config_record(cfg: RunConfig) -> dict:
    """Config stored in checkpoints: everything except filesystem paths."""
    d = cfg.model_dump(mode="json")
    d.pop("data_dir", None)
    d.pop("output_dir", None)
    return d


def make_segmenter(cfg: RunConfig, scene):
    s = cfg.segmenter
    if s.kind == "oracle":
        if scene.masks is None:
            raise DataError("the oracle segmenter needs ground-truth masks in the scene directory")
        return OracleSegmenter(scene.masks, radius=s.radius, flip_prob=s.flip_prob, reach=s.reach, seed=cfg.seed)
    if s.kind == "external":
        return ExternalSegmenter(s.command)
    return None


# ---------------------------------------------------------------------------
# meshes and masks


def mean_condition(state: TrainState, p: int) -> torch.Tensor:
    conds = torch.stack([state.pose(f, p).conditioning().detach() for f in range(state.num_frames)])
    return conds.mean(0)


def canonical_bounds(state: TrainState, p: int, padding: float):
    return state.body.canonical_bounds(state.shapes[p], padding=padding)


def current_canonical_meshes(state: TrainState, resolution: int, padding: float) -> list[TriMesh]:
    return [
        extract_canonical_mesh(state.fields[p], mean_condition(state, p), canonical_bounds(state, p, padding), resolution)
        for p in range(state.num_persons)
    ]


class DeformedMeshes:
    """Canonical meshes with cached skinning weights, posed differentiably per frame."""

    def __init__(self, state: TrainState, meshes: list[TriMesh]):
        self.state = state
        self.meshes = meshes
        self.vertices = [torch.as_tensor(m.vertices, dtype=DTYPE) for m in meshes]
        self.weights = [
            torch.as_tensor(state.body.weights_at(m.vertices, state.shapes[p]), dtype=DTYPE) if not m.is_empty else None
            for p, m in enumerate(meshes)
        ]

    def pose(self, f: int, detach: bool = False) -> list[torch.Tensor]:
        out = []
        for p, m in enumerate(self.meshes):
            if m.is_empty:
                out.append(torch.zeros(0, 3, dtype=DTYPE))
                continue
            prm = self.state.pose_param(f, p)
            pose = PoseParams.from_packed(prm.detach() if detach else prm)
            T = skinning_transforms(self.state.body, pose, self.state.shapes[p])
            out.append(blend_transforms(T, self.weights[p], self.vertices[p]))
        return out

    def world(self, f: int) -> list[TriMesh]:
        return [m.with_vertices(v.double().numpy()) for m, v in zip(self.meshes, self.pose(f, detach=True))]


def frame_keypoints(state: TrainState, f: int):
    out = []
    for p, pose in enumerate(state.frame_poses(f)):
        pix, z, _ = keypoints_2d(state.body, pose, state.shapes[p], state.camera)
        out.append((pix, z))
    return out


def refresh(state: TrainState, scene, segmenter, cfg: RunConfig, epoch: int) -> ConfidenceRecord:
    """Re-extract meshes, rebuild prompts, re-run the segmenter, recompute reliability."""
    meshes = DeformedMeshes(state, current_canonical_meshes(state, cfg.field.mesh_resolution, cfg.scene.box_padding))
    rasters = [rasterize_instances(meshes.world(f), state.camera) for f in range(state.num_frames)]
    if segmenter is None:
        for f, r in enumerate(rasters):
            state.store.mesh[f] = r.masks
            state.store.depth[f] = r.depths
    else:
        kps = [frame_keypoints(state, f) for f in range(state.num_frames)]
        refresh_masks(state.store, segmenter, scene.images, rasters, kps, epoch)
    state.confidence = compute_confidence_split(state.store)
    return state.confidence


# ---------------------------------------------------------------------------
# steps


def _layers_for(state: TrainState, f: int, reliable: bool, padding: float) -> list[PersonLayer]:
    layers = []
    for p in range(state.num_persons):
        field, density = state.fields[p], state.densities[p]
        if not reliable:
            field, density = _Frozen(field), _Frozen(density)
        layers.append(PersonLayer.build(field, state.body, state.pose(f, p), density, state.shapes[p], padding))
    return layers


def sample_pixels(state: TrainState, layers: list[PersonLayer], n: int, fg_fraction: float, gen: torch.Generator) -> np.ndarray:
    """Flat pixel indices: a fraction drawn from pixels whose ray meets some person's box."""
    H, W = state.camera.height, state.camera.width
    origins, dirs = make_rays(state.camera, state.camera.pixel_grid())
    _, _, hit = ray_box_intervals(origins, dirs, [l.box for l in layers])
    fg = np.nonzero(hit.any(axis=1))[0]
    n_fg = min(int(round(n * fg_fraction)), len(fg))
    pick_fg = fg[torch.randperm(len(fg), generator=gen)[:n_fg].numpy()] if n_fg else np.zeros(0, dtype=np.int64)
    rest = torch.randperm(H * W, generator=gen)[: n - n_fg].numpy()
    return np.concatenate([pick_fg, rest]).astype(np.int64)


def _set_lr(state: TrainState, base: dict[str, float]) -> None:
    for g in state.optimizer.param_groups:
        g["lr"] = base[g["name"]] * state.lr_scale


def optimize_step(state: TrainState, scene, frames: list[int], record: ConfidenceRecord | None, weights: LossWeights, cfg: RunConfig) -> dict:
    """One gated Adam step over a batch of frames; returns the loss terms."""
    gen = state.generator
    H, W = state.camera.height, state.camera.width
    gated = cfg.optim.gating and record is not None
    reliable = [bool(record.reliable[f]) if gated else True for f in frames]
    state.optimizer.zero_grad(set_to_none=True)
    terms = {"rgb": 0.0, "mask": 0.0, "eik": 0.0}
    total = torch.zeros((), dtype=DTYPE)
    for f, rel in zip(frames, reliable):
        layers = _layers_for(state, f, rel, cfg.scene.box_padding)
        idx = sample_pixels(state, layers, cfg.optim.rays_per_frame, cfg.optim.foreground_fraction, gen)
        u, v = idx % W, idx // W
        origins, dirs = make_rays(state.camera, np.stack([u, v], axis=-1).astype(np.float64))
        bg = state.background if rel else _Frozen(state.background)
        out = render_rays(origins, dirs, layers, cfg.scene.samples_per_ray, bg, f, gen, dtype=DTYPE)
        obs = torch.as_tensor(scene.images[f][v, u], dtype=DTYPE)
        masks = torch.as_tensor(state.store.sam[f][:, v, u].T, dtype=DTYPE)
        l_rgb = loss_rgb(out.color, obs)
        l_mask = loss_mask(out.opacity, masks)
        total = total + (weights.rgb * l_rgb + weights.mask * l_mask) / len(frames)
        terms["rgb"] += float(l_rgb.detach()) / len(frames)
        terms["mask"] += float(l_mask.detach()) / len(frames)
    rel_frames = [f for f, r in zip(frames, reliable) if r]
    if rel_frames and weights.eik > 0 and cfg.optim.eik_samples > 0:
        pts, conds = [], []
        for p in range(state.num_persons):
            lo, hi = canonical_bounds(state, p, cfg.scene.box_padding)
            surf = state.body.template(state.shapes[p]).detach().numpy()
            pts.append(eikonal_points(lo, hi, surf, cfg.optim.eik_samples, gen, dtype=DTYPE))
            conds.append(state.pose(rel_frames[0], p).conditioning().detach())
        l_eik = loss_eikonal(state.fields, conds, pts)
        total = total + weights.eik * l_eik
        terms["eik"] = float(l_eik.detach())
    terms["total"] = float(total.detach())
    if not torch.isfinite(total):
        return _reject(state, cfg, "non-finite loss", terms)
    total.backward()
    grads = [p.grad for g in state.optimizer.param_groups for p in g["params"] if p.grad is not None]
    if any(not torch.isfinite(g).all() for g in grads):
        return _reject(state, cfg, "non-finite gradient", terms)
    if not rel_frames:
        # gating contract: no reliable frame, no field update (Adam skips None grads)
        for prm in state.field_parameters():
            prm.grad = None
    state.optimizer.step()
    state.step += 1
    state.rejected_steps = 0
    terms["reliable_frames"] = len(rel_frames)
    return terms


def _reject(state: TrainState, cfg: RunConfig, why: str, terms: dict) -> dict:
    state.optimizer.zero_grad(set_to_none=True)
    state.lr_scale *= 0.5
    state.rejected_steps += 1
    _set_lr(state, {"field": cfg.optim.lr_field, "pose": cfg.optim.lr_pose})
    log.warning("step rejected (%s); learning rates halved to scale %g", why, state.lr_scale)
    terms["event"] = f"rejected: {why}; lr_scale={state.lr_scale:g}"
    if state.rejected_steps >= cfg.optim.max_rejected_steps:
        raise NumericalError(f"{state.rejected_steps} consecutive non-finite steps ({why})")
    return terms


def frame_depth_maps(state: TrainState, deformed: DeformedMeshes, f: int):
    """Rasterize frame f; returns (raster, differentiable per-person depth maps [P, H, W])."""
    verts = deformed.pose(f)
    meshes = [m.with_vertices(v.detach().double().numpy()) for m, v in zip(deformed.meshes, verts)]
    raster = rasterize_instances(meshes, state.camera)
    H, W = state.camera.height, state.camera.width
    maps = []
    for p, v in enumerate(verts):
        D = torch.full((H * W,), math.inf, dtype=DTYPE)
        fid = raster.face_ids[p].reshape(-1)
        cov = np.nonzero(fid >= 0)[0]
        if len(cov):
            pix = np.stack([cov % W, cov // W], axis=-1).astype(np.float64)
            d = pixel_depths(v, meshes[p].faces, fid[cov], pix, state.camera)
            D = D.index_put((torch.as_tensor(cov),), d.to(DTYPE))
        maps.append(D.reshape(H, W))
    return raster, torch.stack(maps), verts, meshes


def pose_only_phase(state: TrainState, cfg: RunConfig, weights: LossWeights) -> dict:
    """Depth-order and interpenetration refinement of the poses alone."""
    if state.num_persons < 2 or cfg.optim.inter_iters == 0 or (weights.depth == 0 and weights.inter == 0):
        return {}
    canon = current_canonical_meshes(state, cfg.field.mesh_resolution, cfg.scene.box_padding)
    if any(m.is_empty for m in canon):
        return {"event": "pose-only phase skipped: empty canonical mesh"}
    deformed = DeformedMeshes(state, canon)
    # Adam moves every coordinate by about the same step; a per-row scale lets the
    # root translation move further than the joint rotations
    base = torch.stack([p.detach().clone() for p in state.poses])
    scale = torch.full_like(base[0], cfg.optim.pose_inter_rot_scale)
    scale[0] = 1.0
    u = torch.zeros_like(base, requires_grad=True)
    rays = None
    if cfg.optim.pose_inter_along_ray:
        # unit directions from the camera centre to each root: moving along them keeps the root's pixel
        P = state.num_persons
        roots = torch.stack(
            [state.body.joints_rest(state.shapes[i % P], dtype=base.dtype)[0] + base[i, 0] for i in range(len(base))]
        )
        rays = torch.nn.functional.normalize(roots - torch.as_tensor(state.camera.center, dtype=base.dtype), dim=1)
    lr = cfg.optim.lr_pose_inter * state.lr_scale
    normalized = cfg.optim.pose_inter_update == "normalized"
    opt = torch.optim.SGD([u], lr=lr) if normalized else torch.optim.Adam([u], lr=lr)
    first = last = None
    for it in range(cfg.optim.inter_iters):
        with torch.no_grad():
            for i, prm in enumerate(state.poses):
                prm.copy_(base[i] + scale * u[i])
                prm.grad = None
        opt.zero_grad(set_to_none=True)
        total = torch.zeros((), dtype=DTYPE)
        for f in range(state.num_frames):
            raster, D, verts, meshes = frame_depth_maps(state, deformed, f)
            l_d = loss_depth_order(state.store.sam[f], raster.masks, D)
            rng = np.random.default_rng([cfg.seed, state.epoch, it, f])
            l_i = loss_interpenetration(verts, meshes, cfg.optim.inter_max_vertices, rng)
            total = total + weights.depth * l_d + weights.inter * l_i
        if not torch.isfinite(total):
            return {"event": "pose-only phase stopped: non-finite loss"}
        if first is None:
            first = float(total.detach())
        last = float(total.detach())
        if total.requires_grad:
            total.backward()
            g = torch.stack([torch.zeros_like(b) if p.grad is None else p.grad for b, p in zip(base, state.poses)]) * scale
            if rays is not None:
                g[:, 0] = (g[:, 0] * rays).sum(1, keepdim=True) * rays
            if normalized:
                # the largest per-pose step has length lr; the others keep their relative size
                g = g / g.flatten(1).norm(dim=1).max().clamp_min(1e-12)
            u.grad = g
            opt.step()
    with torch.no_grad():
        for i, prm in enumerate(state.poses):
            prm.copy_(base[i] + scale * u[i])
            prm.grad = None
    return {"pose_phase_start": first, "pose_phase_end": last}


def epoch_order(state: TrainState, cfg: RunConfig) -> list[int]:
    """Shuffled frame order; under gating reliable and unreliable frames alternate.

    Because reliable frames are at least half of all frames, alternating
    means every batch of two or more frames carries a reliable frame, so the
    field is updated at every step, as in the ungated schedule.
    """
    order = torch.randperm(state.num_frames, generator=state.generator).tolist()
    rec = state.confidence
    if not (cfg.optim.gating and rec is not None) or rec.reliable.all():
        return order
    rel = [f for f in order if rec.reliable[f]]
    unrel = [f for f in order if not rec.reliable[f]]
    out = []
    for i in range(max(len(rel), len(unrel))):
        out += rel[i : i + 1] + unrel[i : i + 1]
    return out


def train_epoch(state: TrainState, scene, cfg: RunConfig, weights: LossWeights) -> dict:
    order = epoch_order(state, cfg)
    B = cfg.optim.frames_per_batch
    acc: dict[str, float] = {}
    events = []
    n = 0
    for s in range(0, len(order), B):
        terms = optimize_step(state, scene, order[s : s + B], state.confidence, weights, cfg)
        if "event" in terms:
            events.append(terms["event"])
            continue
        n += 1
        for k in ("rgb", "mask", "eik", "total"):
            acc[k] = acc.get(k, 0.0) + terms[k]
    out = {k: v / max(n, 1) for k, v in acc.items()}
    if events:
        out["events"] = events
    return out


# ---------------------------------------------------------------------------
# driver


def total_epochs(cfg: RunConfig) -> int:
    return cfg.optim.outer_loops * cfg.optim.refresh_every


def run_pipeline(
    cfg: RunConfig,
    scene,
    segmenter=None,
    state: TrainState | None = None,
    out_dir=None,
    stop_after: int | None = None,
    on_epoch: Callable[[TrainState, dict], None] | None = None,
    use_default_segmenter: bool = True,
) -> TrainState:
    """Run (or continue) the alternating optimization.

    ``stop_after`` pauses after that many total epochs; the checkpoint in
    ``out_dir`` can be passed back through :func:`resume_state`.
    """
    torch.set_num_threads(cfg.resolved_threads())
    if state is None:
        state = build_state(cfg, scene)
    if segmenter is None and use_default_segmenter:
        segmenter = make_segmenter(cfg, scene)
    weights = LossWeights(**cfg.weights.model_dump())
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.mrc" if out is not None else None
    n_epochs = total_epochs(cfg)

    def emit(rec: dict) -> None:
        if out is not None:
            with open(out / "metrics.log", "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if on_epoch is not None:
            on_epoch(state, rec)

    try:
        if n_epochs > 0 and state.epoch == 0 and state.store.refresh_epoch.max() < 0:
            rec = refresh(state, scene, segmenter, cfg, epoch=0)
            emit({"event": "refresh", "epoch": 0, "alpha": rec.alpha, "num_reliable": int(rec.reliable.sum()), "iou": rec.scores.round(6).tolist()})
        while state.epoch < n_epochs:
            if stop_after is not None and state.epoch >= stop_after:
                break
            terms = train_epoch(state, scene, cfg, weights)
            if (state.epoch + 1) % cfg.optim.pose_only_every == 0:
                terms.update(pose_only_phase(state, cfg, weights))
            state.epoch += 1
            record = {"event": "epoch", "epoch": state.epoch, **terms}
            if state.epoch % cfg.optim.refresh_every == 0:
                conf = refresh(state, scene, segmenter, cfg, epoch=state.epoch)
                record.update({"refresh": True})
            conf = state.confidence
            if conf is not None:
                record.update({"alpha": conf.alpha, "num_reliable": int(conf.reliable.sum()), "iou": conf.scores.round(6).tolist()})
            emit(record)
            if out is not None and cfg.export.masks_per_epoch:
                export_masks(state, out / "masks" / f"epoch_{state.epoch:04d}")
            if ckpt is not None and state.epoch % cfg.export.checkpoint_every == 0:
                save_checkpoint(state, ckpt)
    except Exception:
        if ckpt is not None:
            save_checkpoint(state, ckpt)
        raise
    if ckpt is not None:
        save_checkpoint(state, ckpt)
    return state


def resume_state(cfg: RunConfig, scene, path) -> TrainState:
    meta, tensors = read_checkpoint(path)
    state = build_state(cfg, scene)
    return load_into(state, meta, tensors)


@dataclass
class _CheckpointScene:
    """The scene facts a checkpoint carries: enough to rebuild its state."""

    body: ParamBody
    camera: Camera
    shapes: list[ShapeParams]
    images: np.ndarray
    poses: list[list[PoseParams]]

    @property
    def num_frames(self) -> int:
        return len(self.poses)

    @property
    def num_persons(self) -> int:
        return len(self.shapes)


def load_state(path) -> tuple[RunConfig, TrainState]:
    """Rebuild config and state from a checkpoint alone (no scene directory needed)."""
    meta, tensors = read_checkpoint(path)
    try:
        cfg = RunConfig.model_validate(meta["config"])
    except ValidationError as exc:
        raise DataError(f"{path}: stored config is invalid: {exc}") from exc
    body = ParamBody.from_dict(meta["body"])
    camera = Camera.from_dict(meta["camera"])
    F, P = int(meta["num_frames"]), int(meta["num_persons"])
    packed = tensors["poses"].reshape(F, P, body.num_joints + 1, 3).double()
    scene = _CheckpointScene(
        body=body,
        camera=camera,
        shapes=[ShapeParams(c.clone()) for c in tensors["shapes"]],
        images=np.zeros((F, camera.height, camera.width, 3)),
        poses=[[PoseParams.from_packed(packed[f, p]) for p in range(P)] for f in range(F)],
    )
    state = build_state(cfg, scene, poses=scene.poses)
    return cfg, load_into(state, meta, tensors)


# ---------------------------------------------------------------------------
# exports


def export_masks(state: TrainState, root: Path) -> None:
    from ..io import save_png  # noqa: PLC0415

    root.mkdir(parents=True, exist_ok=True)
    for f in range(state.num_frames):
        for p in range(state.num_persons):
            save_png(root / f"{f:05d}_p{p}.png", state.store.sam[f, p])


def render_frame(state: TrainState, f: int, camera=None, samples: int | None = None, seed: int = 0, padding: float = 0.1):
    cfg_samples = state.config["scene"]["samples_per_ray"] if samples is None else samples
    layers = [
        PersonLayer.build(state.fields[p], state.body, PoseParams.from_packed(state.pose_param(f, p).detach()), state.densities[p], state.shapes[p], padding)
        for p in range(state.num_persons)
    ]
    return render_image(camera or state.camera, layers, cfg_samples, state.background, frame_index=f, seed=seed, dtype=DTYPE)


def export_results(state: TrainState, out_dir, resolution: int, meshes: bool = True, renders: bool = True, padding: float = 0.1) -> dict:
    from ..io import save_png  # noqa: PLC0415

    out = Path(out_dir)
    written = {"meshes": [], "renders": []}
    if meshes:
        (out / "meshes").mkdir(parents=True, exist_ok=True)
        canon = current_canonical_meshes(state, resolution, padding)
        for p, m in enumerate(canon):
            path = out / "meshes" / f"canonical_p{p}.obj"
            m.save_obj(path)
            written["meshes"].append(str(path))
        deformed = DeformedMeshes(state, canon)
        for f in range(state.num_frames):
            for p, m in enumerate(deformed.world(f)):
                path = out / "meshes" / f"{f:05d}_p{p}.obj"
                m.save_obj(path)
                written["meshes"].append(str(path))
    if renders:
        (out / "renders").mkdir(parents=True, exist_ok=True)
        with torch.no_grad():
            for f in range(state.num_frames):
                img = render_frame(state, f, padding=padding)
                path = out / "renders" / f"{f:05d}.png"
                save_png(path, np.clip(img.image, 0, 1))
                written["renders"].append(str(path))
    return written
