"""Occlusion-aware layer-wise volume rendering of several people.

Each person contributes samples only inside their posed bounding box. The
samples of all people along a ray are merged into a single front-to-back
order (depth, then person index, then sample index), so the transmittance
seen by sample ``i`` of person ``p`` is the product of ``(1 - o)`` over every
sample of every person strictly in front of it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .body import ParamBody, PoseParams, ShapeParams
from .camera import Camera, make_rays
from .deform import OrientedBox, PosedBody


@dataclass
class PersonLayer:
    """One person in one frame: canonical field, posed body, density, sampling box."""

    field: nn.Module
    posed: PosedBody
    density: nn.Module
    box: OrientedBox
    pose_cond: torch.Tensor | None = None

    @classmethod
    def build(
        cls,
        field: nn.Module,
        body: ParamBody,
        pose: PoseParams,
        density: nn.Module,
        shape: ShapeParams | None = None,
        padding: float = 0.1,
        detach_condition: bool = True,
    ) -> "PersonLayer":
        posed = PosedBody(body, pose, shape)
        cond = pose.conditioning()
        if detach_condition:
            cond = cond.detach()
        return cls(field, posed, density, posed.box(padding), cond)

    def query(self, x_d: torch.Tensor):
        """Density, radiance, canonical points and SDF for deformed points [M, 3]."""
        x_c = self.posed.inverse(x_d)
        sdf, rgb = self.field(x_c, self.pose_cond)
        return self.density(sdf), rgb, x_c, sdf


@dataclass
class RaySampleSet:
    """Per-ray, per-person samples, shape [R, P, N]; invalid entries have depth=inf."""

    depths: torch.Tensor
    valid: torch.Tensor
    t_far: torch.Tensor
    deltas: torch.Tensor | None = None
    sigma: torch.Tensor | None = None
    occupancy: torch.Tensor | None = None
    rgb: torch.Tensor | None = None
    points_d: torch.Tensor | None = None
    points_c: torch.Tensor | None = None

    @property
    def num_persons(self) -> int:
        return self.depths.shape[1]


@dataclass
class RenderOutput:
    color: torch.Tensor  # final color C-hat, [R, 3]
    color_h: torch.Tensor  # human color, [R, 3]
    color_bg: torch.Tensor  # background color, [R, 3]
    opacity: torch.Tensor  # per-person opacity, [R, P]
    t_end: torch.Tensor  # residual transmittance, [R]
    weights: torch.Tensor | None = None  # [R, P, N]
    samples: RaySampleSet | None = None


def ray_box_intervals(origins: np.ndarray, dirs: np.ndarray, boxes: list[OrientedBox]):
    R, P = len(origins), len(boxes)
    t0 = np.zeros((R, P))
    t1 = np.zeros((R, P))
    hit = np.zeros((R, P), dtype=bool)
    for p, box in enumerate(boxes):
        t0[:, p], t1[:, p], hit[:, p] = box.intersect(origins, dirs)
    return t0, t1, hit


def stratified_depths(t0, t1, hit, n: int, generator=None, dtype=torch.float32, jitter: bool = True):
    t0 = torch.as_tensor(t0, dtype=dtype)
    t1 = torch.as_tensor(t1, dtype=dtype)
    k = torch.arange(n, dtype=dtype)
    if jitter:
        u = torch.rand(*t0.shape, n, generator=generator).to(dtype)
    else:
        u = torch.full((*t0.shape, n), 0.5, dtype=dtype)
    z = t0[..., None] + (t1 - t0)[..., None] * (k + u) / n
    hit = torch.as_tensor(hit)
    return torch.where(hit[..., None], z, torch.full_like(z, float("inf")))


def _deltas(depths: torch.Tensor, t_far: torch.Tensor) -> torch.Tensor:
    nxt = torch.cat([depths[..., 1:], t_far[..., None]], dim=-1)
    d = nxt - depths
    return torch.where(torch.isfinite(d), d.clamp_min(0.0), torch.zeros_like(d))


def _single_weights(occ: torch.Tensor) -> torch.Tensor:
    trans = torch.cumprod(torch.cat([torch.ones_like(occ[..., :1]), 1.0 - occ[..., :-1]], dim=-1), dim=-1)
    return occ * trans


def importance_depths(depths, deltas, weights, n: int, generator=None):
    """Draw ``n`` depths per ray/person from the piecewise-constant pdf of ``weights``."""
    dtype = depths.dtype
    pdf = weights + 1e-5
    pdf = pdf / pdf.sum(-1, keepdim=True)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)
    u = (torch.arange(n, dtype=dtype) + torch.rand(*depths.shape[:-1], n, generator=generator).to(dtype)) / n
    u = u.contiguous()
    idx = torch.searchsorted(cdf.contiguous(), u, right=True).clamp(1, depths.shape[-1]) - 1
    c_lo = torch.gather(cdf, -1, idx)
    c_hi = torch.gather(cdf, -1, idx + 1)
    frac = ((u - c_lo) / (c_hi - c_lo).clamp_min(1e-12)).clamp(0.0, 1.0)
    z_lo = torch.gather(depths, -1, idx)
    width = torch.gather(deltas, -1, idx)
    return z_lo + frac * width


def _eval_layers(origins, dirs, depths, valid, layers, with_grad_outputs: bool):
    """Evaluate sigma/rgb for all valid samples; returns dense [R, P, N] tensors."""
    R, P, N = depths.shape
    dtype = depths.dtype
    sigma = torch.zeros(R, P, N, dtype=dtype)
    rgb = torch.zeros(R, P, N, 3, dtype=dtype)
    pts_d = torch.zeros(R, P, N, 3, dtype=dtype) if with_grad_outputs else None
    pts_c = torch.zeros(R, P, N, 3, dtype=dtype) if with_grad_outputs else None
    o = torch.as_tensor(origins, dtype=dtype)
    d = torch.as_tensor(dirs, dtype=dtype)
    for p, layer in enumerate(layers):
        m = valid[:, p]
        if not m.any():
            continue
        rr, nn_ = torch.nonzero(m, as_tuple=True)
        x_d = o[rr] + depths[rr, p, nn_][:, None] * d[rr]
        s, c, x_c, _ = layer.query(x_d)
        sigma = sigma.index_put((rr, torch.full_like(rr, p), nn_), s.to(dtype))
        rgb = rgb.index_put((rr, torch.full_like(rr, p), nn_), c.to(dtype))
        if with_grad_outputs:
            pts_d[rr, p, nn_] = x_d.detach()
            pts_c[rr, p, nn_] = x_c.detach().to(dtype)
    return sigma, rgb, pts_d, pts_c


def sample_points_on_rays(origins, dirs, layers: list[PersonLayer], n_samples: int, generator=None, dtype=torch.float32) -> RaySampleSet:
    """Box-restricted depths: n/2 stratified plus n - n/2 importance resampled.

    The first pass is evaluated without gradients; a person whose box the ray
    misses gets no samples (all entries invalid).
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples per ray")
    t0, t1, hit = ray_box_intervals(origins, dirs, [l.box for l in layers])
    n_coarse = n_samples // 2
    coarse = stratified_depths(t0, t1, hit, n_coarse, generator, dtype)
    t_far = torch.as_tensor(np.where(hit, t1, np.inf), dtype=dtype)
    hit_t = torch.as_tensor(hit)
    valid = hit_t[..., None].expand_as(coarse)
    with torch.no_grad():
        sigma, _, _, _ = _eval_layers(origins, dirs, coarse, valid, layers, False)
        deltas = _deltas(coarse, t_far)
        w = _single_weights(1.0 - torch.exp(-sigma * deltas))
        fine = importance_depths(torch.where(valid, coarse, torch.zeros_like(coarse)), deltas, w, n_samples - n_coarse, generator)
    depths, _ = torch.sort(torch.cat([torch.where(valid, coarse, torch.zeros_like(coarse)), fine], dim=-1), dim=-1)
    depths = torch.where(hit_t[..., None], depths, torch.full_like(depths, float("inf")))
    return RaySampleSet(depths=depths, valid=hit_t[..., None].expand_as(depths).clone(), t_far=t_far)


def evaluate_samples(samples: RaySampleSet, origins, dirs, layers: list[PersonLayer], keep_points: bool = False) -> RaySampleSet:
    """Differentiable densities, occupancies and radiance at fixed sample depths."""
    sigma, rgb, pts_d, pts_c = _eval_layers(origins, dirs, samples.depths, samples.valid, layers, keep_points)
    deltas = _deltas(samples.depths, samples.t_far)
    occ = torch.where(samples.valid, 1.0 - torch.exp(-sigma * deltas), torch.zeros_like(sigma))
    samples.deltas, samples.sigma, samples.occupancy, samples.rgb = deltas, sigma, occ, rgb
    samples.points_d, samples.points_c = pts_d, pts_c
    return samples


def composite_layers(depths: torch.Tensor, occupancy: torch.Tensor, rgb: torch.Tensor):
    """Layered front-to-back quadrature over [R, P, N] samples.

    Returns ``(color_h [R, 3], opacity [R, P], t_end [R], weights [R, P, N])``.
    """
    R, P, N = occupancy.shape
    flat_z = depths.reshape(R, P * N)
    order = torch.sort(flat_z, dim=-1, stable=True).indices
    occ_s = torch.gather(occupancy.reshape(R, P * N), 1, order)
    rgb_s = torch.gather(rgb.reshape(R, P * N, 3), 1, order[..., None].expand(-1, -1, 3))
    ones = torch.ones_like(occ_s[:, :1])
    trans = torch.cumprod(torch.cat([ones, 1.0 - occ_s], dim=-1), dim=-1)
    w_s = occ_s * trans[:, :-1]
    color_h = (w_s[..., None] * rgb_s).sum(1)
    weights = torch.zeros_like(w_s).scatter(1, order, w_s).reshape(R, P, N)
    return color_h, weights.sum(-1), trans[:, -1], weights


def composite_single(occupancy: torch.Tensor, rgb: torch.Tensor):
    """Standard single-layer compositing over depth-sorted [R, N] samples."""
    ones = torch.ones_like(occupancy[:, :1])
    trans = torch.cumprod(torch.cat([ones, 1.0 - occupancy], dim=-1), dim=-1)
    w = occupancy * trans[:, :-1]
    return (w[..., None] * rgb).sum(1), w.sum(-1), trans[:, -1], w


def composite_human_color(samples: RaySampleSet):
    color_h, _, _, weights = composite_layers(samples.depths, samples.occupancy, samples.rgb)
    return color_h, weights


def render_person_opacity(samples: RaySampleSet, p: int) -> torch.Tensor:
    _, opacity, _, _ = composite_layers(samples.depths, samples.occupancy, samples.rgb)
    return opacity[:, p]


def composite_with_background(color_h: torch.Tensor, t_end: torch.Tensor, color_bg: torch.Tensor) -> torch.Tensor:
    return color_h + t_end[..., None] * color_bg


def render_rays(
    origins,
    dirs,
    layers: list[PersonLayer],
    n_samples: int,
    background: nn.Module | None = None,
    frame_index: int = 0,
    generator=None,
    samples: RaySampleSet | None = None,
    dtype=torch.float32,
    layered: bool = True,
) -> RenderOutput:
    if samples is None:
        samples = sample_points_on_rays(origins, dirs, layers, n_samples, generator, dtype)
    samples = evaluate_samples(samples, origins, dirs, layers)
    if layered:
        color_h, opacity, t_end, weights = composite_layers(samples.depths, samples.occupancy, samples.rgb)
    else:
        if samples.num_persons != 1:
            raise ValueError("the non-layered renderer handles a single person only")
        color_h, op, t_end, w = composite_single(samples.occupancy[:, 0], samples.rgb[:, 0])
        opacity, weights = op[:, None], w[:, None]
    d = torch.as_tensor(dirs, dtype=samples.depths.dtype)
    if background is None:
        color_bg = torch.zeros_like(color_h)
    else:
        color_bg = background(d, frame_index).to(color_h.dtype)
    color = composite_with_background(color_h, t_end, color_bg)
    return RenderOutput(color, color_h, color_bg, opacity, t_end, weights, samples)


@dataclass
class ImageRender:
    image: np.ndarray  # [H, W, 3]
    opacity: np.ndarray  # [P, H, W]
    t_end: np.ndarray  # [H, W]
    human: np.ndarray  # [H, W, 3]


def render_image(
    camera: Camera,
    layers: list[PersonLayer],
    n_samples: int,
    background: nn.Module | None = None,
    frame_index: int = 0,
    seed: int = 0,
    chunk: int = 4096,
    dtype=torch.float32,
    layered: bool = True,
) -> ImageRender:
    """Render every pixel (no gradients); deterministic given ``seed``."""
    H, W = camera.height, camera.width
    origins, dirs = make_rays(camera, camera.pixel_grid())
    gen = torch.Generator().manual_seed(int(seed))
    img, hum, op, te = [], [], [], []
    with torch.no_grad():
        for s in range(0, len(origins), chunk):
            out = render_rays(
                origins[s : s + chunk], dirs[s : s + chunk], layers, n_samples, background,
                frame_index, gen, dtype=dtype, layered=layered,
            )
            img.append(out.color)
            hum.append(out.color_h)
            op.append(out.opacity)
            te.append(out.t_end)
    P = len(layers)
    return ImageRender(
        image=torch.cat(img).double().numpy().reshape(H, W, 3),
        opacity=torch.cat(op).double().numpy().T.reshape(P, H, W),
        t_end=torch.cat(te).double().numpy().reshape(H, W),
        human=torch.cat(hum).double().numpy().reshape(H, W, 3),
    )
