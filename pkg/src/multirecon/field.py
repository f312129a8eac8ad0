"""Canonical implicit fields, SDF-to-density conversion and background color.

Every field maps canonical points ``x_c`` [N, 3] plus a pose-conditioning
vector to ``(sdf [N], rgb [N, 3])``. Learned fields are small MLPs; the
analytic fields (spheres, capsules, constants) share the call signature and
serve as test oracles and as the ground-truth renderer for synthetic scenes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .body import ParamBody, PoseParams, ShapeParams


@dataclass
class FieldSample:
    sdf: torch.Tensor
    rgb: torch.Tensor


def positional_encoding(x: torch.Tensor, n_freqs: int) -> torch.Tensor:
    freqs = (2.0 ** torch.arange(n_freqs, dtype=x.dtype, device=x.device)) * math.pi
    xf = x[..., None, :] * freqs[:, None]
    return torch.cat([x, torch.sin(xf).flatten(-2), torch.cos(xf).flatten(-2)], dim=-1)


def _pose_input(pose_cond, n: int, dim: int, like: torch.Tensor) -> torch.Tensor:
    if dim == 0:
        return like.new_zeros(n, 0)
    if pose_cond is None:
        return like.new_zeros(n, dim)
    if isinstance(pose_cond, PoseParams):
        pose_cond = pose_cond.conditioning()
    pose_cond = pose_cond.to(like.dtype)
    if pose_cond.ndim == 1:
        pose_cond = pose_cond.expand(n, -1)
    return pose_cond


class CanonicalField(nn.Module):
    """SDF + radiance MLP in a person's canonical space.

    Inputs are normalized by ``center``/``scale`` and positionally encoded;
    the pose vector is appended raw. With geometric initialization the zero
    level set starts as a sphere of radius ``init_radius`` around ``center``.
    """

    def __init__(
        self,
        pose_dim: int,
        center=(0.0, 0.0, 0.0),
        scale: float = 1.0,
        init_radius: float = 0.5,
        n_freqs: int = 6,
        width: int = 64,
        depth: int = 4,
        softplus_beta: float = 100.0,
    ):
        super().__init__()
        self.pose_dim = pose_dim
        self.n_freqs = n_freqs
        self.scale = float(scale)
        self.init_radius = float(init_radius)
        self.register_buffer("center", torch.as_tensor(center, dtype=torch.float32).reshape(3))
        in_dim = 3 + 6 * n_freqs + pose_dim
        dims = [in_dim] + [width] * depth
        self.hidden = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.out = nn.Linear(width, 4)
        self.act = nn.Softplus(beta=softplus_beta)
        self._geometric_init()

    @torch.no_grad()
    def _geometric_init(self) -> None:
        for i, layer in enumerate(self.hidden):
            nn.init.normal_(layer.weight, 0.0, math.sqrt(2.0) / math.sqrt(layer.out_features))
            nn.init.zeros_(layer.bias)
            if i == 0:
                # only the raw coordinates drive the initial surface
                layer.weight[:, 3:] = 0.0
        nn.init.normal_(self.out.weight[:1], math.sqrt(math.pi) / math.sqrt(self.out.in_features), 1e-4)
        self.out.bias[0] = -self.init_radius / self.scale
        nn.init.normal_(self.out.weight[1:], 0.0, 1e-2)
        nn.init.zeros_(self.out.bias[1:])

    def forward(self, x_c: torch.Tensor, pose_cond=None):
        xn = (x_c - self.center.to(x_c.dtype)) / self.scale
        h = positional_encoding(xn, self.n_freqs)
        h = torch.cat([h, _pose_input(pose_cond, len(x_c), self.pose_dim, x_c)], dim=-1)
        for layer in self.hidden:
            h = self.act(layer(h))
        out = self.out(h)
        return out[:, 0] * self.scale, torch.sigmoid(out[:, 1:])


class AnalyticField(nn.Module):
    """Exact SDF of a union of spheres and capsules with per-primitive colors."""

    def __init__(self, starts, ends, radii, colors=None, stripe_period: float | None = None):
        super().__init__()
        starts = torch.as_tensor(np.asarray(starts, dtype=np.float64)).reshape(-1, 3)
        ends = torch.as_tensor(np.asarray(ends, dtype=np.float64)).reshape(-1, 3)
        radii = torch.as_tensor(np.asarray(radii, dtype=np.float64)).reshape(-1)
        if colors is None:
            colors = np.full((len(radii), 3), 0.5)
        self.register_buffer("starts", starts)
        self.register_buffer("ends", ends)
        self.register_buffer("radii", radii)
        self.register_buffer("colors", torch.as_tensor(np.asarray(colors, dtype=np.float64)).reshape(-1, 3))
        self.stripe_period = stripe_period
        self.pose_dim = 0

    @classmethod
    def sphere(cls, center=(0.0, 0.0, 0.0), radius: float = 1.0, color=(0.5, 0.5, 0.5)):
        return cls([center], [center], [radius], [color])

    @classmethod
    def spheres(cls, centers, radii, colors=None):
        return cls(centers, centers, radii, colors)

    @classmethod
    def from_body(cls, body: ParamBody, shape: ShapeParams | None = None, colors=None, stripe_period=None):
        a, b, r = body.capsule_params(shape)
        return cls(a, b, r, colors, stripe_period)

    def primitive_sdf(self, x: torch.Tensor) -> torch.Tensor:
        a = self.starts.to(x.dtype)
        ab = self.ends.to(x.dtype) - a
        denom = (ab * ab).sum(-1)
        rel = x[:, None, :] - a[None]
        t = (rel * ab[None]).sum(-1) / torch.where(denom > 0, denom, torch.ones_like(denom))
        t = torch.where(denom > 0, t.clamp(0.0, 1.0), torch.zeros_like(t))
        closest = a[None] + t[..., None] * ab[None]
        diff = x[:, None, :] - closest
        # safe norm: exact away from the axis, finite gradient on it
        dist = torch.sqrt((diff * diff).sum(-1).clamp_min(1e-300))
        return dist - self.radii.to(x.dtype)[None]

    def forward(self, x_c: torch.Tensor, pose_cond=None):
        d = self.primitive_sdf(x_c)
        sdf, idx = d.min(dim=1)
        rgb = self.colors.to(x_c.dtype)[idx]
        if self.stripe_period:
            stripe = 0.85 + 0.15 * torch.cos(2 * math.pi * x_c[:, 1:2] / self.stripe_period)
            rgb = (rgb * stripe).clamp(0.0, 1.0)
        return sdf, rgb


class ConstantField(nn.Module):
    def __init__(self, value: float = 1.0, color=(0.5, 0.5, 0.5)):
        super().__init__()
        self.value = float(value)
        self.register_buffer("color", torch.as_tensor(color, dtype=torch.float64))
        self.pose_dim = 0

    def forward(self, x_c: torch.Tensor, pose_cond=None):
        # keep the graph connected so spatial gradients come out as zeros
        sdf = x_c.sum(-1) * 0.0 + self.value
        return sdf, self.color.to(x_c.dtype).expand(len(x_c), 3)


def eval_field(field: nn.Module, x_c: torch.Tensor, pose: PoseParams | None = None) -> FieldSample:
    single = x_c.ndim == 1
    sdf, rgb = field(x_c.reshape(-1, 3), pose)
    if single:
        return FieldSample(sdf[0], rgb[0])
    return FieldSample(sdf, rgb)


def field_gradient(field: nn.Module, x_c: torch.Tensor, pose=None, create_graph: bool = False) -> torch.Tensor:
    """Spatial gradient of the signed distance, [N, 3]."""
    x = x_c.reshape(-1, 3)
    if not x.requires_grad:
        x = x.detach().requires_grad_(True)
    sdf, _ = field(x, pose)
    (g,) = torch.autograd.grad(sdf.sum(), x, create_graph=create_graph)
    return g.reshape(x_c.shape)


@dataclass
class DensityParams:
    b: float  # Laplace scale, meters
    a: float | None = None  # magnitude, 1/meters; defaults to 1/b

    def __post_init__(self):
        if self.a is None:
            self.a = 1.0 / self.b
        if not (self.b > 0 and self.a > 0):
            raise ValueError("density parameters must be positive")


def laplace_cdf(t: torch.Tensor, b) -> torch.Tensor:
    e = 0.5 * torch.exp(-t.abs() / b)
    return torch.where(t <= 0, e, 1.0 - e)


def sdf_to_density(s, dp: DensityParams | None = None, *, a=None, b=None):
    """sigma(s) = a * Psi_b(-s), Psi_b the zero-mean Laplace CDF with scale b."""
    if dp is not None:
        a, b = dp.a, dp.b
    s = torch.as_tensor(s)
    if a is None:
        a = 1.0 / b
    return a * laplace_cdf(-s, b)


class LaplaceDensity(nn.Module):
    """Learnable scale ``b`` (clamped above ``b_min``) with ``a = 1 / b``.

    ``b`` is stored as its logarithm: steps are relative, so ``b`` cannot be
    driven through zero into the clamp, where its gradient would vanish.
    """

    def __init__(self, b_init: float = 0.05, b_min: float = 1e-4):
        super().__init__()
        self.log_b = nn.Parameter(torch.tensor(math.log(b_init)))
        self.b_min = b_min

    @property
    def b(self) -> torch.Tensor:
        return self.log_b.exp()

    def scale(self) -> torch.Tensor:
        return self.b.clamp_min(self.b_min)

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        b = self.scale().to(s.dtype)
        return laplace_cdf(-s, b) / b


class FixedDensity(nn.Module):
    def __init__(self, dp: DensityParams):
        super().__init__()
        self.dp = dp

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        return sdf_to_density(s, self.dp)


class BackgroundField(nn.Module):
    """Low-capacity directional color model with a per-frame code."""

    def __init__(self, num_frames: int, n_freqs: int = 4, code_dim: int = 4, width: int = 32):
        super().__init__()
        self.n_freqs = n_freqs
        self.num_frames = num_frames
        self.codes = nn.Embedding(max(num_frames, 1), code_dim)
        nn.init.zeros_(self.codes.weight)
        self.net = nn.Sequential(
            nn.Linear(3 + 6 * n_freqs + code_dim, width),
            nn.ReLU(),
            nn.Linear(width, width),
            nn.ReLU(),
            nn.Linear(width, 3),
        )

    def forward(self, dirs: torch.Tensor, frame_index) -> torch.Tensor:
        idx = torch.as_tensor(frame_index, dtype=torch.long).clamp(0, self.num_frames - 1)
        code = self.codes(idx).to(dirs.dtype)
        if code.ndim == 1:
            code = code.expand(len(dirs), -1)
        h = torch.cat([positional_encoding(dirs, self.n_freqs), code], dim=-1)
        return torch.sigmoid(self.net(h))


class GradientBackground(nn.Module):
    """Fixed vertical color gradient over view directions (synthetic scenes)."""

    def __init__(self, top=(0.55, 0.65, 0.80), bottom=(0.35, 0.30, 0.25), up=(0.0, 1.0, 0.0)):
        super().__init__()
        self.register_buffer("top", torch.as_tensor(top, dtype=torch.float64))
        self.register_buffer("bottom", torch.as_tensor(bottom, dtype=torch.float64))
        self.register_buffer("up", torch.as_tensor(up, dtype=torch.float64))

    def forward(self, dirs: torch.Tensor, frame_index=0) -> torch.Tensor:
        k = (0.5 + 0.5 * (dirs @ self.up.to(dirs.dtype)) * 2.0).clamp(0.0, 1.0)[:, None]
        return k * self.top.to(dirs.dtype) + (1 - k) * self.bottom.to(dirs.dtype)


class ConstantBackground(nn.Module):
    def __init__(self, color=(0.0, 0.0, 0.0)):
        super().__init__()
        self.register_buffer("color", torch.as_tensor(color, dtype=torch.float64))

    def forward(self, dirs: torch.Tensor, frame_index=0) -> torch.Tensor:
        return self.color.to(dirs.dtype).expand(len(dirs), 3)
