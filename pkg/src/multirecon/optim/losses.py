"""Training objectives.

Photometric and mask terms are means over rays; depth-order and
interpenetration terms are sums over their index sets, as they are applied on
a separate pose-only cadence with their own weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.spatial import cKDTree

from ..field import field_gradient
from ..mesh import TriMesh, points_inside_mesh


@dataclass
class LossWeights:
    rgb: float = 1.0
    mask: float = 0.5
    eik: float = 0.1
    depth: float = 0.01
    inter: float = 0.01

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {k} must be finite and non-negative")


def loss_rgb(rendered: torch.Tensor, observed: torch.Tensor) -> torch.Tensor:
    """Mean over rays of the mean absolute channel error."""
    return (rendered - observed.to(rendered.dtype)).abs().mean()


def loss_mask(opacity: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    """Mean over rays of the summed per-person |M - O|; both [R, P]."""
    return (masks.to(opacity.dtype) - opacity).abs().sum(-1).mean()


def loss_eikonal(fields, conds, points) -> torch.Tensor:
    """Sum over persons of the mean squared deviation of |grad s| from 1."""
    total = 0.0
    for field, cond, x in zip(fields, conds, points):
        g = field_gradient(field, x, cond, create_graph=True)
        total = total + ((g.norm(dim=-1) - 1.0) ** 2).mean()
    return total if isinstance(total, torch.Tensor) else torch.zeros(())


def eikonal_points(lo, hi, surface: np.ndarray, n: int, generator: torch.Generator, sigma: float = 0.05, dtype=torch.float32):
    """Half uniform in the canonical box, half Gaussian around surface points."""
    n_u = n // 2
    lo_t = torch.as_tensor(lo, dtype=dtype)
    hi_t = torch.as_tensor(hi, dtype=dtype)
    uni = lo_t + (hi_t - lo_t) * torch.rand(n_u, 3, generator=generator).to(dtype)
    idx = torch.randint(len(surface), (n - n_u,), generator=generator)
    near = torch.as_tensor(surface, dtype=dtype)[idx] + sigma * torch.randn(n - n_u, 3, generator=generator).to(dtype)
    return torch.cat([uni, near])


def depth_order_pairs(m_sam: np.ndarray, m_mesh: np.ndarray, depth_finite: np.ndarray):
    """Index set of (p, q, v, u) with p != q, M_sam^p = 1, M_mesh^q = 1.

    Pixels where either person's depth is undefined carry no ordering signal
    and are left out.
    """
    P = m_sam.shape[0]
    out = []
    for p in range(P):
        for q in range(P):
            if p == q:
                continue
            v, u = np.nonzero(m_sam[p] & m_mesh[q] & depth_finite[p] & depth_finite[q])
            out.append((p, q, v, u))
    return out


def loss_depth_order(m_sam, m_mesh, depths: torch.Tensor) -> torch.Tensor:
    """Sum of softplus(D_p - D_q) over the pixel set above; depths is [P, H, W]."""
    fin = torch.isfinite(depths).detach().numpy()
    total = depths.new_zeros(())
    for p, q, v, u in depth_order_pairs(np.asarray(m_sam, bool), np.asarray(m_mesh, bool), fin):
        if len(v):
            v_t, u_t = torch.as_tensor(v), torch.as_tensor(u)
            total = total + F.softplus(depths[p, v_t, u_t] - depths[q, v_t, u_t]).sum()
    return total


def loss_interpenetration(vertices: list[torch.Tensor], meshes: list[TriMesh], max_vertices: int | None = None, generator: np.random.Generator | None = None) -> torch.Tensor:
    """Sum over ordered pairs (p, q) of distances from p's vertices inside q to q's nearest vertex.

    ``vertices[p]`` are the (differentiable) world-space vertices of
    ``meshes[p]``; containment and nearest neighbours are discrete choices.
    """
    dtype = vertices[0].dtype if vertices else torch.float64
    total = torch.zeros((), dtype=dtype)
    trees = [cKDTree(m.vertices) if not m.is_empty else None for m in meshes]
    for p, vp in enumerate(vertices):
        idx = np.arange(len(vp))
        if max_vertices is not None and len(idx) > max_vertices:
            rng = generator if generator is not None else np.random.default_rng(0)
            idx = np.sort(rng.choice(len(idx), max_vertices, replace=False))
        pts = vp.detach().double().numpy()[idx]
        for q, mq in enumerate(meshes):
            if q == p or mq.is_empty or len(idx) == 0:
                continue
            inside = points_inside_mesh(pts, mq)
            if not inside.any():
                continue
            sel = idx[inside]
            _, nn_idx = trees[q].query(pts[inside])
            target = vertices[q][torch.as_tensor(nn_idx)]
            diff = vp[torch.as_tensor(sel)] - target
            total = total + torch.sqrt((diff * diff).sum(-1) + 1e-18).sum()
    return total
