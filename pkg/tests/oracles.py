"""Slow, literal reference implementations used as test oracles."""
from __future__ import annotations

import numpy as np


def zset_composite(depths: np.ndarray, occ: np.ndarray, rgb: np.ndarray):
    """Per-sample weights by the literal Z-set product, one ray.

    ``depths``/``occ`` are [P, N], ``rgb`` [P, N, 3]. The weight of sample
    (p, i) is o_pi times the product of (1 - o) over every sample of every
    person strictly nearer than it.
    """
    P, N = occ.shape
    w = np.zeros((P, N))
    for p in range(P):
        for i in range(N):
            if not np.isfinite(depths[p, i]):
                continue
            t = 1.0
            for q in range(P):
                for j in range(N):
                    if depths[q, j] < depths[p, i]:
                        t *= 1.0 - occ[q, j]
            w[p, i] = occ[p, i] * t
    color = (w[..., None] * rgb).sum((0, 1))
    t_end = np.prod(1.0 - occ[np.isfinite(depths)])
    return color, w.sum(1), t_end, w


def merged_composite(depths: np.ndarray, occ: np.ndarray, rgb: np.ndarray):
    """Merge all persons' samples into one depth-sorted list and composite it as one person."""
    P, N = occ.shape
    items = sorted((depths[p, i], p, i) for p in range(P) for i in range(N))
    trans, color = 1.0, np.zeros(3)
    opacity = np.zeros(P)
    for z, p, i in items:
        w = trans * occ[p, i]
        color += w * rgb[p, i]
        opacity[p] += w
        trans *= 1.0 - occ[p, i]
    return color, opacity, trans


def line_segment_distance(origins: np.ndarray, dirs: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each line (origin, unit dir) to segment [a, b], closed form.

    Projecting out the line direction makes the squared distance a convex
    quadratic in the segment parameter, so clipping its minimizer is exact.
    """
    def perp(x):
        return x - (x * dirs).sum(-1, keepdims=True) * dirs

    w = perp(a[None] - origins)
    u = perp(np.broadcast_to(b - a, origins.shape))
    uu = (u * u).sum(-1)
    s = np.clip(-(w * u).sum(-1) / np.where(uu > 0, uu, 1.0), 0.0, 1.0)
    return np.linalg.norm(w + s[:, None] * u, axis=-1)


def naive_ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """SSIM by explicit loops over windows and channels."""
    x = np.arange(window) - (window - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    a = a[..., None] if a.ndim == 2 else a
    b = b[..., None] if b.ndim == 2 else b
    H, W, C = a.shape
    vals = []
    for c in range(C):
        for i in range(H - window + 1):
            for j in range(W - window + 1):
                pa = a[i : i + window, j : j + window, c]
                pb = b[i : i + window, j : j + window, c]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - ma) ** 2).sum()
                vb = (w * (pb - mb) ** 2).sum()
                cov = (w * (pa - ma) * (pb - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def interpenetration_bruteforce(verts: list[np.ndarray], inside_fn) -> float:
    """O(V^2) interpenetration: for each vertex of p inside q, distance to q's nearest vertex."""
    total = 0.0
    for p, vp in enumerate(verts):
        for q, vq in enumerate(verts):
            if p == q:
                continue
            for x, ins in zip(vp, inside_fn(p, q, vp)):
                if ins:
                    total += np.min(np.linalg.norm(vq - x, axis=1))
    return total


def central_difference(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        fp = fn(x)
        flat[k] = old - eps
        fm = fn(x)
        flat[k] = old
        gf[k] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12))
