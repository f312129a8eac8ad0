"""Triangle meshes: iso-surface extraction, instance rasterization, containment.

Rasterization is a vectorized z-buffer over triangle bounding boxes. Depth is
camera-space z. For gradients, :func:`pixel_depths` recomputes the depth of
a fixed (pixel, triangle) assignment as a ray/plane intersection in torch, so
it is differentiable w.r.t. the vertices while coverage stays frozen.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.spatial import cKDTree
from skimage import measure

from .camera import Camera


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @classmethod
    def empty(cls) -> "TriMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.faces.copy())

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_normals(self) -> np.ndarray:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=-1)

    def edge_face_counts(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def manifold_defect(self) -> int:
        """Sum over edges of (faces per edge - 2); zero for a closed 2-manifold."""
        if self.is_empty:
            return 0
        return int(np.abs(self.edge_face_counts() - 2).sum())

    def is_closed(self) -> bool:
        return not self.is_empty and self.manifold_defect() == 0

    def signed_volume(self) -> float:
        t = self.triangles()
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces[:, ::-1].copy())

    # -- io ---------------------------------------------------------------
    def save_obj(self, path) -> None:
        lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in self.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.faces]
        Path(path).write_text("\n".join(lines) + "\n")

    def save_ply(self, path) -> None:
        header = [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(self.vertices)}",
            "property float x",
            "property float y",
            "property float z",
            f"element face {len(self.faces)}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
        body = [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in self.vertices]
        body += [f"3 {a} {b} {c}" for a, b, c in self.faces]
        Path(path).write_text("\n".join(header + body) + "\n")

    @classmethod
    def load_obj(cls, path) -> "TriMesh":
        verts, faces = [], []
        for line in Path(path).read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
        return cls(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))

    @classmethod
    def load_ply(cls, path) -> "TriMesh":
        lines = Path(path).read_text().splitlines()
        end = lines.index("end_header")
        nv = nf = 0
        for line in lines[:end]:
            if line.startswith("element vertex"):
                nv = int(line.split()[-1])
            elif line.startswith("element face"):
                nf = int(line.split()[-1])
        body = lines[end + 1 :]
        verts = np.array([[float(x) for x in l.split()[:3]] for l in body[:nv]]).reshape(-1, 3)
        faces = np.array([[int(x) for x in l.split()[1:4]] for l in body[nv : nv + nf]], dtype=np.int64)
        return cls(verts, faces.reshape(-1, 3))


# ---------------------------------------------------------------------------
# iso-surface extraction


def grid_points(lo, hi, resolution: int):
    """Cubic-cell grid covering [lo, hi]; ``resolution`` cells along the longest side."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    cell = float((hi - lo).max()) / resolution
    shape = np.maximum(np.ceil((hi - lo) / cell).astype(int) + 1, 2)
    axes = [lo[i] + cell * np.arange(shape[i]) for i in range(3)]
    return axes, cell


def marching_cubes_volume(values: np.ndarray, origin, cell: float) -> TriMesh:
    """Zero level set of a sampled SDF (negative inside) with outward normals."""
    if not (values.min() < 0 < values.max()):
        return TriMesh.empty()
    big = float(np.abs(values).max()) + cell
    padded = np.pad(values, 1, constant_values=big)
    verts, faces, _, _ = measure.marching_cubes(padded, level=0.0, spacing=(cell, cell, cell))
    verts = verts - cell + np.asarray(origin, dtype=np.float64)
    mesh = TriMesh(verts, faces)
    if mesh.signed_volume() < 0:
        mesh = mesh.flipped()
    return mesh


def extract_sdf_mesh(sdf_fn, lo, hi, resolution: int, chunk: int = 65536) -> TriMesh:
    """Marching cubes over a numpy SDF callable ``sdf_fn(points [M, 3]) -> [M]``."""
    axes, cell = grid_points(lo, hi, resolution)
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
    vals = np.concatenate([np.asarray(sdf_fn(pts[s : s + chunk])) for s in range(0, len(pts), chunk)])
    return marching_cubes_volume(vals.reshape(X.shape), lo, cell)


def extract_canonical_mesh(field, pose, bounds, resolution: int = 128, chunk: int = 65536) -> TriMesh:
    """Zero level set of a canonical field at ``pose`` over ``bounds = (lo, hi)``.

    Returns an empty mesh when the field has no sign change in the box.
    """
    dtype = next((p.dtype for p in field.parameters()), None) or next(
        (b.dtype for b in field.buffers()), torch.float64
    )

    def fn(pts):
        with torch.no_grad():
            sdf, _ = field(torch.as_tensor(pts, dtype=dtype), pose)
        return sdf.double().numpy()

    lo, hi = bounds
    return extract_sdf_mesh(fn, lo, hi, resolution, chunk)


# ---------------------------------------------------------------------------
# rasterization


@dataclass
class RasterResult:
    labels: np.ndarray  # [H, W], 0 = background, p + 1 = person p
    masks: np.ndarray  # [P, H, W] bool, visible (nearest) instance masks
    depths: np.ndarray  # [P, H, W], own nearest depth wherever p covers, else inf
    face_ids: np.ndarray  # [P, H, W], covering triangle or -1

    @property
    def coverage(self) -> np.ndarray:
        return np.isfinite(self.depths)


def _project(camera: Camera, vertices: np.ndarray):
    Xc = camera.world_to_camera(vertices)
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * Xc[:, 0] / z + camera.cx
        v = camera.fy * Xc[:, 1] / z + camera.cy
    return u, v, z


def _rasterize_mesh(mesh: TriMesh, camera: Camera, near: float = 1e-4):
    H, W = camera.height, camera.width
    depth = np.full(H * W, np.inf)
    face = np.full(H * W, -1, dtype=np.int64)
    if mesh.is_empty:
        return depth, face
    u, v, z = _project(camera, mesh.vertices)
    f = mesh.faces
    keep = (z[f] > near).all(axis=1)
    fu, fv, fz = u[f][keep], v[f][keep], z[f][keep]
    fidx = np.nonzero(keep)[0]
    area = (fu[:, 1] - fu[:, 0]) * (fv[:, 2] - fv[:, 0]) - (fu[:, 2] - fu[:, 0]) * (fv[:, 1] - fv[:, 0])
    ok = np.abs(area) > 1e-12  # degenerate triangles are skipped
    x0 = np.clip(np.ceil(fu.min(1) - 1e-9), 0, W).astype(np.int64)
    x1 = np.clip(np.floor(fu.max(1) + 1e-9), -1, W - 1).astype(np.int64)
    y0 = np.clip(np.ceil(fv.min(1) - 1e-9), 0, H).astype(np.int64)
    y1 = np.clip(np.floor(fv.max(1) + 1e-9), -1, H - 1).astype(np.int64)
    bw = np.where(ok, np.maximum(x1 - x0 + 1, 0), 0)
    bh = np.where(ok, np.maximum(y1 - y0 + 1, 0), 0)
    counts = bw * bh
    total = int(counts.sum())
    if total == 0:
        return depth, face
    tri = np.repeat(np.arange(len(fu)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    k = np.arange(total) - start
    px = x0[tri] + k % bw[tri]
    py = y0[tri] + k // bw[tri]
    a = area[tri]
    u0, u1, u2 = fu[tri, 0], fu[tri, 1], fu[tri, 2]
    v0, v1, v2 = fv[tri, 0], fv[tri, 1], fv[tri, 2]
    b0 = ((u1 - px) * (v2 - py) - (u2 - px) * (v1 - py)) / a
    b1 = ((u2 - px) * (v0 - py) - (u0 - px) * (v2 - py)) / a
    b2 = 1.0 - b0 - b1
    eps = -1e-9
    inside = (b0 >= eps) & (b1 >= eps) & (b2 >= eps)
    tri, px, py = tri[inside], px[inside], py[inside]
    b = np.stack([b0[inside], b1[inside], b2[inside]], axis=-1)
    # perspective-correct depth: interpolate 1/z in screen space
    zz = 1.0 / (b / fz[tri]).sum(-1)
    pix = py * W + px
    order = np.lexsort((zz, pix))
    pix, zz, tri = pix[order], zz[order], tri[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    depth[pix[first]] = zz[first]
    face[pix[first]] = fidx[tri[first]]
    return depth, face


def rasterize_instances(meshes: list[TriMesh], camera: Camera) -> RasterResult:
    """Z-buffered instance masks and per-person depth maps for world-space meshes."""
    H, W = camera.height, camera.width
    P = len(meshes)
    depths = np.full((P, H * W), np.inf)
    faces = np.full((P, H * W), -1, dtype=np.int64)
    for p, m in enumerate(meshes):
        depths[p], faces[p] = _rasterize_mesh(m, camera)
    labels = np.zeros(H * W, dtype=np.int64)
    if P:
        nearest = np.argmin(depths, axis=0)
        covered = np.isfinite(depths.min(axis=0))
        labels = np.where(covered, nearest + 1, 0)
    masks = np.stack([labels == p + 1 for p in range(P)]) if P else np.zeros((0, H * W), dtype=bool)
    return RasterResult(
        labels=labels.reshape(H, W),
        masks=masks.reshape(P, H, W),
        depths=depths.reshape(P, H, W),
        face_ids=faces.reshape(P, H, W),
    )


def pixel_depths(vertices_world: torch.Tensor, faces: np.ndarray, face_ids: np.ndarray, pixels: np.ndarray, camera: Camera) -> torch.Tensor:
    """Camera-space depth where each pixel ray meets its assigned triangle's plane.

    ``face_ids`` [M] and ``pixels`` [M, 2] (u, v) come from a rasterization
    pass; the result is differentiable w.r.t. ``vertices_world``.
    """
    Xc = camera.world_to_camera(vertices_world)
    f = torch.as_tensor(faces[face_ids], dtype=torch.long)
    v0, v1, v2 = Xc[f[:, 0]], Xc[f[:, 1]], Xc[f[:, 2]]
    n = torch.linalg.cross(v1 - v0, v2 - v0)
    pix = torch.as_tensor(pixels, dtype=Xc.dtype)
    d = torch.stack(
        [(pix[:, 0] - camera.cx) / camera.fx, (pix[:, 1] - camera.cy) / camera.fy, torch.ones(len(pix), dtype=Xc.dtype)],
        dim=-1,
    )
    return (n * v0).sum(-1) / (n * d).sum(-1)


# ---------------------------------------------------------------------------
# containment by ray parity


def _axis_ray_hits(points: np.ndarray, tris: np.ndarray, tmin: np.ndarray, tmax: np.ndarray):
    """+x rays: Moller-Trumbore restricted to triangles whose bbox the ray can meet."""
    px, py, pz = points[:, 0:1], points[:, 1:2], points[:, 2:3]
    cand = (tmax[None, :, 0] >= px) & (tmin[None, :, 1] <= py) & (tmax[None, :, 1] >= py)
    cand &= (tmin[None, :, 2] <= pz) & (tmax[None, :, 2] >= pz)
    pi, fi = np.nonzero(cand)
    counts = np.zeros(len(points), dtype=np.int64)
    degenerate = np.zeros(len(points), dtype=bool)
    if len(pi) == 0:
        return counts, degenerate
    hit, bad = _pair_hits(points[pi], np.array([1.0, 0.0, 0.0]), tris[fi])
    np.add.at(counts, pi, hit)
    degenerate[pi[bad]] = True
    return counts, degenerate


def _pair_hits(points, direction, tris, eps: float = 1e-12, tol: float = 1e-7):
    """Row-wise ray/triangle crossing and degeneracy flags."""
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    pvec = np.cross(direction, e2)
    det = (e1 * pvec).sum(-1)
    edge_on = np.abs(det) < eps
    inv = 1.0 / np.where(edge_on, 1.0, det)
    tvec = points - v0
    u = (tvec * pvec).sum(-1) * inv
    qvec = np.cross(tvec, e1)
    v = (qvec * direction).sum(-1) * inv
    t = (qvec * e2).sum(-1) * inv
    w = 1.0 - u - v
    hit = ~edge_on & (u >= 0) & (v >= 0) & (w >= 0) & (t > 0)
    near = ~edge_on & (t > -tol) & (u > -tol) & (v > -tol) & (w > -tol)
    grazing = near & ((np.abs(u) < tol) | (np.abs(v) < tol) | (np.abs(w) < tol) | (np.abs(t) < tol))
    # an edge-on triangle only matters if the ray lies in its plane
    n = np.cross(e1, e2)
    in_plane = edge_on & (np.abs((tvec * n).sum(-1)) <= tol * (1.0 + np.linalg.norm(n, axis=-1)))
    return hit, grazing | in_plane


def points_inside_mesh(points, mesh: TriMesh, max_retries: int = 8, chunk: int = 256) -> np.ndarray:
    """Parity containment for many points: cast along +x, perturb on degenerate hits."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(len(points), dtype=bool)
    if mesh.is_empty or len(points) == 0:
        return out
    lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
    todo = np.nonzero(((points >= lo) & (points <= hi)).all(-1))[0]
    tris = mesh.triangles()
    tmin, tmax = tris.min(1), tris.max(1)
    rng = np.random.default_rng(12345)
    for attempt in range(max_retries + 1):
        if len(todo) == 0:
            break
        still = []
        if attempt > 0:
            d = rng.normal(size=3)
            direction = d / np.linalg.norm(d)
        step = chunk if attempt == 0 else max(1, 200_000 // len(tris))
        for s in range(0, len(todo), step):
            idx = todo[s : s + step]
            if attempt == 0:
                counts, degenerate = _axis_ray_hits(points[idx], tris, tmin, tmax)
            else:
                pi = np.repeat(np.arange(len(idx)), len(tris))
                hit, bad = _pair_hits(points[idx][pi], direction, np.tile(tris, (len(idx), 1, 1)))
                counts = np.bincount(pi, weights=hit, minlength=len(idx)).astype(np.int64)
                degenerate = np.bincount(pi, weights=bad, minlength=len(idx)) > 0
            out[idx] = counts % 2 == 1
            still.append(idx[degenerate])
        todo = np.concatenate(still) if still else np.zeros(0, dtype=np.int64)
    return out


def point_inside_by_parity(x, mesh: TriMesh) -> bool:
    return bool(points_inside_mesh(np.asarray(x, dtype=np.float64).reshape(1, 3), mesh)[0])


def inside_grid(mesh: TriMesh, axes: list[np.ndarray]) -> np.ndarray:
    """Parity containment of every grid node, rays along +x per (y, z) row."""
    xs, ys, zs = axes
    out = np.zeros((len(xs), len(ys), len(zs)), dtype=bool)
    if mesh.is_empty:
        return out
    # irrational sub-cell offsets keep rows off mesh edges and vertices
    cell = float(min(np.diff(ys).min() if len(ys) > 1 else 1.0, np.diff(zs).min() if len(zs) > 1 else 1.0))
    oy, oz = 1.13e-6 * np.sqrt(2.0) * cell, 1.07e-6 * np.sqrt(3.0) * cell
    t = mesh.triangles()
    ty, tz, tx = t[..., 1] - ys[0] - oy, t[..., 2] - zs[0] - oz, t[..., 0]
    dy = ys[1] - ys[0] if len(ys) > 1 else 1.0
    dz = zs[1] - zs[0] if len(zs) > 1 else 1.0
    gy, gz = ty / dy, tz / dz
    area = (gy[:, 1] - gy[:, 0]) * (gz[:, 2] - gz[:, 0]) - (gy[:, 2] - gy[:, 0]) * (gz[:, 1] - gz[:, 0])
    ok = np.abs(area) > 1e-14
    j0 = np.clip(np.ceil(gy.min(1)), 0, len(ys)).astype(np.int64)
    j1 = np.clip(np.floor(gy.max(1)), -1, len(ys) - 1).astype(np.int64)
    k0 = np.clip(np.ceil(gz.min(1)), 0, len(zs)).astype(np.int64)
    k1 = np.clip(np.floor(gz.max(1)), -1, len(zs) - 1).astype(np.int64)
    bw = np.where(ok, np.maximum(j1 - j0 + 1, 0), 0)
    bh = np.where(ok, np.maximum(k1 - k0 + 1, 0), 0)
    counts = bw * bh
    total = int(counts.sum())
    if total == 0:
        return out
    tri = np.repeat(np.arange(len(t)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    kk = np.arange(total) - start
    pj = j0[tri] + kk % bw[tri]
    pk = k0[tri] + kk // bw[tri]
    a = area[tri]
    y0, y1, y2 = gy[tri, 0], gy[tri, 1], gy[tri, 2]
    z0, z1, z2 = gz[tri, 0], gz[tri, 1], gz[tri, 2]
    b0 = ((y1 - pj) * (z2 - pk) - (y2 - pj) * (z1 - pk)) / a
    b1 = ((y2 - pj) * (z0 - pk) - (y0 - pj) * (z2 - pk)) / a
    b2 = 1.0 - b0 - b1
    inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
    xh = (np.stack([b0, b1, b2], -1)[inside] * tx[tri[inside]]).sum(-1)
    row = pj[inside] * len(zs) + pk[inside]
    span = float(xs[-1] - xs[0]) or 1.0
    key = row * 4.0 + np.clip((xh - xs[0]) / span, -1.0, 2.0) + 1.0
    key.sort()
    rows = np.arange(len(ys) * len(zs))
    row_end = np.searchsorted(key, rows * 4.0 + 4.0, side="left")
    qfrac = (xs - xs[0]) / span + 1.0
    q = rows[:, None] * 4.0 + qfrac[None, :]
    pos = np.searchsorted(key, q.ravel(), side="right").reshape(q.shape)
    n_greater = row_end[:, None] - pos
    inside_rows = (n_greater % 2 == 1).reshape(len(ys), len(zs), len(xs))
    return inside_rows.transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# surface queries


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator):
    """Area-weighted surface samples and the normals of their faces."""
    areas = mesh.face_areas()
    fi = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    t = mesh.triangles()[fi]
    pts = (1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2]
    return pts, mesh.face_normals()[fi]


def closest_point_on_triangles(p, a, b, c):
    """Closest point on triangle (a, b, c) to p, row-wise (Ericson's region tests)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        res = a + v[:, None] * ab + w[:, None] * ac
        # edge regions
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        res = np.where(on_bc[:, None], b + t_bc[:, None] * (c - b), res)
        t_ac = d2 / (d2 - d6)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        res = np.where(on_ac[:, None], a + t_ac[:, None] * ac, res)
        t_ab = d1 / (d1 - d3)
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        res = np.where(on_ab[:, None], a + t_ab[:, None] * ab, res)
    # vertex regions
    res = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, res)
    res = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, res)
    res = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, res)
    return res


def closest_points_on_mesh(points: np.ndarray, mesh: TriMesh, k: int = 16, chunk: int = 8192):
    """Nearest surface point, its distance and face index for each query point.

    Candidate faces are the ``k`` nearest by centroid; exact point/triangle
    distance picks among them.
    """
    tris = mesh.triangles()
    tree = cKDTree(tris.mean(axis=1))
    k = min(k, len(tris))
    out_pt = np.empty_like(points)
    out_d = np.empty(len(points))
    out_f = np.empty(len(points), dtype=np.int64)
    for s in range(0, len(points), chunk):
        p = points[s : s + chunk]
        _, cand = tree.query(p, k=k)
        cand = cand.reshape(len(p), k)
        pr = np.repeat(p, k, axis=0)
        t = tris[cand.ravel()]
        cp = closest_point_on_triangles(pr, t[:, 0], t[:, 1], t[:, 2]).reshape(len(p), k, 3)
        d = np.linalg.norm(cp - p[:, None], axis=-1)
        best = d.argmin(axis=1)
        rows = np.arange(len(p))
        out_pt[s : s + chunk] = cp[rows, best]
        out_d[s : s + chunk] = d[rows, best]
        out_f[s : s + chunk] = cand[rows, best]
    return out_pt, out_d, out_f


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    phi = (1 + 5**0.5) / 2
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    V = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    F = faces
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        nf = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        F = nf
    mesh = TriMesh(np.array(V) * radius + np.asarray(center, dtype=np.float64), np.array(F))
    return mesh if mesh.signed_volume() > 0 else mesh.flipped()


def box_mesh(lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0)) -> TriMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64)
    v = lo + v * (hi - lo)
    f = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ])
    mesh = TriMesh(v, f)
    return mesh if mesh.signed_volume() > 0 else mesh.flipped()
