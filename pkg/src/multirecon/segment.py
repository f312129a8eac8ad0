"""Progressive prompts and the promptable-segmenter plug point.

A prompt for person ``p`` is the rasterized visible mask of p's current mesh
plus point prompts: p's own keypoints that land inside that mask (positive)
and every other person's keypoints that land outside it (negative).
Segmenters are callables ``(image, prompt, frame=..., person=...) -> mask``.
"""
from __future__ import annotations

import json
import logging
import subprocess
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import ndimage

from .io import load_png, save_png
from .mesh import RasterResult

log = logging.getLogger(__name__)


@dataclass
class PromptSet:
    mask: np.ndarray  # [H, W] bool
    positive: np.ndarray  # [K+, 2] int pixels (u, v)
    negative: np.ndarray  # [K-, 2] int pixels (u, v)
    low_confidence: bool = False

    def digest(self) -> int:
        h = zlib.crc32(np.packbits(self.mask).tobytes())
        h = zlib.crc32(self.positive.astype(np.int64).tobytes(), h)
        return zlib.crc32(self.negative.astype(np.int64).tobytes(), h)


def _pixel_set(points: np.ndarray, H: int, W: int) -> np.ndarray:
    """Round to pixel centers, drop invalid/out-of-image points, sort and dedupe."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    pts = pts[np.isfinite(pts).all(axis=1)]
    pix = np.round(pts).astype(np.int64)
    ok = (pix[:, 0] >= 0) & (pix[:, 0] < W) & (pix[:, 1] >= 0) & (pix[:, 1] < H)
    pix = pix[ok]
    if len(pix) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(pix, axis=0)


def build_prompt_set(p: int, masks: np.ndarray, keypoints: list[np.ndarray], occluded: list[np.ndarray] | None = None) -> PromptSet:
    """Prompt for person ``p`` from instance masks [P, H, W] and per-person keypoints [K, 2].

    ``occluded[q]`` flags keypoints hidden behind another person's mesh; they
    never become positive prompts. An empty positive set yields a mask-only
    prompt marked low-confidence.
    """
    masks = np.asarray(masks, dtype=bool)
    H, W = masks.shape[1:]
    own = np.asarray(keypoints[p], dtype=np.float64).reshape(-1, 2)
    if occluded is not None:
        own = own[~np.asarray(occluded[p], dtype=bool)]
    pos = _pixel_set(own, H, W)
    pos = pos[masks[p][pos[:, 1], pos[:, 0]]] if len(pos) else pos
    others = [np.asarray(k, dtype=np.float64).reshape(-1, 2) for q, k in enumerate(keypoints) if q != p]
    neg = _pixel_set(np.concatenate(others) if others else np.zeros((0, 2)), H, W)
    neg = neg[~masks[p][neg[:, 1], neg[:, 0]]] if len(neg) else neg
    return PromptSet(masks[p].copy(), pos, neg, low_confidence=len(pos) == 0)


def keypoint_occlusion(pixels: np.ndarray, depth: np.ndarray, raster: RasterResult, p: int) -> np.ndarray:
    """True where person p's keypoint lies behind another person's surface."""
    H, W = raster.labels.shape
    occ = np.zeros(len(pixels), dtype=bool)
    if raster.depths.shape[0] < 2:
        return occ
    others = np.delete(raster.depths, p, axis=0).min(axis=0)
    for k, (uv, z) in enumerate(zip(pixels, depth)):
        if not np.isfinite(uv).all():
            continue
        u, v = int(round(uv[0])), int(round(uv[1]))
        if 0 <= u < W and 0 <= v < H and others[v, u] < z:
            occ[k] = True
    return occ


class Segmenter(Protocol):
    def __call__(self, image: np.ndarray, prompt: PromptSet, *, frame: int, person: int) -> np.ndarray: ...


def _disk(r: int) -> np.ndarray:
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    return x * x + y * y <= r * r


class OracleSegmenter:
    """Ground-truth stand-in for a promptable segmenter.

    The instance best overlapping the prompt is returned, optionally limited
    to the prompt's neighbourhood (``reach`` pixels around the mask and
    positive points), then perturbed by a random dilation/erosion of radius
    ``radius`` and boundary flips with probability ``flip_prob``, and finally
    snapped to the point prompts.
    """

    def __init__(self, gt_masks: np.ndarray, radius: int = 0, flip_prob: float = 0.0, reach: int | None = None, seed: int = 0):
        self.gt = np.asarray(gt_masks, dtype=bool)  # [F, P, H, W]
        self.radius = int(radius)
        self.flip_prob = float(flip_prob)
        self.reach = None if reach is None else int(reach)
        self.seed = int(seed)

    def _pick(self, frame: int, prompt: PromptSet) -> np.ndarray:
        gts = self.gt[frame]
        inter = (gts & prompt.mask[None]).sum(axis=(1, 2))
        union = (gts | prompt.mask[None]).sum(axis=(1, 2))
        score = inter / np.maximum(union, 1)
        if len(prompt.positive):
            hits = gts[:, prompt.positive[:, 1], prompt.positive[:, 0]].sum(axis=1)
            score = score + 1e-3 * hits  # tie-break by positive points
        if score.max() <= 0:
            return np.zeros_like(prompt.mask)
        return gts[int(np.argmax(score))]

    def __call__(self, image: np.ndarray, prompt: PromptSet, *, frame: int, person: int = 0) -> np.ndarray:
        rng = np.random.default_rng([self.seed, int(frame), int(person), prompt.digest()])
        out = self._pick(frame, prompt).copy()
        if self.reach is not None:
            region = prompt.mask.copy()
            region[prompt.positive[:, 1], prompt.positive[:, 0]] = True
            if self.reach > 0:
                region = ndimage.binary_dilation(region, _disk(self.reach))
            out &= region
        if self.radius > 0:
            op = ndimage.binary_dilation if rng.random() < 0.5 else ndimage.binary_erosion
            out = op(out, _disk(self.radius))
        if self.flip_prob > 0:
            band = ndimage.binary_dilation(out) & ~ndimage.binary_erosion(out)
            flip = band & (rng.random(out.shape) < self.flip_prob)
            out ^= flip
        out[prompt.positive[:, 1], prompt.positive[:, 0]] = True
        out[prompt.negative[:, 1], prompt.negative[:, 0]] = False
        return out


class ExternalSegmenter:
    """Adapter for an out-of-process segmenter.

    For each request it writes ``image.png``, ``prompt_mask.png`` and
    ``prompt.json`` into a scratch directory and runs ``command`` with the
    JSON path appended. The JSON holds::

        {"image": path, "mask": path, "positive": [[u, v], ...],
         "negative": [[u, v], ...], "output": path, "frame": int, "person": int}

    The tool must write a binary PNG mask of the image size to ``output``.
    """

    def __init__(self, command: list[str], workdir=None, timeout: float = 600.0):
        self.command = list(command)
        self.workdir = workdir
        self.timeout = timeout

    def __call__(self, image: np.ndarray, prompt: PromptSet, *, frame: int, person: int = 0) -> np.ndarray:
        with tempfile.TemporaryDirectory(dir=self.workdir) as tmp:
            tmp = Path(tmp)
            save_png(tmp / "image.png", image)
            save_png(tmp / "prompt_mask.png", prompt.mask)
            req = {
                "image": str(tmp / "image.png"),
                "mask": str(tmp / "prompt_mask.png"),
                "positive": prompt.positive.tolist(),
                "negative": prompt.negative.tolist(),
                "output": str(tmp / "output.png"),
                "frame": int(frame),
                "person": int(person),
            }
            (tmp / "prompt.json").write_text(json.dumps(req, indent=2))
            subprocess.run(self.command + [str(tmp / "prompt.json")], check=True, timeout=self.timeout, capture_output=True)
            mask = load_png(tmp / "output.png", as_mask=True)
        if mask.shape != prompt.mask.shape:
            raise ValueError(f"segmenter returned shape {mask.shape}, expected {prompt.mask.shape}")
        return mask


@dataclass
class MaskStore:
    """Per frame, per person: segmenter mask, mesh mask, mesh depth and refresh epoch."""

    sam: np.ndarray  # [F, P, H, W] bool
    mesh: np.ndarray  # [F, P, H, W] bool
    depth: np.ndarray  # [F, P, H, W] float, inf where uncovered
    refresh_epoch: np.ndarray  # [F, P] int, -1 before the first refresh
    stale: np.ndarray = field(default=None)  # [F] bool, segmenter failed at last refresh
    low_confidence: np.ndarray = field(default=None)  # [F, P] bool, no positive prompts

    def __post_init__(self):
        F, P = self.sam.shape[:2]
        if self.stale is None:
            self.stale = np.zeros(F, dtype=bool)
        if self.low_confidence is None:
            self.low_confidence = np.zeros((F, P), dtype=bool)

    @classmethod
    def empty(cls, num_frames: int, num_persons: int, height: int, width: int) -> "MaskStore":
        shape = (num_frames, num_persons, height, width)
        return cls(
            sam=np.zeros(shape, dtype=bool),
            mesh=np.zeros(shape, dtype=bool),
            depth=np.full(shape, np.inf),
            refresh_epoch=np.full((num_frames, num_persons), -1, dtype=np.int64),
        )

    @property
    def num_frames(self) -> int:
        return self.sam.shape[0]

    @property
    def num_persons(self) -> int:
        return self.sam.shape[1]


def refresh_masks(
    store: MaskStore,
    segmenter: Segmenter,
    images: np.ndarray,
    rasters: list[RasterResult],
    keypoints: list[list[tuple[np.ndarray, np.ndarray]]],
    epoch: int,
) -> MaskStore:
    """Re-prompt the segmenter for every frame/person from current meshes.

    ``keypoints[f][p]`` is ``(pixels [K, 2], depth [K])`` for frame f. On a
    segmenter failure the previous mask is kept and the frame marked stale.
    """
    for f, raster in enumerate(rasters):
        store.mesh[f] = raster.masks
        store.depth[f] = raster.depths
        pix = [kp[0] for kp in keypoints[f]]
        occ = [keypoint_occlusion(kp[0], kp[1], raster, p) for p, kp in enumerate(keypoints[f])]
        store.stale[f] = False
        for p in range(store.num_persons):
            prompt = build_prompt_set(p, raster.masks, pix, occ)
            store.low_confidence[f, p] = prompt.low_confidence
            try:
                mask = np.asarray(segmenter(images[f], prompt, frame=f, person=p), dtype=bool)
                if mask.shape != prompt.mask.shape:
                    raise ValueError("segmenter output has the wrong shape")
            except Exception as exc:  # noqa: BLE001 - any failure keeps the old mask
                log.warning("segmenter failed on frame %d person %d: %s", f, p, exc)
                store.stale[f] = True
                continue
            store.sam[f, p] = mask
            store.refresh_epoch[f, p] = epoch
    return store
