"""Frame reliability from agreement between mesh masks and segmenter masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..segment import MaskStore


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two binary masks; two empty masks agree perfectly."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


@dataclass
class ConfidenceRecord:
    iou: np.ndarray  # [F, P]
    alpha: float
    reliable: np.ndarray  # [F] bool

    @property
    def scores(self) -> np.ndarray:
        return self.iou.mean(axis=1)

    @property
    def reliable_frames(self) -> list[int]:
        return [int(i) for i in np.nonzero(self.reliable)[0]]

    @property
    def unreliable_frames(self) -> list[int]:
        return [int(i) for i in np.nonzero(~self.reliable)[0]]

    @classmethod
    def all_reliable(cls, num_frames: int, num_persons: int) -> "ConfidenceRecord":
        return cls(np.ones((num_frames, num_persons)), 1.0, np.ones(num_frames, dtype=bool))


def confidence_from_scores(iou: np.ndarray) -> ConfidenceRecord:
    """Threshold at the median per-frame mean IoU; frames at or above it are reliable."""
    iou = np.asarray(iou, dtype=np.float64)
    scores = iou.mean(axis=1)
    alpha = float(np.median(scores))
    return ConfidenceRecord(iou, alpha, scores >= alpha)


def compute_confidence_split(store: MaskStore) -> ConfidenceRecord:
    F, P = store.num_frames, store.num_persons
    iou = np.array([[mask_iou(store.mesh[f, p], store.sam[f, p]) for p in range(P)] for f in range(F)]).reshape(F, P)
    return confidence_from_scores(iou)
