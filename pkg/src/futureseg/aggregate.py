"""Size-based score rescoring and fusion of instance forecasts into semantic maps."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .fields import InstanceMask, SemanticMap, check_same_shape

# side-length thresholds at the reference (full Cityscapes) resolution
SMALL_SIDE, SMALL_PENALTY = 64, 0.5
MEDIUM_SIDE, MEDIUM_PENALTY = 128, 0.3
REFERENCE_WIDTH = 2048


def size_scale_for(width: int, reference_width: int = REFERENCE_WIDTH) -> float:
    """Scale factor mapping the reference-resolution thresholds to a working width."""
    return width / reference_width


def rescore(inst: InstanceMask, size_scale: float = 1.0) -> float:
    x0, y0, x1, y1 = inst.bbox
    w, h = x1 - x0, y1 - y0
    s = inst.score
    if w < SMALL_SIDE * size_scale and h < SMALL_SIDE * size_scale:
        s -= SMALL_PENALTY
    elif w < MEDIUM_SIDE * size_scale and h < MEDIUM_SIDE * size_scale:
        s -= MEDIUM_PENALTY
    return min(1.0, max(0.0, s))


def rescored(insts: Sequence[InstanceMask], size_scale: float = 1.0):
    return [i.replace(score=rescore(i, size_scale)) for i in insts]


def fuse_semantic(instances: Sequence[InstanceMask], shape=None) -> SemanticMap:
    """Paint instances in ascending (score, id) order so the best-scored one wins overlaps."""
    if not instances:
        if shape is None:
            raise ValueError("shape required to fuse an empty instance list")
        return SemanticMap.background(*shape)
    h, w = check_same_shape(*[i.mask for i in instances])
    if shape is not None and tuple(shape) != (h, w):
        check_same_shape(np.empty(shape), instances[0].mask)
    labels = np.zeros((h, w), dtype=np.uint8)
    for inst in sorted(instances, key=lambda i: (i.score, i.id)):
        labels[inst.mask] = inst.class_id
    return SemanticMap(labels)
