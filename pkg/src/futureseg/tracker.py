"""Greedy bounding-box IoU association of per-frame detections into tracks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Sequence, Tuple

from .errors import ConfigError
from .fields import InstanceMask, SequenceSample, bbox_iou, check_same_shape

TrackId = Tuple[int, int]  # (birth frame, index of the detection in that frame)


@dataclass(frozen=True)
class TrackerConfig:
    iou_threshold: float = 0.3
    same_class_only: bool = True

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")


class Association(NamedTuple):
    pairs: List[Tuple[int, int]]
    unmatched_prev: List[int]
    unmatched_next: List[int]


def associate(prev: Sequence[InstanceMask], next: Sequence[InstanceMask],
              cfg: TrackerConfig = TrackerConfig()) -> Association:
    """One-to-one matching, greedily taking candidate pairs by descending box IoU.

    Ties are broken by ``(prev_idx, next_idx)``.  Pairs below the threshold are
    never linked.
    """
    if prev or next:
        check_same_shape(*[i.mask for i in list(prev) + list(next)])
    prev_boxes = [p.bbox for p in prev]
    next_boxes = [n.bbox for n in next]
    cands = []
    for i, p in enumerate(prev):
        for j, n in enumerate(next):
            if cfg.same_class_only and p.class_id != n.class_id:
                continue
            iou = bbox_iou(prev_boxes[i], next_boxes[j])
            if iou >= cfg.iou_threshold and iou > 0.0:
                cands.append((-iou, i, j))
    cands.sort()
    used_p, used_n, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_p or j in used_n:
            continue
        used_p.add(i)
        used_n.add(j)
        pairs.append((i, j))
    pairs.sort()
    return Association(
        pairs,
        [i for i in range(len(prev)) if i not in used_p],
        [j for j in range(len(next)) if j not in used_n],
    )


def build_tracks(sample: SequenceSample,
                 cfg: TrackerConfig = TrackerConfig()) -> Dict[TrackId, Dict[int, int]]:
    """Chain frame-to-frame associations. Returns ``track id -> {frame: detection index}``.

    A track that misses a frame ends; a later detection starts a new track.
    """
    tracks: Dict[TrackId, Dict[int, int]] = {}
    live: Dict[int, TrackId] = {}  # detection index in current frame -> track
    for t, dets in enumerate(sample.instances):
        if t == 0:
            nxt = {}
            for j in range(len(dets)):
                tid = (0, j)
                tracks[tid] = {0: j}
                nxt[j] = tid
            live = nxt
            continue
        assoc = associate(sample.instances[t - 1], dets, cfg)
        nxt = {}
        for i, j in assoc.pairs:
            tid = live[i]
            tracks[tid][t] = j
            nxt[j] = tid
        for j in assoc.unmatched_next:
            tid = (t, j)
            tracks[tid] = {t: j}
            nxt[j] = tid
        live = nxt
    return tracks


def successor_map(sample: SequenceSample, cfg: TrackerConfig = TrackerConfig()
                  ) -> Dict[Tuple[int, int], int]:
    """``(frame, detection index) -> detection index in frame + 1`` for tracked pairs."""
    succ = {}
    for frames in build_tracks(sample, cfg).values():
        for t, j in frames.items():
            if t + 1 in frames:
                succ[(t, j)] = frames[t + 1]
    return succ
