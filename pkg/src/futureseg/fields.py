"""Grid-valued domain types, box/mask geometry and the binary flow container.

Conventions used everywhere in the package:

* grids are row-major numpy arrays indexed ``[y, x]``, origin top-left, y down;
* ``flows[i]`` of a sequence is the *forward* flow mapping pixel positions of
  frame ``i`` to frame ``i + 1``;
* bounding boxes are ``(x0, y0, x1, y1)`` with exclusive upper corners, so a
  single pixel at ``(x, y)`` has box ``(x, y, x + 1, y + 1)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import FormatError, IoError, ShapeError

NUM_CLASSES = 8
CLASS_NAMES = ("person", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle")

FLOW_MAGIC = b"PIEH"
_HEADER = struct.Struct("<4sii")

BBox = Tuple[int, int, int, int]
EMPTY_BOX: BBox = (0, 0, 0, 0)


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = _frozen(self.u, np.float32)
        v = _frozen(self.v, np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise ShapeError(f"u/v shapes differ or are not 2-D: {u.shape} vs {v.shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("flow field contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.u.shape

    def to_array(self) -> np.ndarray:
        """(2, H, W) float32 array, channel order (u, v)."""
        return np.stack([self.u, self.v])

    @classmethod
    def from_array(cls, a) -> "FlowField":
        a = np.asarray(a)
        if a.ndim != 3 or a.shape[0] != 2:
            raise ShapeError(f"expected (2, H, W) array, got {a.shape}")
        return cls(a[0], a[1])

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        z = np.zeros((height, width), np.float32)
        return cls(z, z)

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.u, other.u)
                and np.array_equal(self.v, other.v))

    __hash__ = None


def tight_bbox(mask: np.ndarray) -> BBox:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return EMPTY_BOX
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


@dataclass(frozen=True)
class InstanceMask:
    id: int
    class_id: int
    score: float
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {m.shape}")
        if m.dtype != np.bool_:
            if not np.isin(m, (0, 1)).all():
                raise ValueError("mask entries must be 0 or 1")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if not 1 <= self.class_id <= NUM_CLASSES:
            raise ValueError(f"class_id {self.class_id} outside 1..{NUM_CLASSES}")
        object.__setattr__(self, "mask", _frozen(m, np.bool_))
        object.__setattr__(self, "score", float(self.score))

    @property
    def bbox(self) -> BBox:
        return tight_bbox(self.mask)

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    @property
    def empty(self) -> bool:
        return not self.mask.any()

    def replace(self, **changes) -> "InstanceMask":
        kw = dict(id=self.id, class_id=self.class_id, score=self.score, mask=self.mask)
        kw.update(changes)
        return InstanceMask(**kw)


@dataclass(frozen=True)
class SemanticMap:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ShapeError(f"labels must be 2-D, got {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() > NUM_CLASSES):
            raise ValueError(f"labels must lie in 0..{NUM_CLASSES}")
        object.__setattr__(self, "labels", _frozen(lab, np.uint8))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    @classmethod
    def background(cls, height: int, width: int) -> "SemanticMap":
        return cls(np.zeros((height, width), np.uint8))


@dataclass(frozen=True)
class SequenceSample:
    flows: List[FlowField]
    instances: List[List[InstanceMask]]
    semantics: List[SemanticMap]
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.semantics)
        if len(self.instances) != n or len(self.flows) != n - 1:
            raise ShapeError(
                f"need L semantic maps, L instance lists and L-1 flows; got "
                f"{n}, {len(self.instances)}, {len(self.flows)}")
        shape = self.semantics[0].shape if n else None
        for f in self.flows:
            if f.shape != shape:
                raise ShapeError(f"flow shape {f.shape} != frame shape {shape}")
        for s in self.semantics:
            if s.shape != shape:
                raise ShapeError(f"semantic shape {s.shape} != frame shape {shape}")
        for frame in self.instances:
            for inst in frame:
                if inst.mask.shape != shape:
                    raise ShapeError(f"mask shape {inst.mask.shape} != frame shape {shape}")
        object.__setattr__(self, "flows", list(self.flows))
        object.__setattr__(self, "instances", [list(f) for f in self.instances])
        object.__setattr__(self, "semantics", list(self.semantics))

    @property
    def frames(self) -> int:
        return len(self.semantics)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.semantics[0].shape

    def flow_array(self) -> np.ndarray:
        """(L-1, 2, H, W) float32 stack of all flows."""
        return np.stack([f.to_array() for f in self.flows])


# ---------------------------------------------------------------------------
# flow container


def flow_to_bytes(field: FlowField) -> bytes:
    h, w = field.shape
    payload = np.empty((h, w, 2), dtype="<f4")
    payload[..., 0] = field.u
    payload[..., 1] = field.v
    return _HEADER.pack(FLOW_MAGIC, w, h) + payload.tobytes(order="C")


def flow_from_bytes(data: bytes) -> FlowField:
    if len(data) < _HEADER.size:
        raise FormatError("file shorter than the 12-byte header")
    magic, w, h = _HEADER.unpack_from(data)
    if magic != FLOW_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FLOW_MAGIC!r}")
    if w <= 0 or h <= 0:
        raise FormatError(f"nonpositive dimensions {w}x{h}")
    need = _HEADER.size + 8 * w * h
    if len(data) < need:
        raise FormatError(f"truncated payload: {len(data)} bytes, need {need}")
    if len(data) > need:
        raise FormatError(f"trailing bytes after payload: {len(data)} > {need}")
    a = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w, 2)
    return FlowField(a[..., 0].astype(np.float32), a[..., 1].astype(np.float32))


def flow_write(field: FlowField, path) -> None:
    try:
        Path(path).write_bytes(flow_to_bytes(field))
    except OSError as e:
        raise IoError(f"cannot write flow file {path}: {e}") from e


def flow_read(path) -> FlowField:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read flow file {path}: {e}") from e
    return flow_from_bytes(data)


# ---------------------------------------------------------------------------
# label images (8-bit, lossless)


def write_label_png(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("labels must fit in 8 bits")
    try:
        Image.fromarray(labels.astype(np.uint8), mode="L").save(path, format="PNG")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_label_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise FormatError(f"{path}: expected single-channel 8-bit image, got {im.mode}")
            return np.array(im, dtype=np.uint8)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


# ---------------------------------------------------------------------------
# geometry


def box_area(b: BBox) -> int:
    return max(0, b[2] - b[0]) * max(0, b[3] - b[1])


def bbox_iou(a: BBox, b: BBox) -> float:
    area_a, area_b = box_area(a), box_area(b)
    if area_a == 0 or area_b == 0:
        return 0.0
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two binary grids; two empty grids count as a perfect match."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def check_same_shape(*grids: Sequence) -> Tuple[int, int]:
    shapes = {tuple(np.shape(g)[-2:]) for g in grids}
    if len(shapes) != 1:
        raise ShapeError(f"grids do not share one shape: {sorted(shapes)}")
    return shapes.pop()
