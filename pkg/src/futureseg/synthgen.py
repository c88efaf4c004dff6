"""Deterministic generator of moving-object scenes with analytic optical flow.

Objects are rigid rectangles/ellipses that translate with a per-object velocity
(optionally accelerating) and bounce off the frame borders so they stay fully
inside the frame for the whole sequence.  Later objects occlude earlier ones.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .errors import ConfigError, IoError
from .fields import (
    NUM_CLASSES, FlowField, InstanceMask, SemanticMap, SequenceSample,
    flow_read, flow_write, read_label_png, write_label_png,
)

log = logging.getLogger(__name__)

SHAPES = ("rectangle", "ellipse")


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 128
    n_objects: int = 3
    shapes: Tuple[str, ...] = SHAPES
    size_range: Tuple[int, int] = (10, 22)
    # per-axis velocity ranges, px/frame
    velocity_u: Tuple[float, float] = (-3.0, 3.0)
    velocity_v: Tuple[float, float] = (-1.0, 1.0)
    integer_velocity: bool = True
    acceleration: Tuple[float, float] = (0.0, 0.0)
    background_velocity: Tuple[float, float] = (0.0, 0.0)
    score_range: Tuple[float, float] = (0.5, 1.0)
    frames: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ConfigError("frame dimensions must be positive")
        if self.frames < 2:
            raise ConfigError("need at least 2 frames")
        if self.n_objects < 0 or self.n_objects > 255:
            raise ConfigError("n_objects must lie in 0..255")
        lo, hi = self.size_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad size range {self.size_range}")
        if hi > min(self.height, self.width):
            raise ConfigError(
                f"objects up to {hi}px do not fit a {self.height}x{self.width} frame")
        bad = set(self.shapes) - set(SHAPES)
        if bad or not self.shapes:
            raise ConfigError(f"unknown shape kinds {sorted(bad)}")
        for name in ("velocity_u", "velocity_v", "acceleration", "score_range"):
            a, b = getattr(self, name)
            if b < a:
                raise ConfigError(f"{name}: empty range {(a, b)}")
        if not (0.0 <= self.score_range[0] and self.score_range[1] <= 1.0):
            raise ConfigError("score range must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: Dict) -> "SceneConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown scene config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> Dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _stencil(kind: str, h: int, w: int) -> np.ndarray:
    if kind == "rectangle":
        return np.ones((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    return ((yy - cy) / (h / 2.0)) ** 2 + ((xx - cx) / (w / 2.0)) ** 2 <= 1.0


def _reflect(p: float, vel: float, hi: float) -> Tuple[float, float]:
    """Fold position ``p`` back into [0, hi]; flip velocity once per bounce."""
    if hi <= 0:
        return 0.0, 0.0
    period = 2.0 * hi
    q = p % period
    bounces = int(np.floor(p / hi))
    if q > hi:
        q = period - q
    if bounces % 2:
        vel = -vel
    return q, vel


def _round(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class _Object:
    kind: str
    stencil: np.ndarray
    class_id: int
    score: float
    pos: np.ndarray      # (x, y) of top-left corner, real
    vel: np.ndarray      # (u, v)
    acc: np.ndarray

    @property
    def size(self) -> Tuple[int, int]:
        return self.stencil.shape  # (h, w)


def _sample_objects(cfg: SceneConfig, rng: np.random.Generator) -> List[_Object]:
    objs = []
    for _ in range(cfg.n_objects):
        kind = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
        h = int(rng.integers(cfg.size_range[0], cfg.size_range[1] + 1))
        w = int(rng.integers(cfg.size_range[0], cfg.size_range[1] + 1))
        class_id = int(rng.integers(1, NUM_CLASSES + 1))
        score = round(float(rng.uniform(*cfg.score_range)), 4)
        if cfg.integer_velocity:
            vel = np.array([
                rng.integers(int(np.ceil(cfg.velocity_u[0])), int(np.floor(cfg.velocity_u[1])) + 1),
                rng.integers(int(np.ceil(cfg.velocity_v[0])), int(np.floor(cfg.velocity_v[1])) + 1),
            ], dtype=float)
            pos = np.array([rng.integers(0, cfg.width - w + 1),
                            rng.integers(0, cfg.height - h + 1)], dtype=float)
        else:
            vel = np.array([rng.uniform(*cfg.velocity_u), rng.uniform(*cfg.velocity_v)])
            pos = np.array([rng.uniform(0, cfg.width - w), rng.uniform(0, cfg.height - h)])
        acc = rng.uniform(cfg.acceleration[0], cfg.acceleration[1], size=2)
        objs.append(_Object(kind, _stencil(kind, h, w), class_id, score, pos, vel, acc))
    return objs


def _trajectories(cfg: SceneConfig, objs: List[_Object]) -> np.ndarray:
    """Integer top-left raster positions, shape (frames, n_objects, 2) as (x, y)."""
    out = np.zeros((cfg.frames, len(objs), 2), dtype=np.int64)
    for j, o in enumerate(objs):
        h, w = o.size
        pos, vel = o.pos.copy(), o.vel.copy()
        for t in range(cfg.frames):
            out[t, j] = (_round(pos[0]), _round(pos[1]))
            vel = vel + o.acc
            x, vel[0] = _reflect(pos[0] + vel[0], vel[0], cfg.width - w)
            y, vel[1] = _reflect(pos[1] + vel[1], vel[1], cfg.height - h)
            pos = np.array([x, y])
    return out


def render_ownership(cfg: SceneConfig, objs: List[_Object], positions: np.ndarray) -> np.ndarray:
    """Per-pixel owner index (0 = background, j + 1 = object j), painted back to front."""
    owner = np.zeros((cfg.height, cfg.width), dtype=np.int64)
    for j, o in enumerate(objs):
        h, w = o.size
        x, y = positions[j]
        region = owner[y:y + h, x:x + w]
        region[o.stencil] = j + 1
    return owner


def generate(config: SceneConfig) -> SequenceSample:
    config.validate()
    rng = np.random.default_rng(config.seed)
    objs = _sample_objects(config, rng)
    traj = _trajectories(config, objs)
    owners = [render_ownership(config, objs, traj[t]) for t in range(config.frames)]

    instances, semantics = [], []
    class_lut = np.array([0] + [o.class_id for o in objs], dtype=np.uint8)
    for t in range(config.frames):
        frame = []
        for j, o in enumerate(objs):
            m = owners[t] == j + 1
            if m.any():
                frame.append(InstanceMask(id=j + 1, class_id=o.class_id, score=o.score, mask=m))
        instances.append(frame)
        semantics.append(SemanticMap(class_lut[owners[t]]))

    flows = []
    bu, bv = config.background_velocity
    for t in range(config.frames - 1):
        disp = (traj[t + 1] - traj[t]).astype(np.float32)  # (n, 2)
        lut_u = np.concatenate([[bu], disp[:, 0]]).astype(np.float32)
        lut_v = np.concatenate([[bv], disp[:, 1]]).astype(np.float32)
        flows.append(FlowField(lut_u[owners[t]], lut_v[owners[t]]))

    meta = {"seed": config.seed, "config": config.to_dict(),
            "objects": [{"id": j + 1, "shape": o.kind, "height": o.size[0], "width": o.size[1],
                         "class_id": o.class_id, "score": o.score} for j, o in enumerate(objs)],
            "positions": traj.tolist()}
    return SequenceSample(flows=flows, instances=instances, semantics=semantics, meta=meta)


# ---------------------------------------------------------------------------
# on-disk dataset


def split_of(seed: int) -> str:
    return "train" if seed % 2 == 0 else "val"


def _write_sequence(sample: SequenceSample, seq_dir: Path, rel: Path) -> Dict:
    seq_dir.mkdir(parents=True, exist_ok=True)
    rec = {"flows": [], "instance_maps": [], "semantics": []}
    for i, f in enumerate(sample.flows):
        name = f"flow_{i:03d}.flo"
        flow_write(f, seq_dir / name)
        rec["flows"].append(str(rel / name))
    objects = []
    for t in range(sample.frames):
        idmap = np.zeros(sample.shape, dtype=np.uint8)
        for inst in sample.instances[t]:
            idmap[inst.mask] = inst.id
        name = f"inst_{t:03d}.png"
        write_label_png(idmap, seq_dir / name)
        rec["instance_maps"].append(str(rel / name))
        name = f"sem_{t:03d}.png"
        write_label_png(sample.semantics[t].labels, seq_dir / name)
        rec["semantics"].append(str(rel / name))
        objects.append([{"id": i.id, "class_id": i.class_id, "score": i.score}
                        for i in sample.instances[t]])
    name = "objects.json"
    (seq_dir / name).write_text(json.dumps(objects, sort_keys=True) + "\n")
    rec["objects"] = str(rel / name)
    return rec


def emit_dataset(config: SceneConfig, n_sequences: int, out_dir) -> List[Dict]:
    """Write ``n_sequences`` scenes (seeds ``config.seed + i``) plus ``manifest.jsonl``."""
    out = Path(out_dir)
    records = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for i in range(n_sequences):
            seed = config.seed + i
            sample = generate(replace(config, seed=seed))
            rel = Path(f"seq_{seed:06d}")
            rec = {"seed": seed, "split": split_of(seed), "frames": sample.frames,
                   "height": config.height, "width": config.width,
                   "config": replace(config, seed=seed).to_dict()}
            rec.update(_write_sequence(sample, out / rel, rel))
            records.append(rec)
            log.info("wrote sequence seed=%d split=%s", seed, rec["split"])
        with open(out / "manifest.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as e:
        raise IoError(f"dataset emission failed under {out}: {e}") from e
    return records


def read_manifest(path) -> List[Dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise IoError(f"cannot read manifest {path}: {e}") from e
    return [json.loads(line) for line in lines if line.strip()]


def load_sequence(record: Dict, root) -> SequenceSample:
    root = Path(root)
    if root.is_file():
        root = root.parent
    flows = [flow_read(root / p) for p in record["flows"]]
    semantics = [SemanticMap(read_label_png(root / p)) for p in record["semantics"]]
    objects = json.loads((root / record["objects"]).read_text())
    instances = []
    for p, objs in zip(record["instance_maps"], objects):
        idmap = read_label_png(root / p)
        instances.append([InstanceMask(o["id"], o["class_id"], o["score"], idmap == o["id"])
                          for o in objs])
    return SequenceSample(flows=flows, instances=instances, semantics=semantics,
                          meta={"seed": record["seed"], "config": record.get("config")})


def load_dataset(manifest, split: str = None) -> List[SequenceSample]:
    recs = read_manifest(manifest)
    root = Path(manifest)
    root = root if root.is_dir() else root.parent
    return [load_sequence(r, root) for r in recs if split is None or r["split"] == split]


def generate_split(config: SceneConfig, n_sequences: int) -> Tuple[List[SequenceSample], List[SequenceSample]]:
    """In-memory equivalent of :func:`emit_dataset` returning (train, val)."""
    train, val = [], []
    for i in range(n_sequences):
        seed = config.seed + i
        s = generate(replace(config, seed=seed))
        (train if split_of(seed) == "train" else val).append(s)
    return train, val
