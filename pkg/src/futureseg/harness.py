"""Experiment orchestration.

Builds the synthetic dataset, trains (or loads) the flow forecaster, runs the
two-stage MaskNet schedule, forecasts instances ``n`` frames past an anchor
frame and scores them.  Expensive intermediate products (the dataset, the
forecaster, forecast flows, pretrained warpers) live in a :class:`Workbench`
so that a grid of related configurations shares them.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .aggregate import fuse_semantic, rescore, size_scale_for
from .errors import ConfigError
from .fields import FlowField, InstanceMask, SemanticMap, SequenceSample
from .masknet import (
    MaskNet, MaskTrainConfig, PairSet, WarperConfig, add_track_pairs, load_masknet, oracle_pairs,
    predict_mask, prepare_input, train_masknet, train_masknet_finetune,
)
from .metrics import average_precision, dataset_semantic_iou, flow_mse, mean_flow_mse
from .ofnet import (
    FlowTrainConfig, ForecasterConfig, OFNet, load_ofnet, rollout_array, teacher_forced_array,
    train_ofnet,
)
from .synthgen import SceneConfig, generate_split, load_dataset
from .tracker import TrackerConfig
from .warpop import compose_flows, copy_last, shift_iterated, warp_iterated

log = logging.getLogger(__name__)

HORIZONS = {"short": 3, "mid": 9}
FEEDINGS = ("autoregressive", "teacher_forced", "oracle")
METHODS = ("masknet", "copy", "shift", "warp")
WARP_MODES = ("per_step", "single_shot")
REGIMES = ("warp", "pretrain_only", "predicted_only", "pretrain_ft3", "pretrain_ft2")
ROLLOUT_CHUNK = 8
REPORT_VERSION = 1


def _section(cls, d):
    if d is None:
        return cls()
    if isinstance(d, cls):
        return d
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__} section must be a mapping")
    if hasattr(cls, "from_dict"):
        return cls.from_dict(d)
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    horizon: Union[str, int] = "short"
    method: str = "masknet"
    # MaskNet stages: pretrain on ground-truth flows, then finetune on forecast flows
    pretrain: bool = True
    finetune: bool = True
    finetune_layers: Union[int, str] = 2
    finetune_epochs: int = 3
    finetune_feeding: str = "autoregressive"
    # flows handed to the warper at evaluation time
    flow_feeding: str = "autoregressive"
    warp_mode: str = "per_step"
    seeds: Tuple[int, ...] = (0, 1, 2)
    # dataset: a manifest path, or a generated split of n_sequences seeds
    data: Optional[str] = None
    n_sequences: int = 200
    mask_train_sequences: Optional[int] = None
    eval_sequences: Optional[int] = None
    scene: SceneConfig = field(default_factory=SceneConfig)
    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)
    flow_train: FlowTrainConfig = field(default_factory=FlowTrainConfig)
    warper: WarperConfig = field(default_factory=WarperConfig)
    mask_train: MaskTrainConfig = field(default_factory=MaskTrainConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    ofnet_checkpoint: Optional[str] = None
    masknet_checkpoint: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.horizon, str) and self.horizon not in HORIZONS:
            raise ConfigError(f"horizon must be one of {sorted(HORIZONS)} or a step count")
        if isinstance(self.horizon, int) and self.horizon < 1:
            raise ConfigError("horizon must be >= 1 step")
        for name, value, allowed in (("method", self.method, METHODS),
                                     ("flow_feeding", self.flow_feeding, FEEDINGS),
                                     ("finetune_feeding", self.finetune_feeding, FEEDINGS[:2]),
                                     ("warp_mode", self.warp_mode, WARP_MODES)):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if self.method == "masknet" and not (self.pretrain or self.finetune
                                             or self.masknet_checkpoint):
            raise ConfigError("masknet needs a pretrain stage, a finetune stage or a checkpoint")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def steps(self) -> int:
        return HORIZONS[self.horizon] if isinstance(self.horizon, str) else int(self.horizon)

    @classmethod
    def from_dict(cls, d: Dict) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        for key, sub in (("scene", SceneConfig), ("forecaster", ForecasterConfig),
                         ("flow_train", FlowTrainConfig), ("warper", WarperConfig),
                         ("mask_train", MaskTrainConfig), ("tracker", TrackerConfig)):
            if key in d:
                d[key] = _section(sub, d[key])
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> Dict:
        return json.loads(json.dumps(asdict(self)))


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(raw or {})


# ---------------------------------------------------------------------------
# flow forecasts


def forecast_flows(model: Optional[OFNet], samples: Sequence[SequenceSample], anchor: int,
                   n: int, feeding: str = "autoregressive") -> np.ndarray:
    """Flows for transitions ``anchor .. anchor+n-1`` of every sample, (B, n, 2, H, W).

    ``autoregressive`` rolls the forecaster out from the T ground-truth flows
    before the anchor, ``teacher_forced`` gives one-step forecasts from
    ground-truth windows only, ``oracle`` returns the ground truth itself.
    """
    if feeding not in FEEDINGS:
        raise ConfigError(f"unknown flow feeding {feeding!r}")
    if not samples:
        return np.zeros((0, n, 2, 0, 0), np.float32)
    if anchor + n > samples[0].frames - 1:
        raise ConfigError(f"anchor {anchor} + {n} steps runs past {samples[0].frames} frames")
    out = []
    for c0 in range(0, len(samples), ROLLOUT_CHUNK):
        flows = np.stack([s.flow_array() for s in samples[c0:c0 + ROLLOUT_CHUNK]])
        if feeding == "oracle":
            out.append(flows[:, anchor:anchor + n])
            continue
        if model is None:
            raise ConfigError("forecast flows need a trained OFNet")
        T = model.cfg.T
        if anchor < T:
            raise ConfigError(f"anchor {anchor} leaves fewer than T={T} past flows")
        if feeding == "autoregressive":
            out.append(rollout_array(model, flows[:, anchor - T:anchor], n))
        else:
            out.append(teacher_forced_array(model, flows, anchor, n))
    return np.concatenate(out).astype(np.float32)


def _fields(arr: np.ndarray) -> List[FlowField]:
    return [FlowField(f[0], f[1]) for f in arr]


def forecast_pairs(samples: Sequence[SequenceSample], flows: np.ndarray, anchor: int,
                   tracker: TrackerConfig = TrackerConfig()) -> PairSet:
    """Ground-truth masks paired with forecast flows for the steps after ``anchor``."""
    pairs = PairSet()
    for s, arr in zip(samples, flows):
        add_track_pairs(pairs, s, {anchor + k: f for k, f in enumerate(_fields(arr))}, tracker)
    return pairs


# ---------------------------------------------------------------------------
# instance forecasting


def _masknet_step(model: MaskNet, insts: List[InstanceMask], flow: FlowField,
                  sem: SemanticMap) -> List[InstanceMask]:
    if not insts:
        return []
    x = np.stack([prepare_input(flow, sem, i) for i in insts])
    _, masks = predict_mask(model, x)
    return [i.replace(mask=m) for i, m in zip(insts, masks) if m.any()]


def forecast_instances(sample: SequenceSample, anchor: int, flows: Sequence[FlowField],
                       method: str = "masknet", model: Optional[MaskNet] = None,
                       warp_mode: str = "per_step", size_scale: float = 1.0
                       ) -> List[InstanceMask]:
    """Move every instance of frame ``anchor`` forward ``len(flows)`` frames.

    Returned instances carry the size-rescored confidence; empty ones are dropped.
    """
    insts = [i for i in sample.instances[anchor] if not i.empty]
    if method == "copy":
        out = [copy_last(i) for i in insts]
    elif method == "shift":
        out = [shift_iterated(i, flows) for i in insts]
    elif method == "warp":
        out = [warp_iterated(i, flows) for i in insts]
    elif method == "masknet":
        if model is None:
            raise ConfigError("masknet forecasting needs a model")
        if warp_mode == "single_shot":
            out = _masknet_step(model, insts, compose_flows(flows), sample.semantics[anchor])
        else:
            out, sem = insts, sample.semantics[anchor]
            for k, flow in enumerate(flows):
                out = _masknet_step(model, out, flow, sem)
                if k + 1 < len(flows):
                    sem = fuse_semantic(_rescored(out, size_scale), sample.shape)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return _rescored([i for i in out if not i.empty], size_scale)


def _rescored(insts, size_scale):
    return [i.replace(score=rescore(i, size_scale)) for i in insts]


# ---------------------------------------------------------------------------
# shared state


def _shared_key(cfg: ExperimentConfig) -> str:
    keep = ("data", "n_sequences", "mask_train_sequences", "eval_sequences", "scene",
            "forecaster", "flow_train", "warper", "mask_train", "tracker", "ofnet_checkpoint")
    d = cfg.to_dict()
    return json.dumps({k: d[k] for k in keep}, sort_keys=True)


class Workbench:
    """Caches everything that several configurations of one grid have in common."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.key = _shared_key(cfg)
        self._split = None
        self._ofnet = None
        self.ofnet_history = None
        self._flows: Dict[Tuple[str, str], np.ndarray] = {}
        self._models: Dict[str, MaskNet] = {}
        self.histories: Dict[str, Dict] = {}

    def check(self, cfg: ExperimentConfig) -> None:
        if _shared_key(cfg) != self.key:
            raise ConfigError("configuration does not share data/forecaster settings "
                              "with this workbench")

    @property
    def anchor(self) -> int:
        return self.cfg.forecaster.T

    def _load(self):
        if self._split is None:
            cfg = self.cfg
            if cfg.data:
                train, val = load_dataset(cfg.data, "train"), load_dataset(cfg.data, "val")
            else:
                train, val = generate_split(cfg.scene, cfg.n_sequences)
            if cfg.eval_sequences is not None:
                val = val[:cfg.eval_sequences]
            self._split = {"train": train, "val": val,
                           "mask_train": train[:cfg.mask_train_sequences]}
            log.info("dataset: %d train, %d val sequences", len(train), len(val))
        return self._split

    def samples(self, split: str) -> List[SequenceSample]:
        return self._load()[split]

    @property
    def size_scale(self) -> float:
        return size_scale_for(self.samples("val")[0].shape[1])

    def ofnet(self) -> OFNet:
        if self._ofnet is None:
            if self.cfg.ofnet_checkpoint:
                if not Path(self.cfg.ofnet_checkpoint).exists():
                    raise ConfigError(f"missing OFNet checkpoint {self.cfg.ofnet_checkpoint}")
                self._ofnet = load_ofnet(self.cfg.ofnet_checkpoint)
            else:
                self._ofnet, self.ofnet_history = train_ofnet(
                    self.samples("train"), self.cfg.forecaster, self.cfg.flow_train)
        return self._ofnet

    def flows(self, split: str, n: int, feeding: str) -> np.ndarray:
        key = (split, feeding)
        have = self._flows.get(key)
        if have is None or have.shape[1] < n:
            model = None if feeding == "oracle" else self.ofnet()
            n_max = max(n, max(HORIZONS.values()))
            n_max = min(n_max, self.samples(split)[0].frames - 1 - self.anchor)
            self._flows[key] = forecast_flows(model, self.samples(split), self.anchor,
                                              max(n, n_max), feeding)
        return self._flows[key][:, :n]

    def _cached(self, key: str, build):
        if key not in self._models:
            model, history = build()
            self._models[key] = model
            self.histories[key] = history
        return self._models[key]

    def pretrained(self, seed: int) -> MaskNet:
        def build():
            model = MaskNet(replace(self.cfg.warper, seed=seed))
            pairs = oracle_pairs(self.samples("mask_train"), self.cfg.tracker)
            hist = train_masknet(model, pairs, replace(self.cfg.mask_train, seed=seed), "all")
            return model, hist
        return self._cached(f"pretrain/{seed}", build)

    def mask_model(self, cfg: ExperimentConfig, seed: int) -> MaskNet:
        if cfg.masknet_checkpoint:
            if not Path(cfg.masknet_checkpoint).exists():
                raise ConfigError(f"missing MaskNet checkpoint {cfg.masknet_checkpoint}")
            return load_masknet(cfg.masknet_checkpoint)
        if not cfg.finetune:
            return self.pretrained(seed)
        key = (f"finetune/{seed}/pre={cfg.pretrain}/n={cfg.steps}/{cfg.finetune_feeding}"
               f"/layers={cfg.finetune_layers}/epochs={cfg.finetune_epochs}")

        def build():
            base = (self.pretrained(seed) if cfg.pretrain
                    else MaskNet(replace(self.cfg.warper, seed=seed)))
            flows = self.flows("mask_train", cfg.steps, cfg.finetune_feeding)
            pairs = forecast_pairs(self.samples("mask_train"), flows, self.anchor, cfg.tracker)
            hyper = replace(self.cfg.mask_train, seed=seed, epochs=cfg.finetune_epochs)
            return train_masknet_finetune(base, pairs, hyper, cfg.finetune_layers)
        return self._cached(key, build)


# ---------------------------------------------------------------------------
# pipelines


def predict_split(cfg: ExperimentConfig, bench: Workbench, seed: int):
    """Forecast instances for every evaluation sequence.

    Returns ``(pred_instances, pred_semantics, gt_instances, gt_semantics)``.
    """
    bench.check(cfg)
    val = bench.samples("val")
    n, anchor = cfg.steps, bench.anchor
    flows = bench.flows("val", n, cfg.flow_feeding) if cfg.method != "copy" else None
    model = bench.mask_model(cfg, seed) if cfg.method == "masknet" else None
    scale = bench.size_scale
    preds, sems, gts, gt_sems = [], [], [], []
    for i, s in enumerate(val):
        fl = _fields(flows[i]) if flows is not None else []
        out = forecast_instances(s, anchor, fl if fl else [None] * n, cfg.method, model,
                                 cfg.warp_mode, scale)
        preds.append(out)
        sems.append(fuse_semantic(out, s.shape))
        gts.append(s.instances[anchor + n])
        gt_sems.append(s.semantics[anchor + n])
    return preds, sems, gts, gt_sems


def score(preds, sems, gts, gt_sems) -> Dict:
    ap = average_precision(preds, gts)
    iou = dataset_semantic_iou(sems, gt_sems)
    return {"ap": ap.ap, "ap50": ap.ap50, "iou": iou["mean"],
            "per_class_iou": {str(c): v for c, v in iou["per_class"].items()}}


def _summary(per_seed: Dict[str, Dict]) -> Tuple[Dict, Dict]:
    keys = ("ap", "ap50", "iou")
    vals = {k: [per_seed[s][k] for s in per_seed] for k in keys}
    mean = {k: float(np.mean(v)) for k, v in vals.items()}
    std = {k: float(np.std(v)) for k, v in vals.items()}
    return mean, std


def run_pipeline(cfg: ExperimentConfig, bench: Optional[Workbench] = None) -> Dict:
    """Forecast and score one configuration over all of its seeds."""
    bench = bench or Workbench(cfg)
    per_seed = {}
    seeds = cfg.seeds if cfg.method == "masknet" and not cfg.masknet_checkpoint else cfg.seeds[:1]
    for seed in seeds:
        per_seed[str(seed)] = score(*predict_split(cfg, bench, seed))
        log.info("%s seed %d: %s", cfg.name, seed,
                 {k: round(v, 4) for k, v in per_seed[str(seed)].items() if k != "per_class_iou"})
    mean, std = _summary(per_seed)
    report = {"version": REPORT_VERSION, "name": cfg.name, "config": cfg.to_dict(),
              "steps": cfg.steps, "seeds": per_seed, "mean": mean, "std": std}
    if cfg.method != "copy":
        gt = bench.flows("val", cfg.steps, "oracle")
        pred = bench.flows("val", cfg.steps, cfg.flow_feeding)
        report["flow_mse"] = mean_flow_mse(
            [flow_mse(_fields(p), _fields(g)) for p, g in zip(pred, gt)])
    return report


def regime_config(base: ExperimentConfig, regime: str, horizon) -> ExperimentConfig:
    """One row of the training-regime comparison."""
    common = dict(horizon=horizon, name=f"{regime}/{horizon}", masknet_checkpoint=None)
    if regime == "warp":
        return replace(base, method="warp", **common)
    if regime == "pretrain_only":
        return replace(base, method="masknet", pretrain=True, finetune=False, **common)
    if regime == "predicted_only":
        return replace(base, method="masknet", pretrain=False, finetune=True,
                       finetune_layers="all", finetune_epochs=base.mask_train.epochs, **common)
    if regime in ("pretrain_ft3", "pretrain_ft2"):
        return replace(base, method="masknet", pretrain=True, finetune=True,
                       finetune_layers=int(regime[-1]), **common)
    raise ConfigError(f"unknown regime {regime!r}")


def ablation_configs(base: ExperimentConfig, horizons=("short", "mid")) -> List[ExperimentConfig]:
    return [regime_config(base, r, h) for r in REGIMES for h in horizons]


def run_ablation_grid(cfgs: Union[ExperimentConfig, Sequence[ExperimentConfig]],
                      bench: Optional[Workbench] = None) -> Dict:
    """Score every regime/horizon configuration on shared data and seeds.

    Passing a single configuration expands it into the standard five regimes.
    """
    if isinstance(cfgs, ExperimentConfig):
        cfgs = ablation_configs(cfgs)
    cfgs = list(cfgs)
    if not cfgs:
        raise ConfigError("empty grid")
    seeds = {c.seeds for c in cfgs}
    if len(seeds) != 1:
        raise ConfigError("all grid rows must use the same seeds")
    bench = bench or Workbench(cfgs[0])
    rows: Dict[str, Dict[str, Dict]] = {}
    for c in cfgs:
        regime, _, horizon = c.name.partition("/")
        rep = run_pipeline(c, bench)
        rows.setdefault(regime, {})[horizon or str(c.horizon)] = {
            k: rep[k] for k in ("steps", "seeds", "mean", "std")}
    return {"version": REPORT_VERSION, "seeds": list(cfgs[0].seeds),
            "regimes": list(rows), "rows": rows}


def dump_report(report: Dict, path=None) -> str:
    text = json.dumps(report, sort_keys=True, indent=2, default=_jsonable) + "\n"
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def format_grid(grid: Dict, metric: str = "iou") -> str:
    """Plain-text table: one row per regime, seed-mean (std) per horizon."""
    horizons = sorted({h for r in grid["rows"].values() for h in r},
                      key=lambda h: HORIZONS.get(h, math.inf))
    lines = [f"{'regime':<16}" + "".join(f"{h + ' ' + metric:>22}" for h in horizons)]
    for regime, row in grid["rows"].items():
        cells = []
        for h in horizons:
            r = row.get(h)
            cells.append(f"{r['mean'][metric]:>12.4f} ({r['std'][metric]:.4f})" if r else " " * 22)
        lines.append(f"{regime:<16}" + "".join(f"{c:>22}" for c in cells))
    return "\n".join(lines)
