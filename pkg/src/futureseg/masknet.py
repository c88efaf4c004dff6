"""MaskNet: a UNet that warps one instance mask to the next frame.

Input is a 4-channel grid ``[u, v, semantic / 8, mask]``; output is a
one-channel sigmoid probability map thresholded at 0.5.
"""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ShapeError
from .fields import NUM_CLASSES, FlowField, InstanceMask, SemanticMap, SequenceSample
from .nets import UNet, init_weights
from .tracker import TrackerConfig, successor_map

log = logging.getLogger(__name__)

CHANNELS = ("u", "v", "semantic", "mask")
THRESHOLD = 0.5
DICE_SMOOTH = 1e-6


@dataclass(frozen=True)
class WarperConfig:
    unet_depth: int = 2
    unet_base: int = 8
    in_channels: int = 4
    threshold: float = THRESHOLD
    seed: int = 0

    def __post_init__(self):
        if self.in_channels != 4:
            raise ConfigError("MaskNet consumes exactly 4 channels [u, v, semantic, mask]")

    @classmethod
    def from_dict(cls, d: Dict) -> "WarperConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown warper config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class MaskTrainConfig:
    lr: float = 1e-4
    epochs: int = 4
    batch_size: int = 8
    seed: int = 0
    loss: str = "dice"   # or "bce"


class MaskNet(nn.Module):
    def __init__(self, cfg: WarperConfig = WarperConfig()):
        super().__init__()
        self.cfg = cfg
        self.unet = UNet(cfg.in_channels, cfg.unet_base, cfg.unet_depth, cfg.unet_base)
        self.head = nn.Conv2d(cfg.unet_base, 1, 1)
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            init_weights(self)

    def layer_names(self) -> List[str]:
        """Convolution blocks from input to output; finetuning unfreezes a suffix."""
        return self.unet.block_names() + ["head"]

    def layer(self, name: str) -> nn.Module:
        return self.head if name == "head" else self.unet.blocks[name]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(N, 4, H, W) -> (N, 1, H, W) logits."""
        if x.ndim != 4 or x.shape[1] != 4:
            raise ShapeError(f"expected (N, 4, H, W) input, got {tuple(x.shape)}")
        div = 2 ** self.cfg.unet_depth
        if x.shape[2] % div or x.shape[3] % div:
            raise ShapeError(f"spatial size {tuple(x.shape[2:])} not divisible by {div}")
        return self.head(self.unet(x))


def prepare_input(flow: FlowField, sem: SemanticMap, inst: Union[InstanceMask, np.ndarray]
                  ) -> np.ndarray:
    mask = inst.mask if isinstance(inst, InstanceMask) else np.asarray(inst, dtype=bool)
    if not (flow.shape == sem.shape == mask.shape):
        raise ShapeError(f"flow {flow.shape}, semantic {sem.shape}, mask {mask.shape} differ")
    return np.stack([flow.u, flow.v,
                     sem.labels.astype(np.float32) / NUM_CLASSES,
                     mask.astype(np.float32)]).astype(np.float32)


def predict_proba(model: MaskNet, x: np.ndarray) -> np.ndarray:
    """Probabilities for a (4, H, W) grid or an (N, 4, H, W) batch."""
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 3
    with torch.no_grad():
        p = torch.sigmoid(model(torch.from_numpy(x[None] if single else x)))[:, 0].numpy()
    return p[0] if single else p


def predict_mask(model: MaskNet, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    prob = predict_proba(model, x)
    return prob, prob > model.cfg.threshold


def dice_loss(prob, gt, smooth: float = 0.0) -> torch.Tensor:
    """``1 - 2 sum(p g) / (sum p^2 + sum g^2)`` over the last two axes, batch-averaged.

    ``smooth`` is added to numerator and denominator; with ``smooth == 0`` an
    all-empty pair (zero denominator) scores 0.
    """
    prob = torch.as_tensor(prob)
    gt = torch.as_tensor(gt).to(prob.dtype)
    if prob.shape != gt.shape:
        raise ShapeError(f"prob {tuple(prob.shape)} vs gt {tuple(gt.shape)}")
    num = 2.0 * (prob * gt).sum(dim=(-2, -1)) + smooth
    den = (prob ** 2).sum(dim=(-2, -1)) + (gt ** 2).sum(dim=(-2, -1)) + smooth
    safe = torch.where(den > 0, den, torch.ones_like(den))
    loss = torch.where(den > 0, 1.0 - num / safe, torch.zeros_like(den))
    return loss.mean()


def bce_loss(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    return nn.functional.binary_cross_entropy_with_logits(logits, gt.to(logits.dtype))


# ---------------------------------------------------------------------------
# training examples


class PairSet:
    """(flow_t, semantic_t, mask_t) -> mask_{t+1} examples, assembled lazily per batch."""

    def __init__(self):
        self.inputs: List[Tuple[FlowField, SemanticMap, np.ndarray]] = []
        self.targets: List[np.ndarray] = []

    def __len__(self):
        return len(self.inputs)

    def add(self, flow: FlowField, sem: SemanticMap, mask: np.ndarray, target: np.ndarray):
        self.inputs.append((flow, sem, mask))
        self.targets.append(target)

    def batch(self, idx: Sequence[int]) -> Tuple[torch.Tensor, torch.Tensor]:
        x = np.stack([prepare_input(*self.inputs[i]) for i in idx])
        y = np.stack([self.targets[i] for i in idx]).astype(np.float32)
        return torch.from_numpy(x), torch.from_numpy(y)


def add_track_pairs(pairs: PairSet, sample: SequenceSample, flows: Dict[int, FlowField],
                    tracker_cfg: TrackerConfig = TrackerConfig()) -> PairSet:
    """Add every detection at frame ``t`` (for ``t`` in ``flows``) with its tracked successor.

    Detections whose track ends keep an empty target so disappearance is learned.
    """
    succ = successor_map(sample, tracker_cfg)
    empty = np.zeros(sample.shape, dtype=bool)
    for t, flow in sorted(flows.items()):
        if t + 1 >= sample.frames:
            continue
        for j, inst in enumerate(sample.instances[t]):
            k = succ.get((t, j))
            target = sample.instances[t + 1][k].mask if k is not None else empty
            pairs.add(flow, sample.semantics[t], inst.mask, target)
    return pairs


def oracle_pairs(samples: Sequence[SequenceSample],
                 tracker_cfg: TrackerConfig = TrackerConfig()) -> PairSet:
    pairs = PairSet()
    for s in samples:
        add_track_pairs(pairs, s, dict(enumerate(s.flows)), tracker_cfg)
    return pairs


# ---------------------------------------------------------------------------
# training


def _resolve_suffix(model: MaskNet, trainable: Union[int, str, None]) -> List[str]:
    names = model.layer_names()
    if trainable is None or trainable == "all":
        return names
    if isinstance(trainable, str) and trainable.isdigit():
        trainable = int(trainable)
    if not isinstance(trainable, int) or not 1 <= trainable <= len(names):
        raise ConfigError(f"cannot finetune {trainable!r} of layers {names}")
    return names[-trainable:]


def train_masknet(model: MaskNet, pairs: PairSet, hyper: MaskTrainConfig = MaskTrainConfig(),
                  trainable: Union[int, str, None] = "all") -> Dict:
    """Train ``model`` in place; only the suffix of layers named by ``trainable`` changes."""
    if len(pairs) == 0:
        raise ConfigError("empty training set")
    if hyper.loss not in ("dice", "bce"):
        raise ConfigError(f"unknown loss {hyper.loss!r}")
    active = _resolve_suffix(model, trainable)
    for name in model.layer_names():
        for p in model.layer(name).parameters():
            p.requires_grad_(name in active)
    params = [p for n in active for p in model.layer(n).parameters()]
    torch.manual_seed(hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    opt = torch.optim.Adam(params, lr=hyper.lr)
    model.train()
    history = {"epoch_loss": [], "trainable": active, "seconds": 0.0}
    t0 = time.time()
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for b0 in range(0, len(order), hyper.batch_size):
            x, y = pairs.batch(order[b0:b0 + hyper.batch_size])
            logits = model(x)[:, 0]
            if hyper.loss == "dice":
                loss = dice_loss(torch.sigmoid(logits), y, smooth=DICE_SMOOTH)
            else:
                loss = bce_loss(logits, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history["epoch_loss"].append(float(np.mean(losses)))
        log.info("masknet epoch %d/%d %s loss %.4f", epoch + 1, hyper.epochs, hyper.loss,
                 history["epoch_loss"][-1])
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    history["seconds"] = time.time() - t0
    return history


def train_masknet_pretrain(pairs: PairSet, cfg: WarperConfig = WarperConfig(),
                           hyper: MaskTrainConfig = MaskTrainConfig()) -> Tuple[MaskNet, Dict]:
    """Train all layers from scratch, normally on ground-truth ("oracle") flow pairs."""
    model = MaskNet(cfg)
    return model, train_masknet(model, pairs, hyper, "all")


def train_masknet_finetune(model: MaskNet, pairs: PairSet,
                           hyper: MaskTrainConfig = MaskTrainConfig(epochs=3),
                           trainable: Union[int, str] = 2) -> Tuple[MaskNet, Dict]:
    """Copy ``model`` and train only its last ``trainable`` layers (or ``"all"``)."""
    tuned = copy.deepcopy(model)
    return tuned, train_masknet(tuned, pairs, hyper, trainable)


def save_masknet(model: MaskNet, path, extra: Dict = None) -> None:
    extra = dict(extra or {})
    extra["layers"] = model.layer_names()
    save_checkpoint(path, "masknet", asdict(model.cfg), model.state_dict(), extra)


def load_masknet(path) -> MaskNet:
    kind, config, state, extra = load_checkpoint(path)
    if kind != "masknet":
        raise ConfigError(f"{path} holds a {kind!r} checkpoint, not masknet")
    model = MaskNet(WarperConfig.from_dict(config))
    if extra.get("layers") and extra["layers"] != model.layer_names():
        raise ConfigError(f"layer partition mismatch: {extra['layers']}")
    model.load_state_dict(state)
    model.eval()
    return model
