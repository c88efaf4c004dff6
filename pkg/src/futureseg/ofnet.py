"""OFNet: per-frame UNet motion features, a ConvLSTM scan and a linear 1x1 flow head.

Trained to map a window of T flows to the same window shifted one step ahead;
at inference only the last output is kept and fed back autoregressively.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ShapeError
from .fields import FlowField, SequenceSample
from .nets import ConvLSTMCell, UNet, init_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForecasterConfig:
    T: int = 6
    feature_channels: int = 64
    unet_depth: int = 3
    unet_base: int = 8
    hidden_channels: int = 16
    kernel_size: int = 3
    height: int = 64
    width: int = 128
    seed: int = 0
    init: str = "he_uniform+orthogonal_recurrent+zero_bias"

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        div = 2 ** self.unet_depth
        if self.height % div or self.width % div:
            raise ConfigError(
                f"{self.height}x{self.width} not divisible by 2**unet_depth={div}")

    @classmethod
    def from_dict(cls, d: Dict) -> "ForecasterConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown forecaster config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class FlowTrainConfig:
    lr: float = 1e-4
    batch_size: int = 3
    epochs: int = 30
    seed: int = 0
    # random windows drawn per sequence each epoch; None = every window
    windows_per_sequence: Optional[int] = 1


class OFNet(nn.Module):
    def __init__(self, cfg: ForecasterConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = UNet(2, cfg.unet_base, cfg.unet_depth, cfg.feature_channels)
        self.cell = ConvLSTMCell(cfg.feature_channels, cfg.hidden_channels, cfg.kernel_size)
        self.head = nn.Conv2d(cfg.hidden_channels, 2, 1)
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            init_weights(self)
            nn.init.kaiming_uniform_(self.head.weight, nonlinearity="linear")

    def _check(self, x: torch.Tensor) -> None:
        if x.shape[-3:] != (2, self.cfg.height, self.cfg.width):
            raise ShapeError(
                f"expected flows of shape (2, {self.cfg.height}, {self.cfg.width}), "
                f"got {tuple(x.shape[-3:])}")

    def extract_features(self, flows: torch.Tensor) -> torch.Tensor:
        """(N, 2, H, W) flows -> (N, feature_channels, H, W) motion features."""
        self._check(flows)
        return self.backbone(flows)

    def scan(self, feats: torch.Tensor) -> torch.Tensor:
        """Run the recurrent cell over (B, T, C, H, W) features from a zero state."""
        b, t, _, h, w = feats.shape
        state = self.cell.init_hidden(b, h, w, feats)
        out = []
        for k in range(t):
            state = self.cell(feats[:, k], state)
            out.append(self.head(state[0]))
        return torch.stack(out, dim=1)

    def forward(self, flows: torch.Tensor) -> torch.Tensor:
        """(B, T, 2, H, W) -> (B, T, 2, H, W); output k estimates input k + 1."""
        self._check(flows)
        b, t = flows.shape[:2]
        feats = self.extract_features(flows.reshape(b * t, *flows.shape[2:]))
        return self.scan(feats.reshape(b, t, *feats.shape[1:]))


def loss_flow(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Shifted-sequence L2 loss: per-step squared error over H*W*2, averaged over steps.

    Accepts (..., T, 2, H, W); leading batch dimensions are averaged.
    """
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} vs target {tuple(gt.shape)}")
    return ((pred - gt) ** 2).mean()


def _stack(flows: Sequence[FlowField]) -> torch.Tensor:
    return torch.from_numpy(np.stack([f.to_array() for f in flows]))


def _unstack(x: torch.Tensor) -> List[FlowField]:
    a = x.detach().cpu().numpy()
    return [FlowField(f[0], f[1]) for f in a]


def forward_sequence(model: OFNet, flows: Sequence[FlowField]) -> List[FlowField]:
    if len(flows) != model.cfg.T:
        raise ShapeError(f"expected exactly T={model.cfg.T} flows, got {len(flows)}")
    with torch.no_grad():
        out = model(_stack(flows)[None].to(next(model.parameters()).dtype))
    return _unstack(out[0])


def rollout_array(model: OFNet, past: np.ndarray, n: int) -> np.ndarray:
    """Batched autoregressive rollout: (B, T, 2, H, W) past -> (B, n, 2, H, W) future.

    Motion features of each flow are computed once and reused while the window
    slides; each step rescans the last T feature maps from a fresh hidden state
    and keeps only the final output.
    """
    if n < 1:
        raise ConfigError("rollout needs n >= 1")
    past = np.asarray(past, dtype=np.float32)
    T = model.cfg.T
    if past.ndim != 5 or past.shape[1] != T:
        raise ShapeError(f"expected past of shape (B, {T}, 2, H, W), got {past.shape}")
    b = past.shape[0]
    x = torch.from_numpy(past)
    preds = []
    with torch.no_grad():
        feats = model.extract_features(x.reshape(b * T, *x.shape[2:]))
        window = list(feats.reshape(b, T, *feats.shape[1:]).unbind(1))
        for _ in range(n):
            y = model.scan(torch.stack(window[-T:], dim=1))[:, -1]
            preds.append(y)
            window.append(model.extract_features(y))
    return torch.stack(preds, dim=1).numpy()


def rollout(model: OFNet, past: Sequence[FlowField], n: int) -> List[FlowField]:
    if len(past) < model.cfg.T:
        raise ShapeError(f"need at least T={model.cfg.T} past flows, got {len(past)}")
    arr = np.stack([f.to_array() for f in past[-model.cfg.T:]])[None]
    return [FlowField(f[0], f[1]) for f in rollout_array(model, arr, n)[0]]


def teacher_forced_array(model: OFNet, flows: np.ndarray, start: int, n: int) -> np.ndarray:
    """One-step forecasts of flows ``start .. start+n-1`` from ground-truth windows.

    ``flows`` is (B, L-1, 2, H, W); the window for target ``k`` is ``flows[k-T:k]``.
    """
    T = model.cfg.T
    if start < T or start + n > flows.shape[1] + 1:
        raise ShapeError("teacher-forced window out of range")
    x = torch.from_numpy(np.asarray(flows, dtype=np.float32))
    b = x.shape[0]
    out = []
    with torch.no_grad():
        feats = model.extract_features(
            x[:, start - T:start + n - 1].reshape(-1, *x.shape[2:]))
        feats = feats.reshape(b, T + n - 1, *feats.shape[1:])
        for k in range(n):
            out.append(model.scan(feats[:, k:k + T])[:, -1])
    return torch.stack(out, dim=1).numpy()


# ---------------------------------------------------------------------------
# training


def _windows(n_flows: int, T: int) -> List[int]:
    return list(range(0, n_flows - T))


def train_ofnet(samples: Sequence[SequenceSample], cfg: ForecasterConfig = ForecasterConfig(),
                hyper: FlowTrainConfig = FlowTrainConfig(),
                model: Optional[OFNet] = None) -> Tuple[OFNet, Dict]:
    """Adam on the shifted-sequence loss. Returns the model and a history dict."""
    if not samples:
        raise ConfigError("empty training set")
    flows = [s.flow_array() for s in samples]
    for f in flows:
        if f.shape[0] < cfg.T + 1:
            raise ConfigError(f"sequences need >= T+1={cfg.T + 1} flows, got {f.shape[0]}")
    torch.manual_seed(hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    model = model if model is not None else OFNet(cfg)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr)
    T = cfg.T
    history = {"epoch_loss": [], "initial_loss": None, "seconds": 0.0}
    t0 = time.time()
    for epoch in range(hyper.epochs):
        items = []
        for i, f in enumerate(flows):
            starts = _windows(f.shape[0], T)
            if hyper.windows_per_sequence is not None:
                starts = list(rng.choice(starts, size=min(hyper.windows_per_sequence, len(starts)),
                                         replace=False))
            items += [(i, int(s)) for s in starts]
        order = rng.permutation(len(items))
        losses = []
        for b0 in range(0, len(order), hyper.batch_size):
            batch = [items[k] for k in order[b0:b0 + hyper.batch_size]]
            seq = torch.from_numpy(np.stack([flows[i][s:s + T + 1] for i, s in batch]))
            pred = model(seq[:, :T])
            loss = loss_flow(pred, seq[:, 1:])
            if history["initial_loss"] is None:
                history["initial_loss"] = float(loss.detach())
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history["epoch_loss"].append(float(np.mean(losses)))
        log.info("ofnet epoch %d/%d loss %.5f", epoch + 1, hyper.epochs, history["epoch_loss"][-1])
    history["seconds"] = time.time() - t0
    model.eval()
    return model, history


def save_ofnet(model: OFNet, path, extra: Dict = None) -> None:
    save_checkpoint(path, "ofnet", asdict(model.cfg), model.state_dict(), extra)


def load_ofnet(path) -> OFNet:
    kind, config, state, _ = load_checkpoint(path)
    if kind != "ofnet":
        raise ConfigError(f"{path} holds a {kind!r} checkpoint, not ofnet")
    model = OFNet(ForecasterConfig.from_dict(config))
    model.load_state_dict(state)
    model.eval()
    return model
