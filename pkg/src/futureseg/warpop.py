"""Non-learned mask forecasting baselines: copy-last, mean-flow shift, flow splatting."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError
from .fields import FlowField, InstanceMask


def _check(inst: InstanceMask, flow: FlowField) -> None:
    if inst.mask.shape != flow.shape:
        raise ShapeError(f"mask {inst.mask.shape} vs flow {flow.shape}")


def round_half_away(x: float) -> int:
    return int(np.sign(x) * np.floor(abs(x) + 0.5))


def translate(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer translation; pixels leaving the frame are dropped."""
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    ys, xs = ys + dy, xs + dx
    keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    out[ys[keep], xs[keep]] = True
    return out


def copy_last(inst: InstanceMask) -> InstanceMask:
    return inst


def shift_mask(inst: InstanceMask, flow: FlowField) -> InstanceMask:
    """Translate the mask by its rounded mean flow."""
    _check(inst, flow)
    if inst.empty:
        return inst
    m = inst.mask
    dx = round_half_away(float(flow.u[m].astype(np.float64).mean()))
    dy = round_half_away(float(flow.v[m].astype(np.float64).mean()))
    return inst.replace(mask=translate(m, dx, dy))


def splat_weights(mask: np.ndarray, flow: FlowField) -> np.ndarray:
    """Bilinear forward splat of unit mass from every foreground pixel."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    tx = xs + flow.u[ys, xs].astype(np.float64)
    ty = ys + flow.v[ys, xs].astype(np.float64)
    x0, y0 = np.floor(tx), np.floor(ty)
    fx, fy = tx - x0, ty - y0
    x0, y0 = x0.astype(np.int64), y0.astype(np.int64)
    acc = np.zeros((h, w), dtype=np.float64)
    for ox, oy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                       (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        cx, cy = x0 + ox, y0 + oy
        keep = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h) & (wt > 0)
        np.add.at(acc, (cy[keep], cx[keep]), wt[keep])
    return acc


def warp_mask(inst: InstanceMask, flow: FlowField) -> InstanceMask:
    """Forward-splat the mask along the flow and keep cells with mass >= 0.5."""
    _check(inst, flow)
    return inst.replace(mask=splat_weights(inst.mask, flow) >= 0.5)


def warp_iterated(inst: InstanceMask, flows: Sequence[FlowField]) -> InstanceMask:
    if len(flows) < 1:
        raise ShapeError("warp_iterated needs at least one flow")
    for f in flows:
        inst = warp_mask(inst, f)
    return inst


def shift_iterated(inst: InstanceMask, flows: Sequence[FlowField]) -> InstanceMask:
    if len(flows) < 1:
        raise ShapeError("shift_iterated needs at least one flow")
    for f in flows:
        inst = shift_mask(inst, f)
    return inst


def compose_flows(flows: Sequence[FlowField]) -> FlowField:
    """Chain forward flows into one displacement field by following trajectories.

    Intermediate flows are sampled with bilinear interpolation (border clamped).
    """
    if not flows:
        raise ShapeError("need at least one flow")
    h, w = flows[0].shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    px, py = xx.copy(), yy.copy()
    for f in flows:
        if f.shape != (h, w):
            raise ShapeError("flows differ in shape")
        du = _bilinear(f.u, px, py)
        dv = _bilinear(f.v, px, py)
        px, py = px + du, py + dv
    return FlowField((px - xx).astype(np.float32), (py - yy).astype(np.float32))


def _bilinear(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = grid.shape
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    g = grid.astype(np.float64)
    return ((1 - fx) * (1 - fy) * g[y0, x0] + fx * (1 - fy) * g[y0, x1]
            + (1 - fx) * fy * g[y1, x0] + fx * fy * g[y1, x1])
