"""Versioned checkpoint container.

Layout::

    8 bytes   magic  b"FSEGCKPT"
    uint32    format version (little-endian)
    uint32    header length N
    N bytes   UTF-8 JSON header: kind, config echo, extra, parameter index
    ...       parameter blobs, float32 little-endian, C order, in index order
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import torch

from .errors import ConfigError, FormatError, IoError

MAGIC = b"FSEGCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def checkpoint_bytes(kind: str, config: Dict, state: Dict[str, torch.Tensor],
                     extra: Dict = None) -> bytes:
    index, blobs, offset = [], [], 0
    for name, t in state.items():
        a = t.detach().cpu().numpy().astype("<f4", copy=False)
        b = np.ascontiguousarray(a).tobytes()
        index.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    header = json.dumps({"kind": kind, "config": config, "extra": extra or {},
                         "params": index}, sort_keys=True).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)


def save_checkpoint(path, kind: str, config: Dict, state: Dict[str, torch.Tensor],
                    extra: Dict = None) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(checkpoint_bytes(kind, config, state, extra))
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> Tuple[str, Dict, "OrderedDict[str, torch.Tensor]", Dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise FormatError(f"{path}: truncated header")
    header = json.loads(data[_PREFIX.size:start].decode())
    state = OrderedDict()
    for p in header["params"]:
        lo = start + p["offset"]
        hi = lo + p["nbytes"]
        if hi > len(data):
            raise FormatError(f"{path}: truncated blob for {p['name']}")
        a = np.frombuffer(data[lo:hi], dtype="<f4").reshape(p["shape"]).astype(np.float32)
        state[p["name"]] = torch.from_numpy(a.copy())
    return header["kind"], header["config"], state, header["extra"]
