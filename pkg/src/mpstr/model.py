"""Assembled recognizer and the checkpoint file format.

Checkpoint layout (single file, documented for cross-language exchange):

    bytes 0..7    magic b"MPSTRCK1"
    bytes 8..15   little-endian uint64: byte length of the JSON manifest
    manifest      UTF-8 JSON: {"meta": {...}, "tensors": [
                      {"name": str, "shape": [int], "dtype": "f4"|"f8"|"i8"}, ...]}
    data          raw tensor bytes, C-order, little-endian, concatenated in
                  manifest order

meta always carries the experiment config and the charset characters, so a
checkpoint alone reconstructs the model.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .codec import Charset
from .config import ExperimentConfig
from .decoder import MPDecoder
from .encoder import CharLengthHead, ViTEncoder, WordLengthHead

MAGIC = b"MPSTRCK1"

_DTYPES = {"f4": np.float32, "f8": np.float64, "i8": np.int64}
_DTYPE_NAMES = {np.dtype(v): k for k, v in _DTYPES.items()}


class MPSTRModel(nn.Module):
    def __init__(self, cfg: ExperimentConfig, charset: Charset | None = None):
        super().__init__()
        self.cfg = cfg
        self.charset = charset or Charset()
        self.encoder = ViTEncoder(cfg.encoder)
        self.decoder = MPDecoder(cfg.decoder, self.charset)
        if cfg.length_head == "word":
            self.length_head = WordLengthHead(cfg.encoder.dim, cfg.max_len)
        else:
            self.length_head = CharLengthHead(cfg.encoder.dim, cfg.encoder.heads, cfg.max_len)

    @property
    def max_len(self) -> int:
        return self.cfg.max_len

    def encode(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.encoder(images)

    def length_logits(self, z0: torch.Tensor, z_v: torch.Tensor) -> torch.Tensor:
        if isinstance(self.length_head, WordLengthHead):
            return self.length_head(z0)
        return self.length_head(z_v)

    def predict_lengths(self, z0: torch.Tensor, z_v: torch.Tensor) -> torch.Tensor:
        logits = self.length_logits(z0, z_v)
        return self.length_head.lengths_from_logits(logits)


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    entries = []
    blobs = []
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy()
        dtype = _DTYPE_NAMES.get(arr.dtype)
        if dtype is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    manifest = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic)")
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode())
        tensors = {}
        for e in manifest["tensors"]:
            dt = np.dtype(_DTYPES[e["dtype"]]).newbyteorder("<")
            count = int(np.prod(e["shape"])) if e["shape"] else 1
            arr = np.frombuffer(f.read(count * dt.itemsize), dtype=dt)
            tensors[e["name"]] = torch.from_numpy(
                arr.astype(_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
            )
    return tensors, manifest["meta"]


def save_model(path, model: MPSTRModel, extra: dict[str, torch.Tensor] | None = None,
               meta: dict | None = None) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if extra:
        tensors.update(extra)
    full_meta = {
        "config": model.cfg.to_dict(),
        "charset": model.charset.characters,
    }
    full_meta.update(meta or {})
    save_checkpoint(path, tensors, full_meta)


def load_model(path) -> tuple[MPSTRModel, dict[str, torch.Tensor], dict]:
    """Rebuild a model from a checkpoint; returns (model, non-model tensors, meta)."""
    tensors, meta = load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    model = MPSTRModel(cfg, Charset(meta["charset"]))
    state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    ref = model.state_dict()
    model.load_state_dict({k: v.to(ref[k].dtype) for k, v in state.items()})
    extra = {k: v for k, v in tensors.items() if not k.startswith("model.")}
    model.eval()
    return model, extra, meta
