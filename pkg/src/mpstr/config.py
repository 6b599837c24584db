"""Experiment configuration: one JSON document, explicit defaults echoed back.

Variant flags reproduce the ablation structure:

* ``full``        - permuted training with mask tokens and length supervision.
* ``baseline-ar`` - ordinary left-to-right AR model (K=1, mask side blocked,
                    no length supervision).
* ``plm-only``    - permuted training without the mask-token side.
* ``no-length``   - mask tokens without length supervision.

Variants without length supervision build inference masks at the maximum
length instead of a predicted one.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class EncoderConfig:
    image_height: int = 16
    image_width: int = 64
    patch_h: int = 4
    patch_w: int = 8
    channels: int = 1
    depth: int = 2
    heads: int = 4
    dim: int = 64
    mlp_ratio: float = 4.0
    max_len: int = 8

    def __post_init__(self):
        if self.image_height % self.patch_h or self.image_width % self.patch_w:
            raise ValueError(
                f"image {self.image_width}x{self.image_height} not divisible by "
                f"patch {self.patch_w}x{self.patch_h}"
            )
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")

    @property
    def num_patches(self) -> int:
        return (self.image_height * self.image_width) // (self.patch_h * self.patch_w)


@dataclass
class DecoderConfig:
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    max_len: int = 8
    pre_norm: bool = True

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")


@dataclass
class TrainConfig:
    permutations: int = 12  # K
    loss_balance: float = 0.25  # lambda
    perturb_ratio: float = 0.25
    batch_size: int = 128
    iterations: int = 1500
    learning_rate: float = 1.5e-3
    onecycle_frac: float = 0.85  # 1cycle over this fraction, constant tail after
    warmup_frac: float = 0.1
    tail_lr_div: float = 100.0
    augment: bool = True
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only
    log_every: int = 10

    def __post_init__(self):
        if not 0.0 <= self.loss_balance <= 1.0:
            raise ValueError("loss_balance must be in [0, 1]")
        if not 0.0 <= self.perturb_ratio <= 1.0:
            raise ValueError("perturb_ratio must be in [0, 1]")
        if self.permutations < 1:
            raise ValueError("permutations must be >= 1")


VARIANTS = ("full", "baseline-ar", "plm-only", "no-length")
LENGTH_HEADS = ("word", "char")


@dataclass
class ExperimentConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    variant: str = "full"
    length_head: str = "word"
    data_dir: str = ""
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.length_head not in LENGTH_HEADS:
            raise ValueError(f"length_head must be one of {LENGTH_HEADS}")
        if self.encoder.max_len != self.decoder.max_len:
            raise ValueError("encoder and decoder max_len must agree")
        # Mode flags imply each other; force the dependent settings so the
        # echoed config is self-consistent.
        if self.variant == "baseline-ar":
            self.train.permutations = 1
        if self.variant in ("baseline-ar", "plm-only", "no-length"):
            self.train.loss_balance = 0.0
        if self.variant in ("baseline-ar", "plm-only"):
            self.train.perturb_ratio = 0.0

    @property
    def max_len(self) -> int:
        return self.encoder.max_len

    @property
    def mask_side_blocked(self) -> bool:
        """Whether training/inference hide the mask-context half entirely."""
        return self.variant in ("baseline-ar", "plm-only")

    @property
    def length_supervised(self) -> bool:
        return self.train.loss_balance > 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        for key, sub in (("encoder", EncoderConfig), ("decoder", DecoderConfig), ("train", TrainConfig)):
            if key in d and isinstance(d[key], dict):
                d[key] = sub(**d[key])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            try:
                payload = json.load(f)
            except json.JSONDecodeError as e:
                raise ValueError(f"malformed config {path}: {e}") from None
        if not isinstance(payload, dict):
            raise ValueError(f"malformed config {path}: expected a JSON object")
        return cls.from_dict(payload)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def full_scale_config() -> ExperimentConfig:
    """The full-scale model shape (not a desk-scale training target)."""
    return ExperimentConfig(
        encoder=EncoderConfig(
            image_height=32, image_width=128, patch_h=4, patch_w=8,
            channels=3, depth=12, heads=6, dim=384, max_len=25,
        ),
        decoder=DecoderConfig(dim=384, heads=6, max_len=25),
        train=TrainConfig(iterations=254_520, batch_size=384, perturb_ratio=0.33),
    )
