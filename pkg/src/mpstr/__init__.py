"""Masked-and-permuted implicit context learning recognizer."""

from .codec import Charset, LabelSequence, LengthViolation, SpecialTokens
from .config import DecoderConfig, EncoderConfig, ExperimentConfig, TrainConfig
from .inference import DecodePolicy, Recognition, cloze_refine, recognize_ar, recognize_nar
from .model import MPSTRModel, load_model, save_model
from .schedules import (
    AttentionSchedule,
    PadMask,
    build_ar_infer_mask,
    build_cloze_mask,
    build_nar_mask,
    build_pad_mask,
    build_train_mask,
    oracle_mask,
    sample_permutations,
)
from .training import LossBreakdown, PerturbPolicy, Trainer, apply_perturbation

__version__ = "0.1.0"

__all__ = [
    "AttentionSchedule",
    "Charset",
    "DecodePolicy",
    "DecoderConfig",
    "EncoderConfig",
    "ExperimentConfig",
    "LabelSequence",
    "LengthViolation",
    "LossBreakdown",
    "MPSTRModel",
    "PadMask",
    "PerturbPolicy",
    "Recognition",
    "SpecialTokens",
    "TrainConfig",
    "Trainer",
    "apply_perturbation",
    "build_ar_infer_mask",
    "build_cloze_mask",
    "build_nar_mask",
    "build_pad_mask",
    "build_train_mask",
    "cloze_refine",
    "load_model",
    "oracle_mask",
    "recognize_ar",
    "recognize_nar",
    "sample_permutations",
    "save_model",
]
