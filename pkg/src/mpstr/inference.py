"""AR decoding, NAR decoding, and iterative cloze refinement.

All modes share one decoder and one set of weights.  Decoding is greedy
argmax throughout; the first predicted ending symbol truncates the text, and
the length estimate only shapes the masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import schedules
from .decoder import combine_blocked, context_ids
from .model import MPSTRModel


@dataclass(frozen=True)
class DecodePolicy:
    mode: str = "ar"  # "ar" | "nar"
    refine_iters: int | None = None  # default: ar -> 1, nar -> 2

    def iters(self, model: "MPSTRModel | None" = None) -> int:
        if self.refine_iters is not None:
            if self.refine_iters < 0:
                raise ValueError("refine_iters must be >= 0")
            return self.refine_iters
        # Cloze refinement is part of the unified mask-token machinery;
        # variants trained without it (no length supervision) skip it.
        if model is not None and not model.cfg.length_supervised:
            return 0
        return {"ar": 1, "nar": 2}[self.mode]


@dataclass(frozen=True)
class Recognition:
    text: str
    length_used: int
    per_char_scores: tuple[float, ...] = field(default_factory=tuple)
    mode: str = ""


def _image_tensor(model: MPSTRModel, image) -> torch.Tensor:
    if isinstance(image, torch.Tensor):
        x = image.float()
    else:
        x = torch.from_numpy(np.asarray(image).astype(np.float32) / 255.0)
        x = (x - 0.5) / 0.5
    if x.dim() == 2:
        x = x.unsqueeze(0).unsqueeze(0)
    elif x.dim() == 3:
        x = x.unsqueeze(0)
    return x


def _mask_length(model: MPSTRModel, z0: torch.Tensor, z_v: torch.Tensor) -> int:
    """Length driving the mask construction.

    Variants with mask tokens always run the length pathway (supervised or
    not); with the mask half hidden the length only shapes padding, so the
    maximum keeps plain AR/NAR decoding unrestricted."""
    if model.cfg.mask_side_blocked:
        return model.max_len
    return int(model.predict_lengths(z0, z_v)[0])


def _decode_pass(model: MPSTRModel, tokens, L: int, schedule, z_v: torch.Tensor,
                 keep_weights: bool = False) -> tuple[list[int], list[float]]:
    """One decoder pass; returns per-slot argmax classes and their probabilities."""
    T = model.max_len
    ids = context_ids(tokens, L, T, model.charset)
    blocked = combine_blocked(schedule, schedules.build_pad_mask(L, T))
    if model.cfg.mask_side_blocked:
        blocked = blocked.copy()
        blocked[:, T + 2 :] = True
    context = model.decoder.build_context(torch.from_numpy(ids).unsqueeze(0))
    logits = model.decoder(context, torch.from_numpy(blocked), z_v, keep_weights)
    probs = F.softmax(logits[0], dim=-1)
    top = probs.argmax(dim=-1)
    return top.tolist(), probs.gather(1, top.unsqueeze(1)).squeeze(1).tolist()


def _finalize(classes: list[int], scores: list[float], L: int, model: MPSTRModel,
              mode: str) -> Recognition:
    """Truncate at the first ending symbol; cap at L characters without one."""
    text = model.charset.decode(classes[: L + 1])
    if len(text) > L:
        text = text[:L]
    return Recognition(
        text=text,
        length_used=L,
        per_char_scores=tuple(scores[: len(text) + 1]),
        mode=mode,
    )


@torch.no_grad()
def recognize_nar(image, model: MPSTRModel, policy: DecodePolicy | None = None) -> Recognition:
    """Single parallel pass over all position queries, then cloze refinements."""
    policy = policy or DecodePolicy(mode="nar")
    model.eval()
    z0, z_v = model.encode(_image_tensor(model, image))
    L = _mask_length(model, z0, z_v)
    classes, scores = _decode_pass(
        model, [], L, schedules.build_nar_mask(L, model.max_len), z_v
    )
    rec = _finalize(classes, scores, L, model, "nar")
    for _ in range(policy.iters(model)):
        rec = _cloze_pass(rec, z_v, model)
    return rec


@torch.no_grad()
def recognize_ar(image, model: MPSTRModel, policy: DecodePolicy | None = None) -> Recognition:
    """Left-to-right decoding, one new token per iteration, then refinements."""
    policy = policy or DecodePolicy(mode="ar")
    model.eval()
    z0, z_v = model.encode(_image_tensor(model, image))
    L = _mask_length(model, z0, z_v)
    schedule = schedules.build_ar_infer_mask(L, model.max_len)
    eos = model.charset.specials.eos
    tokens: list[int] = []
    scores: list[float] = []
    for slot in range(1, L + 2):
        classes, probs = _decode_pass(model, tokens, L, schedule, z_v)
        cls = classes[slot - 1]
        scores.append(probs[slot - 1])
        if cls == eos or slot == L + 1:
            break
        tokens.append(cls)
    rec = Recognition(
        text=model.charset.decode(tokens),
        length_used=L,
        per_char_scores=tuple(scores),
        mode="ar",
    )
    for _ in range(policy.iters(model)):
        rec = _cloze_pass(rec, z_v, model)
    return rec


def _cloze_pass(prev: Recognition, z_v: torch.Tensor, model: MPSTRModel) -> Recognition:
    """Re-predict every slot at once; the length is re-determined from the
    previous text, and each query is blocked from its own previous token."""
    L = len(prev.text)
    if L == 0 or L > model.max_len:
        return prev
    tokens = model.charset.encode(prev.text, model.max_len).ids
    classes, scores = _decode_pass(
        model, tokens, L, schedules.build_cloze_mask(L, model.max_len), z_v
    )
    return _finalize(classes, scores, L, model, prev.mode)


@torch.no_grad()
def cloze_refine(prev: Recognition, image, model: MPSTRModel) -> Recognition:
    """One refinement pass starting from an arbitrary previous recognition."""
    model.eval()
    _, z_v = model.encode(_image_tensor(model, image))
    return _cloze_pass(prev, z_v, model)


@torch.no_grad()
def attention_dump(image, model: MPSTRModel, mode: str = "nar") -> str:
    """First-stage cross-attention weights of one decoding pass, as text."""
    from .decoder import format_attention

    model.eval()
    z0, z_v = model.encode(_image_tensor(model, image))
    L = _mask_length(model, z0, z_v)
    if mode == "nar":
        schedule = schedules.build_nar_mask(L, model.max_len)
    else:
        schedule = schedules.build_ar_infer_mask(L, model.max_len)
    _decode_pass(model, [], L, schedule, z_v, keep_weights=True)
    return format_attention(model.decoder.last_context_attention())
