"""Recognition metrics over a dataset split.

Word accuracy is case-insensitive, charset-filtered exact match (both sides
normalized).  The cloze-GT mode follows the protocol of initializing the
refinement with the ground-truth label.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch

from .inference import DecodePolicy, Recognition, cloze_refine, recognize_ar, recognize_nar
from .model import MPSTRModel
from .toydata import ToyDataset

MODES = ("ar", "nar", "cloze_gt")


@dataclass
class EvalReport:
    sample_count: int
    word_accuracy: float
    length_accuracy: float
    mode_accuracy: dict[str, float] = field(default_factory=dict)
    ms_per_image: dict[str, float] = field(default_factory=dict)

    def summary(self) -> str:
        lines = [f"samples\t{self.sample_count}",
                 f"word_accuracy\t{self.word_accuracy:.4f}",
                 f"length_accuracy\t{self.length_accuracy:.4f}"]
        for mode in sorted(self.mode_accuracy):
            lines.append(f"acc[{mode}]\t{self.mode_accuracy[mode]:.4f}")
        for mode in sorted(self.ms_per_image):
            lines.append(f"ms_per_image[{mode}]\t{self.ms_per_image[mode]:.2f}")
        return "\n".join(lines)


def accuracy_of(recognize, dataset: ToyDataset, charset) -> tuple[float, float]:
    """(exact-match accuracy, wall-clock ms per image) of one recognizer."""
    hits = 0
    started = time.perf_counter()
    for image, label in zip(dataset.images, dataset.labels):
        rec = recognize(image, label)
        if charset.normalize_text(rec.text) == charset.normalize_text(label):
            hits += 1
    elapsed_ms = (time.perf_counter() - started) * 1000.0 / max(1, len(dataset))
    return hits / max(1, len(dataset)), elapsed_ms


@torch.no_grad()
def length_accuracy(model: MPSTRModel, dataset: ToyDataset) -> float:
    from .inference import _image_tensor

    hits = 0
    for image, label in zip(dataset.images, dataset.labels):
        z0, z_v = model.encode(_image_tensor(model, image))
        if int(model.predict_lengths(z0, z_v)[0]) == len(label):
            hits += 1
    return hits / max(1, len(dataset))


def evaluate_model(model: MPSTRModel, dataset: ToyDataset,
                   modes=MODES, ar_refine: int | None = None,
                   nar_refine: int | None = None) -> EvalReport:
    model.eval()
    charset = model.charset
    mode_acc: dict[str, float] = {}
    mode_ms: dict[str, float] = {}

    recognizers = {
        "ar": lambda img, label: recognize_ar(
            img, model, DecodePolicy("ar", ar_refine)),
        "nar": lambda img, label: recognize_nar(
            img, model, DecodePolicy("nar", nar_refine)),
        "cloze_gt": lambda img, label: cloze_refine(
            Recognition(text=charset.normalize_text(label), length_used=len(label),
                        mode="cloze"),
            img, model),
    }
    for mode in modes:
        mode_acc[mode], mode_ms[mode] = accuracy_of(recognizers[mode], dataset, charset)

    primary = mode_acc.get("ar", next(iter(mode_acc.values())) if mode_acc else 0.0)
    return EvalReport(
        sample_count=len(dataset),
        word_accuracy=primary,
        length_accuracy=length_accuracy(model, dataset),
        mode_accuracy=mode_acc,
        ms_per_image=mode_ms,
    )
