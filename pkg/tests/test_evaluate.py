import numpy as np
import pytest
import torch

from mpstr import evaluate as ev
from mpstr.codec import Charset
from mpstr.config import DecoderConfig, EncoderConfig, ExperimentConfig
from mpstr.evaluate import accuracy_of, evaluate_model
from mpstr.inference import Recognition
from mpstr.model import MPSTRModel
from mpstr.toydata import ToyDataset, render_word

CHARSET = Charset()


@pytest.fixture(scope="module")
def tiny_dataset():
    words = ["abc", "q", "0x9", "house", "zz"]
    return ToyDataset(np.stack([render_word(w) for w in words]), list(words))


def test_perfect_oracle_stub_scores_one(tiny_dataset):
    def oracle(image, label):
        return Recognition(text=label, length_used=len(label), mode="stub")

    acc, ms = accuracy_of(oracle, tiny_dataset, CHARSET)
    assert acc == 1.0
    assert ms >= 0.0


def test_broken_stub_scores_low(tiny_dataset):
    def wrong(image, label):
        return Recognition(text="nope", length_used=4, mode="stub")

    acc, _ = accuracy_of(wrong, tiny_dataset, CHARSET)
    assert acc == 0.0


def test_accuracy_is_case_insensitive_charset_filtered(tiny_dataset):
    def shouty(image, label):
        return Recognition(text=label.upper() + "-", length_used=len(label), mode="stub")

    acc, _ = accuracy_of(shouty, tiny_dataset, CHARSET)
    assert acc == 1.0


def test_evaluate_model_populates_all_modes(tiny_dataset):
    torch.manual_seed(0)
    cfg = ExperimentConfig(
        encoder=EncoderConfig(image_height=16, image_width=64, patch_h=4, patch_w=8,
                              depth=1, heads=2, dim=32, max_len=8),
        decoder=DecoderConfig(dim=32, heads=2, max_len=8),
    )
    model = MPSTRModel(cfg)
    report = evaluate_model(model, tiny_dataset)
    assert report.sample_count == 5
    assert set(report.mode_accuracy) == {"ar", "nar", "cloze_gt"}
    for acc in report.mode_accuracy.values():
        assert 0.0 <= acc <= 1.0
    assert 0.0 <= report.length_accuracy <= 1.0
    assert report.word_accuracy == report.mode_accuracy["ar"]
    assert all(ms > 0 for ms in report.ms_per_image.values())
    summary = report.summary()
    assert "acc[cloze_gt]" in summary and "samples\t5" in summary


def test_cloze_gt_mode_initializes_from_ground_truth(tiny_dataset, monkeypatch):
    torch.manual_seed(0)
    cfg = ExperimentConfig(
        encoder=EncoderConfig(image_height=16, image_width=64, patch_h=4, patch_w=8,
                              depth=1, heads=2, dim=32, max_len=8),
        decoder=DecoderConfig(dim=32, heads=2, max_len=8),
    )
    model = MPSTRModel(cfg)
    seen = []

    def spy(prev, image, m):
        seen.append(prev.text)
        return prev

    monkeypatch.setattr(ev, "cloze_refine", spy)
    report = evaluate_model(model, tiny_dataset, modes=("cloze_gt",))
    assert seen == tiny_dataset.labels
    assert report.mode_accuracy["cloze_gt"] == 1.0  # identity refinement = GT
