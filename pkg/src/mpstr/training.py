"""Combined objective, teacher forcing, length perturbation, and the fit loop.

The total loss is ``lambda * len_loss + (1 - lambda) * rec_loss`` where the
recognition part averages per-order cross-entropy over the K sampled decode
orders.  Teacher forcing conditions the decoder on ground-truth characters and
the ground-truth length; perturbation feeds a clamped off-by-one length into
the mask-token machinery (never into the supervision targets).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import schedules
from .codec import Charset
from .config import ExperimentConfig, TrainConfig
from .decoder import combine_blocked, context_ids
from .model import MPSTRModel, load_checkpoint, save_model
from .toydata import AugmentParams, ToyDataset, augment

IGNORE = -100


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    len_loss: float
    rec_loss: float


@dataclass(frozen=True)
class PerturbPolicy:
    deltas: tuple[int, ...] = (-1, 1)
    ratio: float = 0.0


def compute_length_loss(length_logits: torch.Tensor, g_len: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the T-way length classification; class = g_len - 1."""
    T = length_logits.shape[-1]
    if bool((g_len < 1).any()) or bool((g_len > T).any()):
        raise ValueError(f"ground-truth length outside [1, {T}]")
    return F.cross_entropy(length_logits, g_len - 1)


def compute_char_length_loss(slot_logits: torch.Tensor, g_len: torch.Tensor) -> torch.Tensor:
    """Binary occupancy loss for the char-level length head (slots 1..g_len on)."""
    T = slot_logits.shape[-1]
    slots = torch.arange(1, T + 1, device=slot_logits.device)
    target = (slots.unsqueeze(0) <= g_len.unsqueeze(1)).to(slot_logits.dtype)
    return F.binary_cross_entropy_with_logits(slot_logits, target)


def build_targets(labels: list, charset: Charset, T: int,
                  device=None) -> torch.Tensor:
    """(B, T+1) class targets: characters, the ending symbol, then IGNORE."""
    eos = charset.specials.eos
    out = torch.full((len(labels), T + 1), IGNORE, dtype=torch.long, device=device)
    for b, label in enumerate(labels):
        seq = charset.encode(label, T)
        out[b, : seq.length] = torch.tensor(seq.ids, dtype=torch.long, device=device)
        out[b, seq.length] = eos
    return out


def compute_rec_loss(logit_sets: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over K orders of per-token cross-entropy at the valid slots.

    logit_sets: (K, B, T+1, classes); targets: (B, T+1) with IGNORE beyond
    the ending symbol.
    """
    if logit_sets.dim() == 3:
        logit_sets = logit_sets.unsqueeze(0)
    K = logit_sets.shape[0]
    flat_t = targets.reshape(-1)
    losses = [
        F.cross_entropy(logit_sets[k].reshape(-1, logit_sets.shape[-1]), flat_t,
                        ignore_index=IGNORE)
        for k in range(K)
    ]
    return torch.stack(losses).mean()


def apply_perturbation(g_len: int, rng: np.random.Generator, policy: PerturbPolicy,
                       max_len: int) -> int:
    """Effective length for the mask-token count.

    With probability ``ratio`` picks uniformly among the clamped offsets that
    actually differ from g_len; otherwise returns g_len unchanged.
    """
    if rng.random() >= policy.ratio:
        return g_len
    candidates = sorted(
        {min(max(g_len + d, 1), max_len) for d in policy.deltas} - {g_len}
    )
    if not candidates:
        return g_len
    return int(candidates[rng.integers(len(candidates))])


def one_cycle_factor(step: int, cfg: TrainConfig) -> float:
    """LR multiplier: cosine 1cycle over the head of training, constant tail."""
    cycle = max(1, round(cfg.onecycle_frac * cfg.iterations))
    warm = max(1, round(cfg.warmup_frac * cycle))
    start, end = 1.0 / 25.0, 1.0 / cfg.tail_lr_div
    if step < warm:
        return start + (1.0 - start) * 0.5 * (1.0 - np.cos(np.pi * step / warm))
    if step < cycle:
        t = (step - warm) / max(1, cycle - warm)
        return end + (1.0 - end) * 0.5 * (1.0 + np.cos(np.pi * t))
    return end


class Trainer:
    """Single-writer training loop, deterministic given the config seed."""

    def __init__(self, cfg: ExperimentConfig, model: MPSTRModel | None = None):
        self.cfg = cfg
        torch.manual_seed(cfg.train.seed)
        self.model = model if model is not None else MPSTRModel(cfg)
        self.charset = self.model.charset
        self.opt = torch.optim.Adam(self.model.parameters(), lr=cfg.train.learning_rate)
        self.sched = torch.optim.lr_scheduler.LambdaLR(
            self.opt, lambda s: one_cycle_factor(s, cfg.train)
        )
        ss = np.random.SeedSequence([cfg.train.seed, 0xC0FFEE])
        shuffle_ss, perm_ss, perturb_ss, aug_ss = ss.spawn(4)
        self.rng_shuffle = np.random.default_rng(shuffle_ss)
        self.rng_perm = np.random.default_rng(perm_ss)
        self.rng_perturb = np.random.default_rng(perturb_ss)
        self.aug_entropy = aug_ss.entropy
        self.policy = PerturbPolicy(ratio=cfg.train.perturb_ratio)
        self.step = 0
        self._schedule_cache: dict = {}

    # -- schedule assembly ---------------------------------------------------

    def _blocked_matrix(self, perm: tuple[int, ...], L: int, eff_len: int) -> np.ndarray:
        key = (perm, L, eff_len)
        cached = self._schedule_cache.get(key)
        if cached is None:
            sched = schedules.build_train_mask(list(perm), L, self.cfg.max_len, eff_len)
            pad = schedules.build_pad_mask(eff_len, self.cfg.max_len)
            cached = combine_blocked(sched, pad)
            if self.cfg.mask_side_blocked:
                cached = cached.copy()
                cached[:, self.cfg.max_len + 2 :] = True
            self._schedule_cache[key] = cached
        return cached

    def _batch_blocked(self, perms, lengths, eff_lens) -> torch.Tensor:
        """(K, B, T+1, 2(T+2)) bool blocking tensor for all orders/samples."""
        self._schedule_cache.clear()
        K, B = len(perms), len(lengths)
        T = self.cfg.max_len
        out = np.empty((K, B, T + 1, 2 * (T + 2)), dtype=bool)
        for k, perm in enumerate(perms):
            for b, (L, eff) in enumerate(zip(lengths, eff_lens)):
                restricted = tuple(schedules.restrict_permutation(perm, L))
                out[k, b] = self._blocked_matrix(restricted, L, eff)
        return torch.from_numpy(out)

    # -- one optimization step -------------------------------------------------

    def compute_losses(self, images: torch.Tensor, labels: list[str]):
        """(total, len_loss, rec_loss) tensors for one teacher-forced batch."""
        cfg = self.cfg
        T = cfg.max_len
        lengths = [len(l) for l in labels]
        targets = build_targets(labels, self.charset, T)

        # Teacher forcing: ground-truth characters and lengths feed the
        # context; the mask-token count sees the (maybe perturbed) length.
        eff_lens = [
            apply_perturbation(L, self.rng_perturb, self.policy, T) for L in lengths
        ]
        perms = schedules.sample_permutations(
            cfg.train.permutations, max(lengths), self.rng_perm
        )

        z0, z_v = self.model.encode(images)
        length_logits = self.model.length_logits(z0, z_v)
        g_len = torch.tensor(lengths, dtype=torch.long)
        if cfg.length_head == "word":
            len_loss = compute_length_loss(length_logits, g_len)
        else:
            len_loss = compute_char_length_loss(length_logits, g_len)

        word_ids = torch.from_numpy(np.stack([
            context_ids(self.charset.encode(l, T).ids, L, T, self.charset)
            for l, L in zip(labels, lengths)
        ]))
        context = self.model.decoder.build_context(word_ids)
        blocked = self._batch_blocked(perms, lengths, eff_lens)
        # One decoder call covers all K orders: schedules are the only thing
        # that differs, so the K passes fold into the batch dimension.
        K, B = blocked.shape[0], context.shape[0]
        logit_sets = self.model.decoder(
            context.unsqueeze(0).expand(K, -1, -1, -1).reshape(K * B, *context.shape[1:]),
            blocked.reshape(K * B, *blocked.shape[2:]),
            z_v.unsqueeze(0).expand(K, -1, -1, -1).reshape(K * B, *z_v.shape[1:]),
        ).reshape(K, B, self.cfg.max_len + 1, -1)
        rec_loss = compute_rec_loss(logit_sets, targets)

        lam = cfg.train.loss_balance
        total = lam * len_loss + (1.0 - lam) * rec_loss
        return total, len_loss, rec_loss

    def train_step(self, images: torch.Tensor, labels: list[str]) -> LossBreakdown:
        total, len_loss, rec_loss = self.compute_losses(images, labels)
        self.opt.zero_grad()
        total.backward()
        self.opt.step()
        self.sched.step()
        self.step += 1
        return LossBreakdown(total.item(), len_loss.item(), rec_loss.item())

    # -- data plumbing -----------------------------------------------------

    def _augment_batch(self, images: np.ndarray, indices: np.ndarray,
                       step: int) -> np.ndarray:
        if not self.cfg.train.augment:
            return images
        params = AugmentParams.training_default()
        out = np.empty_like(images)
        for j, idx in enumerate(indices):
            rng = np.random.default_rng([self.aug_entropy, step, int(idx)])
            out[j] = augment(images[j], rng, params)
        return out

    def _to_tensor(self, images: np.ndarray) -> torch.Tensor:
        x = torch.from_numpy(images.astype(np.float32) / 255.0)
        x = (x - 0.5) / 0.5
        return x.unsqueeze(1)

    def batches(self, dataset: ToyDataset):
        """Seeded-shuffle epoch stream of (images, labels, indices)."""
        n = len(dataset)
        bs = self.cfg.train.batch_size
        while True:
            order = self.rng_shuffle.permutation(n)
            for start in range(0, n, bs):
                idx = order[start : start + bs]
                yield dataset.images[idx], [dataset.labels[i] for i in idx], idx

    # -- full run ------------------------------------------------------------

    def fit(self, dataset: ToyDataset, out_dir, log_name: str = "train-log.jsonl"):
        """Run to cfg.train.iterations; write checkpoint(s) and a loss log."""
        cfg = self.cfg
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        log_path = out / log_name
        ckpt_path = out / "checkpoint.mpstr"
        stream = self.batches(dataset)
        started = time.perf_counter()
        with open(log_path, "a", encoding="utf-8", newline="\n") as log:
            while self.step < cfg.train.iterations:
                images, labels, idx = next(stream)
                images = self._augment_batch(images, idx, self.step)
                breakdown = self.train_step(self._to_tensor(images), labels)
                if self.step % cfg.train.log_every == 0 or self.step == cfg.train.iterations:
                    record = {
                        "step": self.step,
                        "len_loss": round(breakdown.len_loss, 6),
                        "rec_loss": round(breakdown.rec_loss, 6),
                        "total": round(breakdown.total, 6),
                        "lr": round(self.sched.get_last_lr()[0], 8),
                    }
                    log.write(json.dumps(record) + "\n")
                    log.flush()
                if cfg.train.checkpoint_every and self.step % cfg.train.checkpoint_every == 0:
                    self._save(ckpt_path)
        self._save(ckpt_path)
        elapsed = time.perf_counter() - started
        return ckpt_path, log_path, elapsed

    def _save(self, path) -> None:
        extra = {}
        opt_state = self.opt.state_dict()["state"]
        names = [n for n, _ in self.model.named_parameters()]
        for i, name in enumerate(names):
            if i in opt_state:
                extra[f"opt.{name}.exp_avg"] = opt_state[i]["exp_avg"]
                extra[f"opt.{name}.exp_avg_sq"] = opt_state[i]["exp_avg_sq"]
                extra[f"opt.{name}.step"] = opt_state[i]["step"].to(torch.float64)
        save_model(path, self.model, extra=extra, meta={"step": self.step})

    def resume(self, ckpt_path) -> None:
        """Load weights, optimizer moments, and the step counter."""
        tensors, meta = load_checkpoint(ckpt_path)
        state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
        ref = self.model.state_dict()
        self.model.load_state_dict({k: v.to(ref[k].dtype) for k, v in state.items()})
        names = [n for n, _ in self.model.named_parameters()]
        opt_state = self.opt.state_dict()
        for i, name in enumerate(names):
            if f"opt.{name}.exp_avg" in tensors:
                opt_state["state"][i] = {
                    "step": tensors[f"opt.{name}.step"].to(torch.float32),
                    "exp_avg": tensors[f"opt.{name}.exp_avg"],
                    "exp_avg_sq": tensors[f"opt.{name}.exp_avg_sq"],
                }
        self.opt.load_state_dict(opt_state)
        self.step = int(meta["step"])
        self.sched = torch.optim.lr_scheduler.LambdaLR(
            self.opt, lambda s: one_cycle_factor(s, self.cfg.train),
            last_epoch=self.step - 1,
        )
