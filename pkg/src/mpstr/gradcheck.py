"""Finite-difference verification of analytic gradients.

Central differences in double precision over every parameter entry, batched
with vmap so the full sweep stays fast.  The comparison floor keeps the
relative error meaningful where both gradients are essentially zero.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
from torch.func import functional_call, vmap

from . import schedules
from .codec import Charset
from .config import ExperimentConfig
from .decoder import combine_blocked, context_ids
from .model import MPSTRModel
from .training import build_targets, compute_length_loss, compute_rec_loss


class TrainingObjective(nn.Module):
    """Eq-style combined loss as a pure function of the parameters."""

    def __init__(self, model: MPSTRModel, lam: float):
        super().__init__()
        self.model = model
        self.lam = lam

    def forward(self, images, word_ids, blocked, targets, g_len):
        z0, z_v = self.model.encode(images)
        len_loss = compute_length_loss(self.model.length_logits(z0, z_v), g_len)
        context = self.model.decoder.build_context(word_ids)
        logit_sets = torch.stack(
            [self.model.decoder(context, blocked[k], z_v) for k in range(blocked.shape[0])]
        )
        rec_loss = compute_rec_loss(logit_sets, targets)
        return self.lam * len_loss + (1.0 - self.lam) * rec_loss


def analytic_gradients(module: nn.Module, args) -> dict[str, torch.Tensor]:
    params = {n: p for n, p in module.named_parameters()}
    for p in params.values():
        p.grad = None
    loss = module(*args)
    loss.backward()
    return {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for n, p in params.items()}


def fd_gradients(module: nn.Module, args, eps: float = 2e-5,
                 chunk: int = 256) -> dict[str, torch.Tensor]:
    """Central-difference gradients for every parameter entry."""
    base = {n: p.detach() for n, p in module.named_parameters()}

    def loss_for(pdict):
        return functional_call(module, pdict, args)

    batched = vmap(loss_for)
    grads = {}
    for name, p in base.items():
        n = p.numel()
        flat = p.reshape(-1)
        grad = torch.empty(n, dtype=p.dtype)
        for start in range(0, n, chunk):
            m = min(chunk, n - start)
            rows = torch.arange(m)
            plus = flat.repeat(m, 1)
            plus[rows, start + rows] += eps
            minus = flat.repeat(m, 1)
            minus[rows, start + rows] -= eps
            stack_p = {
                k: (plus.reshape(m, *p.shape) if k == name
                    else v.unsqueeze(0).expand(m, *v.shape))
                for k, v in base.items()
            }
            stack_m = {
                k: (minus.reshape(m, *p.shape) if k == name
                    else v.unsqueeze(0).expand(m, *v.shape))
                for k, v in base.items()
            }
            grad[start : start + m] = (batched(stack_p) - batched(stack_m)) / (2 * eps)
        grads[name] = grad.reshape(p.shape)
    return grads


def max_relative_error(analytic: dict[str, torch.Tensor],
                       numeric: dict[str, torch.Tensor],
                       floor: float = 1e-6) -> tuple[float, str]:
    worst, worst_name = 0.0, ""
    for name in analytic:
        a, f = analytic[name].double(), numeric[name].double()
        denom = torch.maximum(a.abs(), f.abs()).clamp(min=floor)
        err = float(((a - f).abs() / denom).max())
        if err > worst:
            worst, worst_name = err, name
    return worst, worst_name


def toy_gradcheck_config(depth: int = 2, dim: int = 64, max_len: int = 8,
                         heads: int = 2) -> ExperimentConfig:
    from .config import DecoderConfig, EncoderConfig, TrainConfig

    return ExperimentConfig(
        encoder=EncoderConfig(
            image_height=8, image_width=16, patch_h=4, patch_w=8,
            depth=depth, heads=heads, dim=dim, mlp_ratio=1.0, max_len=max_len,
        ),
        decoder=DecoderConfig(dim=dim, heads=heads, mlp_ratio=1.0, max_len=max_len),
        train=TrainConfig(permutations=2, loss_balance=0.3, augment=False),
    )


def build_objective(cfg: ExperimentConfig, labels: list[str], seed: int = 0,
                    charset: Charset | None = None):
    """A double-precision objective with fixed inputs, ready to differentiate."""
    torch.manual_seed(seed)
    charset = charset or Charset()
    model = MPSTRModel(cfg, charset).double()
    T = cfg.max_len
    rng = np.random.default_rng(seed)
    B = len(labels)
    images = torch.from_numpy(rng.standard_normal(
        (B, cfg.encoder.channels, cfg.encoder.image_height, cfg.encoder.image_width)
    ))
    lengths = [len(l) for l in labels]
    perms = schedules.sample_permutations(cfg.train.permutations, max(lengths), rng)
    blocked = np.stack([
        np.stack([
            combine_blocked(
                schedules.build_train_mask(
                    schedules.restrict_permutation(p, L), L, T),
                schedules.build_pad_mask(L, T))
            for L in lengths
        ])
        for p in perms
    ])
    word_ids = torch.from_numpy(np.stack([
        context_ids(charset.encode(l, T).ids, L, T, charset)
        for l, L in zip(labels, lengths)
    ]))
    targets = build_targets(labels, charset, T)
    g_len = torch.tensor(lengths, dtype=torch.long)
    objective = TrainingObjective(model, cfg.train.loss_balance)
    args = (images, word_ids, torch.from_numpy(blocked), targets, g_len)
    return objective, args


def run_full_gradcheck(depth: int = 2, dim: int = 64, max_len: int = 8,
                       labels: list[str] | None = None, eps: float = 2e-5,
                       chunk: int = 256) -> tuple[float, str, int]:
    """Returns (max relative error, worst parameter, parameter count)."""
    cfg = toy_gradcheck_config(depth=depth, dim=dim, max_len=max_len)
    objective, args = build_objective(cfg, labels or ["4a", "q07"])
    ana = analytic_gradients(objective, args)
    num = fd_gradients(objective, args, eps=eps, chunk=chunk)
    err, name = max_relative_error(ana, num)
    n_params = sum(p.numel() for p in objective.parameters())
    return err, name, n_params
