"""Permutation sampling and attention/padding mask construction.

Conventions, used verbatim everywhere downstream:

* Attention matrices follow the 1 = blocked, 0 = attendable convention.
* Each schedule has ``T+1`` query rows (character slots ``1..T`` plus the
  ending-symbol slot) and ``T+2`` key columns per side: column 0 is [B] on the
  word side (and the always-blocked [M]_0 on the mask side), columns ``1..T``
  are character slots, and column ``L+1`` holds [E] (word side) / the
  EOS-aligned mask token (mask side).
* Query row ``i`` (0-based) decodes slot ``i+1``; the ending-symbol query for
  a length-``L`` word is row ``L``.  Rows beyond ``L+1`` are fully blocked.
* Padding masks use 1 = valid, 0 = padded.

Permutations are 1-based position lists, e.g. ``[1, 3, 2]``.  The ending
symbol is never part of a permutation; it is always the final decode step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCKED = 1
ATTEND = 0


@dataclass(frozen=True)
class AttentionSchedule:
    """Per-query blocking matrices over the doubled context."""

    word: np.ndarray  # (T+1, T+2) int8, 1 = blocked
    mask: np.ndarray  # (T+1, T+2) int8, 1 = blocked

    @property
    def combined(self) -> np.ndarray:
        """(T+1, 2(T+2)) matrix: word half then mask half."""
        return np.concatenate([self.word, self.mask], axis=1)

    def serialize(self) -> str:
        """Plain-text 0/1 grid, one query row per line, word half first."""
        return "\n".join(" ".join(str(v) for v in row) for row in self.combined)


@dataclass(frozen=True)
class PadMask:
    word: np.ndarray  # (T+2,) int8, 1 = valid
    mask: np.ndarray  # (T+2,) int8, 1 = valid

    @property
    def combined(self) -> np.ndarray:
        return np.concatenate([self.word, self.mask])


def _check_length(L: int, T: int) -> None:
    if not 1 <= L <= T:
        raise ValueError(f"length {L} outside [1, {T}]")


def sample_permutations(K: int, L: int, rng: np.random.Generator) -> list[list[int]]:
    """K decode orders over positions 1..L.

    The identity order always comes first; the rest are drawn as
    (random permutation, its reverse) pairs until K entries exist.
    Duplicates are permitted when L! < K.
    """
    if K < 1 or L < 1:
        raise ValueError("K and L must be >= 1")
    perms: list[list[int]] = [list(range(1, L + 1))]
    while len(perms) < K:
        p = [int(v) for v in rng.permutation(L) + 1]
        perms.append(p)
        if len(perms) < K:
            perms.append(p[::-1])
    return perms


def restrict_permutation(perm: list[int], L: int) -> list[int]:
    """Sub-order induced on positions 1..L, preserving relative order.

    Lets one batch share generator permutations drawn at the batch-max
    length: restricting commutes with reversal and maps identity to identity.
    """
    return [p for p in perm if p <= L]


def _blank(T: int) -> tuple[np.ndarray, np.ndarray]:
    word = np.full((T + 1, T + 2), BLOCKED, dtype=np.int8)
    mask = np.full((T + 1, T + 2), BLOCKED, dtype=np.int8)
    return word, mask


def build_train_mask(
    perm: list[int], L: int, T: int, mask_len: int | None = None
) -> AttentionSchedule:
    """Schedule for one training permutation.

    Decode step t for position ``z_t`` attends [B] plus already-decoded
    positions on the word side, and the not-yet-decoded positions plus the
    EOS-aligned token on the mask side.  The ending-symbol step attends [B]
    plus all characters on the word side and only its own mask token.

    ``mask_len`` is the effective length driving the mask-token extent; it
    differs from ``L`` only under length perturbation (clamped to L +/- 1).
    """
    _check_length(L, T)
    if sorted(perm) != list(range(1, L + 1)):
        raise ValueError(f"perm {perm} is not a permutation of 1..{L}")
    m_len = L if mask_len is None else mask_len
    if not 1 <= m_len <= T:
        raise ValueError(f"mask_len {m_len} outside [1, {T}]")

    word, mask = _blank(T)
    # Trailing mask slots beyond the real characters: under an over-long
    # effective length these act as extra never-decoded positions.
    trailing = range(min(L, m_len) + 1, m_len + 2)
    for t, pos in enumerate(perm, start=1):
        row = pos - 1
        word[row, 0] = ATTEND
        for prev in perm[: t - 1]:
            word[row, prev] = ATTEND
        for rem in perm[t - 1 :]:
            if rem <= m_len:
                mask[row, rem] = ATTEND
        for slot in trailing:
            mask[row, slot] = ATTEND
    # Ending-symbol step: all characters on the word side, own token on the
    # mask side.
    word[L, 0] = ATTEND
    word[L, 1 : L + 1] = ATTEND
    mask[L, m_len + 1] = ATTEND
    return AttentionSchedule(word, mask)


def build_ar_infer_mask(L: int, T: int) -> AttentionSchedule:
    """Left-to-right inference schedule; equals the identity-order train mask."""
    return build_train_mask(list(range(1, L + 1)), L, T)


def build_nar_mask(L: int, T: int) -> AttentionSchedule:
    """One-shot parallel decoding: every query sees [B] and all mask tokens."""
    _check_length(L, T)
    word, mask = _blank(T)
    for row in range(L + 1):
        word[row, 0] = ATTEND
        mask[row, 1 : L + 2] = ATTEND
    return AttentionSchedule(word, mask)


def build_cloze_mask(L: int, T: int) -> AttentionSchedule:
    """Simultaneous refinement: each query sees everything except itself on
    the word side and only its own token on the mask side."""
    _check_length(L, T)
    word, mask = _blank(T)
    for row in range(L + 1):
        slot = row + 1
        word[row, : L + 2] = ATTEND
        word[row, slot] = BLOCKED
        mask[row, slot] = ATTEND
    return AttentionSchedule(word, mask)


def build_pad_mask(L: int, T: int) -> PadMask:
    """First L+2 key positions valid, duplicated for both context halves."""
    _check_length(L, T)
    vec = np.zeros(T + 2, dtype=np.int8)
    vec[: L + 2] = 1
    return PadMask(vec, vec.copy())


def oracle_mask(
    perm: list[int], L: int, step: int, kind: str = "train"
) -> tuple[set[int], set[int]]:
    """Attendable (word-side, mask-side) position sets, by set arithmetic.

    An independent reference for the matrix builders, used only in tests.
    ``step`` is 1-based: steps 1..L decode ``perm[step-1]``, step L+1 is the
    ending symbol.  For kind='cloze', ``step`` is the slot being refined
    (1..L+1).  For kind='nar' the step is irrelevant.
    """
    positions = set(range(1, L + 1))
    eos_slot = L + 1
    if kind == "train":
        if step == L + 1:
            return {0} | positions, {eos_slot}
        decoded = set(perm[: step - 1])
        return {0} | decoded, (positions - decoded) | {eos_slot}
    if kind == "nar":
        return {0}, positions | {eos_slot}
    if kind == "cloze":
        full = {0} | positions | {eos_slot}
        return full - {step}, {step}
    raise ValueError(f"unknown kind {kind!r}")


def row_sets(schedule: AttentionSchedule, row: int) -> tuple[set[int], set[int]]:
    """Attendable position sets of one query row, for oracle comparison."""
    word = {int(j) for j in np.flatnonzero(schedule.word[row] == ATTEND)}
    mask = {int(j) for j in np.flatnonzero(schedule.mask[row] == ATTEND)}
    return word, mask
