import itertools

import numpy as np
import pytest

from mpstr import schedules
from mpstr.schedules import (
    build_ar_infer_mask,
    build_cloze_mask,
    build_nar_mask,
    build_pad_mask,
    build_train_mask,
    oracle_mask,
    restrict_permutation,
    row_sets,
    sample_permutations,
)

# Frozen reference grids for decode order [1,3,2] at L=3 (word half, mask half).
WORD_132 = [
    [0, 1, 1, 1, 1],
    [0, 0, 1, 0, 1],
    [0, 0, 1, 1, 1],
    [0, 0, 0, 0, 1],
]
MASK_132 = [
    [1, 0, 0, 0, 0],
    [1, 1, 0, 1, 0],
    [1, 1, 0, 0, 0],
    [1, 1, 1, 1, 0],
]


def test_reference_grid_for_order_132():
    sched = build_train_mask([1, 3, 2], L=3, T=3)
    assert sched.word.tolist() == WORD_132
    assert sched.mask.tolist() == MASK_132


def test_serialize_matches_reference_grid():
    text = build_train_mask([1, 3, 2], 3, 3).serialize()
    assert text.splitlines()[0] == "0 1 1 1 1 1 0 0 0 0"
    assert text.splitlines()[3] == "0 0 0 0 1 1 1 1 1 0"


@pytest.mark.parametrize("L", range(1, 9))
def test_ar_mask_is_strictly_causal(L):
    sched = build_ar_infer_mask(L, T=L)
    # Row y_i attends [B] and y_1..y_{i-1} on the word side, [M]_i..[M]_{L+1}
    # on the mask side.
    for i in range(1, L + 1):
        word, mask = row_sets(sched, i - 1)
        assert word == set(range(0, i))
        assert mask == set(range(i, L + 2))
    word, mask = row_sets(sched, L)
    assert word == set(range(0, L + 1))
    assert mask == {L + 1}


def test_ar_first_and_last_rows_at_padded_T():
    L, T = 4, 8
    sched = build_ar_infer_mask(L, T)
    word, mask = row_sets(sched, 0)
    assert word == {0}
    assert mask == {1, 2, 3, 4, 5}
    # Ending-symbol row: word side blocks only [E] (within the valid extent).
    assert sched.word[L, : L + 2].tolist() == [0, 0, 0, 0, 0, 1]
    assert sched.mask[L, : L + 2].tolist() == [1, 1, 1, 1, 1, 0]


def test_cloze_reference_vector():
    sched = build_cloze_mask(4, 4)
    assert sched.combined[1].tolist() == [0, 0, 1, 0, 0, 0, 1, 1, 0, 1, 1, 1]


def test_cloze_length_one():
    sched = build_cloze_mask(1, 1)
    assert sched.word[0].tolist() == [0, 1, 0]
    assert sched.mask[0].tolist() == [1, 0, 1]


def test_nar_rows_identical():
    sched = build_nar_mask(3, 3)
    for row in range(4):
        assert sched.word[row].tolist() == [0, 1, 1, 1, 1]
        assert sched.mask[row].tolist() == [1, 0, 0, 0, 0]


def test_nar_length_one():
    sched = build_nar_mask(1, 1)
    assert sched.word[0].tolist() == sched.word[1].tolist() == [0, 1, 1]
    assert sched.mask[0].tolist() == sched.mask[1].tolist() == [1, 0, 0]


def test_train_mask_length_one():
    sched = build_train_mask([1], 1, 1)
    word, mask = row_sets(sched, 0)
    assert word == {0}
    assert mask == {1, 2}
    word, mask = row_sets(sched, 1)
    assert word == {0, 1}
    assert mask == {2}


def test_padding_rows_fully_blocked():
    sched = build_train_mask([2, 1], 2, 8)
    for row in range(3, 9):
        assert sched.word[row].sum() == 10
        assert sched.mask[row].sum() == 10


def test_length_validation():
    with pytest.raises(ValueError):
        build_train_mask([1, 2, 3], 3, 2)
    with pytest.raises(ValueError):
        build_ar_infer_mask(0, 5)
    with pytest.raises(ValueError):
        build_train_mask([1, 3], 2, 5)  # not a permutation of 1..2


# -- pad masks ---------------------------------------------------------------


def test_pad_mask_house_example():
    pad = build_pad_mask(5, 25)
    expected = [1] * 7 + [0] * 20
    assert pad.word.tolist() == expected
    assert pad.mask.tolist() == expected


def test_pad_mask_full_and_minimal():
    assert build_pad_mask(8, 8).combined.tolist() == [1] * 20
    vec = build_pad_mask(1, 8).word.tolist()
    assert vec == [1, 1, 1] + [0] * 7


def test_pad_mask_validation():
    with pytest.raises(ValueError):
        build_pad_mask(0, 8)
    with pytest.raises(ValueError):
        build_pad_mask(9, 8)


# -- permutation sampling ----------------------------------------------------


def test_identity_always_first():
    rng = np.random.default_rng(0)
    assert sample_permutations(1, 5, rng) == [[1, 2, 3, 4, 5]]


def test_pairing_structure_k12():
    rng = np.random.default_rng(3)
    perms = sample_permutations(12, 3, rng)
    assert len(perms) == 12
    assert perms[0] == [1, 2, 3]
    for i in range(2, 12, 2):
        assert perms[i] == perms[i - 1][::-1]
    for p in perms:
        assert sorted(p) == [1, 2, 3]


def test_single_position_duplicates():
    rng = np.random.default_rng(1)
    assert sample_permutations(2, 1, rng) == [[1], [1]]


def test_restrict_permutation_commutes_with_reverse():
    perm = [3, 1, 5, 4, 2]
    assert restrict_permutation(perm, 3) == [3, 1, 2]
    assert restrict_permutation(perm[::-1], 3) == restrict_permutation(perm, 3)[::-1]
    assert restrict_permutation(list(range(1, 6)), 4) == [1, 2, 3, 4]


# -- oracle equivalence and structural properties -----------------------------


def _schedule_rows(kind, perm, L, T):
    """(row_index, oracle_step) pairs and the built schedule for one kind."""
    if kind == "train":
        sched = build_train_mask(perm, L, T)
        rows = [(p - 1, t) for t, p in enumerate(perm, start=1)] + [(L, L + 1)]
    elif kind == "ar":
        sched = build_ar_infer_mask(L, T)
        perm = list(range(1, L + 1))
        rows = [(i - 1, i) for i in range(1, L + 2)]
    elif kind == "nar":
        sched = build_nar_mask(L, T)
        rows = [(i - 1, i) for i in range(1, L + 2)]
    else:
        sched = build_cloze_mask(L, T)
        rows = [(i - 1, i) for i in range(1, L + 2)]
    return sched, perm, rows


def _assert_matches_oracle(kind, perm, L, T):
    sched, perm, rows = _schedule_rows(kind, perm, L, T)
    for row, step in rows:
        expect = oracle_mask(perm, L, step, "train" if kind == "ar" else kind)
        got = row_sets(sched, row)
        assert got == expect, f"{kind} perm={perm} L={L} step={step}: {got} != {expect}"
        word, mask = got
        # Partition property: the two attendable sets split 0..L+1 exactly.
        assert word | mask == set(range(L + 2))
        assert word & mask == set()
        # The mask token aligned with [B] is never attendable.
        assert 0 not in mask


def test_oracle_equivalence_exhaustive_small_L():
    for L in range(1, 6):
        T = L + 2
        for perm in itertools.permutations(range(1, L + 1)):
            _assert_matches_oracle("train", list(perm), L, T)
        for kind in ("ar", "nar", "cloze"):
            _assert_matches_oracle(kind, None, L, T)


def test_oracle_equivalence_sampled_large_L():
    rng = np.random.default_rng(42)
    for L in (6, 7, 8):
        for kind in ("ar", "nar", "cloze"):
            _assert_matches_oracle(kind, None, L, 8)
        for _ in range(200):
            perm = [int(v) for v in rng.permutation(L) + 1]
            _assert_matches_oracle("train", perm, L, 8)


def test_oracle_examples_from_tables():
    assert oracle_mask([1, 3, 2], 3, 3, "train") == ({0, 1, 3}, {2, 4})
    assert oracle_mask(list(range(1, 6)), 5, 1, "train") == ({0}, {1, 2, 3, 4, 5, 6})
    assert oracle_mask(None, 4, 2, "cloze") == ({0, 1, 3, 4, 5}, {2})


def test_self_exclusion_all_kinds():
    rng = np.random.default_rng(7)
    for L in range(1, 9):
        perm = [int(v) for v in rng.permutation(L) + 1]
        for kind, sched in (
            ("train", build_train_mask(perm, L, 8)),
            ("ar", build_ar_infer_mask(L, 8)),
            ("cloze", build_cloze_mask(L, 8)),
        ):
            for pos in range(1, L + 1):
                assert sched.word[pos - 1, pos] == 1, f"{kind} row {pos} sees itself"


def test_identity_train_equals_ar():
    for L in range(1, 9):
        for T in (L, 8):
            train = build_train_mask(list(range(1, L + 1)), L, T)
            ar = build_ar_infer_mask(L, T)
            assert np.array_equal(train.word, ar.word)
            assert np.array_equal(train.mask, ar.mask)


def test_identity_monotonicity():
    sched = build_train_mask(list(range(1, 7)), 6, 8)
    prev = set()
    for i in range(6):
        word, _ = row_sets(sched, i)
        assert prev < word
        prev = word


# -- perturbed effective length ------------------------------------------------


def test_mask_len_minus_one_hides_tail_mask():
    L, T = 4, 8
    plain = build_train_mask([1, 2, 3, 4], L, T)
    shrunk = build_train_mask([1, 2, 3, 4], L, T, mask_len=3)
    assert np.array_equal(plain.word, shrunk.word)  # word side untouched
    _, mask = row_sets(shrunk, 0)
    assert mask == {1, 2, 3, 4}  # remaining positions <=3 plus [M]_4 as the end slot
    _, eos_mask = row_sets(shrunk, L)
    assert eos_mask == {4}


def test_mask_len_plus_one_exposes_extra_mask():
    L, T = 4, 8
    grown = build_train_mask([1, 2, 3, 4], L, T, mask_len=5)
    _, mask = row_sets(grown, 0)
    assert mask == {1, 2, 3, 4, 5, 6}
    _, eos_mask = row_sets(grown, L)
    assert eos_mask == {6}
