from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from axialfuse.metrics import accuracy, auc, binary_auc_exact, macro_ovr_auc


def pairwise_auc(scores, positive) -> Fraction | None:
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    if not pos or not neg:
        return None
    wins = Fraction(0)
    for a in pos:
        for b in neg:
            wins += 1 if a > b else Fraction(1, 2) if a == b else 0
    return wins / (len(pos) * len(neg))


def pairwise_macro(scores, labels, k):
    vals = [pairwise_auc(scores[:, c], labels == c) for c in range(k)]
    vals = [v for v in vals if v is not None]
    return sum(vals, Fraction(0)) / len(vals) if vals else None


def test_perfect_separation():
    assert binary_auc_exact([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1


def test_all_ties_is_half():
    assert binary_auc_exact([0.5] * 6, [0, 1, 0, 1, 1, 0]) == Fraction(1, 2)


def test_random_30_by_3_matches_oracle():
    rng = np.random.default_rng(0)
    scores = rng.integers(0, 6, (30, 3)).astype(float)
    labels = rng.integers(0, 3, 30)
    assert macro_ovr_auc(scores, labels).exact == pairwise_macro(scores, labels, 3)


@st.composite
def instances(draw):
    n = draw(st.integers(2, 50))
    k = draw(st.integers(2, 11))
    levels = draw(st.integers(1, 8))  # few levels -> many ties
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return rng.integers(0, levels, (n, k)).astype(float) / levels, rng.integers(0, k, n), k


@settings(max_examples=150, deadline=None)
@given(instances())
def test_macro_auc_equals_pairwise_oracle(inst):
    scores, labels, k = inst
    got = macro_ovr_auc(scores, labels, k)
    want = pairwise_macro(scores, labels, k)
    assert got.exact == want
    assert sorted(got.skipped) == [c for c in range(k) if not (labels == c).any() or (labels == c).all()]


def test_single_class_gives_none():
    r = macro_ovr_auc(np.ones((4, 2)), np.zeros(4, int))
    assert r.value is None and r.skipped == [0, 1]


def test_binary_task_uses_class_one_column():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    labels = np.array([0, 1, 0, 1])
    assert auc(scores, labels, "binary").value == 1.0


def test_accuracy_is_exact_ratio():
    assert accuracy([0, 1, 1], [0, 1, 0]) == pytest.approx(2 / 3)
    assert accuracy([], []) == 0.0
