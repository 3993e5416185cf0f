"""Text normalization and word error rate against independent oracles."""

import itertools
from functools import lru_cache

import pytest

from bridge_oa.metrics import edit_distance, normalize_text, wer


@lru_cache(maxsize=None)
def recursive_distance(ref: tuple, hyp: tuple) -> int:
    """Exhaustive-alignment oracle: top-down recursion over every edit
    script, structurally independent of the iterative DP matrix."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    return min(
        recursive_distance(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
        recursive_distance(ref[1:], hyp) + 1,
        recursive_distance(ref, hyp[1:]) + 1,
    )


class TestNormalizeText:
    def test_case_and_punctuation(self):
        assert normalize_text("The CAT, sat.") == ["the", "cat", "sat"]

    def test_intra_word_apostrophe_kept(self):
        assert normalize_text("don't stop") == ["don't", "stop"]

    def test_edge_apostrophes_stripped(self):
        assert normalize_text("'quoted' words''") == ["quoted", "words"]

    def test_whitespace_only(self):
        assert normalize_text("   ") == []

    def test_numbers_survive(self):
        assert normalize_text("Room 101!") == ["room", "101"]

    def test_idempotent(self):
        tokens = normalize_text("It's A mixed-CASE, string!")
        assert normalize_text(" ".join(tokens)) == tokens


class TestWer:
    def test_identity(self):
        assert wer(["a", "b", "c"], ["a", "b", "c"]) == 0.0

    def test_one_substitution(self):
        assert wer(["a", "b", "c"], ["a", "x", "c"]) == pytest.approx(1 / 3)

    def test_one_insertion(self):
        assert wer(["a", "b"], ["a", "b", "c"]) == pytest.approx(0.5)

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            wer([], ["a"])

    def test_can_exceed_one(self):
        assert wer(["a"], ["x", "y", "z"]) == 3.0

    def test_empty_hypothesis_all_deletions(self):
        assert wer(["a", "b", "c", "d"], []) == 1.0

    def test_matches_bruteforce_on_all_short_pairs(self):
        """DP distance equals the exhaustive recursion for every ref/hyp
        pair of length <= 5 over a 3-symbol alphabet."""
        alphabet = ("a", "b", "c")
        seqs = [
            tup
            for n in range(6)
            for tup in itertools.product(alphabet, repeat=n)
        ]
        for ref in seqs:
            for hyp in seqs:
                assert edit_distance(ref, hyp) == recursive_distance(ref, hyp)

    def test_symmetry_of_distance(self):
        assert edit_distance(["a", "b"], ["b"]) == edit_distance(["b"], ["a", "b"])
