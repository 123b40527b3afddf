import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from patentscope.embedindex import LocalEmbedder
from patentscope.errors import EmptyInput, EmptyReference, EmptySequence, NoReferenceBigrams
from patentscope.evaluation import (
    ExpertScores,
    aggregate_expert_scores,
    bert_f1,
    bert_precision,
    bert_recall,
    evaluate_pair,
    lcs_length,
    rouge1,
    rouge2,
    rougeL,
)

GEN, REF = ["a", "b", "d"], ["a", "b", "c"]
seqs = st.lists(st.sampled_from("abcdef"), max_size=12)


class TableEmbedder:
    def __init__(self, table):
        self.table = {k: np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for k, v in table.items()}

    def embed_batch(self, tokens):
        return [self.table[t] for t in tokens]


ORTHO = TableEmbedder({"a": [1, 0, 0], "b": [0, 1, 0], "c": [0, 0, 1]})
HAND = TableEmbedder({"x": [1, 0, 0], "y": [0.6, 0.8, 0], "z": [0, 0, 1]})


def brute_lcs(a, b):
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for r in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), r):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(t in it for t in sub):
                return r
    return 0


class TestRouge:
    def test_rouge1_examples(self):
        assert rouge1(GEN, REF) == pytest.approx(2 / 3)
        assert rouge1(REF, REF) == 1.0
        assert rouge1(["a", "a", "a"], ["a", "b"]) == 0.5

    def test_rouge2_examples(self):
        assert rouge2(GEN, REF) == 0.5
        assert rouge2(REF, REF) == 1.0
        assert rouge2(["x", "y"], ["a", "b"]) == 0.0

    def test_rougeL_examples(self):
        assert rougeL(GEN, REF) == pytest.approx(2 / 3)
        assert rougeL(REF, REF) == 1.0

    def test_errors(self):
        with pytest.raises(EmptyReference):
            rouge1(GEN, [])
        with pytest.raises(EmptyReference):
            rougeL(GEN, [])
        with pytest.raises(NoReferenceBigrams):
            rouge2(GEN, ["a"])

    @given(seqs, seqs)
    def test_lcs_matches_brute_force(self, a, b):
        assert lcs_length(a, b) == brute_lcs(a, b)

    @given(st.lists(st.sampled_from("abc"), max_size=40), st.lists(st.sampled_from("abc"), min_size=2, max_size=8))
    def test_clipping_bound(self, gen, ref):
        for f in (rouge1, rouge2, rougeL):
            assert 0.0 <= f(gen, ref) <= 1.0

    @given(st.lists(st.sampled_from("abcdef"), min_size=2, max_size=12))
    def test_identity(self, ref):
        assert rouge1(ref, ref) == rouge2(ref, ref) == rougeL(ref, ref) == 1.0


class TestBert:
    def test_identity_local(self):
        toks = ["resist", "mold", "resist", "helium"]
        e = LocalEmbedder()
        assert bert_precision(toks, toks, e) == pytest.approx(1.0, abs=1e-6)
        assert bert_recall(toks, toks, e) == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        assert bert_precision(["a", "b"], ["c"], ORTHO) == pytest.approx(0.0, abs=1e-6)
        assert bert_recall(["a", "b"], ["c"], ORTHO) == pytest.approx(0.0, abs=1e-6)

    def test_hand_table(self):
        # P: x->y 0.6, z->y 0.0 ; R: y->x 0.6
        assert bert_precision(["x", "z"], ["y"], HAND) == pytest.approx(0.3)
        assert bert_recall(["x", "z"], ["y"], HAND) == pytest.approx(0.6)
        # P over [x, y, z] vs [x, z]: x 1.0, y max(0.6, 0) 0.6, z 1.0
        assert bert_precision(["x", "y", "z"], ["x", "z"], HAND) == pytest.approx((1.0 + 0.6 + 1.0) / 3)

    def test_empty(self):
        with pytest.raises(EmptySequence):
            bert_precision([], ["a"], ORTHO)

    @given(st.lists(st.sampled_from("xyz"), min_size=1, max_size=6), st.lists(st.sampled_from("xyz"), min_size=1, max_size=6))
    def test_symmetry(self, g, r):
        assert bert_recall(g, r, HAND) == bert_precision(r, g, HAND)
        assert -1.0 <= bert_precision(g, r, HAND) <= 1.0


class TestF1:
    def test_examples(self):
        assert bert_f1(1.0, 1.0) == 1.0
        assert bert_f1(0.5, 1.0) == pytest.approx(0.6667, abs=1e-4)
        assert bert_f1(0.0, 0.0) == 0.0

    def test_negative(self):
        with pytest.raises(ValueError):
            bert_f1(-0.1, 0.5)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_between(self, p, r):
        f = bert_f1(p, r)
        assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12


class TestPair:
    def test_identical(self):
        text = "The mold contacts the resist droplets under helium."
        rep = evaluate_pair(text, text, LocalEmbedder())
        for v in rep.to_dict().values():
            assert v == pytest.approx(1.0, abs=1e-6)

    def test_deterministic(self):
        e = LocalEmbedder()
        a = evaluate_pair("resist mold gap", "mold resist layer", e)
        b = evaluate_pair("resist mold gap", "mold resist layer", e)
        assert a == b


class TestExperts:
    def test_single(self):
        s = ExpertScores(4, 3, 5, 2, 1)
        assert aggregate_expert_scores([s]) == s

    def test_two(self):
        out = aggregate_expert_scores([ExpertScores(4, 4, 4, 4, 4), ExpertScores(5, 5, 5, 5, 5)])
        assert out.informative == 4.5

    def test_four_sets(self):
        sets = [
            ExpertScores(4.0, 3.5, 4.5, 3.0, 2.5),
            ExpertScores(3.0, 4.0, 4.0, 3.5, 3.0),
            ExpertScores(5.0, 4.5, 4.0, 4.0, 3.5),
            ExpertScores(4.0, 4.0, 3.5, 3.5, 3.0),
        ]
        assert aggregate_expert_scores(sets) == ExpertScores(4.0, 4.0, 4.0, 3.5, 3.0)

    def test_errors(self):
        with pytest.raises(EmptyInput):
            aggregate_expert_scores([])
        with pytest.raises(ValueError):
            ExpertScores(6, 0, 0, 0, 0)
