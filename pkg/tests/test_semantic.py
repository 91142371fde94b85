import numpy as np
import pytest

import tkgdistill.semantic as semantic
from tkgdistill.datasets import Quadruple
from tkgdistill.distill import ScoreRow, loss_l2_huber
from tkgdistill.models import init_params
from tkgdistill.numerics import seeded_rng
from tkgdistill.semantic import (
    FileProvider,
    LlmProjectionHead,
    ProviderError,
    RemoteProvider,
    StubProvider,
    backprop_llm_scores,
    batch_llm_scores,
    build_pathway,
    init_head,
    llm_project_relation,
    llm_teacher_score,
    project_entities,
    provider_get_embedding,
    zero_head_grads,
    _head_backward,
)

from conftest import assert_grads_close, finite_difference, random_batch, toy_vocab


class TestStubProvider:
    def test_deterministic(self):
        p = StubProvider(16)
        a = provider_get_embedding(p, "entity", "Ukraine")
        b = provider_get_embedding(StubProvider(16), "entity", "Ukraine")
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        p = StubProvider(384)
        v = p.get("entity", "Ukraine")
        assert abs(np.linalg.norm(v) - 1.0) < 1e-9

    def test_kind_disambiguates(self):
        p = StubProvider(8)
        assert not np.array_equal(p.get("entity", "x"), p.get("relation", "x"))

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            provider_get_embedding(StubProvider(4), "verb", "x")


class TestFileProvider:
    def write(self, tmp_path, lines):
        f = tmp_path / "emb.tsv"
        f.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return f

    def test_parse_record(self, tmp_path):
        f = self.write(tmp_path, ["dim\t2", "entity\tA\t0.1,0.2"])
        p = FileProvider(f)
        np.testing.assert_allclose(p.get("entity", "A"), [0.1, 0.2])
        assert p.dim_llm == 2

    def test_vocab_coverage_enforced_at_load(self, tmp_path):
        f = self.write(tmp_path, ["dim\t2", "entity\te0\t0.1,0.2"])
        vocab = toy_vocab(1, 1, 1)  # needs relation r0 as well
        with pytest.raises(LookupError, match="missing"):
            FileProvider(f, vocab)

    def test_dim_drift_rejected(self, tmp_path):
        f = self.write(tmp_path, ["dim\t2", "entity\tA\t0.1,0.2,0.3"])
        with pytest.raises(ValueError, match="declares"):
            FileProvider(f)

    def test_missing_label_lookup(self, tmp_path):
        f = self.write(tmp_path, ["dim\t1", "entity\tA\t0.5"])
        with pytest.raises(LookupError):
            FileProvider(f).get("entity", "B")

    def test_malformed_header(self, tmp_path):
        f = self.write(tmp_path, ["2", "entity\tA\t0.1,0.2"])
        with pytest.raises(ValueError):
            FileProvider(f)


class TestRemoteProvider:
    def make(self, responses):
        calls = []

        def post(texts):
            calls.append(list(texts))
            front = responses.pop(0)
            if isinstance(front, Exception):
                raise front
            return [front[t] for t in texts]

        return RemoteProvider("http://unit.test/embed", post=post, backoff=0.0), calls

    def test_caches_one_fetch_per_label(self):
        table = {"A": [1.0, 0.0], "B": [0.0, 1.0]}
        provider, calls = self.make([table, table, table])
        provider.get("entity", "A")
        provider.get("entity", "A")
        provider.get("relation", "A")
        assert sum(c.count("A") for c in calls) == 1

    def test_retries_then_succeeds(self):
        table = {"A": [1.0]}
        provider, calls = self.make([RuntimeError("boom"), table])
        v = provider.get("entity", "A")
        assert v[0] == 1.0
        assert len(calls) == 2

    def test_exhausted_retries_raise(self):
        provider, calls = self.make([RuntimeError("x"), RuntimeError("x"), RuntimeError("x")])
        with pytest.raises(ProviderError, match="3 attempts"):
            provider.get("entity", "A")


class TestProjectionHead:
    def zero_head(self, d, dim_llm):
        return LlmProjectionHead(
            w_p=np.zeros((d, dim_llm)), b_p=np.zeros(d), w=np.zeros((d, d)), b=np.zeros(d)
        )

    def test_zero_weights_give_uniform(self):
        head = self.zero_head(4, 6)
        vocab = toy_vocab(2, 2, 1)
        E, P = llm_project_relation(head, StubProvider(6), vocab, 0)
        np.testing.assert_allclose(E, np.full(4, 0.25), atol=1e-15)
        np.testing.assert_allclose(P, np.full(4, 0.25), atol=1e-15)

    def test_outputs_sum_to_one(self):
        head = init_head(4, 6, seeded_rng(42))
        vocab = toy_vocab(2, 2, 1)
        E, P = llm_project_relation(head, StubProvider(6), vocab, 1)
        assert E.sum() == pytest.approx(1.0, abs=1e-12)
        assert P.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(E > 0) and np.all(P > 0)

    def test_projection_gradients_match_finite_differences(self):
        head = init_head(4, 6, seeded_rng(42))
        provider = StubProvider(6)
        vocab = toy_vocab(2, 2, 1)
        probe = seeded_rng(5).normal(size=4)

        def loss():
            _, P = llm_project_relation(head, provider, vocab, 0)
            return float(P @ probe)

        lv = provider.get("relation", "r0")[None, :]
        E, P = semantic.project_relations(head, lv)
        grads = zero_head_grads(head)
        _head_backward(head, np.zeros_like(E), probe[None, :], np.zeros((1, 6)), E, lv, E, P, grads)
        fd = finite_difference(loss, head.named_arrays())
        assert_grads_close(grads, fd)


class TestLlmTeacherScore:
    def setup_head(self):
        return init_head(4, 6, seeded_rng(42))

    def test_deterministic(self):
        head = self.setup_head()
        vocab = toy_vocab(3, 2, 2)
        tv = seeded_rng(3).normal(size=4)
        fact = Quadruple(0, 1, 2, 1)
        a = llm_teacher_score(head, StubProvider(6), vocab, fact, "tadistmult", tv)
        b = llm_teacher_score(head, StubProvider(6), vocab, fact, "tadistmult", tv)
        assert a == b

    def test_bilinear_in_relation_probabilities(self, monkeypatch):
        head = self.setup_head()
        vocab = toy_vocab(3, 2, 2)
        tv = seeded_rng(3).normal(size=4)
        monkeypatch.setattr(
            semantic, "project_relations", lambda h, v: (np.zeros((1, 4)), np.zeros((1, 4)))
        )
        score = llm_teacher_score(head, StubProvider(6), vocab, Quadruple(0, 1, 2, 1), "tadistmult", tv)
        assert score == 0.0

    def test_id_relabeling_invariance(self):
        head = self.setup_head()
        provider = StubProvider(6)
        vocab = toy_vocab(3, 2, 2)
        relabeled = toy_vocab(3, 2, 2)
        # swap entity ids 0 and 2 while keeping labels attached
        relabeled.entity_names = ["e2", "e1", "e0"]
        relabeled.entity_ids = {n: i for i, n in enumerate(relabeled.entity_names)}
        tv = seeded_rng(3).normal(size=4)
        a = llm_teacher_score(head, provider, vocab, Quadruple(0, 1, 2, 1), "ttranse", tv)
        b = llm_teacher_score(head, provider, relabeled, Quadruple(2, 1, 0, 1), "ttranse", tv)
        assert a == pytest.approx(b, rel=1e-12)

    def test_huber_self_consistency(self):
        head = self.setup_head()
        provider = StubProvider(6)
        vocab = toy_vocab(4, 2, 2)
        tv_table = seeded_rng(9).normal(size=(2, 4))
        facts = [Quadruple(0, 0, 1, 0), Quadruple(2, 1, 3, 1)]
        scores = np.array(
            [llm_teacher_score(head, provider, vocab, f, "tadistmult", tv_table[f.t]) for f in facts]
        )
        row = ScoreRow(
            candidate_ids=np.array([1, 3]),
            student_scores=scores.copy(),
            teacher_scores=None,
            llm_scores=scores,
        )
        assert loss_l2_huber(row, 1.0) == 0.0

    @pytest.mark.parametrize("kind", ["ttranse", "tadistmult"])
    def test_batched_scores_match_scalar(self, kind):
        rng = seeded_rng(17)
        vocab = toy_vocab(8, 3, 4)
        head = init_head(5, 6, seeded_rng(42))
        provider = StubProvider(6)
        pathway = build_pathway(head, provider, vocab)
        time_table = rng.normal(size=(4, 5))
        batch = random_batch(rng, vocab, 4, 3)
        scores, _ = batch_llm_scores(pathway, batch, time_table, kind)
        for i, quads in enumerate(batch.candidates):
            for j, quad in enumerate(quads):
                expected = llm_teacher_score(head, provider, vocab, quad, kind, time_table[quad.t])
                assert scores[i, j] == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("kind", ["ttranse", "tadistmult"])
    def test_batched_backprop_matches_finite_differences(self, kind):
        rng = seeded_rng(21)
        vocab = toy_vocab(6, 2, 3)
        head = init_head(4, 6, seeded_rng(42))
        pathway = build_pathway(head, StubProvider(6), vocab)
        student = init_params(kind, 6, 2, 3, 4, seeded_rng(1))
        batch = random_batch(rng, vocab, 3, 3)
        dscores = seeded_rng(2).normal(size=(3, 4))

        def loss():
            s, _ = batch_llm_scores(pathway, batch, student.time_emb, kind)
            return float(np.sum(s * dscores))

        _, cache = batch_llm_scores(pathway, batch, student.time_emb, kind)
        head_grads = zero_head_grads(head)
        time_grads = np.zeros_like(student.time_emb)
        backprop_llm_scores(pathway, cache, dscores, head_grads, time_grads)
        fd_head = finite_difference(loss, head.named_arrays())
        assert_grads_close(head_grads, fd_head)
        fd_time = finite_difference(loss, {"t": student.time_emb})
        assert_grads_close({"t": time_grads}, fd_time)


class TestHeadPersistence:
    def test_save_load_round_trip(self, tmp_path):
        head = init_head(4, 6, seeded_rng(0))
        semantic.save_head(tmp_path / "head.npz", head)
        loaded = semantic.load_head(tmp_path / "head.npz")
        for name, arr in head.named_arrays().items():
            assert np.array_equal(loaded.named_arrays()[name], arr)
