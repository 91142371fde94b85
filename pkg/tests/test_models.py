import numpy as np
import pytest

from tkgdistill import models
from tkgdistill.datasets import Quadruple
from tkgdistill.models import (
    AdagradState,
    ModelParams,
    adagrad_step,
    base_loss_fn,
    base_training_loss,
    batch_candidate_scores,
    init_params,
    load_checkpoint,
    lstm_encode,
    lstm_forward,
    lstm_backward,
    model_gradients,
    save_checkpoint,
    score_all_objects,
    score_all_subjects,
    score_fact,
    tadistmult_score,
    ttranse_score,
    zero_grads,
)
from tkgdistill.numerics import seeded_rng

from conftest import assert_grads_close, finite_difference, random_batch, toy_vocab


def manual_params(kind, entity_rows, relation_rows, time_rows, lstm=None):
    e = np.asarray(entity_rows, dtype=np.float64)
    return ModelParams(
        kind=kind,
        dim=e.shape[1],
        entity_emb=e,
        relation_emb=np.asarray(relation_rows, dtype=np.float64),
        time_emb=np.asarray(time_rows, dtype=np.float64),
        lstm=lstm,
    )


def zero_lstm(dim):
    lstm = {}
    for gate in models.GATES:
        lstm[f"w_{gate}"] = np.zeros((dim, dim))
        lstm[f"u_{gate}"] = np.zeros((dim, dim))
        lstm[f"b_{gate}"] = np.zeros(dim)
    return lstm


class TestTTransEScore:
    def test_exact_translation(self):
        params = manual_params("ttranse", [[1, 0], [1, 1]], [[0, 1]], [[0, 0]])
        assert ttranse_score(params, Quadruple(0, 0, 1, 0)) == 0.0

    def test_all_zero(self):
        params = manual_params("ttranse", [[0, 0], [0, 0]], [[0, 0]], [[0, 0]])
        assert ttranse_score(params, Quadruple(0, 0, 1, 0)) == 0.0

    def test_worked_norm(self):
        params = manual_params("ttranse", [[1, 2], [0, 0]], [[0, 1]], [[1, 0]])
        assert ttranse_score(params, Quadruple(0, 0, 1, 0)) == pytest.approx(-np.sqrt(13), abs=1e-6)

    def test_translation_invariance(self, rng42):
        params = init_params("ttranse", 6, 2, 3, 5, rng42)
        fact = Quadruple(1, 0, 4, 2)
        before = ttranse_score(params, fact)
        shift = rng42.normal(size=5)
        params.entity_emb[1] += shift
        params.entity_emb[4] += shift
        assert abs(ttranse_score(params, fact) - before) < 1e-12


class TestLstm:
    def test_zero_weights_give_zero_hidden(self):
        params = manual_params(
            "tadistmult", [[1.0, 2.0]], [[0.5, -0.5]], [[1.0, -1.0]], lstm=zero_lstm(2)
        )
        np.testing.assert_array_equal(lstm_encode(params, 0, 0), np.zeros(2))

    def test_deterministic(self, rng42):
        params = init_params("tadistmult", 3, 2, 2, 4, rng42)
        a = lstm_encode(params, 1, 1)
        b = lstm_encode(params, 1, 1)
        assert np.array_equal(a, b)

    def test_gradients_match_finite_differences(self):
        params = init_params("tadistmult", 3, 2, 2, 2, seeded_rng(42))
        probe = seeded_rng(1).normal(size=2)
        x1 = params.relation_emb[0:1]
        x2 = params.time_emb[0:1]

        def loss():
            h2, _ = lstm_forward(params.lstm, x1, x2)
            return float(h2[0] @ probe)

        h2, cache = lstm_forward(params.lstm, x1, x2)
        grads = zero_grads(params)
        dx1, dx2 = lstm_backward(params.lstm, cache, probe[None, :], grads)
        arrays = {k: v for k, v in params.named_arrays().items() if k.startswith("lstm.")}
        fd = finite_difference(loss, arrays)
        assert_grads_close(grads, fd)
        fd_inputs = finite_difference(loss, {"x1": x1, "x2": x2})
        assert_grads_close({"x1": dx1, "x2": dx2}, fd_inputs)


class TestTADistMultScore:
    def test_zero_encoding_gives_zero(self):
        params = manual_params(
            "tadistmult", [[1, 2], [3, 4]], [[0.5, 0.5]], [[1, 1]], lstm=zero_lstm(2)
        )
        assert tadistmult_score(params, Quadruple(0, 0, 1, 0)) == 0.0

    def test_worked_bilinear(self, monkeypatch):
        params = manual_params(
            "tadistmult", [[1, 2], [3, 4]], [[0, 0]], [[0, 0]], lstm=zero_lstm(2)
        )
        monkeypatch.setattr(models, "lstm_encode", lambda p, rel, t: np.array([1.0, 1.0]))
        assert tadistmult_score(params, Quadruple(0, 0, 1, 0)) == 11.0

    def test_disjoint_supports(self, monkeypatch):
        params = manual_params(
            "tadistmult", [[2, 0], [0, 5]], [[0, 0]], [[0, 0]], lstm=zero_lstm(2)
        )
        monkeypatch.setattr(models, "lstm_encode", lambda p, rel, t: np.array([1.0, 1.0]))
        assert tadistmult_score(params, Quadruple(0, 0, 1, 0)) == 0.0

    def test_symmetric_in_entities(self, rng42):
        params = init_params("tadistmult", 5, 2, 3, 4, rng42)
        a = tadistmult_score(params, Quadruple(1, 0, 3, 2))
        b = tadistmult_score(params, Quadruple(3, 0, 1, 2))
        assert a == pytest.approx(b, rel=1e-12)

    def test_linear_in_encoding(self, rng42, monkeypatch):
        params = init_params("tadistmult", 4, 2, 2, 3, rng42)
        v = rng42.normal(size=3)
        monkeypatch.setattr(models, "lstm_encode", lambda p, rel, t: v)
        one = tadistmult_score(params, Quadruple(0, 0, 1, 0))
        monkeypatch.setattr(models, "lstm_encode", lambda p, rel, t: 2.5 * v)
        assert tadistmult_score(params, Quadruple(0, 0, 1, 0)) == pytest.approx(2.5 * one, rel=1e-12)


class TestVectorizedScoring:
    @pytest.mark.parametrize("kind", ["ttranse", "tadistmult"])
    def test_matches_scalar_scoring(self, kind):
        rng = seeded_rng(11)
        vocab = toy_vocab(8, 3, 4)
        params = init_params(kind, 8, 3, 4, 5, rng)
        for p, o, t in [(0, 2, 1), (2, 7, 3)]:
            vec = score_all_subjects(params, p, o, t)
            for s in range(8):
                assert vec[s] == pytest.approx(score_fact(params, Quadruple(s, p, o, t)), rel=1e-12)
        for s, p, t in [(1, 1, 0), (5, 2, 2)]:
            vec = score_all_objects(params, s, p, t)
            for o in range(8):
                assert vec[o] == pytest.approx(score_fact(params, Quadruple(s, p, o, t)), rel=1e-12)

    @pytest.mark.parametrize("kind", ["ttranse", "tadistmult"])
    def test_batch_candidate_scores_match_scalar(self, kind):
        rng = seeded_rng(12)
        vocab = toy_vocab(10, 2, 3)
        params = init_params(kind, 10, 2, 3, 4, rng)
        batch = random_batch(rng, vocab, 6, 4)
        scores, _ = batch_candidate_scores(params, batch)
        for i, quads in enumerate(batch.candidates):
            for j, quad in enumerate(quads):
                assert scores[i, j] == pytest.approx(score_fact(params, quad), rel=1e-12)


class TestModelGradients:
    def test_zero_loss_gives_zero_grads(self, rng42):
        vocab = toy_vocab(6, 2, 2)
        params = init_params("ttranse", 6, 2, 2, 4, rng42)
        batch = random_batch(rng42, vocab, 3, 3)
        loss, grads = model_gradients(params, batch, lambda s, b: (0.0, np.zeros_like(s)))
        assert loss == 0.0
        assert all(not np.any(g) for g in grads.values())

    @pytest.mark.parametrize("kind", ["ttranse", "tadistmult"])
    def test_base_ce_matches_finite_differences(self, kind):
        rng = seeded_rng(42)
        vocab = toy_vocab(8, 2, 3)
        params = init_params(kind, 8, 2, 3, 4, rng)
        batch = random_batch(rng, vocab, 2, 2)  # 3 candidates per positive

        def loss():
            return model_gradients(params, batch, base_loss_fn)[0]

        _, grads = model_gradients(params, batch, base_loss_fn)
        fd = finite_difference(loss, params.named_arrays())
        assert_grads_close(grads, fd)

    def test_empty_batch_rejected(self, rng42):
        vocab = toy_vocab(4, 1, 1)
        params = init_params("ttranse", 4, 1, 1, 2, rng42)
        batch = random_batch(rng42, vocab, 2, 2)
        batch.positives = []
        with pytest.raises(ValueError):
            model_gradients(params, batch, base_loss_fn)


class TestBaseTrainingLoss:
    def test_uniform_scores_give_log_eleven(self, rng42):
        vocab = toy_vocab(30, 1, 1)
        params = init_params("ttranse", 30, 1, 1, 3, rng42)
        params.entity_emb[:] = 1.0  # all entities identical: candidate scores equal
        params.relation_emb[:] = 0.0
        params.time_emb[:] = 0.0
        batch = random_batch(rng42, vocab, 4, 10)
        assert base_training_loss(params, batch) == pytest.approx(np.log(11), abs=1e-9)

    def test_confident_true_score_drives_loss_to_zero(self, rng42, monkeypatch):
        vocab = toy_vocab(10, 1, 1)
        params = init_params("ttranse", 10, 1, 1, 3, rng42)
        batch = random_batch(rng42, vocab, 2, 4)
        fake = np.zeros((2, 5))
        fake[:, 0] = 60.0
        loss, _ = base_loss_fn(fake, batch)
        assert loss < 1e-8

    def test_deterministic(self, rng42):
        vocab = toy_vocab(12, 2, 2)
        params = init_params("tadistmult", 12, 2, 2, 3, rng42)
        batch = random_batch(rng42, vocab, 3, 4)
        assert base_training_loss(params, batch) == base_training_loss(params, batch)


class TestAdagrad:
    def test_zero_gradient_is_fixed_point(self):
        state = AdagradState(learning_rate=0.1)
        arrays = {"w": np.array([1.0, 2.0])}
        before = arrays["w"].copy()
        adagrad_step(state, arrays, {"w": np.zeros(2)})
        assert np.array_equal(arrays["w"], before)
        assert np.array_equal(state.accumulators["w"], np.zeros(2))

    def test_first_and_second_steps(self):
        state = AdagradState(learning_rate=0.1, epsilon=1e-10)
        arrays = {"w": np.array([0.0])}
        adagrad_step(state, arrays, {"w": np.array([1.0])})
        assert arrays["w"][0] == pytest.approx(-0.1 / (1.0 + 1e-10), rel=1e-12)
        adagrad_step(state, arrays, {"w": np.array([1.0])})
        expected_second = -0.1 / (np.sqrt(2.0) + 1e-10)
        assert arrays["w"][0] == pytest.approx(-0.1 / (1.0 + 1e-10) + expected_second, rel=1e-12)

    def test_accumulators_non_decreasing(self, rng42):
        state = AdagradState(learning_rate=0.05)
        arrays = {"w": rng42.normal(size=6)}
        prev = np.zeros(6)
        for _ in range(10):
            adagrad_step(state, arrays, {"w": rng42.normal(size=6)})
            assert np.all(state.accumulators["w"] >= prev)
            prev = state.accumulators["w"].copy()

    def test_lr_zero_freezes_params(self, rng42):
        state = AdagradState(learning_rate=0.0)
        arrays = {"w": rng42.normal(size=4)}
        before = arrays["w"].copy()
        adagrad_step(state, arrays, {"w": rng42.normal(size=4)})
        assert np.array_equal(arrays["w"], before)

    def test_shape_mismatch(self):
        state = AdagradState(learning_rate=0.1)
        with pytest.raises(ValueError):
            adagrad_step(state, {"w": np.zeros(3)}, {"w": np.zeros(2)})

    def test_model_params_interface(self, rng42):
        params = init_params("ttranse", 4, 2, 2, 3, rng42)
        grads = zero_grads(params)
        grads["entity_emb"][1] = 1.0
        state = AdagradState(learning_rate=0.1)
        before = params.entity_emb[1].copy()
        adagrad_step(state, params, grads)
        assert not np.array_equal(params.entity_emb[1], before)


class TestCheckpoints:
    @pytest.mark.parametrize("kind", ["ttranse", "tadistmult"])
    def test_round_trip_bit_exact(self, tmp_path, kind, rng42):
        params = init_params(kind, 5, 2, 3, 4, rng42)
        path = tmp_path / "model.npz"
        save_checkpoint(path, params, {"note": "x"})
        loaded, meta = load_checkpoint(path)
        assert loaded.kind == kind and loaded.dim == 4
        assert meta == {"note": "x"}
        for name, arr in params.named_arrays().items():
            assert np.array_equal(loaded.named_arrays()[name], arr)

    def test_version_check(self, tmp_path, rng42):
        params = init_params("ttranse", 3, 1, 1, 2, rng42)
        path = tmp_path / "model.npz"
        save_checkpoint(path, params)
        data = dict(np.load(path))
        data["version"] = np.int64(99)
        np.savez(path, **data)
        with pytest.raises(ValueError):
            load_checkpoint(path)
