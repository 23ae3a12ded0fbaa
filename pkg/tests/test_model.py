import numpy as np
import pytest

from helpers import check_gradients
from services.balance import class_weights
from services.errors import ConfigError, NumericError, ShapeError
from services.model import (
    ALL_VARIANTS,
    ModelSpec,
    Variant,
    build_model,
    train_epoch,
    train_step,
    weighted_cross_entropy,
)
from services.optimizer import AdamState, adam_update
from services.representation import EmbeddingMatrix, EncodedBatch

X_TOY = np.array([[2, 3, 4, 5, 6, 7], [9, 8, 7, 6, 5, 4]])
Y_TOY = np.array([0, 1])


class TestVariant:
    def test_thirteen_variants(self):
        assert len(ALL_VARIANTS) == 13
        assert {v.ordering for v in ALL_VARIANTS} == {"cnn", "rnn", "cnn-first", "rnn-first"}

    @pytest.mark.parametrize("name,recurrent,kind,bi,first,after", [
        ("CNN", None, None, False, True, False),
        ("BiGRU", "BiGRU", "GRU", True, False, False),
        ("CNN-LSTM", "LSTM", "LSTM", False, True, False),
        ("BiLSTM-CNN", "BiLSTM", "LSTM", True, False, True),
    ])
    def test_properties(self, name, recurrent, kind, bi, first, after):
        variant = Variant.parse(name)
        assert (variant.recurrent, variant.rnn_kind, variant.bidirectional) == (recurrent, kind, bi)
        assert (variant.cnn_first, variant.cnn_after) == (first, after)

    def test_unknown(self):
        with pytest.raises(ConfigError):
            Variant.parse("Transformer")


class TestBuild:
    @pytest.mark.parametrize("variant,expected", [
        ("BiLSTM-CNN", ["Embed", "BiLSTM", "Conv1D", "MaxPool", "SpatialDropout", "Dense", "Output"]),
        ("CNN-LSTM", ["Embed", "Conv1D", "MaxPool", "LSTM", "SpatialDropout", "Dense", "Output"]),
        ("CNN", ["Embed", "Conv1D", "MaxPool", "GlobalMaxPool", "SpatialDropout", "Dense", "Output"]),
        ("GRU", ["Embed", "GRU", "SpatialDropout", "Dense", "Output"]),
    ])
    def test_layer_sequence(self, toy_spec, toy_embeddings, variant, expected):
        assert build_model(toy_spec(variant), toy_embeddings).layer_names == expected

    def test_dense_dropout_site(self, toy_spec, toy_embeddings):
        model = build_model(toy_spec("BiGRU", dense_dropout=True), toy_embeddings)
        assert model.layer_names == ["Embed", "BiGRU", "SpatialDropout", "Dense", "SpatialDropout", "Output"]

    def test_identical_initial_parameters(self, toy_spec, toy_embeddings):
        first = build_model(toy_spec("BiGRU-CNN"), toy_embeddings).get_parameters()
        second = build_model(toy_spec("BiGRU-CNN"), toy_embeddings).get_parameters()
        assert first.keys() == second.keys()
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_parameter_count_depends_only_on_spec(self, toy_spec, toy_embeddings):
        counts = {v: build_model(toy_spec(v), toy_embeddings).parameter_count() for v in ("LSTM", "BiLSTM")}
        assert counts["LSTM"] == build_model(toy_spec("LSTM", seed=99), toy_embeddings).parameter_count()
        # LSTM: (4 + 3) x 12 + 12 per direction
        assert counts["BiLSTM"] - counts["LSTM"] == 7 * 12 + 12 + 3 * 4

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_output_shape(self, toy_spec, toy_embeddings, variant):
        model = build_model(toy_spec(variant, num_classes=3), toy_embeddings)
        probs = model.predict_proba(np.vstack([X_TOY, X_TOY]))
        assert probs.shape == (4, 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_dimension_mismatch(self, toy_spec, toy_embeddings):
        with pytest.raises(ConfigError):
            build_model(toy_spec("LSTM", embedding_dim=5), toy_embeddings)

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            ModelSpec(variant="LSTM", spatial_dropout_rate=1.0)
        with pytest.raises(ConfigError):
            ModelSpec(variant="LSTM", num_classes=1)
        with pytest.raises(ConfigError):
            ModelSpec.from_dict({"variant": "LSTM", "heads": 4})

    def test_spec_dict_round_trip(self, toy_spec):
        spec = toy_spec("CNN-BiGRU", dense_dropout=True)
        assert ModelSpec.from_dict(spec.to_dict()) == spec

    def test_set_parameters_checks_shapes(self, toy_spec, toy_embeddings):
        model = build_model(toy_spec("GRU"), toy_embeddings)
        values = model.get_parameters()
        values["output/W"] = np.zeros((1, 1))
        with pytest.raises(ShapeError):
            model.set_parameters(values)

    def test_padding_rows_read_zero(self, toy_spec, toy_embeddings):
        model = build_model(toy_spec("LSTM"), toy_embeddings)
        embedded, _ = model.layers[0].forward(np.array([[0, 2, 0]]), model.params, False, None)
        assert not embedded[0, 0].any() and not embedded[0, 2].any()


class TestGradients:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_matches_finite_differences(self, toy_spec, toy_embeddings, variant):
        model = build_model(toy_spec(variant), toy_embeddings)
        check_gradients(model, X_TOY, Y_TOY)

    @pytest.mark.parametrize("variant", ["BiLSTM-CNN", "CNN-GRU", "CNN"])
    def test_with_dropout_masks(self, toy_spec, toy_embeddings, variant):
        spec = toy_spec(variant, spatial_dropout_rate=0.3, internal_rnn_dropout_rate=0.3, dense_dropout=True)
        model = build_model(spec, toy_embeddings)
        check_gradients(model, X_TOY, Y_TOY, training=True, seed=5)

    def test_with_class_weights(self, toy_spec, toy_embeddings):
        model = build_model(toy_spec("BiGRU"), toy_embeddings)
        check_gradients(model, X_TOY, Y_TOY, weights=np.array([0.5, 2.0]))

    def test_frozen_embedding_has_no_gradient(self, toy_spec, toy_embeddings):
        model = build_model(toy_spec("LSTM-CNN", embedding_trainable=False), toy_embeddings)
        assert "embedding/W" not in model.trainable
        _, grads = model.loss_and_gradients(X_TOY, Y_TOY, training=False)
        assert "embedding/W" not in grads
        check_gradients(model, X_TOY, Y_TOY)


class TestLoss:
    def test_perfect_prediction(self):
        assert weighted_cross_entropy(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1]) == 0.0

    def test_half_probability(self):
        assert weighted_cross_entropy(np.array([[0.5, 0.5]]), [0]) == pytest.approx(np.log(2))

    def test_linear_in_weights(self):
        probs = np.array([[0.7, 0.3], [0.2, 0.8], [0.6, 0.4]])
        base = weighted_cross_entropy(probs, [0, 1, 1], np.array([1.0, 3.0]))
        doubled = weighted_cross_entropy(probs, [0, 1, 1], np.array([2.0, 6.0]))
        assert doubled == pytest.approx(2 * base)

    def test_weight_table(self):
        probs = np.array([[0.5, 0.5], [0.5, 0.5]])
        table = class_weights([0, 0, 0, 1], 2)
        expected = np.log(2) * (table.weights[0] + table.weights[1]) / 2
        assert weighted_cross_entropy(probs, [0, 1], table) == pytest.approx(expected)

    def test_zero_probability_is_clamped(self):
        assert weighted_cross_entropy(np.array([[1.0, 0.0]]), [1]) == pytest.approx(-np.log(1e-12))

    def test_non_finite_loss(self, toy_spec, toy_embeddings):
        model = build_model(toy_spec("CNN"), toy_embeddings)
        model.params["output/W"][...] = np.nan
        with pytest.raises(NumericError):
            model.loss_and_gradients(X_TOY, Y_TOY, training=False)


class TestAdam:
    def test_first_step_is_sign_of_gradient(self):
        params = {"w": np.array([1.0, -2.0, 0.5])}
        state = AdamState(learning_rate=0.01)
        adam_update(params, {"w": np.array([3.0, -0.2, 50.0])}, state)
        np.testing.assert_allclose(params["w"], [0.99, -1.99, 0.49], atol=1e-8)
        assert state.t == 1

    def test_zero_gradient(self):
        params = {"w": np.array([1.0, 2.0])}
        state = AdamState()
        adam_update(params, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(params["w"], [1.0, 2.0])
        assert state.t == 1

    def test_no_momentum_reduces_to_sign_update(self):
        params = {"w": np.array([0.0, 0.0])}
        grad = np.array([1e-3, -4.0])
        state = AdamState(learning_rate=0.1, beta1=0.0, beta2=0.0)
        for _ in range(3):
            before = params["w"].copy()
            adam_update(params, {"w": grad}, state)
            np.testing.assert_allclose(before - params["w"], 0.1 * grad / (np.abs(grad) + 1e-8))

    def test_second_moment_non_negative(self):
        rng = np.random.default_rng(0)
        params = {"w": rng.normal(size=5)}
        state = AdamState()
        for _ in range(20):
            adam_update(params, {"w": rng.normal(size=5) * 10}, state)
            assert np.all(state.v["w"] >= 0)

    def test_rejects_bad_settings(self):
        with pytest.raises(ConfigError):
            AdamState(learning_rate=0)
        with pytest.raises(ConfigError):
            AdamState(beta1=1.0)


def _training_batch():
    rng = np.random.default_rng(21)
    sequences = np.stack([rng.permutation(np.arange(2, 10))[:6] for _ in range(8)])
    return EncodedBatch(sequences=sequences, labels=np.array([0, 1] * 4), max_len=6)


def _training_model(toy_spec, toy_embeddings, variant):
    return build_model(toy_spec(variant, rnn_units=8, conv_filters=4, dense_units=8), toy_embeddings)


class TestTraining:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_loss_halves_on_a_fixed_batch(self, toy_spec, toy_embeddings, variant):
        model = _training_model(toy_spec, toy_embeddings, variant)
        batch = _training_batch()
        adam = AdamState()
        losses = [train_step(model, batch, None, adam) for _ in range(300)]
        assert losses[-1] <= 0.5 * losses[0]
        assert adam.t == 300

    def test_identical_trajectories(self, toy_spec, toy_embeddings):
        batch = _training_batch()
        runs = []
        for _ in range(2):
            model = build_model(toy_spec("BiLSTM-CNN", spatial_dropout_rate=0.2), toy_embeddings)
            adam = AdamState()
            rng = np.random.default_rng(3)
            runs.append([train_step(model, batch, None, adam, rng) for _ in range(5)])
        assert runs[0] == runs[1]

    def test_empty_batch(self, toy_spec, toy_embeddings):
        model = build_model(toy_spec("GRU"), toy_embeddings)
        empty = EncodedBatch(np.zeros((0, 6), dtype=np.int64), np.zeros(0, dtype=np.int64), 6)
        with pytest.raises(ShapeError):
            train_step(model, empty, None, AdamState())

    def test_epoch_covers_every_example(self, toy_spec, toy_embeddings):
        model = build_model(toy_spec("GRU"), toy_embeddings)
        batch = _training_batch()
        adam = AdamState()
        loss = train_epoch(model, batch.sequences, batch.labels, None, adam, np.random.default_rng(0), batch_size=3)
        assert adam.t == 3
        assert np.isfinite(loss)

    @pytest.mark.slow
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_fits_a_separable_token_set(self, toy_spec, toy_embeddings, variant):
        # class 0 draws from tokens 2-5, class 1 from 6-9
        rng = np.random.default_rng(8)
        y = np.array([0, 1] * 16)
        X = np.stack([rng.integers(2 + 4 * label, 6 + 4 * label, size=6) for label in y])
        model = _training_model(toy_spec, toy_embeddings, variant)
        adam = AdamState()
        for _ in range(600):
            train_epoch(model, X, y, None, adam, rng, batch_size=32)
            if np.mean(model.predict(X) == y) >= 0.95:
                break
        assert np.mean(model.predict(X) == y) >= 0.95

    def test_predict_returns_class_indices(self, toy_spec):
        embeddings = EmbeddingMatrix(np.random.default_rng(1).uniform(-0.5, 0.5, size=(10, 4)))
        model = build_model(toy_spec("CNN", num_classes=3), embeddings)
        predicted = model.predict(X_TOY)
        assert predicted.shape == (2,)
        assert set(predicted.tolist()) <= {0, 1, 2}
