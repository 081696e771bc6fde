import numpy as np
import pytest

from ausds.data import Dataset
from ausds.encoder import EmbeddingStore, EncoderStack, fine_tune
from ausds.errors import ConfigurationError, StalenessError
from ausds.model import LINEAR, DecoderModel, TrainConfig, loss_and_param_grads


def classification_stack(vectors):
    return EncoderStack(EmbeddingStore(np.asarray(vectors, dtype=np.float32)))


def labeling_stack(sequences):
    flat = np.concatenate(sequences).astype(np.float32)
    offsets = np.cumsum([0] + [len(s) for s in sequences])
    pooled = np.stack([np.mean(s, axis=0) for s in sequences]).astype(np.float32)
    return EncoderStack(EmbeddingStore(pooled, flat, offsets))


def test_mean_pool_of_two_tokens():
    stack = labeling_stack([np.array([[1.0, 2.0], [3.0, 4.0]])])
    point = stack.encode(0)
    np.testing.assert_allclose(point.vector, [2.0, 3.0])
    assert point.version == 1


def test_identity_adapter_returns_store_row():
    vectors = np.array([[0.25, -1.5, 3.0]], dtype=np.float32)
    stack = classification_stack(vectors)
    np.testing.assert_array_equal(stack.encode(0).vector, vectors[0].astype(np.float64))


def test_scaling_adapter():
    stack = classification_stack([[1.0, -1.0]])
    stack.adapter_matrix = 2.0 * np.eye(2)
    np.testing.assert_allclose(stack.encode(0).vector, [2.0, -2.0])


def test_unknown_id_rejected():
    stack = classification_stack([[1.0, 2.0]])
    with pytest.raises(KeyError):
        stack.encode(5)


def test_encode_many_matches_single():
    rng = np.random.default_rng(0)
    stack = classification_stack(rng.normal(size=(20, 3)))
    stack.adapter_matrix = rng.normal(size=(3, 3))
    stack.adapter_bias = rng.normal(size=3)
    batch = stack.encode_many(np.arange(20))
    for i in range(20):
        np.testing.assert_allclose(batch[i], stack.encode(i).vector, atol=1e-12)


def test_encode_deterministic_per_version():
    rng = np.random.default_rng(1)
    stack = classification_stack(rng.normal(size=(5, 4)))
    a = stack.encode(3).vector
    b = stack.encode(3).vector
    assert a.tobytes() == b.tobytes()


def test_version_staleness_guard():
    stack = classification_stack([[1.0, 0.0]])
    point = stack.encode(0)
    stack.version += 1
    with pytest.raises(StalenessError):
        stack.assert_fresh(point.version)


def fine_tune_instance(seed=0, n=60):
    # classes separated along the second axis; the decoder only reads the
    # first axis, so only an adapter rotation can expose the structure
    rng = np.random.default_rng(seed)
    X = np.concatenate([
        rng.normal([0.0, -3.0], 0.4, size=(n, 2)),
        rng.normal([0.0, 3.0], 0.4, size=(n, 2)),
    ]).astype(np.float32)
    y = np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)])
    stack = classification_stack(X)
    decoder = DecoderModel(LINEAR, [np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2)])
    labeled = [(i, int(y[i])) for i in range(2 * n)]
    return stack, decoder, labeled, X, y


def full_loss(stack, decoder, X, y):
    latents = stack.encode_many(np.arange(len(y)))
    loss, _ = loss_and_param_grads(decoder, latents, y)
    return loss


def test_fine_tune_reduces_loss_via_adapter_rotation():
    stack, decoder, labeled, X, y = fine_tune_instance()
    before = full_loss(stack, decoder, X, y)
    fine_tune(stack, decoder, labeled, steps=200,
              config=TrainConfig(optimizer="adam", learning_rate=0.05, seed=0))
    after = full_loss(stack, decoder, X, y)
    assert after < before


def test_fine_tune_bumps_version_once():
    stack, decoder, labeled, _, _ = fine_tune_instance()
    assert stack.version == 1
    fine_tune(stack, decoder, labeled, steps=1, config=TrainConfig())
    assert stack.version == 2
    fine_tune(stack, decoder, labeled, steps=1, config=TrainConfig())
    assert stack.version == 3


def test_fine_tune_zero_learning_rate_keeps_adapter():
    stack, decoder, labeled, _, _ = fine_tune_instance()
    fine_tune(stack, decoder, labeled, steps=5,
              config=TrainConfig(optimizer="sgd", learning_rate=0.0))
    np.testing.assert_array_equal(stack.adapter_matrix, np.eye(2))
    assert stack.version == 2  # identity update still signals a rebuild


def test_fine_tune_rejects_empty_labeled_set():
    stack, decoder, _, _, _ = fine_tune_instance()
    with pytest.raises(ConfigurationError):
        fine_tune(stack, decoder, [], steps=1, config=TrainConfig())


def test_fine_tune_labeling_runs():
    sequences = [np.random.default_rng(i).normal(size=(3, 2)) for i in range(8)]
    stack = labeling_stack(sequences)
    decoder = DecoderModel.create(LINEAR, 2, 3, seed=0)
    labeled = [(i, np.array([0, 1, 2])) for i in range(8)]
    fine_tune(stack, decoder, labeled, steps=3,
              config=TrainConfig(batch_size=4, seed=1))
    assert stack.version == 2
