import math

import numpy as np
import pytest

from trigmark.corpus import SyntheticCorpusSpec, default_vocabulary, generate_synthetic_corpus
from trigmark.encoder import (
    EmbeddingFileAdapter,
    EncoderTrainingConfig,
    ImageSample,
    cosine_distance,
    euclidean_distance,
    load_encoder,
    retrieval_accuracy,
    retrieve_top1,
    similarity_score,
    train_toy_encoder,
)
from trigmark.storage import write_embeddings

E1, E2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])


def test_distance_examples():
    assert cosine_distance(E1, E1) == pytest.approx(0.0)
    assert cosine_distance(E1, E2) == pytest.approx(1.0)
    assert cosine_distance(E1, -E1) == pytest.approx(2.0)
    assert euclidean_distance(E1, E1) == pytest.approx(0.0)
    assert euclidean_distance(E1, E2) == pytest.approx(math.sqrt(2))
    assert euclidean_distance(E1, -E1) == pytest.approx(2.0)
    assert similarity_score(E1, E1) == pytest.approx(100.0)
    assert similarity_score(E1, E2) == pytest.approx(0.0, abs=1e-12)
    u = np.array([math.cos(math.pi / 3), math.sin(math.pi / 3)])
    assert similarity_score(E1, u) == pytest.approx(50.0)
    with pytest.raises(ValueError):
        cosine_distance(E1, np.ones(3) / math.sqrt(3))


def test_small_encoder_retrieves(small_encoder, small_corpus, gallery):
    assert retrieval_accuracy(small_encoder, small_corpus, gallery) >= 0.9
    x, y = small_corpus[0]
    assert retrieve_top1(small_encoder, x, [y]) == y.id
    with pytest.raises(ValueError):
        retrieve_top1(small_encoder, x, [])


def test_embeddings_are_unit(small_encoder, small_corpus):
    v = small_encoder.encode_images([x for x, _ in small_corpus[:5]])
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)


def test_training_errors():
    vocab = default_vocabulary()
    with pytest.raises(ValueError):
        train_toy_encoder([], EncoderTrainingConfig(epochs=1), vocab)
    one = generate_synthetic_corpus(SyntheticCorpusSpec(samples_per_class=3))
    single = [p for p in one if p[1].id == one[0][1].id]
    with pytest.raises(ValueError):
        train_toy_encoder(single, EncoderTrainingConfig(epochs=1), vocab)


def test_training_deterministic_and_checkpoint(tmp_path, small_corpus):
    cfg = EncoderTrainingConfig(epochs=3)
    a = train_toy_encoder(small_corpus, cfg, default_vocabulary(), model_id="a")
    b = train_toy_encoder(small_corpus, cfg, default_vocabulary(), model_id="a")
    imgs = [x for x, _ in small_corpus[:4]]
    assert np.array_equal(a.encode_images(imgs), b.encode_images(imgs))
    a.save(tmp_path / "a.ckpt")
    c = load_encoder(tmp_path / "a.ckpt")
    assert c.model_id == "a"
    assert np.array_equal(a.encode_images(imgs), c.encode_images(imgs))
    assert (tmp_path / "a.ckpt").read_bytes() == (b.save(tmp_path / "b.ckpt") or (tmp_path / "b.ckpt").read_bytes())


def test_embedding_file_adapter(tmp_path, small_encoder, small_corpus, gallery):
    rows = [(x.id, v) for (x, _), v in zip(small_corpus, small_encoder.encode_images([x for x, _ in small_corpus]))]
    rows += [(t.id, v) for t, v in zip(gallery, small_encoder.encode_texts(gallery))]
    write_embeddings(tmp_path / "e.tsv", rows)
    adapter = EmbeddingFileAdapter.from_file(tmp_path / "e.tsv", model_id="file")
    x = small_corpus[0][0]
    assert np.allclose(adapter.encode_images([x]), small_encoder.encode_images([x]))
    with pytest.raises((KeyError, ValueError)):
        adapter.encode_images([ImageSample(np.zeros((8, 8, 3)), "unknown")])
