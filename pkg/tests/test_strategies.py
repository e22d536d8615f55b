import logging

import numpy as np
import pytest

from specfas.dataio import Label, SpectralSample
from specfas.strategies import (FileEmbeddingProvider, MixupConfig, RandomProjectionEmbedder,
                                compute_ror_weights, intra_class_mixup, mix_batch, read_embeddings,
                                ror_weights_for_arrays, ror_weights_from_embeddings, sample_mix_lambda,
                                write_embeddings)

FAKE, REAL = [0.0, 1.0], [1.0, 0.0]


def test_mixup_endpoint():
    rng = np.random.default_rng(0)
    xi, xj = rng.random((4, 4, 33)), rng.random((4, 4, 33))
    x, y = intra_class_mixup(xi, xj, FAKE, FAKE, 1.0)
    assert x.tobytes() == xi.tobytes()
    np.testing.assert_array_equal(y, FAKE)


def test_mixup_arithmetic():
    x, y = intra_class_mixup(np.ones((2, 2, 33)), np.zeros((2, 2, 33)), REAL, REAL, 0.3)
    np.testing.assert_allclose(x, 0.3, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(y, REAL)


def test_mixup_cross_class_rejected():
    with pytest.raises(ValueError):
        intra_class_mixup(np.ones(3), np.zeros(3), FAKE, REAL, 0.5)


def test_mixup_labels_bit_exact_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        y = FAKE if rng.random() < 0.5 else REAL
        _, yh = intra_class_mixup(rng.random(5), rng.random(5), y, y, float(rng.beta(1, 1)))
        assert yh.tobytes() == np.array(y).tobytes()


def test_lambda_distribution():
    rng = np.random.default_rng(2)
    draws = np.array([sample_mix_lambda(rng, MixupConfig(1.0)) for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) < 0.01
    assert draws.min() >= 0.0 and draws.max() <= 1.0
    again = [sample_mix_lambda(np.random.default_rng(5), MixupConfig()) for _ in range(2)]
    assert again[0] == again[1]


def test_mix_batch_stays_in_class_hull():
    rng = np.random.default_rng(3)
    X = rng.random((12, 4, 4, 33))
    labels = np.array([0, 1] * 6)
    out = mix_batch(X, labels, rng, MixupConfig())
    for i in range(12):
        same = X[labels == labels[i]]
        # each output pixel lies between the class minimum and maximum
        assert (out[i] >= same.min(axis=0) - 1e-12).all() and (out[i] <= same.max(axis=0) + 1e-12).all()
    assert mix_batch(X, labels, rng, MixupConfig(enabled=False)) is X


def test_mix_batch_singleton_class_untouched():
    rng = np.random.default_rng(4)
    X = rng.random((3, 2, 2, 33))
    out = mix_batch(X, np.array([0, 1, 1]), rng, MixupConfig())
    np.testing.assert_array_equal(out[0], X[0])


# -- ROR -------------------------------------------------------------------
def test_ror_endpoints_exact():
    r = np.array([[1.0, 0.0, 0.0]])
    assert ror_weights_from_embeddings(np.array([[1.0, 0.0, 0.0]]), r)[0] == 1.0
    assert ror_weights_from_embeddings(np.array([[0.0, 1.0, 0.0]]), r)[0] == 0.5
    assert ror_weights_from_embeddings(np.array([[-1.0, 0.0, 0.0]]), r)[0] == 0.0


def test_ror_uses_max_over_reals():
    reals = np.array([[1.0, 0.0], [0.0, 1.0]])
    w = ror_weights_from_embeddings(np.array([[-1.0, 0.0]]), reals)
    assert w[0] == 0.5


def test_ror_weights_in_unit_interval():
    rng = np.random.default_rng(5)
    for _ in range(200):
        f = rng.standard_normal((7, 6))
        r = rng.standard_normal((4, 6))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        r /= np.linalg.norm(r, axis=1, keepdims=True)
        w = ror_weights_from_embeddings(f, r)
        assert (w >= 0).all() and (w <= 1).all()


def _s(sid, label):
    return SpectralSample(sid, np.zeros((2, 2, 3)), np.zeros((2, 2, 30)), label, "")


def test_compute_ror_weights_with_file_provider(caplog):
    provider = FileEmbeddingProvider({"r": np.array([0.0, 2.0]), "f1": np.array([0.0, 1.0]),
                                      "f2": np.array([1.0, 0.0])})
    with caplog.at_level(logging.WARNING):
        w = compute_ror_weights([_s("f1", Label.FAKE), _s("f2", Label.FAKE)], [_s("r", Label.REAL)], provider)
    assert w == {"r": 1.0, "f1": 1.0, "f2": 0.5}
    assert "normalising" in caplog.text
    with pytest.raises(ValueError):
        compute_ror_weights([_s("f1", Label.FAKE)], [], provider)


def test_embedding_file_roundtrip(tmp_path):
    rows = [("a", np.array([0.1, -2.5, 1e-17])), ("b", np.array([3.0, 4.0, 0.0]))]
    write_embeddings(tmp_path / "e.tsv", rows)
    back = read_embeddings(tmp_path / "e.tsv")
    for sid, v in rows:
        assert back[sid].tobytes() == v.tobytes()


def test_random_projection_embedder():
    rng = np.random.default_rng(6)
    emb = RandomProjectionEmbedder(dim=16, seed=1)
    img = rng.random((8, 8, 3))
    v = emb.embed_rgb(img)
    assert v.shape == (16,) and abs(np.linalg.norm(v) - 1) < 1e-12
    # invariant to brightness offset, since the plane is mean-centred
    np.testing.assert_allclose(emb.embed_rgb(img + 0.3), v, atol=1e-12)
    with pytest.raises(ValueError):
        emb.embed_rgb(np.ones((8, 8, 3)))


def test_ror_for_arrays():
    rng = np.random.default_rng(7)
    X = rng.random((6, 8, 8, 33))
    labels = np.array([1, 1, 0, 1, 0, 1])
    w = ror_weights_for_arrays(X, labels, RandomProjectionEmbedder(seed=0))
    assert (w[labels == 0] == 1.0).all()
    assert ((w >= 0) & (w <= 1)).all()
    emb = np.eye(6)[:, :6]
    emb[0] = emb[2]
    w2 = ror_weights_for_arrays(X, labels, embeddings=emb)
    assert w2[0] == 1.0 and w2[1] == 0.5
    with pytest.raises(ValueError):
        ror_weights_for_arrays(X, np.ones(6, dtype=int))


def test_ror_monotone_in_real_set_and_rotation_invariant():
    rng = np.random.default_rng(8)
    for _ in range(100):
        d = int(rng.integers(2, 7))
        unit = lambda n: (lambda z: z / np.linalg.norm(z, axis=1, keepdims=True))(rng.standard_normal((n, d)))
        fakes, reals, extra = unit(5), unit(3), unit(1)
        w = ror_weights_from_embeddings(fakes, reals)
        assert (ror_weights_from_embeddings(fakes, np.vstack([reals, extra])) >= w).all()
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        np.testing.assert_allclose(ror_weights_from_embeddings(fakes @ q, reals @ q), w, rtol=0, atol=1e-12)
