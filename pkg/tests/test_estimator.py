import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from specfas.estimator import SpectralFASClassifier, check_spectral_array, encode_labels

SMALL = dict(epochs=1, batch_size=4, channels=(3, 4), n_attention=2, d_proj=5, xbm_capacity=8,
             supcon_normalize=True, supcon_reduction="mean")


def _data(n=10, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 8, 8, 33)).astype(np.float32)
    y = np.array([1, 0] * (n // 2))
    return X, y


def test_get_params_and_clone():
    est = SpectralFASClassifier(**SMALL)
    params = est.get_params()
    assert params["epochs"] == 1 and params["tau"] == 0.07 and params["lambda_scl"] == 10.0
    c = clone(est)
    assert c.get_params() == params and c is not est
    est.set_params(epochs=2)
    assert est.epochs == 2


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SpectralFASClassifier().predict(np.zeros((1, 8, 8, 33)))


def test_fit_predict():
    X, y = _data()
    est = SpectralFASClassifier(**SMALL).fit(X, y)
    proba = est.predict_proba(X)
    assert proba.shape == (10, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    pred = est.predict(X)
    assert set(pred.tolist()) <= {0, 1}
    np.testing.assert_array_equal(est.classes_, [0, 1])
    assert len(est.history_) == 1
    assert est.sample_weight_.shape == (10,)
    assert 0.0 <= est.score(X, y) <= 1.0


def test_fit_string_labels_and_embeddings():
    X, _ = _data()
    y = ["fake", "real"] * 5
    emb = np.random.default_rng(1).standard_normal((10, 4))
    est = SpectralFASClassifier(**SMALL).fit(X, y, face_embeddings=emb)
    assert (est.sample_weight_[1::2] == 1.0).all()


def test_validation():
    with pytest.raises(ValueError):
        check_spectral_array(np.zeros((2, 8, 8, 30)))
    with pytest.raises(ValueError):
        check_spectral_array(np.full((1, 8, 8, 33), np.nan))
    with pytest.raises(ValueError):
        encode_labels([0, 2])
    X, y = _data()
    with pytest.raises(ValueError):
        SpectralFASClassifier(**SMALL).fit(X, np.ones(10, dtype=int))
    with pytest.raises(ValueError):
        SpectralFASClassifier(**SMALL).fit(X, y[:5])


def test_fit_deterministic():
    X, y = _data()
    a = SpectralFASClassifier(**SMALL, random_state=3).fit(X, y).predict_proba(X)
    b = SpectralFASClassifier(**SMALL, random_state=3).fit(X, y).predict_proba(X)
    assert a.tobytes() == b.tobytes()


def test_run_config_roundtrip():
    est = SpectralFASClassifier(**SMALL, random_state=4)
    cfg = est.run_config(8, 8)
    back = SpectralFASClassifier.from_run_config(cfg)
    assert back.run_config(8, 8) == cfg
