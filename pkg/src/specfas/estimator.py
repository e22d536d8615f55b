"""scikit-learn compatible wrapper around the training pipeline."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .augment import AugmentConfig
from .dataio import N_CHANNELS, Label
from .losses import LossConfig
from .metrics import MetricsReport, acer_report, confusion
from .model import ModelConfig, SpectralFASNet
from .strategies import MixupConfig, RandomProjectionEmbedder, ror_weights_for_arrays
from .trainer import RunConfig, TrainConfig, fit as run_fit


def check_spectral_array(X, expected_channels: int = N_CHANNELS) -> np.ndarray:
    """Validate a stack of [N, h, w, c] samples; keeps float32 input as float32."""
    X = check_array(X, allow_nd=True, dtype=[np.float64, np.float32], ensure_all_finite=True)
    if X.ndim != 4 or X.shape[-1] != expected_channels:
        raise ValueError(f"expected samples of shape [N, h, w, {expected_channels}], got {list(X.shape)}")
    return X


def encode_labels(y) -> np.ndarray:
    """Map labels to 0 (real) / 1 (fake); accepts ints, bools or label strings."""
    y = np.asarray(y)
    if y.dtype.kind in "OUS":
        return np.array([int(Label.parse(str(v))) for v in y], dtype=np.int64)
    out = y.astype(np.int64)
    if not np.all((out == 0) | (out == 1)):
        raise ValueError("labels must be 0 (real) or 1 (fake)")
    return out


class SpectralFASClassifier(ClassifierMixin, BaseEstimator):
    """Re-balanced contrastive face anti-spoofing classifier.

    ``fit`` oversamples the minority class, augments, mixes within class,
    reweights fakes by their face similarity to reals, and optimises focal +
    supervised contrastive loss with a cross-batch memory under adaptive
    sharpness-aware updates. Class 1 is the attack (fake) class, so
    ``predict_proba(X)[:, 1]`` is the spoof score.

    Parameters mirror the fields of the run configuration sections; see
    ``run_config``.
    """

    def __init__(self, epochs=30, batch_size=32, lr_max=0.01, lr_min=0.0, weight_decay=5e-3,
                 asam_rho=0.5, asam_eta=0.01, max_grad_norm=0.0, gamma=2.0, tau=0.07,
                 lambda_scl=10.0, xbm_capacity=1200, supcon_normalize=False, supcon_reduction="sum",
                 mixup=True, mixup_alpha=1.0, augment=None, balance=True, ror=True, theta=0.7,
                 channels=(16, 32, 64), n_attention=4, d_proj=128, batch_norm=True,
                 random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.weight_decay = weight_decay
        self.asam_rho = asam_rho
        self.asam_eta = asam_eta
        self.max_grad_norm = max_grad_norm
        self.gamma = gamma
        self.tau = tau
        self.lambda_scl = lambda_scl
        self.xbm_capacity = xbm_capacity
        self.supcon_normalize = supcon_normalize
        self.supcon_reduction = supcon_reduction
        self.mixup = mixup
        self.mixup_alpha = mixup_alpha
        self.augment = augment
        self.balance = balance
        self.ror = ror
        self.theta = theta
        self.channels = channels
        self.n_attention = n_attention
        self.d_proj = d_proj
        self.batch_norm = batch_norm
        self.random_state = random_state

    def run_config(self, height: int = 64, width: int = 64) -> RunConfig:
        seed = int(self.random_state or 0)
        augment = self.augment if self.augment is not None else AugmentConfig()
        return RunConfig(
            train=TrainConfig(self.epochs, self.batch_size, self.lr_max, self.lr_min, self.weight_decay,
                              self.asam_rho, self.asam_eta, seed, self.max_grad_norm, self.balance, self.ror),
            loss=LossConfig(self.gamma, self.tau, self.lambda_scl, self.xbm_capacity, self.supcon_normalize,
                            self.supcon_reduction),
            augment=dataclasses.replace(augment, seed=seed),
            mixup=MixupConfig(self.mixup_alpha, self.mixup),
            model=ModelConfig(height=height, width=width, channels=tuple(self.channels),
                              n_attention=self.n_attention, d_proj=self.d_proj, theta=self.theta,
                              batch_norm=self.batch_norm, seed=seed),
        )

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "SpectralFASClassifier":
        t, lo, m = cfg.train, cfg.loss, cfg.model
        return cls(epochs=t.epochs, batch_size=t.batch_size, lr_max=t.lr_max, lr_min=t.lr_min,
                   weight_decay=t.weight_decay, asam_rho=t.asam_rho, asam_eta=t.asam_eta,
                   max_grad_norm=t.max_grad_norm, gamma=lo.gamma, tau=lo.tau, lambda_scl=lo.lambda_scl,
                   xbm_capacity=lo.xbm_capacity, supcon_normalize=lo.supcon_normalize,
                   supcon_reduction=lo.supcon_reduction, mixup=cfg.mixup.enabled,
                   mixup_alpha=cfg.mixup.alpha, augment=cfg.augment, balance=t.balance, ror=t.ror,
                   theta=m.theta, channels=m.channels, n_attention=m.n_attention, d_proj=m.d_proj,
                   batch_norm=m.batch_norm, random_state=t.seed)

    def fit(self, X, y, face_embeddings=None, on_epoch=None):
        """Train on ``X`` [N, h, w, 33] with labels 0 = real, 1 = fake.

        ``face_embeddings`` [N, d] replaces the built-in random-projection face
        embedder for the reweighting step.
        """
        X = check_spectral_array(X)
        y = encode_labels(y)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        if len(np.unique(y)) < 2:
            raise ValueError("training data must contain both real and fake samples")
        cfg = self.run_config(X.shape[1], X.shape[2])
        if self.ror:
            embedder = RandomProjectionEmbedder(seed=cfg.train.seed)
            weights = ror_weights_for_arrays(X, y, embedder, face_embeddings)
        else:
            weights = np.ones(len(y))
        state, history = run_fit(X, y, weights, cfg, on_epoch)
        self.classes_ = np.array([int(Label.REAL), int(Label.FAKE)])
        self.model_ = state.model
        self.bank_ = state.bank
        self.history_ = history
        self.sample_weight_ = weights
        self.config_ = cfg
        return self

    def decision_function(self, X) -> np.ndarray:
        """Spoof probability per sample."""
        return self.predict_proba(X)[:, 1]

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_spectral_array(X)
        return self.model_.predict_proba(X)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.decision_function(X) >= threshold).astype(np.int64)

    def acer_report(self, X, y, threshold: float = 0.5) -> MetricsReport:
        scores = self.decision_function(X)
        ids = [str(i) for i in range(len(scores))]
        counts = confusion(dict(zip(ids, scores.tolist())), dict(zip(ids, encode_labels(y).tolist())), threshold)
        return acer_report(counts, threshold)

    @classmethod
    def from_model(cls, model: SpectralFASNet, **params) -> "SpectralFASClassifier":
        """Wrap an already-trained network (e.g. loaded from a checkpoint)."""
        est = cls(**params)
        est.classes_ = np.array([0, 1])
        est.model_ = model
        return est
