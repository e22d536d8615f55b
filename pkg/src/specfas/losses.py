"""Focal loss, supervised contrastive loss with a cross-batch memory, and the
combined objective."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EPS = 1e-12


@dataclass
class LossConfig:
    gamma: float = 2.0
    tau: float = 0.07
    lambda_scl: float = 10.0
    xbm_capacity: int = 1200
    # divide each anchor's positive sum by its positive count
    supcon_normalize: bool = False
    # "sum" over anchors, or "mean" over anchors that have positives
    supcon_reduction: str = "sum"

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.lambda_scl < 0:
            raise ValueError(f"lambda_scl must be >= 0, got {self.lambda_scl}")
        if self.xbm_capacity < 0:
            raise ValueError(f"xbm_capacity must be >= 0, got {self.xbm_capacity}")
        if self.supcon_reduction not in ("sum", "mean"):
            raise ValueError(f"supcon_reduction must be 'sum' or 'mean', got {self.supcon_reduction!r}")


def focal_term(p_t: float, gamma: float = 2.0) -> float:
    """Scalar focal loss ``-(1 - p)^gamma * log(p)``; ``p`` is clamped to ``EPS`` from below."""
    p = max(float(p_t), EPS)
    return -((1.0 - p) ** gamma) * math.log(p)


def focal_loss(logits: Tensor, targets, gamma: float = 2.0, weights=None) -> Tensor:
    """Weighted mean focal loss over a batch.

    ``targets`` are class indices [N]; ``weights`` (default ones) scale each
    sample's term before averaging over N.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    logp = ad.log_softmax(logits, axis=-1)
    pick = np.zeros(logits.shape)
    pick[np.arange(n), targets] = 1.0
    log_pt = ad.clip((logp * pick).sum(axis=-1), lo=math.log(EPS))
    p_t = ad.exp(log_pt)
    modulating = ad.power(ad.clip(1.0 - p_t, lo=0.0), gamma)
    per_sample = -(modulating * log_pt)
    if weights is not None:
        per_sample = per_sample * np.asarray(weights, dtype=np.float64)
    return per_sample.mean()


class EmbeddingBank:
    """Fixed-capacity FIFO of detached (embedding, label, weight) entries."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        self.capacity = int(capacity)
        self._z: deque[np.ndarray] = deque(maxlen=self.capacity)
        self._y: deque[int] = deque(maxlen=self.capacity)
        self._w: deque[float] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._z)

    def update(self, z, labels, weights=None) -> "EmbeddingBank":
        z = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        weights = np.ones(len(labels)) if weights is None else np.asarray(weights, dtype=np.float64)
        if self.capacity == 0:
            return self
        norms = np.linalg.norm(z, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("bank entries must be unit vectors")
        for row, y, w in zip(z, labels, weights):
            self._z.append(np.array(row, dtype=np.float64))
            self._y.append(int(y))
            self._w.append(float(w))
        return self

    @property
    def embeddings(self) -> np.ndarray:
        if not self._z:
            return np.zeros((0, 0))
        return np.stack(self._z)

    @property
    def labels(self) -> np.ndarray:
        return np.array(self._y, dtype=np.int64)

    @property
    def weights(self) -> np.ndarray:
        return np.array(self._w, dtype=np.float64)

    def state(self) -> dict:
        return {"capacity": self.capacity, "z": self.embeddings, "labels": self.labels,
                "weights": self.weights}


def xbm_update(bank: EmbeddingBank, batch_z, labels, weights=None) -> EmbeddingBank:
    return bank.update(batch_z, labels, weights)


def supcon_loss(z: Tensor, labels, bank: EmbeddingBank | None = None, tau: float = 0.07,
                normalize: bool = False, reduction: str = "sum") -> Tensor:
    """Supervised contrastive loss summed over current-batch anchors.

    For anchor ``i`` the candidate set is every other row of the batch plus
    every bank entry. Positives are candidates with the anchor's label. The
    loss is ``-sum_i sum_{p in P(i)} log softmax_i(p)`` where the softmax runs
    over the candidates at temperature ``tau``. With ``normalize`` each anchor's
    inner sum is divided by ``|P(i)|``; ``reduction="mean"`` averages over the
    anchors that have positives instead of summing. Anchors with no positives
    add zero.
    Gradients reach only the batch embeddings.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = z.shape[0]
    if n < 1:
        raise ValueError("supcon_loss needs at least one embedding")
    if np.any(np.linalg.norm(z.data, axis=1) == 0):
        raise ad.DomainError("supcon_loss: zero-norm embedding")
    if bank is not None and len(bank):
        cand = ad.concat([z, Tensor(bank.embeddings)], axis=0)
        cand_labels = np.concatenate([labels, bank.labels])
    else:
        cand = z
        cand_labels = labels
    m = cand.shape[0]
    sim = ad.scale(z @ cand.transpose(), 1.0 / tau)  # [n, m]

    not_self = np.ones((n, m))
    not_self[np.arange(n), np.arange(n)] = 0.0
    pos = (labels[:, None] == cand_labels[None, :]) * not_self
    if not_self.sum() == 0 or pos.sum() == 0:
        return ad.scale(sim.sum(), 0.0)

    # log-sum-exp over candidates k != i; the shift is a constant so it drops out of the gradient
    shift = np.where(not_self > 0, sim.data, -np.inf).max(axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    denom = (ad.exp(sim - shift) * not_self).sum(axis=1, keepdims=True)
    has_cand = not_self.sum(axis=1, keepdims=True) > 0
    lse = ad.log(denom + (~has_cand).astype(np.float64)) + shift
    log_prob = sim - lse
    per_anchor = (log_prob * pos).sum(axis=1)
    if normalize:
        counts = pos.sum(axis=1)
        per_anchor = per_anchor * np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    if reduction == "mean":
        return ad.scale(per_anchor.sum(), -1.0 / int((pos.sum(axis=1) > 0).sum()))
    return -per_anchor.sum()


def total_loss(l_c, l_scl, lambda_scl: float = 10.0):
    """Classification loss plus ``lambda_scl`` times the contrastive loss."""
    if lambda_scl == 0:
        return l_c
    if isinstance(l_c, Tensor) or isinstance(l_scl, Tensor):
        return ad.add(l_c, ad.scale(ad.as_tensor(l_scl), lambda_scl))
    return l_c + lambda_scl * l_scl
