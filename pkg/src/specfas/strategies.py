"""Intra-class mixup and real-face oriented reweighting (ROR)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .dataio import Label, SpectralSample

logger = logging.getLogger(__name__)


@dataclass
class MixupConfig:
    alpha: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"mixup alpha must be > 0, got {self.alpha}")


def sample_mix_lambda(rng: np.random.Generator, cfg: MixupConfig) -> float:
    """Draw the mixing coefficient from Beta(alpha, alpha)."""
    return float(rng.beta(cfg.alpha, cfg.alpha))


def intra_class_mixup(x_i, x_j, y_i, y_j, lam: float):
    """Convex combination of two samples that share a class.

    Returns ``(x_hat, y_hat)``. Because the labels are equal, ``y_hat`` is the
    shared one-hot vector itself, not a floating-point blend of it.
    """
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if not np.array_equal(y_i, y_j):
        raise ValueError(f"intra-class mixup needs equal labels, got {y_i.tolist()} and {y_j.tolist()}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixing coefficient must lie in [0, 1], got {lam}")
    x_i, x_j = np.asarray(x_i), np.asarray(x_j)
    if x_i.shape != x_j.shape:
        raise ValueError(f"mixup operands differ in shape: {list(x_i.shape)} vs {list(x_j.shape)}")
    if lam == 1.0:
        return x_i.copy(), y_i.copy()
    if lam == 0.0:
        return x_j.copy(), y_i.copy()
    return lam * x_i + (1.0 - lam) * x_j, y_i.copy()


def mix_batch(X: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
              cfg: MixupConfig) -> np.ndarray:
    """Mix every sample with a random partner of its own class from the same batch.

    A class with a single member in the batch passes through unchanged. One
    coefficient is drawn per sample. Labels are unchanged by construction.
    """
    if not cfg.enabled:
        return X
    out = X.copy()
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < 2:
            continue
        partners = members[rng.permutation(len(members))]
        lams = rng.beta(cfg.alpha, cfg.alpha, size=len(members))
        for i, j, lam in zip(members, partners, lams):
            out[i] = lam * X[i] + (1.0 - lam) * X[j]
    return out


# -- ROR -------------------------------------------------------------------
class EmbeddingProvider(Protocol):
    def embed(self, sample: SpectralSample) -> np.ndarray: ...


class RandomProjectionEmbedder:
    """Deterministic stand-in face embedder: fixed Gaussian projection of the
    mean-centred RGB plane, L2-normalised."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._proj: dict[tuple[int, int], np.ndarray] = {}

    def _matrix(self, h: int, w: int) -> np.ndarray:
        key = (h, w)
        if key not in self._proj:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, h, w]))
            self._proj[key] = rng.standard_normal((h * w * 3, self.dim)) / np.sqrt(h * w * 3)
        return self._proj[key]

    def embed_rgb(self, rgb: np.ndarray) -> np.ndarray:
        v = rgb.reshape(-1).astype(np.float64)
        v = (v - v.mean()) @ self._matrix(rgb.shape[0], rgb.shape[1])
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("cannot embed a constant image")
        return v / norm

    def embed(self, sample: SpectralSample) -> np.ndarray:
        return self.embed_rgb(sample.rgb)


class FileEmbeddingProvider:
    """Looks up precomputed embeddings (e.g. from a real face model) by sample id."""

    def __init__(self, table: Mapping[str, np.ndarray]):
        self.table = dict(table)

    @classmethod
    def read(cls, path: str | Path) -> "FileEmbeddingProvider":
        return cls(read_embeddings(path))

    def embed(self, sample: SpectralSample) -> np.ndarray:
        try:
            return self.table[sample.id]
        except KeyError:
            raise KeyError(f"no precomputed embedding for sample {sample.id!r}") from None


def write_embeddings(path: str | Path, rows: Sequence[tuple[str, np.ndarray]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, vec in rows:
            fh.write(sid + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")


def read_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    table = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        sid, sep, rest = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected id<TAB>floats")
        table[sid] = np.array([float(t) for t in rest.split()], dtype=np.float64)
    return table


def _unit(v: np.ndarray, sid: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError(f"zero embedding for sample {sid!r}")
    if abs(n - 1.0) > 1e-9:
        logger.warning("embedding for %s has norm %.6g; normalising", sid, n)
        v = v / n
    return v


def ror_weights_from_embeddings(fake_emb: np.ndarray, real_emb: np.ndarray) -> np.ndarray:
    """Weight of each fake row: max over reals of (1 + cos) / 2, clipped to [0, 1]."""
    fake_emb = np.atleast_2d(fake_emb)
    real_emb = np.atleast_2d(real_emb)
    if real_emb.shape[0] == 0 or real_emb.size == 0:
        raise ValueError("ROR needs at least one real sample")
    cos = fake_emb @ real_emb.T
    return np.clip((1.0 + cos.max(axis=1)) / 2.0, 0.0, 1.0)


def compute_ror_weights(fakes: Sequence[SpectralSample], reals: Sequence[SpectralSample],
                        provider: EmbeddingProvider) -> dict[str, float]:
    """Map sample id to its training weight; reals get 1.0."""
    if not reals:
        raise ValueError("ROR needs at least one real sample")
    real_emb = np.stack([_unit(provider.embed(s), s.id) for s in reals])
    weights = {s.id: 1.0 for s in reals}
    if fakes:
        fake_emb = np.stack([_unit(provider.embed(s), s.id) for s in fakes])
        for s, wv in zip(fakes, ror_weights_from_embeddings(fake_emb, real_emb)):
            weights[s.id] = float(wv)
    return weights


def ror_weights_for_arrays(X: np.ndarray, labels: np.ndarray, provider: RandomProjectionEmbedder
                           | None = None, embeddings: np.ndarray | None = None) -> np.ndarray:
    """Per-row weights for a stacked training set (reals 1.0, fakes ROR).

    ``embeddings`` overrides the provider when face vectors are already known.
    """
    labels = np.asarray(labels)
    if embeddings is None:
        provider = provider or RandomProjectionEmbedder()
        embeddings = np.stack([provider.embed_rgb(x[..., :3]) for x in X])
    else:
        embeddings = np.stack([_unit(e, str(i)) for i, e in enumerate(embeddings)])
    real = labels == int(Label.REAL)
    if not real.any():
        raise ValueError("ROR needs at least one real sample")
    w = np.ones(len(labels))
    fake = ~real
    if fake.any():
        w[fake] = ror_weights_from_embeddings(embeddings[fake], embeddings[real])
    return w
