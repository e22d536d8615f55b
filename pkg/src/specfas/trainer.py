"""Training loop: adaptive sharpness-aware updates, cosine learning rate,
decoupled weight decay, cross-batch memory, run configs and epoch logs."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, MaskVariant, apply_augment
from .autodiff import Tensor
from .dataio import oversample_indices
from .losses import EmbeddingBank, LossConfig, focal_loss, supcon_loss, total_loss
from .metrics import MetricsReport, acer_report, confusion
from .model import ModelConfig, SpectralFASNet
from .strategies import MixupConfig, mix_batch

logger = logging.getLogger(__name__)


class NumericalAbort(FloatingPointError):
    """A loss became NaN or infinite; carries the step diagnostics."""

    def __init__(self, step: int, lr: float, components: dict[str, float]):
        self.step, self.lr, self.components = step, lr, components
        parts = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"non-finite loss at step {step} (lr={lr!r}): {parts}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr_max: float = 0.01
    lr_min: float = 0.0
    weight_decay: float = 5e-3
    asam_rho: float = 0.5
    asam_eta: float = 0.01
    seed: int = 0
    # global L2 clip on the descent gradient; 0 disables
    max_grad_norm: float = 0.0
    balance: bool = True
    ror: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr_max > self.lr_min >= 0:
            raise ValueError(f"need lr_max > lr_min >= 0, got {self.lr_max}, {self.lr_min}")
        if self.asam_rho < 0:
            raise ValueError(f"asam_rho must be >= 0, got {self.asam_rho}")
        if self.asam_eta < 0:
            raise ValueError(f"asam_eta must be >= 0, got {self.asam_eta}")


# -- schedule and optimizer -------------------------------------------------
def cosine_lr(t: int, total: int, lr_max: float = 0.01, lr_min: float = 0.0) -> float:
    if total < 1:
        raise ValueError(f"total steps must be >= 1, got {total}")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


LossFn = Callable[[dict], "Tensor | tuple[Tensor, object]"]


def _call(loss_fn: LossFn, params: dict):
    out = loss_fn(params)
    return out if isinstance(out, tuple) else (out, None)


def asam_step(params: dict[str, Tensor], loss_fn: LossFn, lr: float, rho: float = 0.5,
              eta: float = 0.01, weight_decay: float = 0.0, max_grad_norm: float = 0.0):
    """One adaptive sharpness-aware update, in place on ``params``.

    The ascent direction is ``rho * T^2 g / ||T g||`` with ``T = |w| + eta``
    elementwise; the descent uses the gradient taken at the perturbed point
    and applies weight decay directly to the weights. A positive
    ``max_grad_norm`` rescales that gradient to at most this global L2 norm
    before the weight decay term is added. ``loss_fn(params)``
    returns a scalar Tensor or ``(loss, aux)``. Returns ``(loss, aux)`` from
    the unperturbed evaluation.
    """
    ad.zero_grad(params.values())
    loss, aux = _call(loss_fn, params)
    loss.backward()
    grads = {k: (p.grad if p.grad is not None else np.zeros(p.shape)) for k, p in params.items()}

    descent = grads
    if rho > 0:
        scaled = {k: (np.abs(p.data) + eta) * grads[k] for k, p in params.items()}
        norm = math.sqrt(sum(float(np.sum(s * s)) for s in scaled.values()))
        if norm > 0:
            perturbed = {}
            for k, p in params.items():
                eps = rho * (np.abs(p.data) + eta) * scaled[k] / norm
                perturbed[k] = Tensor(p.data + eps, requires_grad=True, name=k)
            loss2, _ = _call(loss_fn, perturbed)
            loss2.backward()
            descent = {k: (t.grad if t.grad is not None else np.zeros(t.shape)) for k, t in perturbed.items()}

    if max_grad_norm > 0:
        gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in descent.values()))
        if gnorm > max_grad_norm:
            descent = {k: g * (max_grad_norm / gnorm) for k, g in descent.items()}

    for k, p in params.items():
        params[k] = Tensor(p.data - lr * (descent[k] + weight_decay * p.data), requires_grad=True, name=k)
    return loss, aux


def ascent_perturbation(w: np.ndarray, g: np.ndarray, rho: float, eta: float) -> np.ndarray:
    """The ASAM ascent vector for a single flat parameter vector (test helper)."""
    t = np.abs(w) + eta
    norm = np.linalg.norm(t * g)
    return np.zeros_like(w) if norm == 0 else rho * t * t * g / norm


# -- run configuration --------------------------------------------------------
SECTIONS = {"train": TrainConfig, "loss": LossConfig, "augment": AugmentConfig,
            "mixup": MixupConfig, "model": ModelConfig}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    mixup: MixupConfig = field(default_factory=MixupConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def items(self) -> dict[str, str]:
        out = {}
        for sec in SECTIONS:
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                out[f"{sec}.{f.name}"] = _format_value(getattr(obj, f.name))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items().items())

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        values = {sec: {} for sec in SECTIONS}
        for key, raw in overrides.items():
            sec, _, name = key.partition(".")
            if sec not in SECTIONS or name not in {f.name for f in dataclasses.fields(SECTIONS[sec])}:
                raise KeyError(f"unknown config key {key!r}")
            current = getattr(getattr(self, sec), name)
            values[sec][name] = _parse_value(raw, current)
        return RunConfig(**{sec: dataclasses.replace(getattr(self, sec), **values[sec]) for sec in SECTIONS})

    @classmethod
    def from_file(cls, path: str | Path, base: "RunConfig | None" = None) -> "RunConfig":
        return (base or cls()).with_overrides(parse_config_text(Path(path).read_text(encoding="utf-8")))


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(x.value if isinstance(x, MaskVariant) else str(x) for x in v)
    if isinstance(v, str):
        return v
    return repr(v)


def _parse_value(raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        if raw.lower() not in {"true", "false", "1", "0", "yes", "no"}:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return raw.lower() in {"true", "1", "yes"}
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        items = [t.strip() for t in raw.split(",") if t.strip()]
        if items and all(t.isdigit() for t in items):
            return tuple(int(t) for t in items)
        return tuple(MaskVariant(t) for t in items)
    return raw


# -- training state -------------------------------------------------------------
@dataclass
class TrainState:
    model: SpectralFASNet
    bank: EmbeddingBank
    step: int = 0
    epoch: int = 0
    total_steps: int = 1
    order_rng: np.random.Generator = None
    augment_rng: np.random.Generator = None
    mixup_rng: np.random.Generator = None


@dataclass
class EpochReport:
    epoch: int
    steps: int
    mean_loss: float
    mean_focal: float
    mean_supcon: float
    lr_trace: list[float]
    bank_size: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def init_state(cfg: RunConfig, n_train: int) -> TrainState:
    # the augmentation stream also depends on augment.seed
    seeds = np.random.SeedSequence(cfg.train.seed).spawn(3)
    steps_per_epoch = math.ceil(n_train / cfg.train.batch_size)
    return TrainState(
        model=SpectralFASNet(cfg.model),
        bank=EmbeddingBank(cfg.loss.xbm_capacity),
        total_steps=cfg.train.epochs * steps_per_epoch,
        order_rng=np.random.default_rng(seeds[0]),
        augment_rng=np.random.default_rng(np.random.SeedSequence([cfg.augment.seed, cfg.train.seed])),
        mixup_rng=np.random.default_rng(seeds[2]),
    )


def make_loss_fn(model: SpectralFASNet, xb: np.ndarray, yb: np.ndarray, wb: np.ndarray,
                 bank: EmbeddingBank, loss_cfg: LossConfig):
    def loss_fn(params):
        out = model.forward(xb, params, train=True)
        l_c = focal_loss(out.logits, yb, loss_cfg.gamma, wb)
        if loss_cfg.lambda_scl > 0:
            l_scl = supcon_loss(out.z, yb, bank, loss_cfg.tau, loss_cfg.supcon_normalize,
                                loss_cfg.supcon_reduction)
        else:
            l_scl = Tensor(0.0)
        return total_loss(l_c, l_scl, loss_cfg.lambda_scl), (out, l_c.item(), l_scl.item())
    return loss_fn


def train_epoch(state: TrainState, X: np.ndarray, labels: np.ndarray, weights: np.ndarray,
                cfg: RunConfig) -> EpochReport:
    """One pass over ``X`` (already balanced) in a seeded random order."""
    tc = cfg.train
    order = state.order_rng.permutation(len(X))
    losses, focals, supcons, lrs = [], [], [], []
    for start in range(0, len(order), tc.batch_size):
        idx = order[start:start + tc.batch_size]
        yb = labels[idx]
        wb = weights[idx]
        xb = np.stack([apply_augment(np.asarray(X[i], dtype=np.float64), cfg.augment, state.augment_rng)
                       for i in idx])
        xb = mix_batch(xb, yb, state.mixup_rng, cfg.mixup)
        lr = cosine_lr(min(state.step, state.total_steps), state.total_steps, tc.lr_max, tc.lr_min)
        loss_fn = make_loss_fn(state.model, xb, yb, wb, state.bank, cfg.loss)
        loss, (out, l_c, l_scl) = asam_step(state.model.params, loss_fn, lr, tc.asam_rho, tc.asam_eta,
                                            tc.weight_decay, tc.max_grad_norm)
        value = loss.item()
        if not math.isfinite(value) or not all(np.isfinite(p.data).all() for p in state.model.params.values()):
            raise NumericalAbort(state.step, lr, {"loss": value, "focal": l_c, "supcon": l_scl})
        state.bank.update(out.z.data, yb, wb)
        state.model.update_running_stats(out.batch_stats)
        state.step += 1
        losses.append(value)
        focals.append(l_c)
        supcons.append(l_scl)
        lrs.append(lr)
    state.epoch += 1
    return EpochReport(state.epoch, len(lrs), float(np.mean(losses)), float(np.mean(focals)),
                       float(np.mean(supcons)), lrs, len(state.bank))


def prepare_training_set(X: np.ndarray, labels: np.ndarray, weights: np.ndarray, cfg: RunConfig):
    """Index-level oversampling; the pixel arrays are never copied."""
    if cfg.train.balance:
        idx = oversample_indices(labels, cfg.train.seed)
    else:
        idx = np.arange(len(labels))
    return _IndexedView(X, idx), labels[idx], weights[idx]


class _IndexedView:
    def __init__(self, X, idx):
        self.X, self.idx = X, idx

    def __len__(self):
        return len(self.idx)

    def __getitem__(self, i):
        return self.X[self.idx[i]]


def fit(X: np.ndarray, labels: np.ndarray, weights: np.ndarray | None, cfg: RunConfig,
        on_epoch: Callable[[EpochReport], None] | None = None) -> tuple[TrainState, list[EpochReport]]:
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.ones(len(labels)) if weights is None else np.asarray(weights, dtype=np.float64)
    data, y, w = prepare_training_set(X, labels, weights, cfg)
    state = init_state(cfg, len(data))
    reports = []
    for _ in range(cfg.train.epochs):
        rep = train_epoch(state, data, y, w, cfg)
        logger.info("epoch %d: loss %.6g (focal %.6g, supcon %.6g), bank %d", rep.epoch, rep.mean_loss,
                    rep.mean_focal, rep.mean_supcon, rep.bank_size)
        reports.append(rep)
        if on_epoch is not None:
            on_epoch(rep)
    return state, reports


def dataset_loss(model: SpectralFASNet, X: np.ndarray, labels, weights=None, loss_cfg: LossConfig | None = None,
                 batch_size: int = 32) -> float:
    """Mean training objective over fixed batches of ``X``: no augmentation,
    mixup or memory bank, so values are comparable across checkpoints."""
    loss_cfg = loss_cfg or LossConfig()
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.ones(len(labels)) if weights is None else np.asarray(weights, dtype=np.float64)
    frozen = {k: Tensor(v.data) for k, v in model.params.items()}
    total, n = 0.0, 0
    for start in range(0, len(labels), batch_size):
        sl = slice(start, start + batch_size)
        fn = make_loss_fn(model, np.asarray(X[sl], dtype=np.float64), labels[sl], weights[sl], None, loss_cfg)
        loss, _ = fn(frozen)
        total += loss.item() * len(labels[sl])
        n += len(labels[sl])
    return total / n


def evaluate(model: SpectralFASNet, X: np.ndarray, labels, ids=None, threshold: float = 0.5) -> MetricsReport:
    """Fake-class softmax probability as the score; no augmentation or mixup."""
    if len(X) == 0:
        raise ValueError("cannot evaluate on an empty set")
    ids = [str(i) for i in range(len(X))] if ids is None else list(ids)
    probs = model.predict_proba(X)[:, 1]
    scores = dict(zip(ids, probs.tolist()))
    truth = dict(zip(ids, (int(v) for v in labels)))
    return acer_report(confusion(scores, truth, threshold), threshold)
