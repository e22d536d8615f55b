"""Compact spectral anti-spoofing network.

Pipeline: per-channel spectral weights, a central-difference first
convolution, a stride-2 conv/ReLU stack, multi-attention pooling, then a
two-way classifier head and an L2-normalised projection head fed by the same
pooled feature.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataio import FormatError, TruncatedError, decode, encode_tensor

CKPT_MAGIC = b"SPFK"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    in_channels: int = 33
    height: int = 64
    width: int = 64
    kernel: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    n_attention: int = 4
    d_proj: int = 128
    theta: float = 0.7
    batch_norm: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.n_attention < 1:
            raise ValueError("need at least one attention map")
        if not self.channels:
            raise ValueError("need at least one conv block")

    @property
    def d_feat(self) -> int:
        return self.n_attention * self.channels[-1]


@dataclass
class ModelOutput:
    logits: Tensor
    z: Tensor
    features: Tensor | None = None
    # per-block (mean, var) of the batch, present in training mode
    batch_stats: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def spectral_weight_layer(x: Tensor, s: Tensor) -> Tensor:
    """Scale channel ``c`` of an NHWC tensor by ``s[c]``."""
    if x.shape[-1] != s.shape[-1]:
        raise ad.ShapeError("spectral_weight_layer", x.shape, s.shape)
    return x * s


def edge_pad(x: Tensor, pad: int) -> Tensor:
    """Replicate the outermost rows and columns of an NHWC map ``pad`` times."""
    if pad == 0:
        return x
    top, bottom = x[:, :1], x[:, -1:]
    x = ad.concat([top] * pad + [x] + [bottom] * pad, axis=1)
    left, right = x[:, :, :1], x[:, :, -1:]
    return ad.concat([left] * pad + [x] + [right] * pad, axis=2)


def cdc_conv(x: Tensor, kernel: Tensor, theta: float, stride: int = 1) -> Tensor:
    """Central-difference convolution.

    ``(1 - theta) * conv(x, k) + theta * sum_taps k * (x_tap - x_center)``.
    The vanilla term zero-pads; the difference term replicates edge pixels so
    that out-of-image taps contribute no difference.
    """
    k = kernel.shape[0]
    pad = k // 2
    vanilla = ad.conv2d(x, kernel, stride=stride, padding=pad)
    if theta == 0:
        return vanilla
    k_sum = kernel.sum(axis=(0, 1), keepdims=True)  # [1, 1, cin, cout]
    center = ad.conv2d(x, k_sum, stride=stride, padding=0)
    diff = ad.conv2d(edge_pad(x, pad), kernel, stride=stride, padding=0) - center
    if theta == 1:
        return diff
    return ad.scale(vanilla, 1.0 - theta) + ad.scale(diff, theta)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               running: tuple[np.ndarray, np.ndarray] | None = None):
    """Per-channel normalisation of an NHWC map.

    Uses batch statistics when ``running`` is None and returns them alongside
    the output; otherwise normalises with the given (mean, var).
    """
    axes = tuple(range(x.ndim - 1))
    if running is None:
        mu = x.mean(axis=axes, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        y = xc * ad.power(var + eps, -0.5)
        stats = (mu.data.reshape(-1).copy(), var.data.reshape(-1).copy())
    else:
        mean_, var_ = running
        y = (x - mean_) * (1.0 / np.sqrt(var_ + eps))
        stats = None
    return y * gamma + beta, stats


def mat_lite_forward(f: Tensor, w_att: Tensor, b_att: Tensor) -> tuple[Tensor, Tensor]:
    """Attention pooling: ``a`` spatial-softmax maps from a 1x1 conv, each pooling
    the feature map into one ``cf`` vector. Returns (pooled [N, a*cf], maps [N, a, hw])."""
    n, hf, wf, cf = f.shape
    a = w_att.shape[-1]
    logits = ad.conv2d(f, w_att.reshape(1, 1, cf, a)) + b_att  # [N, hf, wf, a]
    maps = ad.softmax(logits.reshape(n, hf * wf, a).transpose(0, 2, 1), axis=-1)  # [N, a, hw]
    pooled = maps @ f.reshape(n, hf * wf, cf)  # [N, a, cf]
    return pooled.reshape(n, a * cf), maps


class SpectralFASNet:
    """Parameters plus the forward pass. ``params`` is an ordered name -> Tensor map."""

    def __init__(self, config: ModelConfig | None = None, params: dict[str, Tensor] | None = None,
                 buffers: dict[str, np.ndarray] | None = None):
        self.config = config or ModelConfig()
        self.params = params if params is not None else self.init_params(self.config)
        self.buffers = buffers if buffers is not None else self.init_buffers(self.config)

    @staticmethod
    def init_buffers(cfg: ModelConfig) -> dict[str, np.ndarray]:
        if not cfg.batch_norm:
            return {}
        out = {}
        for i, c in enumerate(cfg.channels):
            out[f"bn{i}.running_mean"] = np.zeros(c)
            out[f"bn{i}.running_var"] = np.ones(c)
        return out

    def update_running_stats(self, stats: list[tuple[np.ndarray, np.ndarray]]) -> None:
        m = self.config.bn_momentum
        for i, (mu, var) in enumerate(stats):
            rm, rv = f"bn{i}.running_mean", f"bn{i}.running_var"
            self.buffers[rm] = (1.0 - m) * self.buffers[rm] + m * mu
            self.buffers[rv] = (1.0 - m) * self.buffers[rv] + m * var

    @staticmethod
    def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
        k = cfg.kernel
        p: dict[str, np.ndarray] = {"spectral_weights": np.ones(cfg.in_channels)}
        cin = cfg.in_channels
        for i, cout in enumerate(cfg.channels):
            p[f"conv{i}.w"] = rng.standard_normal((k, k, cin, cout)) * np.sqrt(2.0 / (k * k * cin))
            p[f"conv{i}.b"] = np.zeros(cout)
            if cfg.batch_norm:
                p[f"bn{i}.gamma"] = np.ones(cout)
                p[f"bn{i}.beta"] = np.zeros(cout)
            cin = cout
        p["att.w"] = rng.standard_normal((cin, cfg.n_attention)) * np.sqrt(1.0 / cin)
        p["att.b"] = np.zeros(cfg.n_attention)
        d = cfg.d_feat
        p["cls.w"] = rng.standard_normal((d, 2)) * np.sqrt(1.0 / d)
        p["cls.b"] = np.zeros(2)
        p["proj.w"] = rng.standard_normal((d, cfg.d_proj)) * np.sqrt(1.0 / d)
        p["proj.b"] = np.zeros(cfg.d_proj)
        return {name: Tensor(v, requires_grad=True, name=name) for name, v in p.items()}

    def forward(self, x, params: dict[str, Tensor] | None = None, train: bool = False) -> ModelOutput:
        """``train`` selects batch statistics for normalisation; otherwise running ones."""
        cfg = self.config
        p = self.params if params is None else params
        x = ad.as_tensor(x)
        expected = (cfg.height, cfg.width, cfg.in_channels)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ad.ShapeError("model_forward", x.shape, (None, *expected))
        h = spectral_weight_layer(x, p["spectral_weights"])
        stats = []
        for i in range(len(cfg.channels)):
            if i == 0:
                h = cdc_conv(h, p["conv0.w"], cfg.theta, stride=2)
            else:
                h = ad.conv2d(h, p[f"conv{i}.w"], stride=2, padding=cfg.kernel // 2)
            h = h + p[f"conv{i}.b"]
            if cfg.batch_norm:
                running = None if train else (self.buffers[f"bn{i}.running_mean"], self.buffers[f"bn{i}.running_var"])
                h, st = batch_norm(h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], cfg.bn_eps, running)
                if st is not None:
                    stats.append(st)
            h = ad.relu(h)
        feat, _ = mat_lite_forward(h, p["att.w"], p["att.b"])
        logits = feat @ p["cls.w"] + p["cls.b"]
        z = ad.l2_normalize(feat @ p["proj.w"] + p["proj.b"], axis=-1)
        return ModelOutput(logits, z, feat, stats)

    __call__ = forward

    def predict_proba(self, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Softmax probabilities [N, 2] (column 1 is the fake score), no graph recorded."""
        frozen = {k: Tensor(v.data) for k, v in self.params.items()}
        out = []
        for start in range(0, len(X), batch_size):
            logits = self.forward(np.asarray(X[start:start + batch_size], dtype=np.float64), frozen).logits
            out.append(ad.softmax(logits, axis=-1).data)
        return np.concatenate(out) if out else np.zeros((0, 2))

    # -- checkpoints ------------------------------------------------------
    def save(self, path: str | Path, hyperparams: dict | None = None) -> None:
        tensors = {**{k: v.data for k, v in self.params.items()}, **{f"buffer:{k}": v for k, v in self.buffers.items()}}
        write_checkpoint(path, tensors, {**config_items(self.config), **(hyperparams or {})})

    @classmethod
    def load(cls, path: str | Path) -> tuple["SpectralFASNet", dict[str, str]]:
        tensors, header = read_checkpoint(path)
        cfg = config_from_items(header)
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in tensors.items() if not k.startswith("buffer:")}
        buffers = {k[len("buffer:"):]: v for k, v in tensors.items() if k.startswith("buffer:")}
        return cls(cfg, params, buffers), header


def config_items(cfg: ModelConfig) -> dict[str, str]:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f"model.{f.name}"] = ",".join(map(str, v)) if isinstance(v, tuple) else repr(v)
    return out


def config_from_items(items: dict[str, str]) -> ModelConfig:
    kwargs = {}
    for f in fields(ModelConfig):
        key = f"model.{f.name}"
        if key not in items:
            continue
        raw = items[key]
        if f.name == "channels":
            kwargs[f.name] = tuple(int(t) for t in raw.split(","))
        elif f.name in ("theta", "bn_momentum", "bn_eps"):
            kwargs[f.name] = float(raw)
        elif f.name == "batch_norm":
            kwargs[f.name] = raw in ("True", "true", "1")
        else:
            kwargs[f.name] = int(raw)
    return ModelConfig(**kwargs)


def write_checkpoint(path: str | Path, params: dict[str, Tensor | np.ndarray], header: dict[str, str]) -> None:
    """``SPFK`` + u16 version + u32 header length + UTF-8 ``key = value`` lines,
    then u32 tensor count and, per tensor, u16 name length, name, container record."""
    text = "".join(f"{k} = {v}\n" for k, v in header.items()).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(text)), text, struct.pack("<I", len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        data = t.data if isinstance(t, Tensor) else t
        parts += [struct.pack("<H", len(raw)), raw, encode_tensor(data)]
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {buf[:4]!r})")
    if len(buf) < 10:
        raise TruncatedError(f"{path}: truncated checkpoint header")
    version, hlen = struct.unpack_from("<HI", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    header = {}
    for line in buf[pos:pos + hlen].decode("utf-8").splitlines():
        key, _, value = line.partition(" = ")
        header[key.strip()] = value.strip()
    pos += hlen
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    params = {}
    for _ in range(count):
        if len(buf) - pos < 2:
            raise TruncatedError(f"{path}: truncated tensor record")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + nlen].decode("utf-8")
        arr, pos = decode(buf, pos + 2 + nlen)
        params[name] = arr
    return params, header
