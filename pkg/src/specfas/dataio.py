"""Sample container files, dataset manifests, the synthetic spectral face
generator and the class-balancing oversampler."""

from __future__ import annotations

import enum
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"SPFS"
VERSION_F32 = 1
VERSION_F64_ND = 2
N_SPECTRAL = 30
N_CHANNELS = 33
N_IDENTITIES = 20

# (fake, real) counts per split at full size
TABLE1_COUNTS = {"train": (3380, 520), "val": (728, 208)}


class ContainerError(ValueError):
    """Base class for malformed container files."""


class FormatError(ContainerError):
    """Magic bytes or version are not recognised."""


class TruncatedError(ContainerError):
    """File ends before the payload announced by its header."""


class HeaderMismatchError(ContainerError):
    """Header dimensions disagree with the payload or with the caller's expectations."""


class Label(enum.IntEnum):
    # index into the one-hot vector
    REAL = 0
    FAKE = 1

    @classmethod
    def parse(cls, text: str) -> "Label":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown label {text!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


def one_hot(label: Label | int) -> np.ndarray:
    y = np.zeros(2)
    y[int(label)] = 1.0
    return y


@dataclass
class SpectralSample:
    id: str
    rgb: np.ndarray
    spectral: np.ndarray
    label: Label
    identity_tag: str

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise HeaderMismatchError(f"rgb must be [h, w, 3], got {list(self.rgb.shape)}")
        if self.spectral.ndim != 3 or self.spectral.shape[2] != N_SPECTRAL:
            raise HeaderMismatchError(f"spectral must be [h, w, 30], got {list(self.spectral.shape)}")
        if self.rgb.shape[:2] != self.spectral.shape[:2]:
            raise HeaderMismatchError(
                f"rgb {list(self.rgb.shape)} and spectral {list(self.spectral.shape)} differ in h, w")

    @property
    def x(self) -> np.ndarray:
        """RGB and spectral planes stacked into one [h, w, 33] input."""
        return np.concatenate([self.rgb, self.spectral], axis=2)

    @classmethod
    def from_stacked(cls, id: str, x: np.ndarray, label: Label, identity_tag: str) -> "SpectralSample":
        if x.ndim != 3 or x.shape[2] != N_CHANNELS:
            raise HeaderMismatchError(f"stacked sample must be [h, w, 33], got {list(x.shape)}")
        return cls(id, x[..., :3], x[..., 3:], label, identity_tag)


# -- container -------------------------------------------------------------
def encode_array(arr: np.ndarray) -> bytes:
    """Encode a [h, w, c] array as a version-1 (float32) container."""
    if arr.ndim != 3:
        raise HeaderMismatchError(f"container holds [h, w, c] arrays, got {list(arr.shape)}")
    h, w, c = arr.shape
    head = MAGIC + struct.pack("<HIII", VERSION_F32, h, w, c)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def encode_tensor(arr: np.ndarray) -> bytes:
    """Encode an arbitrary-rank array as a version-2 (float64) container."""
    arr = np.asarray(arr, dtype="<f8")
    head = MAGIC + struct.pack("<HI", VERSION_F64_ND, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def decode(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one container starting at ``offset``; returns (array, end offset)."""
    if len(buf) - offset < 6:
        raise TruncatedError("file shorter than container header")
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError(f"bad magic {buf[offset:offset + 4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", buf, offset + 4)
    pos = offset + 6
    if version == VERSION_F32:
        if len(buf) - pos < 12:
            raise TruncatedError("truncated shape header")
        shape = struct.unpack_from("<III", buf, pos)
        pos += 12
        dtype = np.dtype("<f4")
    elif version == VERSION_F64_ND:
        if len(buf) - pos < 4:
            raise TruncatedError("truncated shape header")
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if len(buf) - pos < 4 * ndim:
            raise TruncatedError("truncated shape header")
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dtype = np.dtype("<f8")
    else:
        raise FormatError(f"unsupported container version {version}")
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - pos < nbytes:
        raise TruncatedError(f"payload needs {nbytes} bytes, {len(buf) - pos} available")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
    return arr.astype(np.float64), pos + nbytes


def write_sample(path: str | Path, sample: SpectralSample) -> None:
    Path(path).write_bytes(encode_array(sample.x))


def read_array(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode(buf)
    if end != len(buf):
        raise HeaderMismatchError(f"{path}: {len(buf) - end} trailing bytes after payload")
    return arr


def load_sample(path: str | Path, label: Label = Label.REAL, identity_tag: str = "",
                sample_id: str | None = None) -> SpectralSample:
    """Read a container file as a sample. The file itself carries only pixels;
    label and identity come from the manifest."""
    arr = read_array(path)
    if arr.shape[2] != N_CHANNELS:
        raise HeaderMismatchError(f"{path}: expected 33 channels, header says {arr.shape[2]}")
    return SpectralSample.from_stacked(sample_id or Path(path).stem, arr, label, identity_tag)


# -- manifest --------------------------------------------------------------
@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    label: Label
    identity_tag: str


@dataclass
class DatasetManifest:
    split: str
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    @property
    def counts(self) -> dict[Label, int]:
        out = {Label.REAL: 0, Label.FAKE: 0}
        for e in self.entries:
            out[e.label] += 1
        return out

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(e.label) for e in self.entries], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def write(self, path: str | Path) -> None:
        lines = [f"{e.id}\t{e.path}\t{e.label}\t{e.identity_tag}\n" for e in self.entries]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path, split: str | None = None) -> "DatasetManifest":
        path = Path(path)
        entries = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            entries.append(ManifestEntry(parts[0], parts[1], Label.parse(parts[2]), parts[3]))
        return cls(split or path.stem, entries, path.parent)

    def load_arrays(self, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Stack every entry into ``X`` [N, h, w, 33] (float32 to bound memory) and labels."""
        def one(e):
            return read_array(self.resolve(e)).astype(np.float32)

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                arrays = list(pool.map(one, self.entries))
        else:
            arrays = [one(e) for e in self.entries]
        if not arrays:
            raise ValueError(f"manifest {self.split!r} is empty")
        return np.stack(arrays), self.labels


# -- synthetic data --------------------------------------------------------
def split_counts(scale: float) -> dict[str, tuple[int, int]]:
    """(fake, real) counts per split at the given fraction of full size."""
    return {k: (max(1, round(f * scale)), max(1, round(r * scale))) for k, (f, r) in TABLE1_COUNTS.items()}


def _bump(wl, center, width):
    return np.exp(-0.5 * ((wl - center) / width) ** 2)


def spectral_signatures() -> dict[str, np.ndarray]:
    """Smooth 30-band reflectance curves: one bona fide family and two attack families."""
    wl = np.linspace(0.0, 1.0, N_SPECTRAL)
    # skin: rising red-side reflectance with a haemoglobin-like double dip
    skin = 0.35 + 0.35 * wl - 0.12 * _bump(wl, 0.30, 0.05) - 0.10 * _bump(wl, 0.38, 0.05)
    # paper print: flat, bright
    paper = 0.62 - 0.05 * wl + 0.04 * _bump(wl, 0.55, 0.2)
    # silicone/latex mask: smooth, peaks mid-band, no dips
    mask = 0.30 + 0.30 * _bump(wl, 0.6, 0.25)
    return {"skin": skin, "paper": paper, "mask": mask}


def _face_layout(rng: np.random.Generator, h: int, w: int, ident: dict) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    cy = h * (0.5 + ident["dy"] + rng.uniform(-0.03, 0.03))
    cx = w * (0.5 + ident["dx"] + rng.uniform(-0.03, 0.03))
    ry, rx = h * ident["ry"], w * ident["rx"]
    d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return np.clip(1.2 - d, 0.0, 1.0)


def synthesize_sample(rng: np.random.Generator, label: Label, identity: int, h: int, w: int,
                      identities: list[dict], curves: dict[str, np.ndarray]) -> np.ndarray:
    """One [h, w, 33] sample in [0, 1]."""
    ident = identities[identity]
    if label == Label.REAL:
        curve = curves["skin"]
    else:
        curve = curves["paper"] if rng.random() < 0.5 else curves["mask"]
    face = _face_layout(rng, h, w, ident)
    brightness = ident["brightness"] * rng.uniform(0.95, 1.05)
    background = 0.1 + 0.05 * rng.random()
    spec = background + face[..., None] * (brightness * curve[None, None, :] - background)
    spec = spec + rng.normal(0.0, 0.015, size=spec.shape)
    # RGB: three broad band integrals of the spectrum, tinted per identity
    bands = np.array_split(np.arange(N_SPECTRAL), 3)
    rgb = np.stack([spec[..., b].mean(axis=2) for b in bands[::-1]], axis=2) * ident["tint"][None, None, :]
    rgb = rgb + rng.normal(0.0, 0.01, size=rgb.shape)
    return np.clip(np.concatenate([rgb, spec], axis=2), 0.0, 1.0)


def _make_identities(rng: np.random.Generator, n: int = N_IDENTITIES) -> list[dict]:
    return [
        {
            "dy": rng.uniform(-0.06, 0.06), "dx": rng.uniform(-0.06, 0.06),
            "ry": rng.uniform(0.32, 0.42), "rx": rng.uniform(0.24, 0.34),
            "brightness": rng.uniform(0.85, 1.15), "tint": rng.uniform(0.8, 1.2, size=3),
        }
        for _ in range(n)
    ]


def synthesize_split(seed: int, split: str, n_fake: int, n_real: int, h: int = 64, w: int = 64,
                     ) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    """In-memory split: X [N, h, w, 33] float32, labels, ids, identity tags."""
    _check_dims(h, w)
    split_key = {"train": 0, "val": 1, "test": 2}[split]
    id_rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    identities = _make_identities(id_rng)
    curves = spectral_signatures()
    rng = np.random.default_rng(np.random.SeedSequence([seed, split_key]))
    labels = np.array([int(Label.FAKE)] * n_fake + [int(Label.REAL)] * n_real, dtype=np.int64)
    X = np.empty((len(labels), h, w, N_CHANNELS), dtype=np.float32)
    ids, tags = [], []
    for i, lab in enumerate(labels):
        # identities cycle through both classes so every subject has real and fake captures
        ident = (i if lab == Label.FAKE else i - n_fake) % N_IDENTITIES
        X[i] = synthesize_sample(rng, Label(lab), ident, h, w, identities, curves)
        ids.append(f"{split}_{i:05d}")
        tags.append(f"id{ident:02d}")
    return X, labels, ids, tags


def _check_dims(h, w):
    if int(h) != h or int(w) != w or h < 16 or w < 16:
        raise ValueError(f"height and width must be integers >= 16, got {h}x{w}")


def generate_synthetic(out_dir: str | Path, seed: int = 0, scale: float = 0.1, h: int = 64,
                       w: int = 64) -> dict[str, DatasetManifest]:
    """Write train/val container files plus ``train.tsv`` / ``val.tsv`` manifests."""
    if not 0.0 < scale <= 1.0:
        raise ValueError(f"scale must lie in (0, 1], got {scale}")
    _check_dims(h, w)
    out = Path(out_dir)
    manifests = {}
    for split, (n_fake, n_real) in split_counts(scale).items():
        X, labels, ids, tags = synthesize_split(seed, split, n_fake, n_real, h, w)
        (out / split).mkdir(parents=True, exist_ok=True)
        entries = []
        for x, lab, sid, tag in zip(X, labels, ids, tags):
            rel = f"{split}/{sid}.spfs"
            (out / rel).write_bytes(encode_array(x))
            entries.append(ManifestEntry(sid, rel, Label(int(lab)), tag))
        man = DatasetManifest(split, entries, out)
        man.write(out / f"{split}.tsv")
        manifests[split] = man
        logger.info("wrote %s: %d fake, %d real", split, n_fake, n_real)
    return manifests


# -- oversampling ----------------------------------------------------------
def oversample_indices(labels: Sequence[int], seed: int = 0) -> np.ndarray:
    """Indices that equalize class counts by duplicating minority entries.

    Every original index is kept once in its original order; minority entries
    are then repeated in full cycles, with a seeded random subset (without
    replacement) filling the remainder.
    """
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ValueError("oversampling needs at least two classes")
    target = counts.max()
    rng = np.random.default_rng(seed)
    extra = []
    for c, n in zip(classes, counts):
        if n == target:
            continue
        members = np.flatnonzero(labels == c)
        need = target - n
        full, rem = divmod(need, n)
        extra.extend(np.tile(members, full))
        extra.extend(np.sort(rng.choice(members, size=rem, replace=False)))
    return np.concatenate([np.arange(len(labels)), np.asarray(extra, dtype=np.int64)]).astype(np.int64)


def oversample_balance(manifest: DatasetManifest, seed: int = 0) -> DatasetManifest:
    idx = oversample_indices(manifest.labels, seed)
    return DatasetManifest(manifest.split, [manifest.entries[i] for i in idx], manifest.root)
