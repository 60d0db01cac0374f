"""Task datasets: file loaders, synthetic generators and deterministic splits.

Every record is an envelope of shape (J, M) normalized to unit rms per
channel; all-zero channels are kept as zeros and flagged.
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .physics import EnvelopeSignal

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

TASKS = {
    # task: (J, M, C, sub-Nyquist factor)
    "mnist": (1, 784, 10, 49),
    "rfmod": (2, 2048, 4, 64),
    "har": (1, 561, 6, 51),
}
RFMOD_CLASSES = ("lsb", "morse", "rtty", "usb")
HAR_CLASSES = ("walking", "walking_upstairs", "walking_downstairs", "sitting", "standing", "laying")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray  # (N, J, M)
    y: np.ndarray  # (N,)
    classes: int
    split: str = "train"
    provenance: dict = field(default_factory=dict)
    zero_records: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 3 or len(self.x) != len(self.y):
            raise DatasetError(f"inconsistent dataset shapes {self.x.shape} / {self.y.shape}")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.classes):
            raise DatasetError(f"labels outside [0, {self.classes})")
        if self.zero_records is None:
            self.zero_records = np.zeros(len(self.y), dtype=bool)

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i) -> EnvelopeSignal:
        return EnvelopeSignal(self.x[i], int(self.y[i]))

    @property
    def shape(self):
        return self.x.shape[1:]

    def subset(self, idx, split=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        prov = dict(self.provenance, subset=hashlib.sha256(idx.tobytes()).hexdigest()[:16])
        return Dataset(self.x[idx], self.y[idx], self.classes, split or self.split, prov,
                       self.zero_records[idx])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.x).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()


def normalize_rms(x):
    """Scale each (record, channel) row to unit rms; returns (x, zero_mask)
    where zero_mask flags records with an all-zero channel."""
    x = np.asarray(x, dtype=np.float64)
    rms = np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True))
    zero = rms == 0
    out = x / np.where(zero, 1.0, rms)
    return out, zero[..., 0].any(axis=-1)


def data_dir(explicit=None) -> Path:
    """An explicit directory wins over MIRP_DATA_DIR, which wins over ./data."""
    return Path(explicit or os.environ.get("MIRP_DATA_DIR") or "data")


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# MNIST / IDX
# ---------------------------------------------------------------------------

def parse_idx(buf: bytes, expected_magic: int) -> np.ndarray:
    """Parse an unsigned-byte IDX buffer into an array of its declared shape."""
    if len(buf) < 4:
        raise DatasetError("IDX file truncated in header")
    magic = struct.unpack(">I", buf[:4])[0]
    if magic != expected_magic:
        raise DatasetError(f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DatasetError("IDX file truncated in dimension table")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != header + count:
        raise DatasetError(f"IDX payload is {len(buf) - header} bytes, header declares {count}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_mnist(images_path, labels_path, split="train") -> Dataset:
    images = parse_idx(Path(images_path).read_bytes(), IDX_IMAGES_MAGIC)
    labels = parse_idx(Path(labels_path).read_bytes(), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], 1, -1).astype(np.float64)
    x, zero = normalize_rms(flat)
    prov = {"source": "idx", "images": _file_digest(images_path), "labels": _file_digest(labels_path)}
    return Dataset(x, labels.astype(np.int64), 10, split, prov, zero)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(root, split="train"):
    """Locate the canonical file pair under ``root`` or ``root/mnist``."""
    images, labels = MNIST_FILES[split]
    for base in (Path(root), Path(root) / "mnist"):
        for suffix in ("", ".idx"):
            ip, lp = base / (images + suffix), base / (labels + suffix)
            if ip.exists() and lp.exists():
                return ip, lp
    raise FileNotFoundError(f"MNIST {split} files ({images}, {labels}) not found under {root}")


# ---------------------------------------------------------------------------
# HAR
# ---------------------------------------------------------------------------

HAR_WIDTH = 561


def load_har(features_path, labels_path, split="train") -> Dataset:
    rows = []
    with open(features_path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != HAR_WIDTH:
                raise DatasetError(f"{features_path}:{lineno}: {len(vals)} values, expected {HAR_WIDTH}")
            rows.append([float(v) for v in vals])
    labels = [int(tok) for tok in Path(labels_path).read_text().split()]
    if len(labels) != len(rows):
        raise DatasetError(f"{len(rows)} feature rows but {len(labels)} labels")
    y = np.array(labels, dtype=np.int64)
    if len(y) and (y.min() < 1 or y.max() > 6):
        bad = y[(y < 1) | (y > 6)][0]
        raise DatasetError(f"HAR label {bad} outside 1..6")
    x, zero = normalize_rms(np.array(rows, dtype=np.float64).reshape(len(rows), 1, HAR_WIDTH))
    prov = {"source": "har-text", "features": _file_digest(features_path), "labels": _file_digest(labels_path)}
    return Dataset(x, y - 1, 6, split, prov, zero)


def find_har(root, split="train"):
    for base in (Path(root) / "har", Path(root) / "UCI HAR Dataset", Path(root)):
        fp, lp = base / split / f"X_{split}.txt", base / split / f"y_{split}.txt"
        if fp.exists() and lp.exists():
            return fp, lp
    raise FileNotFoundError(f"HAR {split} files (X_{split}.txt, y_{split}.txt) not found under {root}")


def synth_har(seed, n_per_class, noise=0.55) -> Dataset:
    """HAR-shaped stand-in: 561 smartphone-style features, six postures.

    Postures are drawn from a latent space where the three dynamic classes
    share a group mean, as do the three static ones (sitting and standing
    closest), then mixed through a fixed random map and squashed to [-1, 1]
    like the normalized sensor features of the public corpus.
    """
    rng = np.random.default_rng([seed, 0x4A5])
    latent = 16
    mix = rng.standard_normal((latent, HAR_WIDTH)) / math.sqrt(latent)
    bias = 0.3 * rng.standard_normal(HAR_WIDTH)
    dynamic, static = rng.standard_normal(latent) * 1.5, rng.standard_normal(latent) * 1.5
    offsets = rng.standard_normal((6, latent))
    means = np.stack([
        dynamic + 0.8 * offsets[0], dynamic + 0.8 * offsets[1], dynamic + 0.8 * offsets[2],
        static + 0.55 * offsets[3], static + 0.55 * offsets[3] + 0.45 * offsets[4],
        static + 0.9 * offsets[5],
    ])
    y = np.repeat(np.arange(6), n_per_class)
    z = means[y] + noise * rng.standard_normal((len(y), latent))
    feats = np.tanh(z @ mix + bias + 0.05 * rng.standard_normal((len(y), HAR_WIDTH)))
    order = rng.permutation(len(y))
    x, zero = normalize_rms(feats[order].reshape(len(y), 1, HAR_WIDTH))
    return Dataset(x, y[order], 6, "synthetic", {"source": "synth_har", "seed": seed,
                                                  "n_per_class": n_per_class}, zero)


# ---------------------------------------------------------------------------
# I/Q frames
# ---------------------------------------------------------------------------

def write_iq(path, frames: np.ndarray, labels=None):
    """frames: complex (N, M) or real (N, 2, M). Writes interleaved float32-LE
    and, given labels, a ``.labels`` sidecar."""
    frames = np.asarray(frames)
    if np.iscomplexobj(frames):
        i, q = frames.real, frames.imag
    else:
        i, q = frames[:, 0], frames[:, 1]
    inter = np.empty((i.shape[0], i.shape[1] * 2), dtype="<f4")
    inter[:, 0::2] = i
    inter[:, 1::2] = q
    Path(path).write_bytes(inter.tobytes())
    if labels is not None:
        Path(str(path) + ".labels").write_text("".join(f"{int(v)}\n" for v in labels))


def read_iq_frames(path, m=2048) -> np.ndarray:
    """Raw float32 frames of shape (N, 2, M), I then Q."""
    buf = Path(path).read_bytes()
    frame_bytes = 2 * m * 4
    if len(buf) % frame_bytes:
        raise DatasetError(f"{path}: {len(buf)} bytes is not a multiple of the {frame_bytes}-byte frame")
    raw = np.frombuffer(buf, dtype="<f4").reshape(-1, m, 2)
    return np.ascontiguousarray(raw.transpose(0, 2, 1))


def load_iq(path, m=2048, classes=4, split="train") -> Dataset:
    frames = read_iq_frames(path, m)
    label_path = Path(str(path) + ".labels")
    if label_path.exists():
        y = np.array([int(t) for t in label_path.read_text().split()], dtype=np.int64)
        if len(y) != len(frames):
            raise DatasetError(f"{len(frames)} frames but {len(y)} labels")
    else:
        y = np.zeros(len(frames), dtype=np.int64)
    x, zero = normalize_rms(frames.astype(np.float64))
    return Dataset(x, y, classes, split, {"source": "iq", "file": _file_digest(path)}, zero)


# ---------------------------------------------------------------------------
# synthetic RF modulation corpus
# ---------------------------------------------------------------------------

AUDIO_RATE = 8000.0  # nominal sample rate of the baseband frames, Hz


def _voice(rng, m):
    """Band-limited multi-tone audio with a slow syllabic envelope."""
    t = np.arange(m)
    n_tones = rng.integers(4, 9)
    freqs = rng.uniform(300.0, 3000.0, n_tones) / AUDIO_RATE
    amps = rng.uniform(0.2, 1.0, n_tones)
    phases = rng.uniform(0, 2 * np.pi, n_tones)
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2.0, 8.0) / AUDIO_RATE * t + rng.uniform(0, 2 * np.pi))
    return env, freqs, amps, phases


def _ssb(rng, m, upper):
    t = np.arange(m)
    env, freqs, amps, phases = _voice(rng, m)
    sign = 1.0 if upper else -1.0
    tones = amps[:, None] * np.exp(1j * (sign * 2 * np.pi * freqs[:, None] * t + phases[:, None]))
    return env * tones.sum(axis=0)


MORSE = {c: code for c, code in zip(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789",
    [".-", "-...", "-.-.", "-..", ".", "..-.", "--.", "....", "..", ".---", "-.-", ".-..", "--",
     "-.", "---", ".--.", "--.-", ".-.", "...", "-", "..-", "...-", ".--", "-..-", "-.--", "--..",
     "-----", ".----", "..---", "...--", "....-", ".....", "-....", "--...", "---..", "----."])}


def _morse_keying(rng, m):
    wpm = rng.uniform(60.0, 120.0)  # fast keying so a frame holds several symbols
    dit = max(2, int(round(1.2 / wpm * AUDIO_RATE)))
    key = []
    while len(key) < m + 2 * dit:
        for sym in MORSE[rng.choice(list(MORSE))]:
            key += [1] * (dit if sym == "." else 3 * dit) + [0] * dit
        key += [0] * (2 * dit)
    start = rng.integers(0, 2 * dit)
    return np.array(key[start:start + m], dtype=np.float64)


def _morse(rng, m):
    t = np.arange(m)
    f0 = rng.uniform(-0.05, 0.05)
    return _morse_keying(rng, m) * np.exp(1j * (2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi)))


def _rtty(rng, m):
    shift = (100.0 if rng.random() < 0.5 else 850.0) / AUDIO_RATE
    baud = rng.choice([45.45, 50.0, 75.0, 100.0])
    spb = AUDIO_RATE / baud
    n_sym = int(math.ceil(m / spb)) + 2
    bits = rng.integers(0, 2, n_sym)
    offset = rng.uniform(0, spb)
    idx = ((np.arange(m) + offset) / spb).astype(int)
    centre = rng.uniform(-0.05, 0.05)
    freq = centre + (bits[idx] - 0.5) * shift
    phase = 2 * np.pi * np.cumsum(freq) + rng.uniform(0, 2 * np.pi)
    return np.exp(1j * phase)


_GENERATORS = {
    "lsb": lambda rng, m: _ssb(rng, m, upper=False),
    "morse": _morse,
    "rtty": _rtty,
    "usb": lambda rng, m: _ssb(rng, m, upper=True),
}


def synth_rfmod_frames(seed, n_per_class, m=2048, snr_db=25.0):
    """Complex baseband frames (N, M) and labels, classes in RFMOD_CLASSES order."""
    frames, labels = [], []
    for c, name in enumerate(RFMOD_CLASSES):
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, c, i])
            s = _GENERATORS[name](rng, m)
            p_sig = np.mean(np.abs(s) ** 2)
            noise_std = math.sqrt(p_sig / 10 ** (snr_db / 10) / 2)
            s = s + noise_std * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
            frames.append(s)
            labels.append(c)
    order = np.random.default_rng([seed, 99]).permutation(len(labels))
    return np.array(frames)[order], np.array(labels, dtype=np.int64)[order]


def synth_rfmod(seed, n_per_class, m=2048, snr_db=25.0) -> Dataset:
    if n_per_class < 1:
        raise DatasetError("n_per_class must be >= 1")
    frames, y = synth_rfmod_frames(seed, n_per_class, m, snr_db)
    x, zero = normalize_rms(np.stack([frames.real, frames.imag], axis=1))
    prov = {"source": "synth_rfmod", "seed": seed, "n_per_class": n_per_class, "snr_db": snr_db}
    return Dataset(x, y, len(RFMOD_CLASSES), "synthetic", prov, zero)


# ---------------------------------------------------------------------------
# splits and batches
# ---------------------------------------------------------------------------

def split_indices(n, train_fraction, seed):
    if not 0 < train_fraction < 1:
        raise DatasetError("train_fraction must lie in (0, 1)")
    order = np.random.default_rng([seed, 0x5B1]).permutation(n)
    cut = int(round(train_fraction * n))
    if cut == 0 or cut == n:
        raise DatasetError(f"split of {n} records at {train_fraction} leaves an empty side")
    return order[:cut], order[cut:]


def stratified_indices(labels, per_class, seed, exclude=None):
    """``per_class`` indices of each label, drawn without replacement in a
    seeded order; returned shuffled."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 0x57A])
    taken = np.zeros(len(labels), dtype=bool)
    if exclude is not None:
        taken[np.asarray(exclude, dtype=np.int64)] = True
    picks = []
    for c in np.unique(labels):
        pool = np.flatnonzero((labels == c) & ~taken)
        if len(pool) < per_class:
            raise DatasetError(f"class {c} has {len(pool)} records, {per_class} requested")
        picks.append(rng.permutation(pool)[:per_class])
    return rng.permutation(np.concatenate(picks))


def batches(n, batch, seed, epoch=0):
    """Index batches over ``n`` records, shuffled per (seed, epoch)."""
    if n == 0:
        raise DatasetError("cannot batch an empty split")
    order = np.random.default_rng([seed, epoch, 0xBA7]).permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def split_and_batch(ds: Dataset, train_fraction, batch, seed, epoch=0):
    """Deterministic disjoint split. Returns (train, held_out, batches) where
    ``batches`` lists the (x, y) train batches for ``epoch``."""
    tr, te = split_indices(len(ds), train_fraction, seed)
    train, held = ds.subset(tr, "train"), ds.subset(te, "test")
    return train, held, [(train.x[b], train.y[b]) for b in batches(len(train), batch, seed, epoch)]
