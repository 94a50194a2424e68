"""MNIST (IDX) and CIFAR-10 (binary batch) ingestion, plus stratified splits.

IDX files are big-endian: a 4-byte magic (``0x00000803`` images,
``0x00000801`` labels), one 4-byte count per dimension, then unsigned bytes.
CIFAR-10 batch files are a sequence of 3073-byte records: one label byte
followed by 1024 red, 1024 green and 1024 blue pixel bytes (row-major 32x32
planes). Pixels are scaled by 1/255; images are returned NHWC.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, CountMismatchError, IngestionError, InputError,
                     TruncatedFileError)

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
DATA_ENV = "QNNLAB_DATA"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST = ["test_batch.bin"]


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, h, w, c) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64 in [0, 9]
    split: str = "train"

    def __post_init__(self):
        n = len(self.labels)
        if n == 0 or self.images.shape[0] != n:
            raise IngestionError("dataset must be non-empty with one label per image")
        if self.labels.min() < 0 or self.labels.max() > 9:
            raise IngestionError("labels must lie in [0, 9]")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise IngestionError("image values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], split or self.split)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise IngestionError(f"cannot read {path}: {e}") from e


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) >= 4:
        (got,) = struct.unpack(">I", raw[:4])
        if got != magic:
            raise BadMagicError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, header needs {header}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, expected {need}")
    if len(raw) > need:
        raise IngestionError(f"{path}: {len(raw) - need} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist(image_path, label_path, split: str = "train") -> Dataset:
    images = _parse_idx(_read_bytes(image_path), IDX_IMAGES, 3, image_path)
    labels = _parse_idx(_read_bytes(label_path), IDX_LABELS, 1, label_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{image_path} has {images.shape[0]} images but {label_path} has {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise IngestionError(f"{label_path}: label {labels.max()} out of range")
    x = images[..., None].astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), split)


def load_cifar10(batch_paths, split: str = "train") -> Dataset:
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    xs, ys = [], []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise TruncatedFileError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if rec[:, 0].max() > 9:
            raise IngestionError(f"{path}: label {rec[:, 0].max()} out of range")
        ys.append(rec[:, 0].astype(np.int64))
        # planar CHW -> HWC
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    x = np.concatenate(xs).astype(np.float64) / 255.0
    return Dataset(x, np.concatenate(ys), split)


def _to_bytes(images) -> np.ndarray:
    return np.rint(np.asarray(images, dtype=np.float64) * 255.0).astype(np.uint8)


def write_mnist(dataset: Dataset, image_path, label_path) -> None:
    """Inverse of :func:`load_mnist` (gzip when the name ends in .gz)."""
    px = _to_bytes(dataset.images[..., 0])
    n, h, w = px.shape
    for path, payload in (
            (image_path, struct.pack(">IIII", IDX_IMAGES, n, h, w) + px.tobytes()),
            (label_path, struct.pack(">II", IDX_LABELS, n) + dataset.labels.astype(np.uint8).tobytes())):
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as f:
            f.write(payload)


def write_cifar10(dataset: Dataset, path) -> None:
    px = _to_bytes(dataset.images).transpose(0, 3, 1, 2).reshape(len(dataset), -1)
    rec = np.concatenate([dataset.labels.astype(np.uint8)[:, None], px], axis=1)
    Path(path).write_bytes(rec.tobytes())


def validation_split(ds: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split: ``floor(fraction * n_c)`` samples of every class go to validation.

    Returns ``(rest, val)``; both keep the original sample order.
    """
    if not 0 < fraction < 1:
        raise InputError("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    picked = []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        k = int(np.floor(fraction * len(idx)))
        if k < 1:
            raise InputError(f"class {c} has {len(idx)} samples, fewer than 1/fraction")
        picked.append(rng.choice(idx, size=k, replace=False))
    val_mask = np.zeros(len(ds), dtype=bool)
    val_mask[np.concatenate(picked)] = True
    return (ds.subset(np.flatnonzero(~val_mask), ds.split),
            ds.subset(np.flatnonzero(val_mask), "val"))


def data_root(explicit=None) -> Path:
    return Path(explicit or os.environ.get(DATA_ENV) or "data")


def _find(root: Path, names, subdirs):
    for sub in subdirs:
        base = root / sub if sub else root
        for name in names:
            for cand in (base / name, base / (name + ".gz")):
                if cand.exists():
                    return cand
    return None


def find_mnist(root=None, split: str = "train") -> tuple[Path, Path]:
    root = data_root(root)
    subdirs = ("", "mnist", "MNIST", "MNIST/raw")
    paths = []
    for name in MNIST_FILES[split]:
        p = _find(root, (name, name.replace("-idx", ".idx")), subdirs)
        if p is None:
            raise IngestionError(f"MNIST file {name} not found under {root}")
        paths.append(p)
    return paths[0], paths[1]


def load_mnist_split(root=None, split: str = "train") -> Dataset:
    return load_mnist(*find_mnist(root, split), split=split)


def find_cifar10(root=None, split: str = "train") -> list[Path]:
    root = data_root(root)
    subdirs = ("", "cifar-10-batches-bin", "cifar10", "cifar10/cifar-10-batches-bin")
    out = []
    for name in CIFAR_TRAIN if split == "train" else CIFAR_TEST:
        p = _find(root, (name,), subdirs)
        if p is None:
            raise IngestionError(f"CIFAR-10 file {name} not found under {root}")
        out.append(p)
    return out


def load_cifar10_split(root=None, split: str = "train") -> Dataset:
    return load_cifar10(find_cifar10(root, split), split=split)


def load_benchmark(dataset: str, root=None) -> tuple[Dataset, Dataset]:
    """``(train, test)`` for ``"mnist"`` or ``"cifar10"``."""
    if dataset == "mnist":
        return load_mnist_split(root, "train"), load_mnist_split(root, "test")
    if dataset == "cifar10":
        return load_cifar10_split(root, "train"), load_cifar10_split(root, "test")
    raise IngestionError(f"no loader for dataset {dataset!r}")
