"""IDX-format dataset ingestion: MNIST/Fashion-MNIST, padding to 32x32, batching.

Files are read bit-exactly from the big-endian IDX containers (gzipped or
raw). Images stay uint8 until a batch is materialized; normalization is a
plain /255 so the byte codes survive the 8-bit input quantizer unchanged.
"""

from __future__ import annotations

import gzip
import hashlib
import os
import shutil
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, PairingError, ShapeError, TruncationError
from .numerics import Rng

MAGIC_IMAGES = 0x00000803
MAGIC_LABELS = 0x00000801

# canonical distribution names, per split
FILE_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

CHECKSUM_FILE = "checksums.sha256"


@dataclass
class DatasetHandle:
    """Loaded dataset: uint8 32x32 images plus integer labels per split."""

    name: str
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    @property
    def n_train(self) -> int:
        return self.train_images.shape[0]

    @property
    def n_test(self) -> int:
        return self.test_images.shape[0]

    def with_limit(self, limit: int | None) -> "DatasetHandle":
        """First-`limit` training subset (deterministic, seed-independent)."""
        if limit is None or limit >= self.n_train:
            return self
        if limit < 1:
            raise ValueError(f"limit must be >= 1, got {limit}")
        return DatasetHandle(
            name=self.name,
            train_images=self.train_images[:limit],
            train_labels=self.train_labels[:limit],
            test_images=self.test_images,
            test_labels=self.test_labels,
        )


def _read_bytes(path) -> bytes:
    if str(path).endswith(".gz"):
        with gzip.open(path, "rb") as f:
            return f.read()
    with open(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, path, expect_magic: int, ndim: int):
    header = 4 * (1 + ndim)
    if len(raw) < header:
        raise TruncationError(f"{path}: file shorter than IDX header", offset=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expect_magic:08x}", offset=0)
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = 1
    for d in dims:
        count *= d
    if len(raw) - header != count:
        raise TruncationError(
            f"{path}: header promises {count} payload bytes, file has {len(raw) - header}",
            offset=header,
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path):
    """Parse an IDX image/label file pair into (images, labels) uint8 arrays."""
    images = _parse_idx(_read_bytes(images_path), images_path, MAGIC_IMAGES, 3)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, MAGIC_LABELS, 1)
    if images.shape[0] != labels.shape[0]:
        raise PairingError(
            f"{images_path} has {images.shape[0]} images but {labels_path} has {labels.shape[0]} labels"
        )
    return images, labels


def resize_to_32(images: np.ndarray) -> np.ndarray:
    """Zero-pad 28x28 images (single or batched) by 2 pixels on every side."""
    arr = np.asarray(images)
    if arr.shape[-2:] != (28, 28):
        raise ShapeError(f"expected trailing 28x28 dimensions, got shape {arr.shape}")
    pad = [(0, 0)] * (arr.ndim - 2) + [(2, 2), (2, 2)]
    return np.pad(arr, pad, mode="constant", constant_values=0)


def normalize(images: np.ndarray) -> np.ndarray:
    """uint8 pixels -> float64 in [0,1]."""
    return np.asarray(images, dtype=np.float64) / 255.0


def quantize_input(values: np.ndarray) -> np.ndarray:
    """[0,1] reals -> 8-bit codes; exact inverse of normalize on byte inputs."""
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def batches(images: np.ndarray, labels: np.ndarray, batch_size: int, rng: Rng):
    """One shuffled epoch of (flat float batch, labels); short final batch kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = images.shape[0]
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        sel = order[start : start + batch_size]
        yield normalize(images[sel]).reshape(len(sel), -1), labels[sel]


def _find_file(directory, base_name) -> str:
    for candidate in (base_name, base_name + ".gz"):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"missing dataset file {base_name}[.gz] under {directory}")


def resolve_data_dir(name: str, data_dir: str | None = None) -> str:
    """Directory holding the four IDX files for `name`.

    Precedence: explicit argument, then QNN_DATA_DIR, then ./data. A trailing
    <name> component is appended unless the directory already contains the files.
    """
    root = data_dir or os.environ.get("QNN_DATA_DIR") or "data"
    direct = os.path.join(root, FILE_NAMES["test_labels"])
    if os.path.exists(direct) or os.path.exists(direct + ".gz"):
        return root
    return os.path.join(root, name)


def load_dataset(name: str = "mnist", data_dir: str | None = None, limit: int | None = None) -> DatasetHandle:
    """Load a full dataset, pad images to 32x32, optionally cap the train split."""
    if name not in ("mnist", "fashion-mnist"):
        raise ValueError(f"unknown dataset {name!r}; expected mnist or fashion-mnist")
    directory = resolve_data_dir(name, data_dir)
    train_images, train_labels = load_idx(
        _find_file(directory, FILE_NAMES["train_images"]),
        _find_file(directory, FILE_NAMES["train_labels"]),
    )
    test_images, test_labels = load_idx(
        _find_file(directory, FILE_NAMES["test_images"]),
        _find_file(directory, FILE_NAMES["test_labels"]),
    )
    for labels, split in ((train_labels, "train"), (test_labels, "test")):
        if labels.size and labels.max() > 9:
            raise FormatError(f"{split} labels exceed class range [0,10)")
    handle = DatasetHandle(
        name=name,
        train_images=resize_to_32(train_images),
        train_labels=train_labels.astype(np.int64),
        test_images=resize_to_32(test_images),
        test_labels=test_labels.astype(np.int64),
    )
    return handle.with_limit(limit)


def _sha256_of_payload(path) -> str:
    return hashlib.sha256(_read_bytes(path)).hexdigest()


def read_checksum_manifest(path) -> dict[str, str]:
    digests = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{path}: malformed checksum line {line!r}")
            digests[parts[1]] = parts[0]
    return digests


def verify_checksums(directory) -> list[str]:
    """Check every manifest entry; returns failure descriptions (empty = ok).

    Digests are over the decompressed payload, so .gz repackaging is
    checksum-neutral.
    """
    manifest_path = os.path.join(directory, CHECKSUM_FILE)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no {CHECKSUM_FILE} in {directory}")
    failures = []
    for base_name, want in read_checksum_manifest(manifest_path).items():
        try:
            path = _find_file(directory, base_name)
        except FileNotFoundError:
            failures.append(f"{base_name}: missing")
            continue
        got = _sha256_of_payload(path)
        if got != want:
            failures.append(f"{base_name}: sha256 {got} != expected {want}")
    return failures


def fetch_dataset(name: str, data_dir: str, source_dir: str | None = None) -> str:
    """Stage dataset files into data_dir/<name> from a local source directory.

    No network access: the source is a directory laid out the same way
    (QNN_DATA_SOURCE or ./data by default). Existing verified files are left
    alone. Returns the destination directory.
    """
    dest = os.path.join(data_dir, name)
    os.makedirs(dest, exist_ok=True)
    try:
        if not verify_checksums(dest):
            return dest
    except FileNotFoundError:
        pass
    source_root = source_dir or os.environ.get("QNN_DATA_SOURCE") or "data"
    src = os.path.join(source_root, name)
    if not os.path.isdir(src):
        raise FileNotFoundError(f"dataset source directory {src} not found (no network fetch available)")
    if os.path.abspath(src) != os.path.abspath(dest):
        for entry in sorted(os.listdir(src)):
            shutil.copy2(os.path.join(src, entry), os.path.join(dest, entry))
    failures = verify_checksums(dest)
    if failures:
        raise FormatError(f"checksum verification failed after fetch: {'; '.join(failures)}")
    return dest
