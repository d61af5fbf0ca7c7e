"""Datasets: IDX image files and a synthetic low-rank stand-in.

Datasets are returned as ``(count, features)`` arrays with values in
[0, 1]; the training loop transposes them into column batches.
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from ..errors import FormatError

IDX_IMAGE_MAGIC = 2051
_HEADER = struct.Struct(">IIII")
_MAX_ELEMENTS = 1 << 34


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(path, limit=None):
    """Read an IDX image file (optionally gzipped) scaled to [0, 1].

    ``limit`` keeps only the first ``limit`` images.
    """
    raw = _read_bytes(path)
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    magic, count, rows, cols = _HEADER.unpack_from(raw)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{path}: bad magic number {magic}, expected {IDX_IMAGE_MAGIC}", offset=0
        )
    size = count * rows * cols
    if size > _MAX_ELEMENTS:
        raise FormatError(f"{path}: dimensions {count}x{rows}x{cols} overflow", offset=4)
    payload = raw[_HEADER.size:]
    if len(payload) < size:
        raise FormatError(
            f"{path}: payload holds {len(payload)} of {size} bytes",
            offset=_HEADER.size + len(payload),
        )
    images = np.frombuffer(payload, dtype=np.uint8, count=size).reshape(count, rows * cols)
    if limit is not None:
        images = images[:limit]
    return images.astype(np.float64) / 255.0


def write_idx(path, images):
    """Write ``(count, rows, cols)`` uint8 images as an uncompressed IDX file."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValueError("images must be a (count, rows, cols) uint8 array")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(IDX_IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def synthetic_factors(dim, count, seed, latent_dim=10):
    rng = np.random.default_rng(seed)
    codes = rng.standard_normal((count, latent_dim))
    loadings = rng.standard_normal((latent_dim, dim)) * (2.0 / np.sqrt(latent_dim))
    return codes, loadings, rng


def make_synthetic(dim, count, seed, latent_dim=10, noise=0.1):
    """Low-rank-plus-noise data squashed into [0, 1] by a sigmoid."""
    if dim < 1 or count < 1:
        raise ValueError("dim and count must be positive")
    codes, loadings, rng = synthetic_factors(dim, count, seed, min(latent_dim, dim))
    pre = codes @ loadings + noise * rng.standard_normal((count, dim))
    return expit(pre)


@dataclass(frozen=True)
class DatasetSource:
    """Either ``synthetic:DIM:COUNT`` or a path to an IDX file, ``PATH[:LIMIT]``."""

    spec: str

    @property
    def synthetic(self):
        return self.spec.startswith("synthetic")

    def load(self, seed=0):
        if self.synthetic:
            parts = self.spec.split(":")
            dim = int(parts[1]) if len(parts) > 1 else 784
            count = int(parts[2]) if len(parts) > 2 else 10000
            return make_synthetic(dim, count, seed)
        path, limit = self.spec, None
        head, sep, tail = self.spec.rpartition(":")
        if sep and tail.isdigit():
            path, limit = head, int(tail)
        return load_idx(path, limit)


def holdout_split(data, fraction, rng):
    """Seed-derived split into ``(train, eval)`` rows."""
    n = data.shape[0]
    n_eval = int(round(fraction * n))
    perm = rng.permutation(n)
    return data[perm[n_eval:]], data[perm[:n_eval]]
