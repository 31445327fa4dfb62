"""MNIST IDX files and the de-noising Ising models built from them."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from isinggame.model import IsingModel, build_grid
from isinggame.rng import stream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MAX_ITEMS = 1 << 28

DATA_ENV = "ISINGGAME_MNIST_DIR"
FILES = {
    ("train", "images"): "train-images-idx3-ubyte",
    ("train", "labels"): "train-labels-idx1-ubyte",
    ("test", "images"): "t10k-images-idx3-ubyte",
    ("test", "labels"): "t10k-labels-idx1-ubyte",
}


class IdxError(ValueError):
    pass


class BadMagic(IdxError):
    pass


class Truncated(IdxError):
    pass


class DimensionOverflow(IdxError):
    pass


@dataclass(frozen=True)
class ImageSet:
    pixels: np.ndarray  # (count, rows, cols) uint8
    labels: np.ndarray | None = None

    @property
    def count(self) -> int:
        return self.pixels.shape[0]

    @property
    def rows(self) -> int:
        return self.pixels.shape[1]

    @property
    def cols(self) -> int:
        return self.pixels.shape[2]


def parse_idx(data: bytes):
    """Decode an IDX image tensor (``ImageSet``) or label vector (``np.ndarray``)."""
    if len(data) < 4:
        raise Truncated("missing IDX magic")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IMAGE_MAGIC:
        ndim = 3
    elif magic == LABEL_MAGIC:
        ndim = 1
    else:
        raise BadMagic(f"unsupported IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise Truncated("IDX header is truncated")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = 1
    for dim in dims:
        size *= dim
        if size > MAX_ITEMS:
            raise DimensionOverflow(f"IDX dimensions {dims} are too large")
    payload = data[header:]
    if len(payload) < size:
        raise Truncated(f"IDX payload has {len(payload)} bytes, header promises {size}")
    if len(payload) > size:
        raise IdxError(f"IDX payload has {len(payload) - size} trailing bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    if ndim == 1:
        return arr.copy()
    return ImageSet(arr.copy())


def serialize_idx(obj) -> bytes:
    if isinstance(obj, ImageSet):
        px = np.ascontiguousarray(obj.pixels, dtype=np.uint8)
        return struct.pack(">4I", IMAGE_MAGIC, *px.shape) + px.tobytes()
    arr = np.ascontiguousarray(obj, dtype=np.uint8).reshape(-1)
    return struct.pack(">2I", LABEL_MAGIC, arr.size) + arr.tobytes()


def read_idx(path: str | Path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def find_file(directory: str | Path, split: str, kind: str) -> Path:
    base = Path(directory) / FILES[(split, kind)]
    for cand in (base, base.with_name(base.name + ".gz"),
                 base.with_name(base.name.replace("-idx", ".idx"))):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no MNIST {split} {kind} file under {directory}")


def data_dir(explicit: str | Path | None = None) -> Path | None:
    d = explicit or os.environ.get(DATA_ENV)
    return Path(d) if d else None


def load_split(directory: str | Path, split: str, digit: int | None = None) -> ImageSet:
    images = read_idx(find_file(directory, split, "images"))
    labels = read_idx(find_file(directory, split, "labels"))
    if labels.shape[0] != images.count:
        raise IdxError("image and label counts differ")
    px = images.pixels
    if digit is not None:
        keep = labels == digit
        px, labels = px[keep], labels[keep]
    return ImageSet(px, labels)


def binarize(image, threshold: float = 0.5) -> np.ndarray:
    """+1 where the pixel scaled to [0, 1] exceeds ``threshold``, else -1."""
    scaled = np.asarray(image, dtype=np.float64) / 255.0
    return np.where(scaled > threshold, 1, -1).astype(np.int8)


def learn_params(training, weight_scale: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Grid weights from mean neighbor products, biases from mean spins.

    Weights are rescaled so the largest magnitude equals ``weight_scale`` and
    biases so the largest magnitude is 1; an all-zero vector is left alone.
    Returns ``(weights, biases)`` in the canonical grid edge order and
    row-major pixel order.
    """
    imgs = np.asarray(training)
    if imgs.ndim == 2:
        imgs = imgs[None]
    if imgs.ndim != 3 or imgs.shape[0] == 0:
        raise ValueError("need a non-empty stack of equally sized images")
    rows, cols = imgs.shape[1:]
    if rows != cols:
        raise ValueError("images must be square")
    flat = imgs.reshape(imgs.shape[0], -1).astype(np.float64)
    edges = build_grid(rows)
    raw_w = (flat[:, edges[:, 0]] * flat[:, edges[:, 1]]).mean(axis=0)
    raw_b = flat.mean(axis=0)
    return _rescale(raw_w, weight_scale), _rescale(raw_b, 1.0)


def _rescale(v: np.ndarray, target: float) -> np.ndarray:
    top = np.abs(v).max()
    return v if top == 0 else v * (target / top)


def evidence_strength(p: float) -> float:
    return 0.5 * math.log((1 - p) / p)


def observation_model(weights, biases, noisy, p: float = 0.05, meta=None) -> IsingModel:
    """Posterior model for a noisy black/white image under independent flips.

    Raw bias at a pixel is the prior bias plus ``0.5 * I * ln((1-p)/p)``,
    then all biases are rescaled so the largest magnitude is 1.
    """
    if not 0.0 < p < 0.5:
        raise ValueError("flip probability must lie in (0, 0.5)")
    img = np.asarray(noisy)
    d = img.shape[0]
    if img.shape != (d, d) or np.asarray(biases).size != d * d:
        raise ValueError("image and learned parameters disagree in size")
    raw = np.asarray(biases, dtype=np.float64) + evidence_strength(p) * img.reshape(-1)
    return IsingModel(d * d, build_grid(d), weights, _rescale(raw, 1.0), grid_d=d, meta=meta or {})


def add_noise(image, p: float, seed: int) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ValueError("flip probability must lie in [0, 1]")
    img = np.asarray(image, dtype=np.int8)
    flips = stream(seed, "noise").random(img.shape) < p
    return np.where(flips, -img, img).astype(np.int8)
