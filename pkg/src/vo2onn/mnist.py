"""IDX-format digit datasets.

Reads the classic big-endian IDX files bit-exactly.  When no real dataset is
available, a deterministic surrogate built from the bundled scikit-learn
handwritten digits (upsampled to 28x28 with seeded augmentation) can be
materialized in the same IDX format, so everything downstream runs through
one code path.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset", "BadMagic", "TruncatedFile", "CountMismatch",
    "load_mnist_idx", "write_idx_images", "write_idx_labels",
    "prepare_27", "WrongShape", "ensure_dataset", "synthesize_digits_idx",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class BadMagic(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


class CountMismatch(ValueError):
    pass


class WrongShape(ValueError):
    pass


@dataclass
class Dataset:
    """Grey images in [0, 1] with digit labels."""

    images: np.ndarray      # (count, h, w) float64 in [0, 1]
    labels: np.ndarray      # (count,) uint8
    split: str = ""

    def __len__(self) -> int:
        return len(self.labels)


def _read_be32(buf: bytes, off: int) -> int:
    if off + 4 > len(buf):
        raise TruncatedFile("file ends inside the header")
    return struct.unpack_from(">I", buf, off)[0]


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair.

    Big-endian 32-bit magic (0x803 images, 0x801 labels), big-endian
    dimension sizes, unsigned byte payload; pixels scale to [0, 1].
    """
    with open(images_path, "rb") as fh:
        raw = fh.read()
    magic = _read_be32(raw, 0)
    if magic != IMAGE_MAGIC:
        raise BadMagic(f"image file magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    count, rows, cols = (_read_be32(raw, o) for o in (4, 8, 12))
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise TruncatedFile(f"image payload {len(raw) - 16} bytes, need {need - 16}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    images = pixels.reshape(count, rows, cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as fh:
        raw = fh.read()
    magic = _read_be32(raw, 0)
    if magic != LABEL_MAGIC:
        raise BadMagic(f"label file magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
    n_labels = _read_be32(raw, 4)
    if len(raw) < 8 + n_labels:
        raise TruncatedFile(f"label payload {len(raw) - 8} bytes, need {n_labels}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=n_labels, offset=8)
    if n_labels != count:
        raise CountMismatch(f"{count} images vs {n_labels} labels")
    return Dataset(images=images, labels=labels.copy())


def write_idx_images(path, images_u8: np.ndarray) -> None:
    count, rows, cols = images_u8.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols))
        fh.write(np.ascontiguousarray(images_u8, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels_u8: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, len(labels_u8)))
        fh.write(np.ascontiguousarray(labels_u8, dtype=np.uint8).tobytes())


def prepare_27(img: np.ndarray) -> np.ndarray:
    """28x28 -> 27x27 by dropping the last row and column."""
    if img.shape != (28, 28):
        raise WrongShape(f"expected 28x28, got {img.shape}")
    return img[:27, :27]


def synthesize_digits_idx(out_dir, n: int = 10000, seed: int = 1234) -> tuple[str, str]:
    """Materialize a deterministic 28x28 digit dataset as IDX files.

    Built from the bundled scikit-learn handwritten digits (8x8, real
    handwriting): each output image picks a base digit and a small random
    shift/zoom from a seeded stream, upsampled to 28x28.  A stand-in for
    environments without the real dataset files.
    """
    from scipy import ndimage
    from sklearn.datasets import load_digits

    os.makedirs(out_dir, exist_ok=True)
    img_path = os.path.join(out_dir, "digits-images-idx3-ubyte")
    lab_path = os.path.join(out_dir, "digits-labels-idx1-ubyte")
    if os.path.exists(img_path) and os.path.exists(lab_path):
        return img_path, lab_path

    base = load_digits()
    base_images = base.images / 16.0          # (1797, 8, 8) in [0, 1]
    base_labels = base.target.astype(np.uint8)
    rng = np.random.default_rng(seed)
    out = np.zeros((n, 28, 28), dtype=np.uint8)
    labels = np.zeros(n, dtype=np.uint8)
    for k in range(n):
        i = int(rng.integers(len(base_labels)))
        zoom = float(rng.uniform(2.8, 3.3))
        up = ndimage.zoom(base_images[i], zoom, order=1)
        h, w = up.shape
        canvas = np.zeros((28, 28))
        dy = int(rng.integers(-2, 3)) + (28 - h) // 2
        dx = int(rng.integers(-2, 3)) + (28 - w) // 2
        y0, x0 = max(dy, 0), max(dx, 0)
        y1, x1 = min(dy + h, 28), min(dx + w, 28)
        canvas[y0:y1, x0:x1] = up[y0 - dy:y1 - dy, x0 - dx:x1 - dx]
        out[k] = np.clip(canvas * 255.0, 0, 255).astype(np.uint8)
        labels[k] = base_labels[i]
    write_idx_images(img_path, out)
    write_idx_labels(lab_path, labels)
    return img_path, lab_path


def ensure_dataset(data_dir, n: int = 10000, seed: int = 1234) -> tuple[str, str]:
    """Resolve an IDX image/label pair to feed the pipeline.

    Order: explicit VO2ONN_MNIST_DIR (expects the standard MNIST t10k file
    names), then MNIST files already present in data_dir, then the bundled
    surrogate.
    """
    candidates = []
    env = os.environ.get("VO2ONN_MNIST_DIR")
    if env:
        candidates.append((os.path.join(env, "t10k-images-idx3-ubyte"),
                           os.path.join(env, "t10k-labels-idx1-ubyte")))
    candidates.append((os.path.join(data_dir, "t10k-images-idx3-ubyte"),
                       os.path.join(data_dir, "t10k-labels-idx1-ubyte")))
    for img, lab in candidates:
        if os.path.exists(img) and os.path.exists(lab):
            return img, lab
    return synthesize_digits_idx(data_dir, n=n, seed=seed)
