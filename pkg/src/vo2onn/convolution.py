"""Sliding-window ONN filtering of images into 5-channel feature maps.

Every window position delay-encodes its pixels into a programmed oscillator
network, the network is simulated, and the key-group feature detector turns
the phase readout into five binary channels (vertical, horizontal, both
diagonals, uniform background).  All windows of an image integrate as one
batch, and repeated windows (most of the background) are memoized.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .mnist import Dataset
from .network import (NetworkConfig, simulate_batch, single_oscillator_period,
                      InsufficientCrossings)
from .phase import (extract_phases, detect_features, delays_from_pixels,
                    ideal_phases, PhaseReadout)

__all__ = [
    "FeatureMap", "FeatureMapSet", "window_grid_size",
    "onn_filter_image", "rule_filter_image", "build_onn_dataset",
    "save_fmap", "load_fmap", "worker_count",
]


@dataclass
class FeatureMap:
    """H' x W' x 5 binary activations for one image."""

    data: np.ndarray
    k: int
    stride: int
    failed_windows: int = 0


@dataclass
class FeatureMapSet:
    maps: np.ndarray        # (count, h, w, 5) uint8
    labels: np.ndarray      # (count,) uint8
    k: int
    stride: int
    failed_windows: np.ndarray = None   # per image


def window_grid_size(h: int, k: int, stride: int) -> int:
    return (h - k) // stride + 1


def worker_count() -> int:
    env = os.environ.get("VO2ONN_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _windows(img: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    h, w = img.shape
    gh, gw = window_grid_size(h, k, stride), window_grid_size(w, k, stride)
    out = np.empty((gh * gw, k * k))
    m = 0
    for r in range(gh):
        for c in range(gw):
            out[m] = img[r * stride:r * stride + k, c * stride:c * stride + k].ravel()
            m += 1
    return out, gh, gw


def _simulate_windows(pixel_rows: np.ndarray, template: NetworkConfig,
                      v_th: float, n_settle: int, theta_tol: float):
    """Simulate delay-encoded windows (rows are patterns in [-1, 1]).
    Returns (channels (m, 5) uint8, failed (m,) bool)."""
    base_unit = replace(template.units[0], delay=0.0)
    t_nom = single_oscillator_period(base_unit)
    cfgs = []
    for row in pixel_rows:
        delays = delays_from_pixels(row, t_nom)
        units = tuple(replace(u, delay=float(d))
                      for u, d in zip(template.units, delays))
        cfgs.append(replace(template, units=units))
    waves = simulate_batch(cfgs)
    channels = np.zeros((len(pixel_rows), 5), dtype=np.uint8)
    failed = np.zeros(len(pixel_rows), dtype=bool)
    for m, w in enumerate(waves):
        try:
            ro = extract_phases(w, v_th=v_th, n_settle=n_settle)
        except InsufficientCrossings:
            failed[m] = True
            continue
        if not ro.locked.all():
            failed[m] = True
            continue
        channels[m] = detect_features(ro, theta_tol=theta_tol).as_array()
    return channels, failed


def onn_filter_image(img: np.ndarray, template: NetworkConfig, k: int = 3,
                     stride: int = 2, v_th: float = 1.0, n_settle: int = 5,
                     theta_tol: float = 30.0, cache: dict | None = None) -> FeatureMap:
    """Apply the programmed ONN filter across an image.

    Window pixels in [0, 1] rescale to patterns in [-1, 1] (white foreground
    maps to +1), become supply delays, and each window's simulated phase
    readout runs through the key-group detector.  Windows that fail to lock
    produce all-zero channels and are counted.  `cache` memoizes windows by
    exact pixel content, which is sound because a window's result does not
    depend on what else shares the batch.
    """
    if k not in (2, 3):
        raise ValueError("filters are defined for k in (2, 3)")
    if template.coupling.n != k * k:
        raise ValueError("template size does not match k")
    wins, gh, gw = _windows(np.asarray(img, dtype=float), k, stride)
    patterns = 2.0 * wins - 1.0
    m_total = len(patterns)
    channels = np.zeros((m_total, 5), dtype=np.uint8)
    failed = np.zeros(m_total, dtype=bool)

    todo = []
    if cache is not None:
        for m in range(m_total):
            hit = cache.get(patterns[m].tobytes())
            if hit is None:
                todo.append(m)
            else:
                channels[m], failed[m] = hit
    else:
        todo = list(range(m_total))
    if todo:
        fresh, fail = _simulate_windows(patterns[todo], template,
                                        v_th, n_settle, theta_tol)
        for pos, m in enumerate(todo):
            channels[m], failed[m] = fresh[pos], fail[pos]
            if cache is not None:
                cache[patterns[m].tobytes()] = (fresh[pos].copy(), bool(fail[pos]))
    return FeatureMap(data=channels.reshape(gh, gw, 5), k=k, stride=stride,
                      failed_windows=int(failed.sum()))


def rule_filter_image(img: np.ndarray, k: int = 3, stride: int = 2,
                      theta_tol: float = 30.0, binarize_at: float = 0.5) -> FeatureMap:
    """Idealized filter: windows binarized at a pixel threshold map straight
    to 0/180-degree phases and through the key-group detector.  This is the
    zero-dynamics reference the full simulation is compared against."""
    wins, gh, gw = _windows(np.asarray(img, dtype=float), k, stride)
    channels = np.zeros((len(wins), 5), dtype=np.uint8)
    for m, row in enumerate(wins):
        pattern = np.where(row >= binarize_at, 1.0, -1.0)
        ro = PhaseReadout(period=1.0, phase_deg=ideal_phases(pattern),
                          locked=np.ones(k * k, dtype=bool), ref_index=0)
        channels[m] = detect_features(ro, theta_tol=theta_tol).as_array()
    return FeatureMap(data=channels.reshape(gh, gw, 5), k=k, stride=stride)


def _filter_chunk(args):
    imgs, template, k, stride, v_th, n_settle, theta_tol = args
    cache: dict = {}
    maps, fails = [], []
    for img in imgs:
        fm = onn_filter_image(img, template, k=k, stride=stride, v_th=v_th,
                              n_settle=n_settle, theta_tol=theta_tol, cache=cache)
        maps.append(fm.data)
        fails.append(fm.failed_windows)
    return np.array(maps, dtype=np.uint8), np.array(fails, dtype=np.int64)


def build_onn_dataset(ds: Dataset, template: NetworkConfig, k: int = 3,
                      stride: int = 2, n_train: int = 6000, n_test: int = 4000,
                      v_th: float = 1.0, n_settle: int = 5, theta_tol: float = 30.0,
                      workers: int | None = None) -> tuple[FeatureMapSet, FeatureMapSet]:
    """Filter a dataset and split it by index: the first n_train images are
    the training set, the next n_test the test set.  Filtering fans out over
    a worker pool; the output is independent of the schedule."""
    if n_train + n_test > len(ds):
        raise ValueError(f"split {n_train}+{n_test} exceeds dataset size {len(ds)}")
    images = ds.images[:n_train + n_test]
    workers = worker_count() if workers is None else max(1, workers)
    chunks = np.array_split(np.arange(len(images)), workers * 4)
    chunks = [c for c in chunks if len(c)]
    args = [(images[c], template, k, stride, v_th, n_settle, theta_tol)
            for c in chunks]
    maps_parts, fail_parts = [], []
    if workers == 1:
        for a in args:
            m, f = _filter_chunk(a)
            maps_parts.append(m)
            fail_parts.append(f)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for m, f in pool.map(_filter_chunk, args):
                maps_parts.append(m)
                fail_parts.append(f)
    maps = np.concatenate(maps_parts)
    fails = np.concatenate(fail_parts)
    labels = ds.labels[:n_train + n_test]
    train = FeatureMapSet(maps=maps[:n_train], labels=labels[:n_train],
                          k=k, stride=stride, failed_windows=fails[:n_train])
    test = FeatureMapSet(maps=maps[n_train:], labels=labels[n_train:],
                         k=k, stride=stride, failed_windows=fails[n_train:])
    return train, test


def save_fmap(path, fms: FeatureMapSet) -> None:
    """Versioned binary format: ASCII header line
    `onn-fmap v1 h=<H'> w=<W'> c=5 n=<count>`, then row-major packed bytes
    (one byte per activation).  Labels ride in a sidecar `<path>.labels`
    (IDX label format)."""
    count, h, w, c = fms.maps.shape
    with open(path, "wb") as fh:
        fh.write(f"onn-fmap v1 h={h} w={w} c={c} n={count}\n".encode())
        fh.write(np.ascontiguousarray(fms.maps, dtype=np.uint8).tobytes())
    from .mnist import write_idx_labels
    write_idx_labels(str(path) + ".labels", fms.labels)


def load_fmap(path, k: int = 3, stride: int = 2) -> FeatureMapSet:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        if header[:2] != ["onn-fmap", "v1"]:
            raise ValueError(f"bad fmap header: {' '.join(header)}")
        fields = dict(kv.split("=") for kv in header[2:])
        h, w, c, n = (int(fields[x]) for x in ("h", "w", "c", "n"))
        maps = np.frombuffer(fh.read(n * h * w * c), dtype=np.uint8).reshape(n, h, w, c)
    from .mnist import load_mnist_idx  # noqa: F401  (same format family)
    import struct
    with open(str(path) + ".labels", "rb") as fh:
        magic, count = struct.unpack(">II", fh.read(8))
        labels = np.frombuffer(fh.read(count), dtype=np.uint8)
    return FeatureMapSet(maps=maps.copy(), labels=labels.copy(), k=k, stride=stride)
