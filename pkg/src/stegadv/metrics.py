"""Cost-change statistics, selection maps and the security evaluation harness."""
from __future__ import annotations

import hashlib

import numpy as np

from . import analyzer
from .analyzer import TrainConfig
from .container import coefficients_to_bytes
from .juniward import CostMap


def _unwet(rho0: CostMap, rho: CostMap) -> np.ndarray:
    return ~(rho0.wet_plus | rho0.wet_minus | rho.wet_plus | rho.wet_minus)


def relative_modification_rate(rho0: CostMap, rho: CostMap) -> float:
    """Total absolute cost change relative to twice the base cost, dry positions only."""
    if rho0.shape != rho.shape:
        raise ValueError("cost maps differ in shape")
    keep = _unwet(rho0, rho)
    base = rho0.rho_plus[keep]
    denom = 2.0 * base.sum()
    if denom == 0:
        raise ValueError("base cost sums to zero")
    num = np.abs(rho.rho_plus[keep] - base).sum() + np.abs(rho.rho_minus[keep] - rho0.rho_minus[keep]).sum()
    return float(num / denom)


def _mask_array(m) -> np.ndarray:
    return np.asarray(getattr(m, "mask", m), dtype=bool)


def selection_frequency(masks) -> np.ndarray:
    """Per-position count of rounds that selected it."""
    arrays = [_mask_array(m) for m in masks]
    if not arrays:
        raise ValueError("no masks")
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ValueError("mask shapes differ between rounds")
    return np.sum(arrays, axis=0)


def modification_frequency_histogram(audits, T: int) -> np.ndarray:
    """Histogram over bins 0..T of per-position selection counts.

    ``audits`` holds one list of T round masks per image.
    """
    counts = np.zeros(T + 1, dtype=np.int64)
    for masks in audits:
        if len(masks) != T:
            raise ValueError(f"expected {T} rounds, got {len(masks)}")
        freq = selection_frequency(masks)
        counts += np.bincount(freq.reshape(-1), minlength=T + 1)
    return counts


def selection_rounds_from_costs(rho0: CostMap, rho: CostMap, alpha: float) -> np.ndarray:
    """Rounds that selected each position, recovered from a training-stage cost pair.

    Every selection adds 1 + alpha to rho+ + rho-, so the count is exact;
    wet positions report 0.
    """
    dry = ~(rho0.wet_plus | rho0.wet_minus)
    total = rho.rho_plus + rho.rho_minus - rho0.rho_plus - rho0.rho_minus
    rounds = np.zeros(rho0.shape, dtype=np.int64)
    rounds[dry] = np.rint(total[dry] / (1.0 + alpha))
    return rounds


def training_histogram(rho0_list, rho_list, T: int, alpha: float) -> np.ndarray:
    counts = np.zeros(T + 1, dtype=np.int64)
    for a, b in zip(rho0_list, rho_list):
        counts += np.bincount(selection_rounds_from_costs(a, b, alpha).reshape(-1), minlength=T + 1)
    return counts


def selection_overlay(cover, mask) -> np.ndarray:
    """8-bit image whose 8x8 blocks show the fraction of selected coefficients."""
    m = _mask_array(mask)
    shape = cover.coeffs.shape if hasattr(cover, "coeffs") else np.shape(cover)
    if m.shape != tuple(shape):
        raise ValueError("mask shape differs from cover")
    h, w = m.shape
    density = m.reshape(h // 8, 8, w // 8, 8).sum(axis=(1, 3)) / 64.0
    level = np.round(density * 255).astype(np.uint8)
    return np.kron(level, np.ones((8, 8), dtype=np.uint8))


def image_hash(img) -> str:
    return hashlib.sha256(coefficients_to_bytes(img)).hexdigest()


def split_pairs(n: int, test_fraction: float = 0.5, seed: int = 0):
    order = np.random.default_rng(seed).permutation(n)
    ntest = int(round(n * test_fraction))
    return np.sort(order[ntest:]), np.sort(order[:ntest])


def evaluate_security(covers, stegos, split=None, hp: TrainConfig | None = None,
                      labels_swapped: bool = False) -> dict:
    """Train a fresh analyzer on one split and score the other.

    ``split`` is a (train_indices, test_indices) pair or a test fraction.
    """
    if len(covers) != len(stegos):
        raise ValueError("covers and stegos must be pairwise aligned")
    if split is None or isinstance(split, float):
        split = split_pairs(len(covers), 0.5 if split is None else split, (hp or TrainConfig()).seed)
    tr, te = (np.asarray(s, dtype=int) for s in split)
    if len(tr) == 0 or len(te) == 0:
        raise ValueError("both splits must be non-empty")
    seen = {image_hash(covers[i]) for i in tr}
    if any(image_hash(covers[i]) in seen for i in te):
        raise ValueError("train and test splits share a cover image")
    model = analyzer.train([covers[i] for i in tr], [stegos[i] for i in tr], hp,
                           labels_swapped=labels_swapped)
    tc, ts = [covers[i] for i in te], [stegos[i] for i in te]
    test_acc = analyzer.accuracy(model, ts, tc) if labels_swapped else analyzer.accuracy(model, tc, ts)
    return {"train_acc": model.metrics["train_acc"], "test_acc": test_acc}
