"""A small differentiable steganalyzer with hand-written backpropagation.

Pipeline: fixed high-pass bank (mirror "same" padding) -> T*tanh(x/T)
truncation -> trainable 3x3 convolution + bias (valid) -> ReLU -> per-channel
global mean and mean of squares -> linear classifier -> (cover, stego) logits.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .jpegio import CoefficientImage, SpatialImage, block_dct, block_idct, decompress

log = logging.getLogger(__name__)

MODEL_MAGIC = b"SAM1"
MODEL_VERSION = 1
ARCH = "hpf8-tanh-conv3-meansq-linear"
KSIZE = 5
HALF = KSIZE // 2


def _embed(k3: list) -> np.ndarray:
    out = np.zeros((KSIZE, KSIZE))
    out[1:4, 1:4] = k3
    return out


def kernel_bank() -> np.ndarray:
    """KV, four first-order, two second-order and the 3x3 SQUARE residual kernels."""
    kv = np.array([[-1, 2, -2, 2, -1],
                   [2, -6, 8, -6, 2],
                   [-2, 8, -12, 8, -2],
                   [2, -6, 8, -6, 2],
                   [-1, 2, -2, 2, -1]]) / 12.0
    bank = [
        kv,
        _embed([[0, 0, 0], [0, -1, 1], [0, 0, 0]]),
        _embed([[0, 0, 0], [0, -1, 0], [0, 1, 0]]),
        _embed([[0, 0, 0], [0, -1, 0], [0, 0, 1]]),
        _embed([[0, 0, 0], [0, -1, 0], [1, 0, 0]]),
        _embed([[0, 0, 0], [1, -2, 1], [0, 0, 0]]) / 2.0,
        _embed([[0, 1, 0], [0, -2, 0], [0, 1, 0]]) / 2.0,
        _embed([[-1, 2, -1], [2, -4, 2], [-1, 2, -1]]) / 4.0,
    ]
    return np.stack(bank)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_model):
        super().__init__(message)
        self.last_model = last_model


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    channels: int = 16
    clip_norm: float | None = 5.0   # global gradient-norm cap; None disables


@dataclass
class AnalyzerModel:
    kernels: np.ndarray
    head_w: np.ndarray      # (C, K, 3, 3)
    head_b: np.ndarray      # (C,)
    cls_w: np.ndarray       # (2, 2C); row 0 = cover, row 1 = stego
    cls_b: np.ndarray       # (2,)
    trunc: float = 4.0
    seed: int | None = None
    metrics: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.head_w.shape[0]

    def trainable(self) -> list[np.ndarray]:
        return [self.head_w, self.head_b, self.cls_w, self.cls_b]

    def copy(self) -> "AnalyzerModel":
        return AnalyzerModel(self.kernels.copy(), self.head_w.copy(), self.head_b.copy(),
                             self.cls_w.copy(), self.cls_b.copy(), self.trunc, self.seed,
                             dict(self.metrics))

    def payload(self) -> bytes:
        parts = [self.kernels, self.head_w, self.head_b, self.cls_w, self.cls_b]
        return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in parts)

    def checksum(self) -> str:
        return hashlib.sha256(self.payload()).hexdigest()

    def kernel_checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.kernels, dtype="<f8").tobytes()).hexdigest()


def init_model(seed: int = 0, channels: int = 16, trunc: float = 4.0) -> AnalyzerModel:
    kernels = kernel_bank()
    k = len(kernels)
    rng = np.random.default_rng(seed)
    head_w = rng.normal(0.0, np.sqrt(2.0 / (k * 9)), size=(channels, k, 3, 3))
    head_b = np.zeros(channels)
    cls_w = rng.normal(0.0, 0.01, size=(2, 2 * channels))
    cls_b = np.zeros(2)
    return AnalyzerModel(kernels, head_w, head_b, cls_w, cls_b, trunc, seed)


# --------------------------------------------------------------------------
# persistence

def save_model(model: AnalyzerModel) -> bytes:
    payload = model.payload()
    header = {
        "format": "stegadv-analyzer",
        "version": MODEL_VERSION,
        "architecture": ARCH,
        "trunc": model.trunc,
        "shapes": {
            "kernels": list(model.kernels.shape),
            "head_w": list(model.head_w.shape),
            "head_b": list(model.head_b.shape),
            "cls_w": list(model.cls_w.shape),
            "cls_b": list(model.cls_b.shape),
        },
        "seed": model.seed,
        "metrics": model.metrics,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    return MODEL_MAGIC + struct.pack("<I", len(blob)) + blob + payload


def read_model_header(data: bytes) -> dict:
    if data[:4] != MODEL_MAGIC:
        raise ValueError("not an analyzer model file")
    (n,) = struct.unpack_from("<I", data, 4)
    return json.loads(data[8:8 + n])


def load_model(data: bytes) -> AnalyzerModel:
    header = read_model_header(data)
    if header.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {header.get('version')}")
    (n,) = struct.unpack_from("<I", data, 4)
    payload = data[8 + n:]
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise ValueError("model checksum mismatch")
    arrays = {}
    pos = 0
    for name in ("kernels", "head_w", "head_b", "cls_w", "cls_b"):
        shape = tuple(header["shapes"][name])
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += count * 8
    if pos != len(payload):
        raise ValueError("model payload size mismatch")
    return AnalyzerModel(trunc=header["trunc"], seed=header.get("seed"),
                         metrics=header.get("metrics", {}), **arrays)


# --------------------------------------------------------------------------
# forward / backward

def _samples(img) -> np.ndarray:
    if isinstance(img, CoefficientImage):
        img = decompress(img)
    if isinstance(img, SpatialImage):
        img = img.samples
    x = np.asarray(img, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("non-finite input image")
    return x


def _front_end(model: AnalyzerModel, x: np.ndarray):
    """Residuals and truncated residuals, each (..., K, H, W)."""
    padded = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(HALF, HALF)] * 2, mode="symmetric")
    win = sliding_window_view(padded, (KSIZE, KSIZE), axis=(-2, -1))
    resid = np.einsum("...hwab,kab->...khw", win, model.kernels, optimize=True)
    return resid, model.trunc * np.tanh(resid / model.trunc)


def _patches(s: np.ndarray) -> np.ndarray:
    """(..., K, H, W) -> (..., (H-2)*(W-2), K*9)."""
    win = sliding_window_view(s, (3, 3), axis=(-2, -1))     # (..., K, H-2, W-2, 3, 3)
    win = np.moveaxis(win, -5, -3)                           # (..., H-2, W-2, K, 3, 3)
    lead = win.shape[:-5]
    n = win.shape[-5] * win.shape[-4]
    return win.reshape(*lead, n, -1)


def _head(model: AnalyzerModel, s: np.ndarray):
    patches = _patches(s)
    act = patches @ model.head_w.reshape(model.channels, -1).T + model.head_b
    z = np.maximum(act, 0.0)
    feats = np.concatenate([z.mean(axis=-2), (z * z).mean(axis=-2)], axis=-1)
    return patches, act, z, feats


def forward(model: AnalyzerModel, img) -> tuple[float, float]:
    """(logit_cover, logit_stego) for one image."""
    x = _samples(img)
    if min(x.shape) < KSIZE:
        raise ValueError("image smaller than the kernel support")
    _, s = _front_end(model, x)
    feats = _head(model, s)[3]
    logits = model.cls_w @ feats + model.cls_b
    return float(logits[0]), float(logits[1])


def activation_pattern(model: AnalyzerModel, img) -> np.ndarray:
    """Boolean ReLU state of every head unit; a change marks a kink crossing."""
    return _head(model, _front_end(model, _samples(img))[1])[1] > 0


def logits_batch(model: AnalyzerModel, xs: np.ndarray) -> np.ndarray:
    _, s = _front_end(model, xs)
    feats = _head(model, s)[3]
    return feats @ model.cls_w.T + model.cls_b


def _fold_mirror(grad_padded: np.ndarray, h: int, w: int) -> np.ndarray:
    """Adjoint of symmetric padding by HALF pixels."""
    rows = np.pad(np.arange(h), HALF, mode="symmetric")
    cols = np.pad(np.arange(w), HALF, mode="symmetric")
    tmp = np.zeros((h, grad_padded.shape[1]))
    np.add.at(tmp, rows, grad_padded)
    out = np.zeros((h, w))
    np.add.at(out.T, cols, tmp.T)
    return out


def pixel_gradient(model: AnalyzerModel, img) -> np.ndarray:
    """d(logit_stego - logit_cover)/d(pixel) for one image."""
    x = _samples(img)
    h, w = x.shape
    resid, s = _front_end(model, x)
    patches, act, z, feats = _head(model, s)
    n = z.shape[0]
    c = model.channels
    d_feat = model.cls_w[1] - model.cls_w[0]
    d_z = d_feat[:c] / n + 2.0 * z * d_feat[c:] / n
    d_act = d_z * (act > 0)
    d_patch = (d_act @ model.head_w.reshape(c, -1)).reshape(h - 2, w - 2, -1, 3, 3)
    k = len(model.kernels)
    d_s = np.zeros((k, h, w))
    for a in range(3):
        for b in range(3):
            d_s[:, a:a + h - 2, b:b + w - 2] += np.moveaxis(d_patch[:, :, :, a, b], -1, 0)
    d_resid = d_s * (1.0 - np.tanh(resid / model.trunc) ** 2)
    d_pad = np.zeros((h + 2 * HALF, w + 2 * HALF))
    for a in range(KSIZE):
        for b in range(KSIZE):
            d_pad[a:a + h, b:b + w] += np.tensordot(model.kernels[:, a, b], d_resid, axes=1)
    return _fold_mirror(d_pad, h, w)


def coefficient_gradient(model: AnalyzerModel, cover: CoefficientImage) -> np.ndarray:
    """d(logit_stego - logit_cover)/d(quantized coefficient), block layout."""
    return cover.quant_grid * block_dct(pixel_gradient(model, decompress(cover)))


def logit_difference(model: AnalyzerModel, coeffs: np.ndarray, quant_table: np.ndarray) -> float:
    """The differentiated scalar on real-valued (relaxed) coefficients."""
    q = np.tile(np.asarray(quant_table, dtype=np.float64),
                (coeffs.shape[0] // 8, coeffs.shape[1] // 8))
    lc, ls = forward(model, block_idct(coeffs * q) + 128.0)
    return ls - lc


# --------------------------------------------------------------------------
# training

def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grads(model: AnalyzerModel, xs: np.ndarray, labels: np.ndarray, s=None):
    """Mean cross-entropy over a batch and its gradients for trainable parameters.

    ``s`` optionally supplies the (fixed) truncated front-end output of ``xs``.
    """
    if s is None:
        s = _front_end(model, xs)[1]
    patches, act, z, feats = _head(model, s)
    logits = feats @ model.cls_w.T + model.cls_b
    prob = _softmax(logits)
    bsz = len(logits)
    loss = -np.mean(np.log(prob[np.arange(bsz), labels] + 1e-300))
    d_logits = prob.copy()
    d_logits[np.arange(bsz), labels] -= 1.0
    d_logits /= bsz
    g_cls_w = d_logits.T @ feats
    g_cls_b = d_logits.sum(axis=0)
    d_feats = d_logits @ model.cls_w
    c = model.channels
    n = z.shape[1]
    d_z = d_feats[:, None, :c] / n + 2.0 * z * d_feats[:, None, c:] / n
    d_act = d_z * (act > 0)
    flat = patches.reshape(-1, patches.shape[-1])
    g_head_w = (d_act.reshape(-1, c).T @ flat).reshape(model.head_w.shape)
    g_head_b = d_act.sum(axis=(0, 1))
    correct = int((np.argmax(logits, axis=1) == labels).sum())
    return loss, [g_head_w, g_head_b, g_cls_w, g_cls_b], correct


def accuracy(model: AnalyzerModel, covers, stegos, batch: int = 64) -> float:
    """Fraction correct at the 0.5 softmax threshold over covers and stegos."""
    xs = [_samples(c) for c in covers] + [_samples(s) for s in stegos]
    labels = np.array([0] * len(covers) + [1] * len(stegos))
    if not xs:
        raise ValueError("no images to score")
    correct = 0
    for i in range(0, len(xs), batch):
        logits = logits_batch(model, np.stack(xs[i:i + batch]))
        correct += int(((logits[:, 1] > logits[:, 0]).astype(int) == labels[i:i + batch]).sum())
    return correct / len(xs)


def train(covers, stegos, hp: TrainConfig | None = None, val_covers=None, val_stegos=None,
          labels_swapped: bool = False) -> AnalyzerModel:
    """Train a fresh analyzer on aligned cover/stego pairs.

    Mini-batches hold whole pairs in a seed-fixed order; with
    ``labels_swapped`` covers are labelled stego and vice versa.
    """
    hp = hp or TrainConfig()
    if not len(covers) or len(covers) != len(stegos):
        raise ValueError("covers and stegos must be non-empty and pairwise aligned")
    model = init_model(hp.seed, hp.channels)
    # the front end is fixed, so it is evaluated once per image
    sc = _front_end(model, np.stack([_samples(c) for c in covers]))[1]
    ss = _front_end(model, np.stack([_samples(s) for s in stegos]))[1]
    velocity = [np.zeros_like(p) for p in model.trainable()]
    rng = np.random.default_rng(hp.seed)
    pairs_per_batch = max(1, hp.batch_size // 2)
    lc, ls = (1, 0) if labels_swapped else (0, 1)
    npairs = len(sc)
    train_acc = 0.0
    for epoch in range(hp.epochs):
        order = rng.permutation(npairs)
        correct = 0
        total_loss = 0.0
        for start in range(0, npairs, pairs_per_batch):
            idx = order[start:start + pairs_per_batch]
            batch = np.concatenate([sc[idx], ss[idx]])
            labels = np.array([lc] * len(idx) + [ls] * len(idx))
            loss, grads, ok = loss_and_grads(model, None, labels, s=batch)
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
                raise TrainingDiverged(f"loss diverged at epoch {epoch}", model.copy())
            if hp.clip_norm is not None:
                norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
                if norm > hp.clip_norm:
                    grads = [g * (hp.clip_norm / norm) for g in grads]
            snapshot = model.copy()
            for p, v, g in zip(model.trainable(), velocity, grads):
                v *= hp.momentum
                v -= hp.learning_rate * g
                p += v
            if not all(np.isfinite(p).all() for p in model.trainable()):
                raise TrainingDiverged(f"parameters diverged at epoch {epoch}", snapshot)
            correct += ok
            total_loss += loss * len(batch)
        train_acc = correct / (2 * npairs)
        log.debug("epoch %d loss %.4f acc %.3f", epoch, total_loss / (2 * npairs), train_acc)
    model.metrics = {"train_acc": train_acc}
    if val_covers is not None and val_stegos is not None and len(val_covers):
        if labels_swapped:
            model.metrics["val_acc"] = accuracy(model, val_stegos, val_covers)
        else:
            model.metrics["val_acc"] = accuracy(model, val_covers, val_stegos)
    return model
