"""Turning cost maps into changes: payload-limited simulation and binary STC."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .container import PlaneType, read_container, write_container
from .jpegio import CoefficientImage, coefficient_bounds, count_nzac
from .juniward import CostMap

LOG2_3 = math.log2(3)
EPSILON = 1e-3
MAX_BISECTIONS = 200


class PayloadInfeasible(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class WetColumnError(ValueError):
    pass


@dataclass
class EmbedRequest:
    payload_bpnz: float
    seed: int = 0
    mode: str = "simulate"

    def __post_init__(self):
        if not 0 < self.payload_bpnz <= LOG2_3:
            raise ValueError(f"payload must lie in (0, log2(3)], got {self.payload_bpnz}")
        if self.mode not in ("simulate", "stc"):
            raise ValueError(f"unknown embedding mode {self.mode!r}")


@dataclass
class ChangeMap:
    changes: np.ndarray
    realized_bits: float = 0.0
    lam: float | None = None
    realized_cost: float | None = None

    def to_bytes(self) -> bytes:
        return write_container(PlaneType.CHANGES, [self.changes])

    @classmethod
    def from_bytes(cls, data: bytes) -> "ChangeMap":
        c = read_container(data)
        if c.kind != PlaneType.CHANGES:
            raise ValueError(f"expected CHANGES, found {c.kind.name}")
        return cls(c.planes[0].astype(np.int8))


# --------------------------------------------------------------------------
# Payload-limited sender

def change_probabilities(cost: CostMap, lam: float) -> tuple[np.ndarray, np.ndarray]:
    ep = np.exp(-lam * cost.rho_plus)
    em = np.exp(-lam * cost.rho_minus)
    z = 1.0 + ep + em
    p_plus, p_minus = ep / z, em / z
    p_plus[cost.wet_plus] = 0.0
    p_minus[cost.wet_minus] = 0.0
    return p_plus, p_minus


def ternary_entropy(p_plus: np.ndarray, p_minus: np.ndarray) -> np.ndarray:
    """Per-position entropy in bits."""
    p0 = 1.0 - p_plus - p_minus
    return (entr(p_plus) + entr(p_minus) + entr(p0)) / math.log(2)


def expected_payload(cost: CostMap, lam: float) -> float:
    return float(ternary_entropy(*change_probabilities(cost, lam)).sum())


def capacity(cost: CostMap) -> float:
    options = 1 + (~cost.wet_plus).astype(int) + (~cost.wet_minus).astype(int)
    return float(np.log2(options).sum())


def solve_lambda(cost: CostMap, message_bits: float) -> float:
    """Multiplier whose Gibbs change distribution carries ``message_bits`` bits.

    Bisection runs in log(lambda) until the bracket collapses to machine
    precision, so the solution is (numerically) exact rather than merely
    inside the payload tolerance.
    """
    m = float(message_bits)
    if not m > 0:
        raise ValueError("message length must be positive")
    if m > capacity(cost) * (1 + EPSILON):
        raise PayloadInfeasible(f"payload infeasible: {m:.1f} bits exceeds capacity")
    lo, hi = 1e-7, 1e3
    h_lo = expected_payload(cost, lo)
    while h_lo < m:
        if abs(h_lo - m) <= EPSILON * m:
            return lo
        if lo < 1e-300:
            raise PayloadInfeasible("payload infeasible at vanishing lambda")
        lo /= 10
        h_lo = expected_payload(cost, lo)
    while expected_payload(cost, hi) > m:
        if hi > 1e300:
            raise NumericalError("could not bracket lambda from above")
        hi *= 10
    for _ in range(MAX_BISECTIONS):
        mid = math.sqrt(lo * hi)
        if not lo < mid < hi:
            break
        if expected_payload(cost, mid) > m:
            lo = mid
        else:
            hi = mid
    else:
        if hi / lo - 1 > 1e-9:
            raise NumericalError(f"lambda bisection did not converge after {MAX_BISECTIONS} steps")
    lam = math.sqrt(lo * hi)
    if abs(expected_payload(cost, lam) - m) > EPSILON * m:
        raise NumericalError("lambda search converged outside the payload tolerance")
    return lam


def keyed_generator(seed: int, image_id: str = "") -> np.random.Generator:
    """Counter-based stream keyed by (seed, image id); draws are indexed by position."""
    digest = hashlib.sha256(f"{int(seed)}\x00{image_id}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype="<u8").astype(np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def position_uniforms(seed: int, image_id: str, shape) -> np.ndarray:
    return keyed_generator(seed, image_id).random(int(np.prod(shape))).reshape(shape)


def simulate_embedding(cover: CoefficientImage, cost: CostMap, req: EmbedRequest,
                       image_id: str = "") -> ChangeMap:
    """Sample a ternary change pattern from the optimal Gibbs distribution."""
    m = req.payload_bpnz * count_nzac(cover)
    if m <= 0:
        return ChangeMap(np.zeros(cover.coeffs.shape, dtype=np.int8), 0.0, math.inf)
    lam = solve_lambda(cost, m)
    p_plus, p_minus = change_probabilities(cost, lam)
    u = position_uniforms(req.seed, image_id, cover.coeffs.shape)
    changes = np.zeros(cover.coeffs.shape, dtype=np.int8)
    changes[u < p_plus] = 1
    changes[(u >= p_plus) & (u < p_plus + p_minus)] = -1
    return ChangeMap(changes, float(ternary_entropy(p_plus, p_minus).sum()), lam)


def apply_changes(cover: CoefficientImage, changes) -> CoefficientImage:
    delta = changes.changes if isinstance(changes, ChangeMap) else np.asarray(changes)
    if delta.shape != cover.coeffs.shape:
        raise ValueError("change map shape does not match cover")
    out = cover.coeffs + delta.astype(np.int32)
    lo, hi = coefficient_bounds(out.shape)
    if ((out < lo) | (out > hi)).any():
        raise ValueError("change leaves the representable coefficient range")
    return CoefficientImage(out, cover.quant_table.copy(), cover.quality_factor)


# --------------------------------------------------------------------------
# Syndrome-trellis codes

DEFAULT_HEIGHT = 10


def submatrix_columns(h: int, w: int) -> list[int]:
    """Columns of the h x w STC submatrix as h-bit integers (bit r = row r).

    The first and last rows are always set, the middle bits come from a
    fixed generator so embedder and extractor agree without side channels.
    """
    if h == 1:
        return [1] * w
    rng = np.random.Generator(np.random.Philox(key=[h, w]))
    mid = rng.integers(0, 1 << (h - 2), size=w) if h > 2 else np.zeros(w, dtype=int)
    return [int(1 | (int(v) << 1) | (1 << (h - 1))) for v in mid]


def parity_check_matrix(m: int, w: int, h: int) -> np.ndarray:
    """Dense m x (m*w) matrix of the banded code (for tests and inspection)."""
    cols = submatrix_columns(h, w)
    mat = np.zeros((m, m * w), dtype=np.uint8)
    for b in range(m):
        for j, col in enumerate(cols):
            for r in range(h):
                if b + r < m and col >> r & 1:
                    mat[b + r, b * w + j] = 1
    return mat


def stc_viterbi(bits: np.ndarray, flip_cost: np.ndarray, message: np.ndarray,
                h: int = DEFAULT_HEIGHT) -> tuple[np.ndarray, float]:
    """Minimum-cost bit vector y with H y = message, H the banded STC matrix.

    ``bits`` and ``flip_cost`` cover exactly ``len(message) * w`` positions.
    Returns (y, total flip cost); raises WetColumnError if no finite solution.
    """
    m = len(message)
    n = len(bits)
    if m == 0:
        return bits.copy(), 0.0
    w = n // m
    if w < 1 or m * w != n:
        raise ValueError("cover length must be a positive multiple of the message length")
    cols = submatrix_columns(h, w)
    states = 1 << h
    idx = np.arange(states)
    weight = np.full(states, np.inf)
    weight[0] = 0.0
    path = np.empty((n, (states + 7) // 8), dtype=np.uint8)
    half = np.full(states // 2 if h > 0 else 0, np.inf)
    message = np.asarray(message, dtype=np.int64)
    k = 0
    for b in range(m):
        rowmask = (1 << min(h, m - b)) - 1
        for col in cols:
            col &= rowmask
            c = flip_cost[k]
            if bits[k]:
                cand0, cand1 = weight + c, weight[idx ^ col]
            else:
                cand0, cand1 = weight, weight[idx ^ col] + c
            choose1 = cand1 < cand0
            weight = np.where(choose1, cand1, cand0)
            path[k] = np.packbits(choose1)
            k += 1
        weight = np.concatenate([weight[int(message[b])::2], half])
    state = int(np.argmin(weight))
    total = float(weight[state])
    if not np.isfinite(total):
        raise WetColumnError("wet column: no finite-cost syndrome solution")
    y = np.zeros(n, dtype=np.uint8)
    k = n - 1
    for b in range(m - 1, -1, -1):
        state = (state << 1) | int(message[b])
        rowmask = (1 << min(h, m - b)) - 1
        for col in reversed(cols):
            bit = path[k, state >> 3] >> (7 - (state & 7)) & 1
            y[k] = bit
            if bit:
                state ^= col & rowmask
            k -= 1
    return y, total


def stc_syndrome(y: np.ndarray, m: int, h: int = DEFAULT_HEIGHT) -> np.ndarray:
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    w = len(y) // m
    cols = submatrix_columns(h, w)
    out = np.zeros(m, dtype=np.uint8)
    state = 0
    k = 0
    for b in range(m):
        rowmask = (1 << min(h, m - b)) - 1
        for col in cols:
            if y[k]:
                state ^= col & rowmask
            k += 1
        out[b] = state & 1
        state >>= 1
    return out


def key_permutation(key: int, n: int) -> np.ndarray:
    """Keyed Fisher-Yates shuffle of range(n)."""
    rng = np.random.Generator(np.random.Philox(key=int(key) & (2**64 - 1)))
    return rng.permutation(n)


def _layout(n: int, m: int) -> int:
    if m > 0.9 * n:
        raise ValueError(f"message too long: {m} bits > 0.9 x {n} positions")
    return n // m


def stc_embed(cover: CoefficientImage, cost: CostMap, message, key: int,
              h: int = DEFAULT_HEIGHT) -> tuple[ChangeMap, CoefficientImage]:
    """Hide ``message`` in coefficient LSBs at (near) minimal total cost."""
    message = np.asarray(message, dtype=np.uint8).reshape(-1)
    m = len(message)
    if m == 0:
        return ChangeMap(np.zeros(cover.coeffs.shape, dtype=np.int8), 0.0), cover.copy()
    n = cover.coeffs.size
    w = _layout(n, m)
    perm = key_permutation(key, n)[:m * w]
    coeffs = cover.coeffs.reshape(-1)[perm]
    rp = cost.rho_plus.reshape(-1)[perm]
    rm = cost.rho_minus.reshape(-1)[perm]
    wp = rp >= cost.wet_value
    wm = rm >= cost.wet_value
    flip = np.where(wp, rm, np.where(wm, rp, np.minimum(rp, rm)))
    flip = np.where(wp & wm, np.inf, flip)
    bits = (coeffs & 1).astype(np.uint8)
    y, _ = stc_viterbi(bits, flip, message, h)
    flipped = y != bits
    direction = np.where(wp, -1, np.where(wm, 1, np.where(rp <= rm, 1, -1)))
    delta = np.zeros(n, dtype=np.int8)
    delta[perm[flipped]] = direction[flipped]
    delta = delta.reshape(cover.coeffs.shape)
    realized = float(np.where(delta > 0, cost.rho_plus, np.where(delta < 0, cost.rho_minus, 0)).sum())
    changes = ChangeMap(delta, float(m), realized_cost=realized)
    return changes, apply_changes(cover, changes)


def stc_extract(stego: CoefficientImage, key: int, message_length: int,
                h: int = DEFAULT_HEIGHT) -> np.ndarray:
    if message_length == 0:
        return np.zeros(0, dtype=np.uint8)
    n = stego.coeffs.size
    w = _layout(n, message_length)
    perm = key_permutation(key, n)[:message_length * w]
    y = (stego.coeffs.reshape(-1)[perm] & 1).astype(np.uint8)
    return stc_syndrome(y, message_length, h)


def embed(cover: CoefficientImage, cost: CostMap, req: EmbedRequest,
          image_id: str = "") -> ChangeMap:
    """Experiment-mode embedding: simulated, or STC with a seeded random message."""
    if req.mode == "simulate":
        return simulate_embedding(cover, cost, req, image_id)
    m = int(round(req.payload_bpnz * count_nzac(cover)))
    rng = keyed_generator(req.seed, "message:" + image_id)
    message = rng.integers(0, 2, size=m, dtype=np.uint8)
    key = int(rng.integers(0, 2**63))
    changes, _ = stc_embed(cover, cost, message, key)
    return changes
