"""J-UNIWARD embedding cost for JPEG covers.

Boundary convention: the decompressed cover is mirror-padded by 16 pixels
once, wavelet responses are full 2-D correlations over the padded canvas,
and a candidate change perturbs only pixels inside the image support (the
padding is not re-mirrored). This matches the reference implementation,
which pads the cover and never re-pads perturbed images.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .container import PlaneType, read_container, write_container
from .jpegio import BLOCK, DCT, CoefficientImage, coefficient_bounds, decompress

WET_COST = 1e10
DEFAULT_SIGMA = 2.0 ** -6
PAD = 16

# Daubechies-8 decomposition high-pass filter
HPDF = np.array([
    -0.0544158422, 0.3128715909, -0.6756307363, 0.5853546837,
    0.0158291053, -0.2840155430, -0.0004724846, 0.1287474266,
    0.0173693010, -0.0440882539, -0.0139810279, 0.0087460940,
    0.0048703530, -0.0003917404, -0.0006754494, -0.0001174768,
])
LPDF = HPDF[::-1] * np.array([(-1) ** i for i in range(16)])


def wavelet_filters() -> list[np.ndarray]:
    """LH, HL and HH directional kernels (rows = vertical axis)."""
    return [np.outer(LPDF, HPDF), np.outer(HPDF, LPDF), np.outer(HPDF, HPDF)]


@dataclass
class CostMap:
    rho_plus: np.ndarray
    rho_minus: np.ndarray
    wet_value: float = WET_COST

    def __post_init__(self):
        self.rho_plus = np.asarray(self.rho_plus, dtype=np.float64)
        self.rho_minus = np.asarray(self.rho_minus, dtype=np.float64)
        if self.rho_plus.shape != self.rho_minus.shape:
            raise ValueError("rho_plus and rho_minus shapes differ")

    @property
    def shape(self):
        return self.rho_plus.shape

    @property
    def wet_plus(self) -> np.ndarray:
        return self.rho_plus >= self.wet_value

    @property
    def wet_minus(self) -> np.ndarray:
        return self.rho_minus >= self.wet_value

    def copy(self) -> "CostMap":
        return CostMap(self.rho_plus.copy(), self.rho_minus.copy(), self.wet_value)

    def scaled(self, k: float) -> "CostMap":
        return CostMap(self.rho_plus * k, self.rho_minus * k, self.wet_value * k)

    def to_bytes(self) -> bytes:
        return write_container(PlaneType.COSTS, [self.rho_plus, self.rho_minus])

    @classmethod
    def from_bytes(cls, data: bytes, wet_value: float = WET_COST) -> "CostMap":
        c = read_container(data)
        if c.kind != PlaneType.COSTS or len(c.planes) != 2:
            raise ValueError("expected a two-plane COSTS container")
        return cls(c.planes[0], c.planes[1], wet_value)


def _dct_basis() -> np.ndarray:
    """basis[u, v] = spatial 8x8 block produced by a unit coefficient at (u, v)."""
    return np.einsum("ux,vy->uvxy", DCT, DCT)


def wavelet_responses(samples: np.ndarray) -> list[np.ndarray]:
    padded = np.pad(samples, PAD, mode="symmetric")
    return [signal.correlate(padded, f, mode="full") for f in wavelet_filters()]


def _mark_wet(cover: CoefficientImage, rho_plus, rho_minus, wet_value):
    lo, hi = coefficient_bounds(cover.coeffs.shape)
    rho_plus[cover.coeffs >= hi] = wet_value
    rho_minus[cover.coeffs <= lo] = wet_value


def juniward_cost(cover: CoefficientImage, sigma: float = DEFAULT_SIGMA,
                  wet_value: float = WET_COST) -> CostMap:
    """Symmetric J-UNIWARD cost of a +-1 change at every coefficient."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = decompress(cover).samples
    basis = _dct_basis() * cover.quant_table[:, :, None, None]
    bh, bw = cover.height // BLOCK, cover.width // BLOCK
    rho = np.zeros((bh, bw, BLOCK, BLOCK))
    for f, w in zip(wavelet_filters(), wavelet_responses(x)):
        xi = 1.0 / (sigma + np.abs(w))
        impact = np.abs(np.stack([signal.correlate(b, f, mode="full")
                                  for b in basis.reshape(64, BLOCK, BLOCK)]))
        size = impact.shape[-1]
        windows = sliding_window_view(xi, (size, size))[PAD::BLOCK, PAD::BLOCK][:bh, :bw]
        rho += np.einsum("ijrs,krs->ijk", windows, impact).reshape(bh, bw, BLOCK, BLOCK)
    rho = rho.swapaxes(1, 2).reshape(cover.height, cover.width)
    rho_plus, rho_minus = rho.copy(), rho.copy()
    _mark_wet(cover, rho_plus, rho_minus, wet_value)
    return CostMap(rho_plus, rho_minus, wet_value)


def juniward_cost_bruteforce(cover: CoefficientImage, sigma: float = DEFAULT_SIGMA,
                             wet_value: float = WET_COST, chunk: int = 128) -> CostMap:
    """Reference path: recompute every wavelet response for each candidate change.

    Slow (one full-canvas filtering per coefficient and filter); intended as a
    test oracle on small covers.
    """
    x = decompress(cover).samples
    padded = np.pad(x, PAD, mode="symmetric")
    filters = wavelet_filters()
    base = [signal.fftconvolve(padded, f[::-1, ::-1], mode="full") for f in filters]
    positions = [(r, c) for r in range(cover.height) for c in range(cover.width)]
    rho = np.zeros(len(positions))
    for start in range(0, len(positions), chunk):
        batch = positions[start:start + chunk]
        stack = np.repeat(padded[None], len(batch), axis=0)
        for n, (r, c) in enumerate(batch):
            u, v = r % BLOCK, c % BLOCK
            unit = np.zeros((BLOCK, BLOCK))
            unit[u, v] = cover.quant_table[u, v]
            a, b = PAD + r - u, PAD + c - v
            stack[n, a:a + BLOCK, b:b + BLOCK] += DCT.T @ unit @ DCT
        for f, w in zip(filters, base):
            perturbed = signal.fftconvolve(stack, f[None, ::-1, ::-1], mode="full", axes=(1, 2))
            rho[start:start + len(batch)] += (
                np.abs(perturbed - w[None]) / (sigma + np.abs(w[None]))).sum(axis=(1, 2))
    rho = rho.reshape(cover.height, cover.width)
    rho_plus, rho_minus = rho.copy(), rho.copy()
    _mark_wet(cover, rho_plus, rho_minus, wet_value)
    return CostMap(rho_plus, rho_minus, wet_value)


INITIAL_COSTS: dict[str, Callable[[CoefficientImage], CostMap]] = {
    "juniward": juniward_cost,
}
