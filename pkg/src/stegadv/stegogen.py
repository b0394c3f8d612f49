"""Generation stage: compose asymmetric costs for a new cover from a saved chain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .advloop import BuiltinGradients, ModelChain, SelectionMask, select_top_p
from .coder import EmbedRequest, apply_changes, embed
from .container import PlaneType, write_container
from .jpegio import CoefficientImage
from .juniward import CostMap, juniward_cost


@dataclass
class GenerationResult:
    stego: CoefficientImage
    cost: CostMap
    masks: list          # per round: SelectionMask
    signs: list          # per round: int8 grid, sign of g at selected positions, else 0

    def audit_bytes(self) -> bytes:
        """Selection masks, one MASKS plane per round."""
        return write_container(PlaneType.MASKS, [m.mask.astype(np.uint8) for m in self.masks])


def temporary_cost(g, mask: SelectionMask, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    g = np.asarray(g, dtype=np.float64)
    # a zero gradient never counts as selected
    neg = mask.mask & (g < 0)
    pos = mask.mask & (g > 0)
    tmp_plus = np.where(neg, 1.0, 0.0) + np.where(pos, alpha, 0.0)
    tmp_minus = np.where(neg, alpha, 0.0) + np.where(pos, 1.0, 0.0)
    return tmp_plus, tmp_minus


def compose_cost(rho0: CostMap, tmps, T: int | None = None) -> CostMap:
    if T is not None and len(tmps) != T:
        raise ValueError(f"expected {T} temporary costs, got {len(tmps)}")
    rp = rho0.rho_plus.copy()
    rm = rho0.rho_minus.copy()
    for tp, tm in tmps:
        if tp.shape != rp.shape or tm.shape != rm.shape:
            raise ValueError("temporary cost shape differs from the base cost")
        rp += tp
        rm += tm
    rp[rho0.wet_plus] = rho0.wet_value
    rm[rho0.wet_minus] = rho0.wet_value
    return CostMap(rp, rm, rho0.wet_value)


def chain_gradients(cover: CoefficientImage, chain: ModelChain, gradient_source=None,
                    image_id: str = "cover") -> list[np.ndarray]:
    source = gradient_source or BuiltinGradients(1)
    return [source(i, m, [cover], [image_id], "generate")[0] for i, m in enumerate(chain.models)]


def generate_stego(cover: CoefficientImage, chain: ModelChain, req: EmbedRequest,
                   image_id: str = "", gradient_source=None) -> GenerationResult:
    rho0 = juniward_cost(cover)
    masks, signs, tmps = [], [], []
    for g in chain_gradients(cover, chain, gradient_source, image_id or "cover"):
        mask = select_top_p(g, chain.p)
        masks.append(mask)
        signs.append(np.where(mask.mask, np.sign(g), 0).astype(np.int8))
        tmps.append(temporary_cost(g, mask, chain.alpha))
    cost = compose_cost(rho0, tmps, chain.T)
    stego = apply_changes(cover, embed(cover, cost, req, image_id))
    return GenerationResult(stego, cost, masks, signs)
