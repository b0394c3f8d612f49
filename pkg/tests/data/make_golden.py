"""Regenerate the pinned end-to-end generation vector (run from the repo root).

The expected cost map is composed position by position with plain Python
arithmetic, independently of the vectorised library path.
"""
import hashlib
import json
from pathlib import Path

import numpy as np

from stegadv import analyzer
from stegadv.coder import EmbedRequest, apply_changes, simulate_embedding
from stegadv.corpus import synthetic_covers
from stegadv.jpegio import compress_gray, encode_jpeg
from stegadv.juniward import CostMap, juniward_cost

HERE = Path(__file__).parent
P, ALPHA, SEED = 0.5, 2.5, 2024


def main():
    cover = compress_gray(synthetic_covers(1, 64, seed=77)[0], 95)
    (HERE / "golden_cover.jpg").write_bytes(encode_jpeg(cover))
    models = []
    for i in range(2):
        m = analyzer.init_model(100 + i, channels=4)
        m.cls_w = np.random.default_rng(200 + i).normal(0, 1, m.cls_w.shape)
        (HERE / f"golden_model_{i}.bin").write_bytes(analyzer.save_model(m))
        models.append(m)
    rho0 = juniward_cost(cover)
    rp = rho0.rho_plus.copy()
    rm = rho0.rho_minus.copy()
    n = rp.size
    k = int(np.floor(P * n + 0.5))
    for m in models:
        g = analyzer.coefficient_gradient(m, cover).reshape(-1)
        entries = sorted(((-abs(float(v)), idx) for idx, v in enumerate(g) if v != 0))[:k]
        for _, idx in entries:
            r, c = divmod(idx, 64)
            if g[idx] < 0:
                rp[r, c] += 1.0
                rm[r, c] += ALPHA
            else:
                rp[r, c] += ALPHA
                rm[r, c] += 1.0
    cost = CostMap(rp, rm)
    changes = simulate_embedding(cover, cost, EmbedRequest(0.4, SEED), "golden")
    stego = apply_changes(cover, changes)
    (HERE / "golden_cost.scf1").write_bytes(cost.to_bytes())
    meta = {"p": P, "alpha": ALPHA, "seed": SEED, "payload": 0.4, "image_id": "golden",
            "stego_sha256": hashlib.sha256(encode_jpeg(stego)).hexdigest()}
    (HERE / "golden.json").write_text(json.dumps(meta, indent=2) + "\n")


if __name__ == "__main__":
    main()
