"""File protocol for delegating coefficient gradients to an external process.

A request directory contains::

    manifest.json          request description (see write_request)
    covers/<id>.scf1       COEFFICIENTS container per cover
    stegos/<id>.scf1       present for stage "train": the stegos N_i trains on
    gradients/<id>.scf1    written by the oracle: one GRADIENTS plane per cover
    DONE                   written by the oracle once every gradient is in place

Gradients are d(logit_stego - logit_cover)/d(coefficient) evaluated at the
cover, the scalar tagged ``logit_diff_at_cover``.
"""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .container import PlaneType, coefficients_from_bytes, coefficients_to_bytes, read_container, write_container

SCALAR_TAG = "logit_diff_at_cover"
SENTINEL = "DONE"
ENV_VAR = "STEGADV_ORACLE_DIR"


class OracleError(RuntimeError):
    pass


def write_request(request_dir, covers, ids, stage: str = "generate", iteration: int = 0,
                  stegos=None) -> Path:
    root = Path(request_dir)
    (root / "covers").mkdir(parents=True, exist_ok=True)
    (root / "gradients").mkdir(exist_ok=True)
    items = []
    for n, (cid, cover) in enumerate(zip(ids, covers)):
        item = {"id": cid, "cover": f"covers/{cid}.scf1", "gradient": f"gradients/{cid}.scf1"}
        (root / item["cover"]).write_bytes(coefficients_to_bytes(cover))
        if stegos is not None:
            (root / "stegos").mkdir(exist_ok=True)
            item["stego"] = f"stegos/{cid}.scf1"
            (root / item["stego"]).write_bytes(coefficients_to_bytes(stegos[n]))
        items.append(item)
    manifest = {
        "format": "stegadv-oracle",
        "version": 1,
        "scalar": SCALAR_TAG,
        "stage": stage,
        "iteration": iteration,
        "items": items,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root


def read_manifest(request_dir) -> dict:
    return json.loads((Path(request_dir) / "manifest.json").read_text())


def external_oracle_gradient(request_dir, timeout: float = 3600.0, poll: float = 0.05) -> list[np.ndarray]:
    """Block until the oracle signals completion, then load and validate its planes."""
    root = Path(request_dir)
    manifest = read_manifest(root)
    deadline = time.monotonic() + timeout
    while not (root / SENTINEL).exists():
        if time.monotonic() > deadline:
            raise OracleError(f"oracle timed out after {timeout} s (missing {SENTINEL} sentinel)")
        time.sleep(poll)
    grads = []
    for item in manifest["items"]:
        path = root / item["gradient"]
        if not path.exists():
            raise OracleError(f"incomplete oracle response: missing {item['gradient']}")
        c = read_container(path.read_bytes())
        cover = coefficients_from_bytes((root / item["cover"]).read_bytes())
        if c.kind != PlaneType.GRADIENTS or len(c.planes) != 1:
            raise OracleError(f"{item['gradient']}: expected one GRADIENTS plane")
        if c.planes[0].shape != cover.coeffs.shape:
            raise OracleError(f"{item['gradient']}: shape mismatch {c.planes[0].shape} "
                              f"vs cover {cover.coeffs.shape}")
        if not np.isfinite(c.planes[0]).all():
            raise OracleError(f"{item['gradient']}: non-finite gradient values")
        grads.append(c.planes[0])
    return grads


def serve_request(request_dir, gradient_fn) -> None:
    """Play the oracle side for one request using ``gradient_fn(cover) -> plane``."""
    root = Path(request_dir)
    for item in read_manifest(root)["items"]:
        cover = coefficients_from_bytes((root / item["cover"]).read_bytes())
        plane = np.asarray(gradient_fn(cover), dtype=np.float64)
        (root / item["gradient"]).write_bytes(write_container(PlaneType.GRADIENTS, [plane]))
    (root / SENTINEL).write_text("")


class OracleGradients:
    """Gradient source that routes every request through an oracle directory.

    Requests are numbered so a long-running oracle can watch the directory
    for new ``manifest.json`` files. The in-process ``model`` is ignored:
    the oracle trains and holds its own networks.
    """

    def __init__(self, oracle_dir, timeout: float = 3600.0):
        self.root = Path(oracle_dir)
        self.timeout = timeout
        self.count = 0

    def __call__(self, model_index: int, model, covers, ids, stage: str, stegos=None) -> list[np.ndarray]:
        name = f"request_{self.count:04d}_{stage}_{model_index:03d}"
        self.count += 1
        request = write_request(self.root / name, covers, ids, stage, model_index, stegos)
        return external_oracle_gradient(request, self.timeout)
