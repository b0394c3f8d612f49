"""Training stage: iterate embed -> train -> gradient -> select -> update costs.

Run directory layout::

    config.json                 effective configuration
    iter_<i>/costs/<id>.scf1    cost map Q_i used to produce S_i (COSTS planes +/-)
    iter_<i>/model.bin          analyzer N_i trained on (C, S_i)
    iter_<i>/COMPLETE           checkpoint marker written last
    iter_<T>/costs/<id>.scf1    final costs Q_T, plus an evaluation-only model
    metrics.csv                 iteration, train_acc, val_acc (rows 0..T)
    chain.json                  the ModelChain index
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analyzer
from .analyzer import AnalyzerModel, TrainConfig
from .coder import EmbedRequest, apply_changes, embed
from .container import coefficients_to_bytes
from .juniward import CostMap, juniward_cost
from .parallel import parallel_map

log = logging.getLogger(__name__)

# (T, p, alpha) per quality factor
DEFAULTS = {95: (16, 0.5, 2.5), 75: (16, 0.6, 3.0)}


def defaults_for(qf: int) -> tuple[int, float, float]:
    return DEFAULTS.get(qf, DEFAULTS[95])


@dataclass
class SelectionMask:
    mask: np.ndarray
    selected_count: int

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if int(self.mask.sum()) != self.selected_count:
            raise ValueError("selected_count disagrees with the mask")


@dataclass
class ModelChain:
    models: list
    p: float
    alpha: float
    T: int
    payload_bpnz: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if len(self.models) != self.T:
            raise ValueError(f"chain holds {len(self.models)} models, expected T={self.T}")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")

    def checksums(self) -> list[str]:
        return [m.checksum() for m in self.models]


@dataclass
class LoopConfig:
    T: int = 16
    p: float = 0.5
    alpha: float = 2.5
    payload_bpnz: float = 0.4
    seed: int = 0
    val_fraction: float = 0.2
    mode: str = "simulate"
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LoopConfig":
        d = dict(d)
        tr = TrainConfig(**d.pop("train", {}))
        return cls(train=tr, **d)


# --------------------------------------------------------------------------
# selection and update arithmetic

def select_top_p(g, p: float) -> SelectionMask:
    """Mask the round(p*N) largest |g|, skipping exact zeros; earlier index wins ties."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    g = np.asarray(g, dtype=np.float64)
    flat = np.abs(g).reshape(-1)
    k = min(int(math.floor(p * flat.size + 0.5)), int(np.count_nonzero(flat)))
    order = np.argsort(-flat, kind="stable")[:k]
    mask = np.zeros(flat.size, dtype=bool)
    mask[order] = True
    return SelectionMask(mask.reshape(g.shape), k)


def update_costs(q: CostMap, g, mask: SelectionMask, alpha: float) -> CostMap:
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    g = np.asarray(g, dtype=np.float64)
    sel = mask.mask
    if g.shape != q.shape or sel.shape != q.shape:
        raise ValueError("gradient, mask and cost shapes differ")
    assert not (sel & (g == 0)).any(), "selected position with zero gradient"
    neg = sel & (g < 0)
    pos = sel & (g > 0)
    rp = q.rho_plus + np.where(neg, 1.0, 0.0) + np.where(pos, alpha, 0.0)
    rm = q.rho_minus + np.where(neg, alpha, 0.0) + np.where(pos, 1.0, 0.0)
    rp[q.wet_plus] = q.wet_value
    rm[q.wet_minus] = q.wet_value
    return CostMap(rp, rm, q.wet_value)


# --------------------------------------------------------------------------
# gradient sources

class BuiltinGradients:
    """Coefficient gradients of the in-process analyzer at each cover."""

    def __init__(self, threads: int | None = None):
        self.threads = threads

    def __call__(self, model_index: int, model: AnalyzerModel, covers, ids, stage: str,
                 stegos=None) -> list[np.ndarray]:
        return parallel_map(lambda c: analyzer.coefficient_gradient(model, c), covers, self.threads)


def derive_seed(seed: int, *parts) -> int:
    h = hashlib.sha256(json.dumps([seed, *parts]).encode()).digest()
    return int.from_bytes(h[:4], "little")


def dataset_hash(covers) -> str:
    h = hashlib.sha256()
    for c in covers:
        h.update(hashlib.sha256(coefficients_to_bytes(c)).digest())
    return h.hexdigest()


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    nval = max(1, int(math.floor(n * val_fraction + 0.5)))
    if nval >= n:
        raise ValueError("need at least one training and one validation cover")
    order = np.random.default_rng(derive_seed(seed, "split")).permutation(n)
    return np.sort(order[nval:]), np.sort(order[:nval])


def embed_all(covers, costs, ids, cfg: LoopConfig, iteration: int, threads=None):
    req = EmbedRequest(cfg.payload_bpnz, derive_seed(cfg.seed, "embed"), cfg.mode)

    def one(j):
        return apply_changes(covers[j], embed(covers[j], costs[j], req, f"{ids[j]}/iter{iteration}"))

    return parallel_map(one, range(len(covers)), threads)


# --------------------------------------------------------------------------
# run directory helpers

def _cost_dir(run: Path, i: int) -> Path:
    return run / f"iter_{i}" / "costs"


def _save_costs(run: Path, i: int, ids, costs):
    d = _cost_dir(run, i)
    d.mkdir(parents=True, exist_ok=True)
    for cid, q in zip(ids, costs):
        (d / f"{cid}.scf1").write_bytes(q.to_bytes())


def load_costs(run, i: int, ids) -> list[CostMap]:
    d = _cost_dir(Path(run), i)
    return [CostMap.from_bytes((d / f"{cid}.scf1").read_bytes()) for cid in ids]


def _write_metrics(run: Path, rows):
    with open(run / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "train_acc", "val_acc"])
        for r in rows:
            w.writerow([r[0], repr(float(r[1])), repr(float(r[2]))])


def read_metrics(run) -> list[tuple[int, float, float]]:
    with open(Path(run) / "metrics.csv", newline="") as fh:
        return [(int(r["iteration"]), float(r["train_acc"]), float(r["val_acc"]))
                for r in csv.DictReader(fh)]


def _last_checkpoint(run: Path, T: int) -> int:
    """Index of the last fully completed iteration, or -1."""
    last = -1
    for i in range(T):
        if (run / f"iter_{i}" / "COMPLETE").exists():
            last = i
        else:
            break
    return last


def save_chain(run, chain: ModelChain):
    run = Path(run)
    entry = {
        "T": chain.T, "p": chain.p, "alpha": chain.alpha, "payload_bpnz": chain.payload_bpnz,
        "models": [f"iter_{i}/model.bin" for i in range(chain.T)],
        "checksums": chain.checksums(),
        "provenance": chain.provenance,
    }
    (run / "chain.json").write_text(json.dumps(entry, indent=2, sort_keys=True))


def load_chain(run) -> ModelChain:
    run = Path(run)
    entry = json.loads((run / "chain.json").read_text())
    models = [analyzer.load_model((run / m).read_bytes()) for m in entry["models"]]
    for m, digest in zip(models, entry["checksums"]):
        if m.checksum() != digest:
            raise ValueError("chain model checksum mismatch")
    return ModelChain(models, entry["p"], entry["alpha"], entry["T"], entry["payload_bpnz"],
                      entry.get("provenance", {}))


# --------------------------------------------------------------------------
# main loop

def run_training(covers, ids, cfg: LoopConfig, out_dir, gradient_source=None,
                 threads: int | None = None, evaluate_final: bool = True) -> ModelChain:
    """Produce T analyzers, updating every cover's costs after each one.

    Resumes from the last completed iteration found in ``out_dir``.
    """
    cfg.validate()
    if len(covers) != len(ids) or len(set(ids)) != len(ids):
        raise ValueError("ids must be unique and aligned with covers")
    run = Path(out_dir)
    run.mkdir(parents=True, exist_ok=True)
    grads_of = gradient_source or BuiltinGradients(threads)
    data_hash = dataset_hash(covers)
    config = {"loop": cfg.to_dict(), "dataset_hash": data_hash, "ids": list(ids)}
    cfg_path = run / "config.json"
    if cfg_path.exists() and json.loads(cfg_path.read_text()) != config:
        raise ValueError(f"{run} holds a run with a different configuration")
    cfg_path.write_text(json.dumps(config, indent=2, sort_keys=True))

    tr, va = split_indices(len(covers), cfg.val_fraction, cfg.seed)
    last = _last_checkpoint(run, cfg.T)
    models, rows = [], []
    if last >= 0:
        log.info("resuming after iteration %d", last)
        models = [analyzer.load_model((run / f"iter_{i}" / "model.bin").read_bytes())
                  for i in range(last + 1)]
        rows = [r for r in read_metrics(run) if r[0] <= last]
        costs = load_costs(run, last + 1, ids)
    else:
        costs = parallel_map(juniward_cost, covers, threads)
        _save_costs(run, 0, ids, costs)

    def train_on(i, stegos):
        hp = TrainConfig(**{**asdict(cfg.train), "seed": derive_seed(cfg.seed, "train", i)})
        return analyzer.train([covers[j] for j in tr], [stegos[j] for j in tr], hp,
                              [covers[j] for j in va], [stegos[j] for j in va])

    for i in range(last + 1, cfg.T):
        stegos = embed_all(covers, costs, ids, cfg, i, threads)
        model = train_on(i, stegos)
        models.append(model)
        rows.append((i, model.metrics["train_acc"], model.metrics["val_acc"]))
        log.info("iteration %d train_acc %.4f val_acc %.4f", i, *rows[-1][1:])
        grads = grads_of(i, model, covers, ids, "train", stegos)
        new_costs = []
        for q, g in zip(costs, grads):
            new_costs.append(update_costs(q, g, select_top_p(g, cfg.p), cfg.alpha))
        costs = new_costs
        (run / f"iter_{i}").mkdir(exist_ok=True)
        (run / f"iter_{i}" / "model.bin").write_bytes(analyzer.save_model(model))
        _save_costs(run, i + 1, ids, costs)
        _write_metrics(run, rows)
        (run / f"iter_{i}" / "COMPLETE").write_text("")

    if evaluate_final and len(rows) == cfg.T:
        final = run / f"iter_{cfg.T}" / "model.bin"
        if final.exists():
            model = analyzer.load_model(final.read_bytes())
        else:
            model = train_on(cfg.T, embed_all(covers, costs, ids, cfg, cfg.T, threads))
            final.write_bytes(analyzer.save_model(model))
        rows.append((cfg.T, model.metrics["train_acc"], model.metrics["val_acc"]))
    _write_metrics(run, rows)

    chain = ModelChain(models, cfg.p, cfg.alpha, cfg.T, cfg.payload_bpnz,
                       {"seed": cfg.seed, "dataset_hash": data_hash})
    save_chain(run, chain)
    return chain
