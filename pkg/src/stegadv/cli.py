"""Command-line entry point: ``stegadv <command> [options]``.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
Option precedence: command-line flags, then ``--config`` JSON, then defaults.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import advloop, analyzer, metrics, stegogen
from .analyzer import TrainConfig, TrainingDiverged
from .coder import EmbedRequest, NumericalError, PayloadInfeasible, stc_embed, stc_extract
from .container import ContainerError, header_fields, read_container
from .jpegio import JPEGError, compress_gray, count_nzac, decode_jpeg, encode_jpeg, read_pgm, write_pgm
from .juniward import CostMap, juniward_cost
from .oracle import ENV_VAR, OracleError, OracleGradients
from .parallel import parallel_map

log = logging.getLogger("stegadv")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")
    return vals


# --------------------------------------------------------------------------
# option handling

DEFAULTS = {
    "compress": {"qf": 95},
    "train": {"payload": 0.4, "epochs": 30, "batch_size": 32, "lr": 0.01, "channels": 16,
              "val_fraction": 0.2, "mode": "simulate"},
    "sweep": {"payload": 0.4, "epochs": 30, "batch_size": 32, "lr": 0.01, "channels": 16,
              "val_fraction": 0.2, "p_grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0],
              "alpha_grid": [1.5, 2.0, 2.5, 3.0], "p_rounds": 8, "alpha_rounds": 16,
              "fixed_alpha": 2.5, "mode": "simulate"},
    "generate": {"mode": "simulate"},
    "embed": {"height": 10, "cost": "juniward"},
    "extract": {"height": 10},
    "metrics": {},
    "evaluate": {"epochs": 30, "batch_size": 32, "lr": 0.01, "channels": 16,
                 "test_fraction": 0.5, "iteration": 0},
    "inspect": {},
}
COMMON = {"seed": 0, "threads": None}


def _effective(args) -> dict:
    """Merge flags over the JSON config over defaults."""
    conf = {**COMMON, **DEFAULTS[args.command]}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        conf.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "config", "func", "log_level"):
            conf[k] = v
    return conf


def _write_effective(out: Path, conf: dict):
    out.mkdir(parents=True, exist_ok=True)
    clean = {k: (str(v) if isinstance(v, Path) else v) for k, v in conf.items()}
    (out / "effective_config.json").write_text(json.dumps(clean, indent=2, sort_keys=True))


def _train_config(conf: dict, seed: int) -> TrainConfig:
    return TrainConfig(epochs=int(conf["epochs"]), batch_size=int(conf["batch_size"]),
                       learning_rate=float(conf["lr"]), seed=seed, channels=int(conf["channels"]))


def _gradient_source(threads):
    oracle_dir = os.environ.get(ENV_VAR)
    if oracle_dir:
        log.info("using external gradient oracle at %s", oracle_dir)
        return OracleGradients(oracle_dir)
    return advloop.BuiltinGradients(threads)


def _load_jpegs(folder) -> tuple[list, list]:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"not a directory: {folder}")
    paths = sorted(p for p in folder.iterdir() if p.suffix.lower() in (".jpg", ".jpeg"))
    return [p.stem for p in paths], [decode_jpeg(p.read_bytes()) for p in paths]


def _need(conf, *keys):
    missing = [k for k in keys if conf.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


# --------------------------------------------------------------------------
# commands

def cmd_compress(conf) -> int:
    _need(conf, "input", "out")
    qf = int(conf["qf"])
    if not 1 <= qf <= 100:
        raise UsageError(f"--qf must lie in 1..100, got {qf}")
    src, out = Path(conf["input"]), Path(conf["out"])
    if not src.is_dir():
        raise FileNotFoundError(f"not a directory: {src}")
    _write_effective(out, conf)
    rows, failed = [], []
    for path in sorted(p for p in src.iterdir() if p.suffix.lower() == ".pgm"):
        try:
            samples = read_pgm(path.read_bytes())
            data = encode_jpeg(compress_gray(samples, qf))
        except (OSError, ValueError) as exc:
            failed.append(path.name)
            print(f"unreadable: {path.name}: {exc}", file=sys.stderr)
            continue
        (out / f"{path.stem}.jpg").write_bytes(data)
        rows.append([path.stem, f"{path.stem}.jpg", hashlib.sha256(data).hexdigest(),
                     samples.shape[1], samples.shape[0], qf])
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "file", "sha256", "width", "height", "qf"])
        w.writerows(rows)
    return EXIT_DATA if failed else EXIT_OK


def _loop_config(conf, covers, T=None, p=None, alpha=None) -> advloop.LoopConfig:
    qf = conf.get("qf") or (covers[0].quality_factor if covers else None) or 95
    dT, dp, da = advloop.defaults_for(int(qf))
    def pick(given, key, default):
        if given is not None:
            return given
        return conf[key] if conf.get(key) is not None else default

    T = int(pick(T, "T", dT))
    p = float(pick(p, "p", dp))
    alpha = float(pick(alpha, "alpha", da))
    if T < 2:
        raise UsageError(f"T>=2 required, got --T {T}")
    if not 0 < p <= 1:
        raise UsageError(f"--p must lie in (0, 1], got {p}")
    if not alpha > 1:
        raise UsageError(f"--alpha must exceed 1, got {alpha}")
    seed = int(conf["seed"])
    return advloop.LoopConfig(T=T, p=p, alpha=alpha, payload_bpnz=float(conf["payload"]), seed=seed,
                              val_fraction=float(conf["val_fraction"]), mode=conf["mode"],
                              train=_train_config(conf, seed))


def cmd_train(conf) -> int:
    _need(conf, "covers", "out")
    ids, covers = _load_jpegs(conf["covers"])
    if len(covers) < 2:
        raise ValueError("need at least two covers to train")
    cfg = _loop_config(conf, covers)
    out = Path(conf["out"])
    _write_effective(out, {**conf, "T": cfg.T, "p": cfg.p, "alpha": cfg.alpha})
    chain = advloop.run_training(covers, ids, cfg, out, _gradient_source(conf["threads"]), conf["threads"])
    print(json.dumps({"run": str(out), "T": chain.T, "metrics": advloop.read_metrics(out)}))
    return EXIT_OK


def cmd_sweep(conf) -> int:
    _need(conf, "covers", "out")
    p_grid, a_grid = list(conf["p_grid"]), list(conf["alpha_grid"])
    if not p_grid or not a_grid:
        raise UsageError("parameter grids must be non-empty")
    ids, covers = _load_jpegs(conf["covers"])
    out = Path(conf["out"])
    _write_effective(out, conf)
    source = _gradient_source(conf["threads"])
    rows = []

    def phase(name, settings, rounds):
        finals = []
        for p, alpha in settings:
            cfg = _loop_config(conf, covers, T=rounds, p=p, alpha=alpha)
            run = out / f"{name}_p{p:g}_a{alpha:g}"
            advloop.run_training(covers, ids, cfg, run, source, conf["threads"])
            m = advloop.read_metrics(run)
            if not rows or rows[-1][0] != name:
                # iteration 0 is plain J-UNIWARD and identical for every setting
                rows.append([name, "baseline", "baseline", 0, m[0][1], m[0][2]])
            rows.extend([name, p, alpha, it, tr, va] for it, tr, va in m[1:])
            finals.append(m[-1][2])
        return int(np.argmin(finals))

    best_p = p_grid[phase("p", [(p, float(conf["fixed_alpha"])) for p in p_grid], int(conf["p_rounds"]))]
    best_a = a_grid[phase("alpha", [(best_p, a) for a in a_grid], int(conf["alpha_rounds"]))]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "p", "alpha", "iteration", "train_acc", "val_acc"])
        w.writerows(rows)
    (out / "best.json").write_text(json.dumps({"p": best_p, "alpha": best_a}))
    print(json.dumps({"p": best_p, "alpha": best_a}))
    return EXIT_OK


def cmd_generate(conf) -> int:
    _need(conf, "chain", "covers", "out")
    chain = advloop.load_chain(conf["chain"])
    payload = float(conf.get("payload") or chain.payload_bpnz)
    ids, covers = _load_jpegs(conf["covers"])
    out = Path(conf["out"])
    _write_effective(out, {**conf, "payload": payload})
    for sub in ("stegos", "costs", "audit"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    req = EmbedRequest(payload, int(conf["seed"]), conf["mode"])
    source = _gradient_source(1) if os.environ.get(ENV_VAR) else None

    def one(j):
        return stegogen.generate_stego(covers[j], chain, req, ids[j], source)

    results = parallel_map(one, range(len(covers)), 1 if source else conf["threads"])
    for cid, res in zip(ids, results):
        (out / "stegos" / f"{cid}.jpg").write_bytes(encode_jpeg(res.stego))
        (out / "costs" / f"{cid}.scf1").write_bytes(res.cost.to_bytes())
        (out / "audit" / f"{cid}.scf1").write_bytes(res.audit_bytes())
    print(json.dumps({"generated": len(results), "out": str(out)}))
    return EXIT_OK


def _message_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def cmd_embed(conf) -> int:
    _need(conf, "cover", "message", "out")
    cover = decode_jpeg(Path(conf["cover"]).read_bytes())
    bits = _message_bits(Path(conf["message"]).read_bytes())
    if conf["cost"] == "juniward":
        cost = juniward_cost(cover)
    elif conf["cost"] == "uniform":
        cost = CostMap(np.ones(cover.coeffs.shape), np.ones(cover.coeffs.shape))
    else:
        cost = CostMap.from_bytes(Path(conf["cost"]).read_bytes())
    key = int(conf["seed"])
    changes, stego = stc_embed(cover, cost, bits, key, int(conf["height"]))
    out = Path(conf["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(encode_jpeg(stego))
    print(json.dumps({"bits": int(len(bits)), "changes": int(np.count_nonzero(changes.changes)),
                      "cost": changes.realized_cost}))
    return EXIT_OK


def cmd_extract(conf) -> int:
    _need(conf, "stego", "length", "out")
    stego = decode_jpeg(Path(conf["stego"]).read_bytes())
    bits = stc_extract(stego, int(conf["seed"]), 8 * int(conf["length"]), int(conf["height"]))
    out = Path(conf["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(np.packbits(bits).tobytes())
    return EXIT_OK


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_metrics(conf) -> int:
    out = Path(conf.get("out") or "")
    _need(conf, "out")
    _write_effective(out, conf)
    rates, hist = [], None
    if conf.get("run"):
        run = Path(conf["run"])
        config = json.loads((run / "config.json").read_text())
        ids, loop = config["ids"], config["loop"]
        T, alpha = loop["T"], loop["alpha"]
        q0, qT = advloop.load_costs(run, 0, ids), advloop.load_costs(run, T, ids)
        rates = [[cid, repr(metrics.relative_modification_rate(a, b))] for cid, a, b in zip(ids, q0, qT)]
        hist = metrics.training_histogram(q0, qT, T, alpha)
    elif conf.get("generated"):
        _need(conf, "covers")
        gen = Path(conf["generated"])
        ids, covers = _load_jpegs(conf["covers"])
        audits = []
        (out / "overlays").mkdir(exist_ok=True)
        for cid, cover in zip(ids, covers):
            cost = CostMap.from_bytes((gen / "costs" / f"{cid}.scf1").read_bytes())
            rates.append([cid, repr(metrics.relative_modification_rate(juniward_cost(cover), cost))])
            masks = [m.astype(bool) for m in read_container((gen / "audit" / f"{cid}.scf1").read_bytes()).planes]
            audits.append(masks)
            for r, m in enumerate(masks):
                (out / "overlays" / f"{cid}_r{r}.pgm").write_bytes(write_pgm(metrics.selection_overlay(cover, m)))
        T = len(audits[0]) if audits else 0
        hist = metrics.modification_frequency_histogram(audits, T)
    else:
        raise UsageError("metrics needs --run or --generated")
    _write_csv(out / "rates.csv", ["image_id", "rate"], rates)
    _write_csv(out / "histogram.csv", ["frequency", "count"], [[i, int(c)] for i, c in enumerate(hist)])
    print(json.dumps({"images": len(rates), "histogram": [int(c) for c in hist]}))
    return EXIT_OK


def cmd_evaluate(conf) -> int:
    _need(conf, "covers", "stegos", "out")
    ids, covers = _load_jpegs(conf["covers"])
    out = Path(conf["out"])
    _write_effective(out, conf)
    rows = []
    for sdir in conf["stegos"]:
        sids, stegos = _load_jpegs(sdir)
        if sids != ids:
            raise ValueError(f"{sdir}: stego ids do not match the covers")
        hp = _train_config(conf, int(conf["seed"]))
        res = metrics.evaluate_security(covers, stegos, float(conf["test_fraction"]), hp)
        rows.append([Path(sdir).name, int(conf["iteration"]), repr(res["train_acc"]), repr(res["test_acc"])])
    _write_csv(out / "security.csv", ["run_id", "iteration", "train_acc", "test_acc"], rows)
    print(json.dumps(rows))
    return EXIT_OK


def cmd_inspect(conf) -> int:
    _need(conf, "path")
    path = Path(conf["path"])
    if path.is_dir():
        info = json.loads((path / "chain.json").read_text()) if (path / "chain.json").exists() else {}
        info["metrics"] = advloop.read_metrics(path) if (path / "metrics.csv").exists() else []
    else:
        data = path.read_bytes()
        if data[:4] == b"SCF1":
            info = header_fields(data)
        elif data[:4] == analyzer.MODEL_MAGIC:
            info = analyzer.read_model_header(data)
        elif data[:2] == b"\xff\xd8":
            img = decode_jpeg(data)
            info = {"format": "jpeg", "width": img.width, "height": img.height,
                    "quality_factor": img.quality_factor, "nzac": count_nzac(img)}
        else:
            raise ValueError(f"{path}: unrecognised file type")
    print(json.dumps(info, indent=2, sort_keys=True, default=str))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stegadv", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--config", help="JSON file of option defaults")
        p.set_defaults(func=func)
        return p

    def training_opts(p):
        p.add_argument("--covers")
        p.add_argument("--qf", type=int)
        p.add_argument("--payload", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--channels", type=int)
        p.add_argument("--val-fraction", type=float)
        p.add_argument("--mode", choices=["simulate", "stc"])
        p.add_argument("--out")

    p = command("compress", cmd_compress, "PGM files to JPEG covers")
    p.add_argument("--in", dest="input")
    p.add_argument("--qf", type=int)
    p.add_argument("--out")

    p = command("train", cmd_train, "run the adversarial training loop")
    training_opts(p)
    p.add_argument("--T", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--alpha", type=float)

    p = command("sweep", cmd_sweep, "greedy p then alpha grid search")
    training_opts(p)
    p.add_argument("--p-grid", type=_floats)
    p.add_argument("--alpha-grid", type=_floats)
    p.add_argument("--fixed-alpha", type=float)
    p.add_argument("--p-rounds", type=int)
    p.add_argument("--alpha-rounds", type=int)

    p = command("generate", cmd_generate, "embed new covers with a trained chain")
    p.add_argument("--chain")
    p.add_argument("--covers")
    p.add_argument("--payload", type=float)
    p.add_argument("--mode", choices=["simulate", "stc"])
    p.add_argument("--out")

    p = command("embed", cmd_embed, "hide a message file with STC (key = --seed)")
    p.add_argument("--cover")
    p.add_argument("--message")
    p.add_argument("--cost", help="juniward, uniform or a COSTS .scf1 file")
    p.add_argument("--height", type=int)
    p.add_argument("--out")

    p = command("extract", cmd_extract, "recover a message (key = --seed)")
    p.add_argument("--stego")
    p.add_argument("--length", type=int, help="message length in bytes")
    p.add_argument("--height", type=int)
    p.add_argument("--out")

    p = command("metrics", cmd_metrics, "modification rates, histograms and overlays")
    p.add_argument("--run")
    p.add_argument("--generated")
    p.add_argument("--covers")
    p.add_argument("--out")

    p = command("evaluate", cmd_evaluate, "fresh-analyzer security evaluation")
    p.add_argument("--covers")
    p.add_argument("--stegos", action="append")
    p.add_argument("--iteration", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--channels", type=int)
    p.add_argument("--out")

    p = command("inspect", cmd_inspect, "print container, model, JPEG or run headers")
    p.add_argument("path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        conf = _effective(args)
        if conf.get("threads") is not None and int(conf["threads"]) < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(conf)
    except UsageError as exc:
        print(f"stegadv: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, PayloadInfeasible, TrainingDiverged, FloatingPointError) as exc:
        print(f"stegadv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError, JPEGError, ContainerError, OracleError) as exc:
        print(f"stegadv: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
