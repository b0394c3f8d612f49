"""Acceptance checks, one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line that pytest prints in its terminal summary.
"""
import hashlib
import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_coefficients, record_criterion
from fdcheck import fd_check, random_model
from stegadv import advloop, analyzer, metrics
from stegadv.advloop import LoopConfig, SelectionMask, run_training, select_top_p, update_costs
from stegadv.analyzer import TrainConfig
from stegadv.coder import (EmbedRequest, apply_changes, change_probabilities, expected_payload,
                           parity_check_matrix, simulate_embedding, solve_lambda, stc_embed, stc_extract,
                           stc_viterbi)
from stegadv.corpus import natural_patches, synthetic_covers
from stegadv.jpegio import block_dct, block_idct, compress_gray, decode_jpeg, encode_jpeg
from stegadv.juniward import CostMap, juniward_cost, juniward_cost_bruteforce
from stegadv.stegogen import compose_cost, generate_stego, temporary_cost


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode() + b"\0" + p.read_bytes())
    return h.hexdigest()


# 1 ------------------------------------------------------------------------

def test_criterion_01_codec_exactness():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    failures = 0
    pixels = synthetic_covers(50, 64, seed=1)
    for i in range(100):
        if i < 50:
            img = compress_gray(pixels[i], int(rng.integers(1, 101)))
        else:
            h, w = 8 * rng.integers(1, 17, size=2)
            img = random_coefficients(rng, int(h), int(w), qf=int(rng.integers(1, 101)), scale=40)
        data = encode_jpeg(img)
        failures += decode_jpeg(data) != img
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 30
    record_criterion(1, "codec decode(encode(x)) == x on 100 JPEGs, < 30 s", ok,
                     f"{failures} mismatches, {elapsed:.1f} s")
    assert ok


# 2 ------------------------------------------------------------------------

def test_criterion_02_dct_orthonormality():
    blocks = np.random.default_rng(2).normal(0, 100, size=(1000, 8, 8))
    grid = blocks.reshape(25, 40, 8, 8).swapaxes(1, 2).reshape(200, 320)
    err = np.abs(block_idct(block_dct(grid)) - grid).max()
    ok = err <= 1e-10
    record_criterion(2, "DCT forward/inverse error <= 1e-10 on 1000 blocks", ok, f"max err {err:.2e}")
    assert ok


# 3 ------------------------------------------------------------------------

def test_criterion_03_juniward_oracle():
    cover = compress_gray(natural_patches(1, 64, seed=3)[0], 95)
    fast = juniward_cost(cover)
    slow = juniward_cost_bruteforce(cover)
    rel = np.abs(fast.rho_plus - slow.rho_plus) / np.abs(slow.rho_plus)
    ok = rel.max() <= 1e-8 and np.array_equal(fast.rho_plus, fast.rho_minus)
    record_criterion(3, "J-UNIWARD vs brute force on 64x64, rel err <= 1e-8", ok, f"max rel err {rel.max():.2e}")
    assert ok


# 4 ------------------------------------------------------------------------

def test_criterion_04_gradient_correctness():
    start = time.perf_counter()
    worst, kinks = 0.0, 0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        cover = random_coefficients(rng, 32, 32, qf=90, scale=8)
        errs, k = fd_check(random_model(seed), cover, step=1e-3, fallback=1e-6, top=100)
        assert len(errs) == 100
        worst, kinks = max(worst, errs.max()), kinks + k
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 120
    record_criterion(4, "coefficient gradient vs central FD, 100 largest x 5 seeds, rel err <= 1e-4, < 2 min",
                     ok, f"worst {worst:.2e}, {kinks} kink entries re-stepped, {elapsed:.1f} s")
    assert ok


# 5 ------------------------------------------------------------------------

def test_criterion_05_payload_match():
    rng = np.random.default_rng(5)
    worst_match, worst_scale = 0.0, 0.0
    for _ in range(50):
        rho = np.exp(rng.uniform(np.log(0.1), np.log(100), size=(64, 64)))
        cost = CostMap(rho, rho * np.exp(rng.uniform(-0.5, 0.5, size=rho.shape)))
        m = rng.uniform(0.05, 1.0) * rho.size
        lam = solve_lambda(cost, m)
        worst_match = max(worst_match, abs(expected_payload(cost, lam) - m) / m)
        k = float(np.exp(rng.uniform(-5, 5)))
        a = change_probabilities(cost, lam)
        b = change_probabilities(cost.scaled(k), solve_lambda(cost.scaled(k), m))
        worst_scale = max(worst_scale, np.abs(a[0] - b[0]).max(), np.abs(a[1] - b[1]).max())
    ok = worst_match <= 1e-3 and worst_scale <= 1e-9
    record_criterion(5, "payload |sum H3 - m|/m <= 1e-3 on 50 maps; scaling invariance <= 1e-9", ok,
                     f"match {worst_match:.1e}, scaling {worst_scale:.1e}")
    assert ok


# 6 ------------------------------------------------------------------------

def exhaustive_minimum(bits, cost, message, h):
    m, n = len(message), len(bits)
    H = parity_check_matrix(m, n // m, h).astype(np.int64)
    ys = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
    feasible = ((ys @ H.T) % 2 == message).all(axis=1)
    costs = ((ys != bits) * cost).sum(axis=1)
    return costs[feasible].min()


def test_criterion_06_stc():
    rng = np.random.default_rng(6)
    roundtrip_failures = 0
    for _ in range(1000):
        cover = random_coefficients(rng, 32, 32, qf=90, scale=10)
        rho = rng.uniform(0.5, 5, cover.coeffs.shape)
        msg = rng.integers(0, 2, size=int(rng.integers(1, 200))).astype(np.uint8)
        key = int(rng.integers(0, 2**63))
        _, stego = stc_embed(cover, CostMap(rho, rho.copy()), msg, key)
        roundtrip_failures += not np.array_equal(stc_extract(stego, key, len(msg)), msg)
    instances = opt_failures = 0
    for m in range(1, 17):
        for w in range(1, 16 // m + 1):
            for _ in range(4):
                n = m * w
                bits = rng.integers(0, 2, n).astype(np.uint8)
                cost = rng.uniform(0.1, 5, n)
                message = rng.integers(0, 2, m).astype(np.uint8)
                _, total = stc_viterbi(bits, cost, message, h=3)
                opt_failures += not np.isclose(total, exhaustive_minimum(bits, cost, message, 3),
                                               rtol=0, atol=1e-12)
                instances += 1
    ok = roundtrip_failures == 0 and opt_failures == 0
    record_criterion(6, "STC roundtrip on 1000 messages; Viterbi == exhaustive (n <= 16, h = 3)", ok,
                     f"{roundtrip_failures} roundtrip failures, {opt_failures}/{instances} non-optimal")
    assert ok


# 7 ------------------------------------------------------------------------

def test_criterion_07_update_arithmetic(covers64):
    one = lambda v: np.array([[v]], dtype=float)  # noqa: E731
    sel = SelectionMask(np.array([[True]]), 1)
    checks = []
    q = CostMap(one(2.0), one(2.0))
    r = update_costs(q, one(-0.7), sel, 2.5)
    checks.append((r.rho_plus[0, 0], r.rho_minus[0, 0]) == (3.0, 4.5))
    r = update_costs(q, one(0.7), sel, 2.5)
    checks.append((r.rho_plus[0, 0], r.rho_minus[0, 0]) == (4.5, 3.0))
    r = update_costs(q, one(0.7), SelectionMask(np.array([[False]]), 0), 2.5)
    checks.append((r.rho_plus[0, 0], r.rho_minus[0, 0]) == (2.0, 2.0))
    checks.append(temporary_cost(one(-0.3), sel, 2.5) == (one(1.0), one(2.5)))
    checks.append(temporary_cost(one(0.3), sel, 2.5) == (one(2.5), one(1.0)))
    checks.append(temporary_cost(one(0.3), SelectionMask(np.array([[False]]), 0), 2.5) == (one(0), one(0)))
    c = compose_cost(CostMap(one(3.0), one(3.0)), [(one(1.0), one(2.5)), (one(0.0), one(0.0))], T=2)
    checks.append((c.rho_plus[0, 0], c.rho_minus[0, 0]) == (4.0, 5.5))
    # cross-stage: real gradients of a trained-shape model on real covers
    cross = True
    for i, cover in enumerate(covers64[:4]):
        rho0 = juniward_cost(cover)
        q, tmps = rho0.copy(), []
        for t in range(3):
            g = analyzer.coefficient_gradient(random_model(10 * i + t), cover)
            mask = select_top_p(g, 0.5)
            q = update_costs(q, g, mask, 2.5)
            tmps.append(temporary_cost(g, mask, 2.5))
        out = compose_cost(rho0, tmps, T=3)
        cross &= np.array_equal(out.rho_plus, q.rho_plus) and np.array_equal(out.rho_minus, q.rho_minus)
    ok = all(checks) and cross
    record_criterion(7, "update examples exact; training updates == generation composition", ok,
                     f"{sum(checks)}/{len(checks)} examples, cross-stage {'exact' if cross else 'differs'}")
    assert ok


# 8 ------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.floats(0.01, 1.0), st.floats(1.01, 6.0))
def _structural(seed, rounds, p, alpha):
    rng = np.random.default_rng(seed)
    rho0 = rng.uniform(0.1, 20, size=(6, 8))
    q = CostMap(rho0, rho0.copy())
    for _ in range(rounds):
        g = rng.normal(size=rho0.shape) * (rng.random(rho0.shape) < 0.85)
        mask = select_top_p(g, p)
        assert mask.selected_count == int(mask.mask.sum()) == min(int(np.floor(p * g.size + 0.5)),
                                                                  int(np.count_nonzero(g)))
        tp, tm = temporary_cost(g, mask, alpha)
        assert set(zip(tp.reshape(-1), tm.reshape(-1))) <= {(0.0, 0.0), (1.0, alpha), (alpha, 1.0)}
        new = update_costs(q, g, mask, alpha)
        assert (new.rho_plus >= q.rho_plus).all() and (new.rho_minus >= q.rho_minus).all()
        q = new
        k = np.abs(q.rho_plus - q.rho_minus) / (alpha - 1)
        assert np.allclose(k, np.round(k), rtol=0, atol=1e-6)


def test_criterion_08_structural_invariants():
    try:
        _structural()
        ok, detail = True, "200 hypothesis examples"
    except AssertionError as exc:
        ok, detail = False, str(exc)[:120]
    record_criterion(8, "monotone costs, (alpha-1) asymmetry, selected count, tmp-pair membership", ok, detail)
    assert ok


# 9 ------------------------------------------------------------------------

def test_criterion_09_directional_security(tmp_path):
    """Scaled stand-in for the full-size detection table.

    Protocol (fixed before any run): 256 natural 64x64 patches at QF 95;
    the first 128 train the T = 4 chain (p = 0.5, alpha = 2.5, 0.4 bpnz,
    default analyzer settings); the other 128 are embedded both with plain
    J-UNIWARD and through the chain using the same embedding seed; a fresh
    analyzer per stego set is trained on a fixed half of those pairs and
    scored on the other half.
    """
    start = time.perf_counter()
    covers = [compress_gray(x, 95) for x in natural_patches(256, 64, seed=0)]
    ids = [f"n{i:03d}" for i in range(256)]
    chain_covers, gen_covers = covers[:128], covers[128:]
    cfg = LoopConfig(T=4, p=0.5, alpha=2.5, payload_bpnz=0.4, seed=0)
    chain = run_training(chain_covers, ids[:128], cfg, tmp_path / "run")
    req = EmbedRequest(0.4, seed=1)
    baseline, enhanced, audits = [], [], []
    for cid, cover in zip(ids[128:], gen_covers):
        baseline.append(apply_changes(cover, simulate_embedding(cover, juniward_cost(cover), req, cid)))
        res = generate_stego(cover, chain, req, cid)
        enhanced.append(res.stego)
        audits.append(res.masks)
    split = metrics.split_pairs(128, 0.5, seed=0)
    base = metrics.evaluate_security(gen_covers, baseline, split, TrainConfig())
    enh = metrics.evaluate_security(gen_covers, enhanced, split, TrainConfig())
    rows = advloop.read_metrics(tmp_path / "run")
    hist = metrics.modification_frequency_histogram(audits, 4)
    elapsed = time.perf_counter() - start
    security_ok = enh["test_acc"] <= base["test_acc"] + 0.02
    trend_ok = rows[-1][2] <= rows[0][2]
    ok = security_ok and trend_ok and elapsed <= 900 and hist.sum() == 128 * 64 * 64
    record_criterion(9, "enhanced acc <= J-UNIWARD acc + 2 pp; val-acc trend non-increasing; <= 15 min", ok,
                     f"J-UNIWARD {base['test_acc']:.4f}, enhanced {enh['test_acc']:.4f}, "
                     f"val_acc {[round(r[2], 4) for r in rows]}, {elapsed:.0f} s")
    assert ok


# 10 -----------------------------------------------------------------------

def test_criterion_10_metrics_and_determinism(covers64, tmp_path):
    one = lambda v: np.array([[v]], dtype=float)  # noqa: E731
    rho0 = CostMap(one(2.0), one(2.0))
    eq6 = (metrics.relative_modification_rate(rho0, rho0) == 0.0
           and metrics.relative_modification_rate(rho0, CostMap(one(3.0), one(4.5))) == 0.875)
    ids = [f"d{i}" for i in range(8)]
    cfg = LoopConfig(T=2, seed=42, train=TrainConfig(epochs=3, channels=8))
    digests, mass = [], True
    for name in ("first", "second"):
        run_training(covers64, ids, cfg, tmp_path / name)
        digests.append(tree_digest(tmp_path / name))
        q0 = advloop.load_costs(tmp_path / name, 0, ids)
        qT = advloop.load_costs(tmp_path / name, 2, ids)
        mass &= metrics.training_histogram(q0, qT, 2, cfg.alpha).sum() == 8 * 64 * 64
    ok = eq6 and mass and digests[0] == digests[1]
    record_criterion(10, "rate examples exact; histogram mass conserved; identical seeded run checksums", ok,
                     f"run digest {digests[0][:12]} vs {digests[1][:12]}")
    assert ok
