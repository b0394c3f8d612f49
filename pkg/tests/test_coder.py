import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_coefficients
from stegadv.coder import (LOG2_3, ChangeMap, EmbedRequest, PayloadInfeasible, WetColumnError, apply_changes,
                           change_probabilities, embed, expected_payload, parity_check_matrix,
                           simulate_embedding, solve_lambda, stc_embed, stc_extract, stc_syndrome,
                           stc_viterbi)
from stegadv.jpegio import CoefficientImage, count_nzac, ijg_quant_table
from stegadv.juniward import WET_COST, CostMap, juniward_cost


def flat_cost(values):
    v = np.asarray(values, dtype=np.float64).reshape(1, -1)
    return CostMap(v, v.copy())


def test_gibbs_closed_form():
    p_plus, p_minus = change_probabilities(flat_cost([1.0]), 1.0)
    e = math.exp(-1)
    p = e / (1 + 2 * e)
    h = -2 * p * math.log2(p) - (1 - 2 * p) * math.log2(1 - 2 * p)
    assert abs(p - 0.21194) < 1e-5 and abs(h - 1.4071) < 1e-4
    assert p_plus[0, 0] == pytest.approx(p, abs=1e-15) and p_minus[0, 0] == pytest.approx(p, abs=1e-15)
    assert expected_payload(flat_cost([1.0]), 1.0) == pytest.approx(h, rel=1e-12)


def test_max_entropy_limit():
    cost = flat_cost([5.0])
    lam = solve_lambda(cost, LOG2_3)
    p_plus, p_minus = change_probabilities(cost, lam)
    assert lam < 1e-3
    assert p_plus[0, 0] == pytest.approx(1 / 3, abs=1e-3) and p_minus[0, 0] == pytest.approx(1 / 3, abs=1e-3)


def test_large_lambda_kills_payload():
    cost = flat_cost(np.linspace(0.5, 3, 50))
    assert expected_payload(cost, 1e4) < 1e-100


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.5))
def test_payload_match(seed, rate):
    rng = np.random.default_rng(seed)
    rho = np.exp(rng.uniform(np.log(0.1), np.log(100), size=(16, 16)))
    cost = CostMap(rho, rho * rng.uniform(0.5, 2, size=rho.shape))
    m = rate * rho.size
    lam = solve_lambda(cost, m)
    assert abs(expected_payload(cost, lam) - m) / m <= 1e-3


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1000))
def test_scaling_invariance(seed, k):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.1, 100, size=(16, 16))
    cost = CostMap(rho, rho.copy())
    m = 0.4 * rho.size
    a = change_probabilities(cost, solve_lambda(cost, m))
    b = change_probabilities(cost.scaled(k), solve_lambda(cost.scaled(k), m))
    assert max(np.abs(a[0] - b[0]).max(), np.abs(a[1] - b[1]).max()) <= 1e-9


def test_infeasible_payload():
    with pytest.raises(PayloadInfeasible, match="payload infeasible"):
        solve_lambda(flat_cost([1.0, 1.0]), 4.0)
    with pytest.raises(ValueError):
        EmbedRequest(2.0)


def test_simulation_deterministic_and_ternary(cover64):
    cost = juniward_cost(cover64)
    req = EmbedRequest(0.4, seed=3)
    a = simulate_embedding(cover64, cost, req, "img")
    b = simulate_embedding(cover64, cost, req, "img")
    c = simulate_embedding(cover64, cost, req, "other")
    assert np.array_equal(a.changes, b.changes) and not np.array_equal(a.changes, c.changes)
    assert set(np.unique(a.changes)) <= {-1, 0, 1}
    assert a.realized_bits == pytest.approx(0.4 * count_nzac(cover64), rel=1e-3)


def test_simulated_payload_over_covers(covers64):
    for cover in covers64[:5]:
        m = 0.4 * count_nzac(cover)
        ch = simulate_embedding(cover, juniward_cost(cover), EmbedRequest(0.4, seed=1))
        assert abs(ch.realized_bits - m) / m <= 0.01


def test_wet_direction_never_sampled():
    n = 1000
    rho_plus = np.full((n, n), WET_COST)
    rho_minus = np.full((n, n), 1.0)
    cover = CoefficientImage(np.zeros((1000, 1000), np.int32), ijg_quant_table(90), 90)
    cover.coeffs[:, 1::8] = 1  # plenty of nonzero AC for the payload
    ch = simulate_embedding(cover, CostMap(rho_plus, rho_minus), EmbedRequest(0.5, seed=9))
    assert not (ch.changes > 0).any() and (ch.changes < 0).any()


def test_apply_changes_examples(cover64):
    zero = np.zeros(cover64.coeffs.shape, np.int8)
    assert apply_changes(cover64, zero) == cover64
    one = zero.copy()
    one[5, 6] = 1
    out = apply_changes(cover64, one)
    assert np.count_nonzero(out.coeffs != cover64.coeffs) == 1
    assert apply_changes(out, -one) == cover64
    bad = CoefficientImage(np.full((8, 8), 1023, np.int32), ijg_quant_table(90), 90)
    with pytest.raises(ValueError):
        apply_changes(bad, np.ones((8, 8), np.int8))


def test_changemap_bytes(rng):
    ch = ChangeMap(rng.integers(-1, 2, size=(8, 16)).astype(np.int8))
    assert np.array_equal(ChangeMap.from_bytes(ch.to_bytes()).changes, ch.changes)


# --------------------------------------------------------------------------
# STC

def exhaustive_min(bits, cost, message, h):
    m, n = len(message), len(bits)
    H = parity_check_matrix(m, n // m, h)
    best = math.inf
    for y in itertools.product((0, 1), repeat=n):
        y = np.array(y, dtype=np.uint8)
        if np.array_equal(H @ y % 2, message):
            best = min(best, float(cost[y != bits].sum()))
    return best


@pytest.mark.parametrize("m,w", [(1, 5), (2, 3), (3, 4), (4, 2), (5, 3), (8, 2)])
def test_viterbi_matches_exhaustive(m, w, rng):
    for _ in range(8):
        n = m * w
        bits = rng.integers(0, 2, n).astype(np.uint8)
        cost = rng.uniform(0.1, 5, n)
        message = rng.integers(0, 2, m).astype(np.uint8)
        y, total = stc_viterbi(bits, cost, message, h=3)
        assert np.array_equal(stc_syndrome(y, m, 3), message)
        assert total == pytest.approx(float(cost[y != bits].sum()), abs=1e-12)
        assert total == pytest.approx(exhaustive_min(bits, cost, message, 3), abs=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 8), st.integers(1, 6))
def test_parity_matrix_agrees_with_syndrome(seed, m, w, h):
    y = np.random.default_rng(seed).integers(0, 2, m * w).astype(np.uint8)
    assert np.array_equal(parity_check_matrix(m, w, h) @ y % 2, stc_syndrome(y, m, h))


def test_stc_roundtrip_and_locality(cover64, rng):
    cost = juniward_cost(cover64)
    for trial in range(20):
        msg = rng.integers(0, 2, size=int(rng.integers(1, 800))).astype(np.uint8)
        key = int(rng.integers(0, 2**63))
        changes, stego = stc_embed(cover64, cost, msg, key)
        assert np.array_equal(stc_extract(stego, key, len(msg)), msg)
        assert set(np.unique(changes.changes)) <= {-1, 0, 1}
    # one LSB flip touches at most h syndrome bits
    flipped = stego.copy()
    pos = np.flatnonzero(changes.changes == 0)[0]
    flipped.coeffs.reshape(-1)[pos] += 1
    diff = stc_extract(flipped, key, len(msg)) != msg
    assert diff.sum() <= 10


def test_stc_zero_message_and_wrong_key(cover64, rng):
    cost = juniward_cost(cover64)
    changes, stego = stc_embed(cover64, cost, np.zeros(0, np.uint8), 5)
    assert stego == cover64 and not changes.changes.any()
    msg = rng.integers(0, 2, 400).astype(np.uint8)
    _, stego = stc_embed(cover64, cost, msg, 11)
    assert all(not np.array_equal(stc_extract(stego, 11 + k, 400), msg) for k in range(1, 101))


def test_stc_chooses_cheaper_direction(rng):
    img = random_coefficients(rng, 16, 16)
    rp = rng.uniform(1, 2, size=(16, 16))
    rm = rp + rng.choice([-0.5, 0.5], size=rp.shape)
    changes, _ = stc_embed(img, CostMap(rp, rm), rng.integers(0, 2, 40).astype(np.uint8), 3)
    nz = changes.changes != 0
    assert (np.where(changes.changes[nz] > 0, rp[nz] <= rm[nz], rm[nz] < rp[nz])).all()


def test_stc_errors(rng):
    img = random_coefficients(rng, 8, 8)
    wet = CostMap(np.full((8, 8), WET_COST), np.full((8, 8), WET_COST))
    with pytest.raises(WetColumnError, match="wet column"):
        stc_embed(img, wet, np.ones(8, np.uint8), 1)
    with pytest.raises(ValueError, match="too long"):
        stc_embed(img, CostMap(np.ones((8, 8)), np.ones((8, 8))), np.ones(60, np.uint8), 1)


def test_embed_modes(cover64):
    cost = juniward_cost(cover64)
    sim = embed(cover64, cost, EmbedRequest(0.2, 1, "simulate"), "a")
    stc = embed(cover64, cost, EmbedRequest(0.2, 1, "stc"), "a")
    assert sim.changes.shape == stc.changes.shape == cover64.coeffs.shape
    assert stc.realized_bits == round(0.2 * count_nzac(cover64))
