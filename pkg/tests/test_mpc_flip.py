from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy import stats

from qkdoffload.bitlinalg import BitBlock, DimensionError, syndrome
from qkdoffload.codes import regular_ldpc
from qkdoffload.ldpc import DecoderConfig, Variant, decode_syndrome
from qkdoffload.mpc_flip import (MPC_TABLE_HEADER, CircuitError, Router, Runtime, compare_public,
                                 count_bits, majority_circuit, mpc_bench, mpc_decode, mpc_table_csv,
                                 shared_add, table_row)
from qkdoffload.sharing import Scheme, TripleDealer, TripleExhausted, deal_triples, share

GF2 = Scheme.additive_gf2()


def _rt(P=3, seed=0):
    rng = np.random.default_rng(seed)
    return Runtime(P, TripleDealer(P, rng), Router(P)), rng


def _share_bits(x, P, rng):
    x = np.asarray(x, dtype=np.uint8)
    parts = rng.integers(0, 2, size=(P - 1, *x.shape), dtype=np.uint8)
    return np.concatenate([parts, (x ^ np.bitwise_xor.reduce(parts, axis=0))[None]], axis=0)


def _open(x):
    return np.bitwise_xor.reduce(x, axis=0)


def _to_bits(v, w):
    return ((np.asarray(v)[..., None] >> np.arange(w)) & 1).astype(np.uint8)


def _from_bits(b):
    return (b.astype(np.int64) << np.arange(b.shape[-1])).sum(-1)


def test_and_gate_truth_table():
    rt, rng = _rt()
    x = np.array([0, 0, 1, 1], dtype=np.uint8)
    y = np.array([0, 1, 0, 1], dtype=np.uint8)
    (z,) = rt.and_((_share_bits(x, 3, rng), _share_bits(y, 3, rng)))
    assert _open(z).tolist() == [0, 0, 0, 1]
    assert rt.router.rounds == 1 and rt.and_gates == 4


def test_shared_add_exhaustive():
    w = 4
    rt, rng = _rt()
    a, b = np.meshgrid(np.arange(16), np.arange(16))
    out = shared_add(rt, _share_bits(_to_bits(a, w), 3, rng), _share_bits(_to_bits(b, w), 3, rng))
    assert (_from_bits(_open(out)) == (a + b) % 16).all()


def test_compare_public_exhaustive():
    w = 4
    rt, rng = _rt()
    c, thr = np.meshgrid(np.arange(16), np.arange(1, 16))
    out = compare_public(rt, _share_bits(_to_bits(c, w), 3, rng), thr)
    assert (_open(out) == (c >= thr)).all()


def test_count_bits():
    rt, rng = _rt()
    bits = np.array(list(itertools.product((0, 1), repeat=6)), dtype=np.uint8)
    out = count_bits(rt, _share_bits(bits, 3, rng), 3)
    assert (_from_bits(_open(out)) == bits.sum(1)).all()


@pytest.mark.parametrize("degree", range(1, 8))
def test_majority_exhaustive(degree):
    w = max(1, int(np.ceil(np.log2(degree + 1))))
    rt, rng = _rt()
    bits = np.array(list(itertools.product((0, 1), repeat=degree)), dtype=np.uint8)
    for thr in range(1, degree + 2):
        out = _open(majority_circuit(rt, _share_bits(bits, 3, rng), degree, w + 1, thr))
        assert (out == (bits.sum(1) >= thr)).all()
    default = _open(majority_circuit(rt, _share_bits(bits, 3, rng), degree, w))
    assert (default == (bits.sum(1) > degree // 2)).all()
    assert _open(majority_circuit(rt, _share_bits(np.zeros((1, degree)), 3, rng), degree, w))[0] == 0


def test_majority_bitwidth_too_small():
    rt, rng = _rt()
    with pytest.raises(CircuitError):
        majority_circuit(rt, _share_bits(np.zeros((2, 4)), 3, rng), 4, 2)
    with pytest.raises(DimensionError):
        majority_circuit(rt, _share_bits(np.zeros((2, 4)), 3, rng), 5, 4)


def _equivalence(h, e_vec, cfg, bitwidth, rng, parties=3):
    s = syndrome(e_vec, h)
    sh = share(s.bits, GF2, parties, rng)
    out, m = mpc_decode(sh, h, cfg, parties, bitwidth=bitwidth, rng=rng)
    got = np.bitwise_xor.reduce(np.stack([o.values for o in out]), axis=0)
    want = decode_syndrome(s, h, cfg, early_exit=False).e_hat.bits
    return (got == want).all(), m


@pytest.mark.parametrize("variant", [Variant.GALLAGER_A, Variant.GALLAGER_B])
@pytest.mark.parametrize("bitwidth", [4, 8])
def test_equivalence_n1000(variant, bitwidth, h1000):
    rng = np.random.default_rng(11)
    cfg = DecoderConfig(variant, max_iterations=10)
    for q in (0.0, 0.005, 0.02, 0.1):
        ok, m = _equivalence(h1000, BitBlock.from_bits(rng.random(1000) < q), cfg, bitwidth, rng)
        assert ok
        assert m.rounds >= m.circuit_depth * m.iterations and m.data_bytes > 0


def test_equivalence_small_codes_exhaustive(small_codes):
    rng = np.random.default_rng(12)
    for name, h in small_codes.items():
        for variant in (Variant.GALLAGER_A, Variant.GALLAGER_B):
            cfg = DecoderConfig(variant, max_iterations=6)
            for i in range(min(1 << h.n, 256)):
                e = BitBlock.from_bits((i >> np.arange(h.n)) & 1)
                assert _equivalence(h, e, cfg, 4, rng, parties=2 + i % 3)[0], (name, variant, i)


def test_equivalence_irregular_thresholds():
    rng = np.random.default_rng(13)
    h = regular_ldpc(200, 3, 6, seed=5)
    cfg = DecoderConfig(Variant.GALLAGER_B, max_iterations=8, thresholds=(3, 2))
    for _ in range(5):
        assert _equivalence(h, BitBlock.from_bits(rng.random(200) < 0.03), cfg, 4, rng)[0]


def test_zero_syndrome_gives_zero(h1000):
    rng = np.random.default_rng(14)
    sh = share(np.zeros(500, dtype=np.uint8), GF2, 3, rng)
    out, _ = mpc_decode(sh, h1000, DecoderConfig(Variant.GALLAGER_B), rng=rng)
    assert not np.bitwise_xor.reduce(np.stack([o.values for o in out]), axis=0).any()


def test_depths(h1000):
    rng = np.random.default_rng(15)
    sh = share(np.zeros(500, dtype=np.uint8), GF2, 3, rng)
    cfg = DecoderConfig(Variant.GALLAGER_B, max_iterations=10)
    _, m4 = mpc_decode(sh, h1000, cfg, bitwidth=4, rng=rng)
    _, m8 = mpc_decode(sh, h1000, cfg, bitwidth=8, rng=rng)
    assert m4.circuit_depth == 8 and m8.circuit_depth == 11
    assert m4.rounds == 80 and m8.rounds == 110


def test_metrics_linear_in_iterations_and_block(h1000):
    rng = np.random.default_rng(16)
    sh = share(np.zeros(500, dtype=np.uint8), GF2, 3, rng)
    r = [mpc_decode(sh, h1000, DecoderConfig(Variant.GALLAGER_B, max_iterations=k), rng=rng)[1]
         for k in (2, 4, 6)]
    assert r[1].rounds - r[0].rounds == r[2].rounds - r[1].rounds == 2 * r[0].circuit_depth
    assert r[1].data_bytes - r[0].data_bytes == r[2].data_bytes - r[1].data_bytes
    sizes = []
    for n in (400, 800, 1600):
        h = regular_ldpc(n, 3, 6, seed=1)
        shn = share(np.zeros(h.r, dtype=np.uint8), GF2, 3, rng)
        sizes.append(mpc_decode(shn, h, DecoderConfig(Variant.GALLAGER_B, max_iterations=2), rng=rng)[1])
    assert sizes[1].and_gates == 2 * sizes[0].and_gates and sizes[2].and_gates == 4 * sizes[0].and_gates
    ratio = [s.data_bytes / s.block_size for s in sizes]
    assert max(ratio) / min(ratio) < 1.02


def test_triple_exhaustion(h1000):
    rng = np.random.default_rng(17)
    sh = share(np.zeros(500, dtype=np.uint8), GF2, 3, rng)
    with pytest.raises(TripleExhausted):
        mpc_decode(sh, h1000, DecoderConfig(Variant.GALLAGER_B), triples=deal_triples(100, 3, rng))


def test_input_validation(h1000):
    rng = np.random.default_rng(18)
    sh = share(np.zeros(500, dtype=np.uint8), GF2, 3, rng)
    with pytest.raises(CircuitError):
        mpc_decode(sh, h1000, DecoderConfig(), rng=rng)
    with pytest.raises(DimensionError):
        mpc_decode(sh[:2], h1000, DecoderConfig(Variant.GALLAGER_B), parties=3, rng=rng)
    with pytest.raises(DimensionError):
        mpc_decode(share(np.zeros(10, dtype=np.uint8), GF2, 3, rng), h1000,
                   DecoderConfig(Variant.GALLAGER_B), rng=rng)
    with pytest.raises(CircuitError):
        mpc_decode(share(np.zeros(500), Scheme.additive_gfp(), 3, rng), h1000,
                   DecoderConfig(Variant.GALLAGER_B), rng=rng)
    with pytest.raises(CircuitError):
        mpc_decode(sh, h1000, DecoderConfig(Variant.GALLAGER_B), bitwidth=1, rng=rng)


def _view(s_bits, h, rng, runs):
    """Features of party 0's view: own input share plus everything it received."""
    cfg = DecoderConfig(Variant.GALLAGER_B, max_iterations=1)
    cells, weights = [], []
    for _ in range(runs):
        router = Router(3, record_party=0)
        sh = share(s_bits, GF2, 3, rng)
        mpc_decode(sh, h, cfg, rng=rng, router=router)
        flat = np.concatenate([sh[0].values] + [t.ravel() for t in router.transcript])
        cells.append(int(flat[0]) + 2 * int(flat[600]) + 4 * int(flat[5000]) + 8 * int(flat[-1]))
        weights.append(int(flat.sum()))
    return np.bincount(cells, minlength=16), np.array(weights)


def test_single_party_view_indistinguishable(h1000):
    rng = np.random.default_rng(19)
    s0 = np.zeros(500, dtype=np.uint8)
    s1 = syndrome(BitBlock.from_bits(rng.random(1000) < 0.05), h1000).bits
    c0, w0 = _view(s0, h1000, rng, 300)
    c1, w1 = _view(s1, h1000, rng, 300)
    assert stats.chi2_contingency(np.vstack([c0, c1]))[1] > 0.001
    assert stats.ks_2samp(w0, w1).pvalue > 0.001


def test_router_accounting():
    r = Router(3)
    r.open(np.zeros((3, 17), dtype=np.uint8))
    assert r.rounds == 1 and r.data_bytes == 3 * 2 * 3


def test_bench_table():
    rows = mpc_bench(block_sizes=(200,), bitwidths=(4, 8), iterations=3)
    csv_text = mpc_table_csv(rows)
    lines = csv_text.strip().split("\n")
    assert lines[0] == ",".join(MPC_TABLE_HEADER)
    assert len(lines) == 3
    assert rows[0].circuit_depth == 8 and rows[0].rounds == 8
    assert rows[1].circuit_depth == 11


def test_table_row_is_per_iteration(h1000):
    rng = np.random.default_rng(20)
    sh = share(np.zeros(500, dtype=np.uint8), GF2, 3, rng)
    _, m = mpc_decode(sh, h1000, DecoderConfig(Variant.GALLAGER_B, max_iterations=4), rng=rng)
    row = table_row(m)
    assert row.rounds == m.rounds // 4
    assert row.data_mb == pytest.approx(m.data_bytes / 4e6)
    assert row.bitrate_at_10iter == pytest.approx(1000 / (10 * m.wall_time / 4))
