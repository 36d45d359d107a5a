from __future__ import annotations

import numpy as np
import pytest

from qkdoffload.bitlinalg import BitBlock, DimensionError, syndrome
from qkdoffload.channel import ChannelParams, KeyExhausted, KeyStore, substream, transmit
from qkdoffload.keyrate import capacity_enc, secret_capacity
from qkdoffload.ldpc import DecodeResult, DecoderConfig
from qkdoffload.rem_ir import (IrAbort, LocalDecoder, MsgKind, eve_dr_invariance, eve_rr_attack,
                               run_rem_ir, run_rem_ir_variant, run_rr_encrypted, run_rr_offload)

CFG = DecoderConfig(qber_prior=0.02)


class TamperingDecoder:
    """Returns an honest answer with some bits flipped."""

    def __init__(self, h, cfg, flips, name="decoder-evil"):
        self.inner = LocalDecoder(h, cfg)
        self.flips = flips
        self.name = name

    def decode(self, s_e):
        res = self.inner.decode(s_e)
        return DecodeResult(res.e_hat.flip(*self.flips), res.converged, res.iterations, res.residual)


class InflatingDecoder:
    """Adds a codeword to the answer: the syndrome still matches but the weight explodes."""

    def __init__(self, h, cfg, codeword, name="decoder-inflate"):
        self.inner = LocalDecoder(h, cfg)
        self.codeword = codeword
        self.name = name

    def decode(self, s_e):
        res = self.inner.decode(s_e)
        return DecodeResult(res.e_hat ^ self.codeword, res.converged, res.iterations, res.residual)


def _keys(h, e, seed):
    k_a = BitBlock.random(h.n, substream(seed, "test", "alice"))
    k_b, k_e, e_vec = transmit(k_a, ChannelParams(e, 0.1, seed))
    return k_a, k_b, k_e, e_vec


def test_zero_error(h1000):
    k_a = BitBlock.random(1000, np.random.default_rng(0))
    k, tr = run_rem_ir(k_a, k_a, h1000, CFG, LocalDecoder(h1000, CFG))
    assert k == k_a
    assert tr.find(MsgKind.ERROR_SYNDROME).weight() == 0
    assert tr.find(MsgKind.ERROR_VECTOR).weight() == 0


def test_protocol_messages_and_ledger(h1000):
    k_a, k_b, _, _ = _keys(h1000, 0.02, 1)
    k, tr = run_rem_ir(k_a, k_b, h1000, CFG, LocalDecoder(h1000, CFG))
    assert k == k_a
    kinds = [e.message.kind for e in tr.entries]
    assert kinds == [MsgKind.SYNDROME_A, MsgKind.ERROR_SYNDROME, MsgKind.ERROR_VECTOR]
    assert tr.find(MsgKind.ERROR_SYNDROME) == syndrome(k_a ^ k_b, h1000)
    assert tr.ledger.total == h1000.r + h1000.r + h1000.n == tr.public_bits()
    assert tr.ledger.novel_total == h1000.r


def test_success_rate(h1000):
    dec = LocalDecoder(h1000, CFG)
    ok = 0
    for t in range(100):
        k_a, k_b, _, _ = _keys(h1000, 0.02, 100 + t)
        try:
            k, _ = run_rem_ir(k_a, k_b, h1000, CFG, dec)
        except IrAbort:
            continue
        assert k == k_a
        ok += 1
    assert ok >= 95


def test_dimension_check(h1000):
    with pytest.raises(DimensionError):
        run_rem_ir(BitBlock.zeros(999), BitBlock.zeros(999), h1000, CFG, LocalDecoder(h1000, CFG))


def test_tampered_answer_aborts(h1000):
    rng = np.random.default_rng(3)
    k_a, k_b, _, _ = _keys(h1000, 0.02, 2)
    aborted = 0
    trials = 1000
    for _ in range(trials):
        flips = rng.choice(1000, size=int(rng.integers(1, 6)), replace=False).tolist()
        with pytest.raises(IrAbort) as exc:
            run_rem_ir(k_a, k_b, h1000, CFG, TamperingDecoder(h1000, CFG, flips))
        assert exc.value.cause == "syndrome_mismatch"
        assert exc.value.decoder == "decoder-evil"
        aborted += 1
    assert aborted / trials >= 0.999


def test_inflated_answer_aborts_on_weight(h1000):
    # adding a codeword keeps the syndrome but pushes the weight past the bound
    dense = h1000.to_dense()
    cw = _find_codeword(dense)
    assert syndrome(cw, h1000).weight() == 0 and cw.weight() > 42
    k_a, k_b, _, _ = _keys(h1000, 0.02, 4)
    with pytest.raises(IrAbort) as exc:
        run_rem_ir(k_a, k_b, h1000, CFG, InflatingDecoder(h1000, CFG, cw))
    assert exc.value.cause == "weight_exceeded"


def _find_codeword(dense):
    """A nonzero codeword by Gaussian elimination over GF(2)."""
    m = dense.copy() % 2
    r, n = m.shape
    pivots = []
    row = 0
    for c in range(n):
        piv = next((i for i in range(row, r) if m[i, c]), None)
        if piv is None:
            continue
        m[[row, piv]] = m[[piv, row]]
        for i in range(r):
            if i != row and m[i, c]:
                m[i] ^= m[row]
        pivots.append(c)
        row += 1
        if row == r:
            break
    free = next(c for c in range(n) if c not in pivots)
    x = np.zeros(n, dtype=np.uint8)
    x[free] = 1
    for i, c in enumerate(pivots):
        x[c] = m[i, free]
    return BitBlock.from_bits(x)


def test_nonconvergence_aborts(h1000):
    k_a, k_b, _, _ = _keys(h1000, 0.2, 5)
    with pytest.raises(IrAbort) as exc:
        run_rem_ir(k_a, k_b, h1000, CFG, LocalDecoder(h1000, CFG))
    assert exc.value.cause in ("nonconvergence", "syndrome_mismatch", "weight_exceeded")
    assert exc.value.transcript.entries[-1].message.kind is MsgKind.ABORT


def test_multi_decoder_race_first_accept_wins(h1000):
    k_a, k_b, _, _ = _keys(h1000, 0.02, 6)
    decs = [TamperingDecoder(h1000, CFG, [1], name="decoder-bad"), LocalDecoder(h1000, CFG, name="decoder-good")]
    k, tr = run_rem_ir(k_a, k_b, h1000, CFG, decs)
    assert k == k_a


def test_variant_equivalence(h1000):
    dec = LocalDecoder(h1000, CFG)
    for t in range(10):
        k_a, k_b, _, _ = _keys(h1000, 0.02, 200 + t)
        k1, tr1 = run_rem_ir(k_a, k_b, h1000, CFG, dec)
        k2, tr2 = run_rem_ir_variant(k_a, k_b, h1000, CFG, dec)
        assert k1 == k2 == k_a
        s_a = tr2.find(MsgKind.SYNDROME_A)
        s_b = tr2.find(MsgKind.SYNDROME_B)
        # s_B is derivable from the main protocol's public data, so novel leakage agrees
        assert s_b == tr1.find(MsgKind.SYNDROME_A) ^ tr1.find(MsgKind.ERROR_SYNDROME)
        assert tr1.ledger.novel_total == tr2.ledger.novel_total
        assert s_a == tr1.find(MsgKind.SYNDROME_A)


def test_variant_zero_error(h1000):
    k_a = BitBlock.random(1000, np.random.default_rng(8))
    k, tr = run_rem_ir_variant(k_a, k_a, h1000, CFG, LocalDecoder(h1000, CFG))
    assert k == k_a and tr.find(MsgKind.ERROR_VECTOR).weight() == 0


def test_invariance_examples(h1000):
    rng = np.random.default_rng(9)
    assert eve_dr_invariance(BitBlock.zeros(1000), h1000, 20, CFG, rng).holds
    res = eve_dr_invariance(BitBlock.from_bits(rng.random(1000) < 0.02), h1000, 100, CFG, rng)
    assert res.holds and res.distinct_views == 1 and res.trials == 100


def test_rr_attack_noiseless_eve(h1000):
    stats = eve_rr_attack(ChannelParams(0.03, 0.0, 1), h1000, DecoderConfig(qber_prior=0.03), 10)
    assert stats.recovery_rate == 1.0


def test_dr_control_sweep(h1000):
    cfg = DecoderConfig(qber_prior=0.03)
    assert eve_rr_attack(ChannelParams(0.03, 0.01, 2), h1000, cfg, 20, "dr").recovery_rate >= 0.9
    assert eve_rr_attack(ChannelParams(0.03, 0.25, 2), h1000, cfg, 20, "dr").recovery_rate <= 0.05


def test_rr_offload_correct_key(h1000):
    k_a, k_b, _, _ = _keys(h1000, 0.02, 7)
    k, tr = run_rr_offload(k_a, k_b, h1000, CFG, LocalDecoder(h1000, CFG))
    assert k == k_b and tr.find(MsgKind.SYNDROME_B) == syndrome(k_b, h1000)


def test_rr_encrypted(h1000):
    k_a, k_b, _, _ = _keys(h1000, 0.02, 8)
    store = KeyStore.random(600, np.random.default_rng(1))
    k, tr, bal = run_rr_encrypted(k_a, k_b, h1000, CFG, LocalDecoder(h1000, CFG), store,
                                  ChannelParams(0.02, 0.01))
    assert k == k_b
    assert store.consumed == h1000.r
    assert tr.find(MsgKind.SYNDROME_B) is None
    assert bal == pytest.approx(1000 * secret_capacity(0.02, 0.01) - 500)
    assert bal < 0 and capacity_enc(0.02, 0.01) < 0
    with pytest.raises(KeyExhausted):
        run_rr_encrypted(k_a, k_b, h1000, CFG, LocalDecoder(h1000, CFG), store)


def test_rr_encrypted_zero_error(h1000):
    k_a = BitBlock.random(1000, np.random.default_rng(2))
    store = KeyStore.random(500, np.random.default_rng(3))
    k, _, _ = run_rr_encrypted(k_a, k_a, h1000, CFG, LocalDecoder(h1000, CFG), store)
    assert k == k_a and store.consumed == 500


def test_rr_encrypted_blinds_eve(h1000):
    cfg = DecoderConfig(qber_prior=0.03)
    stats = eve_rr_attack(ChannelParams(0.03, 0.01, 3), h1000, cfg, 20, "rr_encrypted")
    assert stats.recovery_rate <= 0.05
    assert stats.protocol_success_rate == 1.0
