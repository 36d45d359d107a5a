"""Acceptance gate: one test per criterion, each printing a single pass/fail line."""
from __future__ import annotations

import json
import time
from pathlib import Path

import mpmath
import numpy as np
from scipy import stats

from qkdoffload.bitlinalg import (BitBlock, ToeplitzSeed, syndrome, toeplitz_apply_fast,
                                  toeplitz_apply_naive)
from qkdoffload.channel import ChannelParams, KeyStore, substream, transmit
from qkdoffload.codes import regular_ldpc
from qkdoffload.harness import load_scenario, run_scenario
from qkdoffload.keyrate import binary_entropy, capacity_enc, secret_capacity, zero_crossing
from qkdoffload.ldpc import (DecoderConfig, Variant, Verdict, decode_syndrome,
                             verify_error_vector, weight_bound)
from qkdoffload.mpc_flip import Router, mpc_decode
from qkdoffload.rem_ir import IrAbort, LocalDecoder, eve_dr_invariance, eve_rr_attack, run_rem_ir
from qkdoffload.rem_pa import ConfirmVerdict, PaPlan, confirm, pa_local, run_rem_pa
from qkdoffload.sharing import Scheme, share

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
GF2 = Scheme.additive_gf2()


def test_criterion_1_rem_ir_correctness(h1000, verdict):
    cfg = DecoderConfig(qber_prior=0.02)
    dec = LocalDecoder(h1000, cfg)
    ok = wrong = 0
    t0 = time.perf_counter()
    for b in range(200):
        k_a = BitBlock.random(1000, substream(2024, "acceptance-1", b))
        k_b, _, _ = transmit(k_a, ChannelParams(0.02, 0.1, 2024), session=b)
        try:
            k, _ = run_rem_ir(k_a, k_b, h1000, cfg, dec)
        except IrAbort:
            continue
        ok += 1
        wrong += k != k_a
    elapsed = time.perf_counter() - t0
    verdict(1, "REM-IR correctness", ok >= 190 and wrong == 0 and elapsed < 60,
            f"success {ok}/200, mismatched keys {wrong}, {elapsed:.1f} s")


def test_criterion_2_dr_invariance(h1000, verdict):
    rng = np.random.default_rng(2)
    cfg = DecoderConfig(qber_prior=0.02)
    violations = 0
    for i in range(50):
        e_vec = BitBlock.from_bits(rng.random(1000) < rng.uniform(0.0, 0.05))
        res = eve_dr_invariance(e_vec, h1000, 100, cfg, rng)
        violations += not res.holds
    verdict(2, "decoder view depends only on the error vector", violations == 0,
            f"50 error vectors x 100 keys, {violations} violations")


def test_criterion_3_reverse_reconciliation_attack(h1000, verdict):
    p = ChannelParams(0.03, 0.01, 3)
    cfg = DecoderConfig(qber_prior=0.03)
    rr = eve_rr_attack(p, h1000, cfg, 100, "rr")
    enc = eve_rr_attack(p, h1000, cfg, 100, "rr_encrypted")
    c_enc = capacity_enc(0.03, 0.01)
    ok = rr.recovery_rate >= 0.99 and enc.recovery_rate <= 0.05 and c_enc < 0
    verdict(3, "reverse-reconciliation attack", ok,
            f"rr recovery {rr.recovery_rate:.2f}, encrypted recovery {enc.recovery_rate:.2f}, "
            f"C_s-enc {c_enc:.4f}")


def _hb_mp(p):
    p = mpmath.mpf(p)
    if p == 0 or p == 1:
        return mpmath.mpf(0)
    return -p * mpmath.log(p, 2) - (1 - p) * mpmath.log(1 - p, 2)


def test_criterion_4_capacity_formulas(verdict):
    mpmath.mp.dps = 40
    grid = np.linspace(0.0, 0.5, 100)
    worst = worst_id = 0.0
    for e in grid:
        hb_e = _hb_mp(e)
        for d in grid:
            hb_c = _hb_mp(mpmath.mpf(e) + mpmath.mpf(d) - 2 * mpmath.mpf(e) * mpmath.mpf(d))
            cs, ce = secret_capacity(e, d), capacity_enc(e, d)
            worst = max(worst, abs(cs - float(hb_c - hb_e)), abs(ce - float(hb_c - 2 * hb_e)))
            worst_id = max(worst_id, abs((cs - ce) - binary_entropy(e)))
    crossing_ok, empty = True, 0
    for e in np.linspace(0.001, 0.25, 250):
        d_star = zero_crossing(e)
        if d_star is None:
            # no zero crossing: the encrypted balance is negative for every d
            empty += 1
            crossing_ok &= capacity_enc(e, 0.5) < 0
        else:
            crossing_ok &= d_star > e
    ok = worst <= 1e-9 and worst_id <= 1e-12 and crossing_ok
    verdict(4, "capacity formulas", ok,
            f"max oracle error {worst:.1e}, identity error {worst_id:.1e}, "
            f"d*>e on {250 - empty} e values, infeasible for all d on {empty}")


def _nullspace_basis(h) -> np.ndarray:
    m = h.to_dense().astype(bool)
    r, n = m.shape
    pivots, row = [], 0
    for c in range(n):
        hits = np.nonzero(m[row:, c])[0]
        if hits.size == 0:
            continue
        piv = row + hits[0]
        m[[row, piv]] = m[[piv, row]]
        others = np.nonzero(m[:, c])[0]
        others = others[others != row]
        m[others] ^= m[row]
        pivots.append(c)
        row += 1
        if row == r:
            break
    free = [c for c in range(n) if c not in set(pivots)]
    basis = np.zeros((len(free), n), dtype=np.uint8)
    for k, f in enumerate(free):
        basis[k, f] = 1
        for i, c in enumerate(pivots):
            basis[k, c] = m[i, f]
    return basis


def test_criterion_5_verifiability(h1000, verdict):
    rng = np.random.default_rng(5)
    assert (h1000.col_degrees > 0).all()
    cfg = DecoderConfig(qber_prior=0.02)
    bound = weight_bound(1000, 0.02)
    rejected = tampers = 0
    answers = []
    while len(answers) < 50:
        e = BitBlock.from_bits(rng.random(1000) < 0.02)
        s = syndrome(e, h1000)
        res = decode_syndrome(s, h1000, cfg)
        if res.converged:
            answers.append((res.e_hat, s))
    for i in range(10_000):
        e_hat, s = answers[i % 50]
        w = 1 if i % 2 == 0 else int(rng.integers(2, 11))
        pos = rng.choice(1000, size=w, replace=False)
        tampers += 1
        rejected += verify_error_vector(e_hat.flip(*pos.tolist()), s, h1000, bound) is Verdict.SYNDROME_MISMATCH
    basis = _nullspace_basis(h1000)
    assert not np.stack([h1000.mul(v) for v in basis[:20]]).any()
    forged = caught = 0
    for i in range(200):
        combo = rng.random(basis.shape[0]) < 0.5
        cw = np.bitwise_xor.reduce(basis[combo], axis=0) if combo.any() else basis[0]
        e_hat, s = answers[i % 50]
        fake = e_hat ^ BitBlock.from_bits(cw)
        forged += 1
        caught += verify_error_vector(fake, s, h1000, bound) is Verdict.WEIGHT_EXCEEDED
    ok = rejected == tampers and caught == forged
    verdict(5, "verifiability", ok,
            f"tampers rejected {rejected}/{tampers}, weight forgeries rejected {caught}/{forged}")


def _mpc_matches(h, e_vec, cfg, bitwidth, rng):
    s = syndrome(e_vec, h)
    out, m = mpc_decode(share(s.bits, GF2, 3, rng), h, cfg, 3, bitwidth=bitwidth, rng=rng)
    got = np.bitwise_xor.reduce(np.stack([o.values for o in out]), axis=0)
    return bool((got == decode_syndrome(s, h, cfg, early_exit=False).e_hat.bits).all()), m


def _party_view(s_bits, h, rng, runs):
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


def test_criterion_6_mpc_equivalence(h1000, small_codes, verdict):
    rng = np.random.default_rng(6)
    cases = matches = 0
    qbers = (0.005, 0.02, 0.05)
    fixtures = [(h, qbers) for h in small_codes.values()]
    fixtures += [(h1000, qbers), (regular_ldpc(10_000, 3, 6, seed=0), (0.02,))]
    depth = {}
    for h, qs in fixtures:
        for variant in (Variant.GALLAGER_A, Variant.GALLAGER_B):
            cfg = DecoderConfig(variant, max_iterations=10)
            for w in (4, 8):
                for q in qs:
                    ok, m = _mpc_matches(h, BitBlock.from_bits(rng.random(h.n) < q), cfg, w, rng)
                    cases += 1
                    matches += ok
                    if h.n == 1000 and variant is Variant.GALLAGER_B:
                        depth[w] = (m.circuit_depth, m.rounds)
    s0 = np.zeros(500, dtype=np.uint8)
    s1 = syndrome(BitBlock.from_bits(rng.random(1000) < 0.05), h1000).bits
    c0, w0 = _party_view(s0, h1000, rng, 1000)
    c1, w1 = _party_view(s1, h1000, rng, 1000)
    p_cells = stats.chi2_contingency(np.vstack([c0, c1]))[1]
    p_weight = stats.ks_2samp(w0, w1).pvalue
    depth_ok = abs(depth[4][0] - 9) <= 2 and abs(depth[8][0] - 11) <= 2
    ok = matches == cases and p_cells > 0.001 and p_weight > 0.001 and depth_ok
    verdict(6, "MPC decoding equivalence", ok,
            f"{matches}/{cases} decodes equal, view p-values {p_cells:.3f}/{p_weight:.3f}, "
            f"depth {depth[4][0]}@4 bits and {depth[8][0]}@8 bits, "
            f"rounds at 10 iterations {depth[4][1]}/{depth[8][1]}")


def test_criterion_7_rem_pa_equivalence(verdict):
    rng = np.random.default_rng(7)
    per_scheme = {}
    for scheme in (Scheme.additive_gf2(), Scheme.additive_gfp(), Scheme.shamir(1)):
        good = 0
        for i in range(500):
            n = 100_000 if i < 3 else int(10 ** rng.uniform(0.5, 4.5))
            m = int(rng.integers(1, n + 1))
            k = BitBlock.random(n, rng)
            plan = PaPlan.random(n, m, rng)
            good += run_rem_pa(k, plan, int(rng.integers(2, 6)), scheme, rng) == pa_local(k, plan)
        per_scheme[scheme.kind] = good
    # every (input, seed) pair for n <= 4, every input vector for n <= 16
    exhaustive = agree = 0
    for n in range(1, 5):
        for m in range(1, n + 1):
            for seed_int in range(1 << (n + m - 1)):
                t = ToeplitzSeed(n, m, BitBlock.from_int(seed_int, n + m - 1))
                for k_int in range(1 << n):
                    k = BitBlock.from_int(k_int, n)
                    exhaustive += 1
                    agree += toeplitz_apply_fast(k, t) == toeplitz_apply_naive(k, t)
    for n in range(5, 17):
        seeds = [ToeplitzSeed(n, n, BitBlock.from_bits(np.ones(2 * n - 1, dtype=np.uint8))),
                 ToeplitzSeed.random(n, n // 2 + 1, rng)]
        for t in seeds:
            for k_int in range(1 << n):
                k = BitBlock.from_int(k_int, n)
                exhaustive += 1
                agree += toeplitz_apply_fast(k, t) == toeplitz_apply_naive(k, t)
    large = 0
    for _ in range(100):
        n = int(rng.integers(1000, 50_000))
        t = ToeplitzSeed.random(n, int(rng.integers(1, min(n, 2000) + 1)), rng)
        k = BitBlock.random(n, rng)
        large += toeplitz_apply_fast(k, t) == toeplitz_apply_naive(k, t)
    ok = all(v == 500 for v in per_scheme.values()) and agree == exhaustive and large == 100
    verdict(7, "REM-PA equivalence", ok,
            f"rem_pa==pa_local {per_scheme}, toeplitz small {agree}/{exhaustive}, large {large}/100")


def test_criterion_8_confirmation_soundness(verdict):
    rng = np.random.default_rng(8)
    trials = 100_000
    store = KeyStore.random(32 * (trials + 10_000), rng)
    false_accepts = 0
    for i in range(trials):
        k_a = BitBlock.random(256, rng)
        flips = rng.choice(256, size=1 if i % 2 else int(rng.integers(2, 64)), replace=False)
        false_accepts += confirm(k_a, k_a.flip(*flips.tolist()), 32, store, rng) is ConfirmVerdict.ACCEPT
    equal_ok = sum(confirm(k, k, 32, store, rng) is ConfirmVerdict.ACCEPT
                   for k in (BitBlock.random(256, rng) for _ in range(10_000)))
    ok = false_accepts == 0 and equal_ok == 10_000
    verdict(8, "confirmation soundness", ok,
            f"false accepts {false_accepts}/{trials}, equal keys accepted {equal_ok}/10000")


def test_criterion_9_determinism(tmp_path, verdict):
    identical = total = 0
    for path in sorted(SCENARIOS.glob("*.json")):
        sc = load_scenario(path)
        outs = []
        for run in ("a", "b"):
            d = tmp_path / path.stem / run
            run_scenario(sc, d)
            rep = json.loads((d / "report.json").read_text())
            rep.pop("timing")
            outs.append((json.dumps(rep, sort_keys=True), (d / "blocks.csv").read_bytes()))
        total += 1
        identical += outs[0] == outs[1]
    verdict(9, "end-to-end determinism", identical == total and total >= 3,
            f"{identical}/{total} scenarios byte-identical without timing")
