"""Gallager bit-flipping evaluated on XOR-shared bits by simulated MPC servers.

Every shared value is a uint8 array of shape ``(parties, ...)`` whose XOR over
the first axis is the secret. XOR and operations with public constants are
local. AND gates consume one Beaver triple each; all ANDs of one circuit layer
are opened together in a single communication round through :class:`Router`,
which counts rounds and bytes and can record what one party receives.

Counters are ``bitwidth``-bit shared integers. Each variable adds its
unsatisfied-check bits with a tree of Kogge-Stone adders and compares the sum
against its public threshold ``thr`` by taking the carry-out of
``count + (2**bitwidth - thr)``. Variables of lower degree are padded with
shared zeros so the whole block runs one circuit.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .bitlinalg import BitBlock, DimensionError, ParityCheck
from .ldpc import DecoderConfig, Variant, flip_thresholds
from .sharing import Scheme, ShareVector, TripleDealer


class CircuitError(ValueError):
    pass


# --- runtime ------------------------------------------------------------------

class Router:
    """Delivers masked openings between parties and accounts for the traffic."""

    def __init__(self, n_parties: int, record_party: Optional[int] = None):
        self.n_parties = n_parties
        self.rounds = 0
        self.data_bytes = 0
        self.record_party = record_party
        self.transcript: list[np.ndarray] = []

    def open(self, masked: np.ndarray) -> np.ndarray:
        """One round: every party broadcasts its row of ``masked`` (shape (P, k))."""
        P, k = masked.shape
        self.rounds += 1
        self.data_bytes += P * (P - 1) * ((k + 7) // 8)
        if self.record_party is not None:
            others = [j for j in range(P) if j != self.record_party]
            self.transcript.append(masked[others].copy())
        return np.bitwise_xor.reduce(masked, axis=0)


class Runtime:
    def __init__(self, n_parties: int, triples, router: Router):
        if n_parties < 2:
            raise CircuitError("need at least two parties")
        self.n_parties = n_parties
        self.triples = triples
        self.router = router
        self.and_gates = 0

    def zeros(self, shape) -> np.ndarray:
        return np.zeros((self.n_parties, *shape), dtype=np.uint8)

    def xor_public(self, x: np.ndarray, c) -> np.ndarray:
        out = x.copy()
        out[0] ^= np.asarray(c, dtype=np.uint8)
        return out

    def and_(self, *pairs: tuple[np.ndarray, np.ndarray]) -> list[np.ndarray]:
        """Evaluate several shared ANDs in one round."""
        shapes = [x.shape for x, _ in pairs]
        xs = np.concatenate([x.reshape(self.n_parties, -1) for x, _ in pairs], axis=1)
        ys = np.concatenate([y.reshape(self.n_parties, -1) for _, y in pairs], axis=1)
        k = xs.shape[1]
        if k == 0:
            return [np.zeros(s, dtype=np.uint8) for s in shapes]
        a, b, c = self.triples.take(k)
        opened = self.router.open(np.concatenate([xs ^ a, ys ^ b], axis=1))
        d, e = opened[:k], opened[k:]
        z = c ^ (d & b) ^ (e & a)
        z[0] ^= d & e
        self.and_gates += k
        out, pos = [], 0
        for s in shapes:
            size = int(np.prod(s[1:], dtype=np.int64))
            out.append(z[:, pos:pos + size].reshape(s))
            pos += size
        return out


# --- arithmetic circuits ------------------------------------------------------

def _prefix_carries(rt: Runtime, g: np.ndarray, p: np.ndarray, span: int) -> np.ndarray:
    """Kogge-Stone prefix on the last axis; returns G where G[i] is the carry out of bit i.

    Only the first ``span`` positions are resolved, which fixes the number of
    AND layers at ceil(log2(span)).
    """
    G, Pr = g.copy(), p.copy()
    dist = 1
    while dist < span:
        hi = slice(dist, span)
        lo = slice(0, span - dist)
        pg, pp = rt.and_((Pr[..., hi], G[..., lo]), (Pr[..., hi], Pr[..., lo]))
        G[..., hi] ^= pg  # generate and propagate are exclusive, so XOR acts as OR
        Pr[..., hi] = pp
        dist *= 2
    return G


def shared_add(rt: Runtime, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum mod 2**w of shared w-bit integers (bits LSB first on the last axis)."""
    w = a.shape[-1]
    (g,) = rt.and_((a, b))
    p = a ^ b
    out = p.copy()
    if w > 1:
        G = _prefix_carries(rt, g, p, w - 1)
        out[..., 1:] ^= G[..., : w - 1]
    return out


def compare_public(rt: Runtime, c: np.ndarray, thr: np.ndarray) -> np.ndarray:
    """Shared bit ``c >= thr`` for shared w-bit ``c`` and public thresholds ``thr`` in [1, 2**w)."""
    w = c.shape[-1]
    k = (1 << w) - thr.astype(np.int64)
    k_bits = ((k[..., None] >> np.arange(w)) & 1).astype(np.uint8)
    g = c & k_bits  # local: one operand is public
    p = rt.xor_public(c, k_bits)
    G = _prefix_carries(rt, g, p, w)
    return G[..., w - 1]


def count_bits(rt: Runtime, bits: np.ndarray, bitwidth: int) -> np.ndarray:
    """Shared ``bitwidth``-bit popcount of the last axis by an adder tree."""
    operands = np.zeros((*bits.shape, bitwidth), dtype=np.uint8)
    operands[..., 0] = bits
    while operands.shape[-2] > 1:
        half = operands.shape[-2] // 2
        summed = shared_add(rt, operands[..., 0:2 * half:2, :], operands[..., 1:2 * half:2, :])
        if operands.shape[-2] % 2:
            summed = np.concatenate([summed, operands[..., -1:, :]], axis=-2)
        operands = summed
    return operands[..., 0, :]


def _check_bitwidth(degree: int, bitwidth: int) -> None:
    need = max(1, math.ceil(math.log2(degree + 1)))
    if bitwidth < need:
        raise CircuitError(f"bitwidth {bitwidth} cannot hold counts up to {degree}; need {need}")


def majority_circuit(rt: Runtime, unsat_bits: np.ndarray, degree: int, bitwidth: int,
                     threshold=None) -> np.ndarray:
    """Shared flip decision for shared unsatisfied-check bits of shape (P, ..., degree).

    Flips when the count reaches ``threshold`` (default: strict majority
    ``degree // 2 + 1``). ``threshold`` may be an array broadcast over the
    leading variable axes.
    """
    if unsat_bits.shape[-1] != degree:
        raise DimensionError(f"expected {degree} check bits, got {unsat_bits.shape[-1]}")
    _check_bitwidth(degree, bitwidth)
    thr = np.asarray(degree // 2 + 1 if threshold is None else threshold, dtype=np.int64)
    thr = np.broadcast_to(thr, unsat_bits.shape[1:-1])
    if (thr < 1).any():
        raise CircuitError("thresholds must be >= 1")
    count = count_bits(rt, unsat_bits, bitwidth)
    # a threshold above the counter range can never be reached
    reachable = thr < (1 << bitwidth)
    flip = compare_public(rt, count, np.where(reachable, thr, 1))
    return flip & reachable.astype(np.uint8)


# --- decoder ------------------------------------------------------------------

@dataclass
class MpcMetrics:
    block_size: int
    bitwidth: int
    circuit_depth: int
    rounds: int
    data_bytes: int
    wall_time: float
    iterations: int
    and_gates: int = 0

    def per_iteration_time(self) -> float:
        return self.wall_time / max(self.iterations, 1)

    def to_dict(self) -> dict:
        return asdict(self)


def _adjacency(h: ParityCheck) -> tuple[np.ndarray, np.ndarray]:
    """Per-variable list of check indices padded to max degree, plus a validity mask."""
    deg = h.col_degrees
    dmax = max(int(deg.max()) if h.n else 0, 1)
    order = np.argsort(h.edge_col, kind="stable")
    cols, rows = h.edge_col[order], h.edge_row[order]
    starts = np.concatenate([[0], np.cumsum(deg)[:-1]]).astype(np.int64)
    slot = np.arange(cols.size) - starts[cols]
    idx = np.zeros((h.n, dmax), dtype=np.int64)
    mask = np.zeros((h.n, dmax), dtype=bool)
    idx[cols, slot] = rows
    mask[cols, slot] = True
    return idx, mask


def _shared_syndrome(e: np.ndarray, h: ParityCheck) -> np.ndarray:
    return np.stack([h.mul(row) for row in e])


def mpc_decode(s_e_shares: Sequence[ShareVector], h: ParityCheck, cfg: DecoderConfig,
               parties: Optional[int] = None, triples=None, *, bitwidth: int = 4,
               rng: Optional[np.random.Generator] = None,
               router: Optional[Router] = None) -> tuple[list[ShareVector], MpcMetrics]:
    """Run ``cfg.max_iterations`` bit-flipping rounds on shared syndrome bits.

    No convergence test is taken; thresholds of at least one make every
    converged state a fixed point, so the output equals the plaintext decoder
    run for the same number of iterations.
    """
    if cfg.variant not in (Variant.GALLAGER_A, Variant.GALLAGER_B):
        raise CircuitError(f"variant {cfg.variant.value} has no MPC circuit")
    shares = sorted(s_e_shares, key=lambda s: s.party_id)
    P = parties if parties is not None else len(shares)
    if len(shares) != P or [s.party_id for s in shares] != list(range(P)):
        raise DimensionError(f"need one share per party 0..{P - 1}")
    if any(s.scheme.kind != "additive_gf2" for s in shares):
        raise CircuitError("MPC decoding needs additive GF(2) shares")
    if any(len(s) != h.r for s in shares):
        raise DimensionError(f"syndrome shares must have {h.r} bits")
    _check_bitwidth(int(h.col_degrees.max()) if h.n else 0, bitwidth)
    if triples is None:
        triples = TripleDealer(P, rng if rng is not None else np.random.default_rng())
    router = router if router is not None else Router(P)
    rt = Runtime(P, triples, router)

    s = np.stack([sv.values for sv in shares]).astype(np.uint8)
    idx, mask = _adjacency(h)
    dmax = idx.shape[1]
    e = rt.zeros((h.n,))
    t0 = time.perf_counter()
    depth = 0
    for it in range(cfg.max_iterations):
        before = router.rounds
        residual = _shared_syndrome(e, h) ^ s
        unsat = residual[:, idx] & mask.astype(np.uint8)
        thr = flip_thresholds(h, cfg, it)
        flip = majority_circuit(rt, unsat, dmax, bitwidth, thr)
        e ^= flip
        depth = max(depth, router.rounds - before)
    wall = time.perf_counter() - t0
    scheme = Scheme.additive_gf2()
    out = [ShareVector(i, scheme, np.ascontiguousarray(e[i]), P) for i in range(P)]
    metrics = MpcMetrics(block_size=h.n, bitwidth=bitwidth, circuit_depth=depth,
                         rounds=router.rounds, data_bytes=router.data_bytes,
                         wall_time=wall, iterations=cfg.max_iterations, and_gates=rt.and_gates)
    return out, metrics


# --- benchmark table ----------------------------------------------------------

MPC_TABLE_HEADER = ("block_size", "bitwidth", "circuit_depth", "time_s", "data_MB",
                    "rounds", "bitrate_at_10iter")


@dataclass(frozen=True)
class MpcTableRow:
    """Per-iteration figures of one benchmark decode."""
    block_size: int
    bitwidth: int
    circuit_depth: int
    time_s: float
    data_mb: float
    rounds: int
    bitrate_at_10iter: float

    def as_row(self) -> list:
        return [self.block_size, self.bitwidth, self.circuit_depth, f"{self.time_s:.6f}",
                f"{self.data_mb:.6f}", self.rounds, f"{self.bitrate_at_10iter:.1f}"]


def table_row(m: MpcMetrics) -> MpcTableRow:
    t = m.per_iteration_time()
    return MpcTableRow(m.block_size, m.bitwidth, m.circuit_depth, t,
                       m.data_bytes / m.iterations / 1e6, m.rounds // m.iterations,
                       m.block_size / (10 * t) if t > 0 else float("inf"))


def mpc_bench(block_sizes: Sequence[int] = (1000, 10000), bitwidths: Sequence[int] = (4, 8),
              iterations: int = 10, qber: float = 0.01, parties: int = 3,
              seed: int = 0) -> list[MpcTableRow]:
    from .channel import substream
    from .codes import regular_ldpc
    from .sharing import share

    rows = []
    for n in block_sizes:
        h = regular_ldpc(n, 3, 6, seed=seed)
        rng = np.random.default_rng(substream(seed, "mpc-bench", n))
        e_vec = BitBlock.from_bits(rng.random(n) < qber)
        s_e = BitBlock.from_bits(h.mul(e_vec.bits))
        sh = share(s_e.bits, Scheme.additive_gf2(), parties, rng)
        cfg = DecoderConfig(Variant.GALLAGER_B, max_iterations=iterations)
        for w in bitwidths:
            _, m = mpc_decode(sh, h, cfg, parties, bitwidth=w, rng=rng)
            rows.append(table_row(m))
    return rows


def mpc_table_csv(rows: Sequence[MpcTableRow]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(MPC_TABLE_HEADER)
    for r in rows:
        wr.writerow(r.as_row())
    return buf.getvalue()
