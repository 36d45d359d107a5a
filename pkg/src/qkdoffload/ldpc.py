"""Syndrome decoders for LDPC codes and the check run on returned error vectors.

All decoders solve ``e H^T = s`` directly: the error estimate starts at zero
and check ``i`` is satisfied when the parity of its variables equals
``s[i]``. No codeword or key is ever seen by the decoder.

Gallager A and B are run as parallel bit-flipping over unsatisfied-check
counters. Each iteration computes the residual syndrome, counts for every
variable how many of its checks are unsatisfied and flips the variables whose
count reaches a public threshold. Gallager A uses the unanimous threshold
(all checks of a variable unsatisfied); Gallager B uses a threshold schedule,
by default a strict majority of the variable's checks. Thresholds depend on
public data only, which is what lets :mod:`qkdoffload.mpc_flip` evaluate the
same update on secret-shared bits.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bitlinalg import BitBlock, DimensionError, ParityCheck, syndrome


class Variant(str, enum.Enum):
    GALLAGER_A = "gallager_a"
    GALLAGER_B = "gallager_b"
    SUM_PRODUCT = "sum_product"


@dataclass(frozen=True)
class DecoderConfig:
    variant: Variant = Variant.SUM_PRODUCT
    max_iterations: Optional[int] = None
    qber_prior: float = 0.02
    thresholds: Optional[tuple[int, ...]] = None
    damping: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.max_iterations is None:
            default = 60 if self.variant is Variant.SUM_PRODUCT else 10
            object.__setattr__(self, "max_iterations", default)
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.thresholds is not None:
            object.__setattr__(self, "thresholds", tuple(int(t) for t in self.thresholds))
            if not self.thresholds or min(self.thresholds) < 1:
                raise ValueError("threshold schedule entries must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if not 0.0 <= self.qber_prior <= 0.5:
            raise ValueError(f"qber_prior={self.qber_prior} outside [0, 0.5]")

    @property
    def bit_flipping(self) -> bool:
        return self.variant is not Variant.SUM_PRODUCT

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "max_iterations": self.max_iterations,
                "qber_prior": self.qber_prior,
                "thresholds": list(self.thresholds) if self.thresholds else None,
                "damping": self.damping}


@dataclass(frozen=True)
class DecodeResult:
    e_hat: BitBlock
    converged: bool
    iterations: int
    residual: BitBlock


class Verdict(str, enum.Enum):
    ACCEPT = "accept"
    SYNDROME_MISMATCH = "syndrome_mismatch"
    WEIGHT_EXCEEDED = "weight_exceeded"


def flip_thresholds(h: ParityCheck, cfg: DecoderConfig, iteration: int) -> np.ndarray:
    """Per-variable minimum unsatisfied-check count that triggers a flip."""
    deg = h.col_degrees
    if cfg.variant is Variant.GALLAGER_A:
        thr = deg.copy()
    elif cfg.thresholds is not None:
        thr = np.full(h.n, cfg.thresholds[min(iteration, len(cfg.thresholds) - 1)])
    else:
        thr = deg // 2 + 1
    # a variable without checks must never flip
    return np.maximum(thr, 1).astype(np.int64)


def unsatisfied_counts(h: ParityCheck, residual: np.ndarray) -> np.ndarray:
    return np.bincount(h.edge_col, weights=residual[h.edge_row], minlength=h.n).astype(np.int64)


def _bit_flip(s: np.ndarray, h: ParityCheck, cfg: DecoderConfig,
              early_exit: bool = True) -> tuple[np.ndarray, int]:
    e = np.zeros(h.n, dtype=np.uint8)
    it = 0
    while it < cfg.max_iterations:
        residual = h.mul(e) ^ s
        if early_exit and not residual.any():
            break
        flip = unsatisfied_counts(h, residual) >= flip_thresholds(h, cfg, it)
        it += 1
        if early_exit and not flip.any():
            break
        e ^= flip.astype(np.uint8)
    return e, it


_LLR_CLIP = 40.0


def _phi(x: np.ndarray) -> np.ndarray:
    # phi(x) = -log(tanh(x/2)) is its own inverse on (0, inf)
    x = np.clip(x, 1e-12, _LLR_CLIP)
    return -np.log(np.tanh(x / 2.0))


def _sum_product(s: np.ndarray, h: ParityCheck, cfg: DecoderConfig) -> tuple[np.ndarray, int]:
    q = min(max(cfg.qber_prior, 1e-9), 0.5)
    prior = math.log((1.0 - q) / q)
    er, ec = h.edge_row, h.edge_col
    target = s[er].astype(np.int64)
    v2c = np.full(er.size, prior)
    c2v = np.zeros(er.size)
    e = np.zeros(h.n, dtype=np.uint8)
    if not s.any():
        return e, 0
    for it in range(1, cfg.max_iterations + 1):
        mag = _phi(np.abs(v2c))
        neg = (v2c < 0).astype(np.int64)
        mag_sum = np.bincount(er, weights=mag, minlength=h.r)
        neg_sum = np.bincount(er, weights=neg, minlength=h.r).astype(np.int64)
        other = np.maximum(mag_sum[er] - mag, 0.0)
        parity = (neg_sum[er] - neg + target) & 1
        fresh = (1 - 2 * parity) * _phi(other)
        c2v = cfg.damping * c2v + (1.0 - cfg.damping) * fresh
        post = prior + np.bincount(ec, weights=c2v, minlength=h.n)
        v2c = post[ec] - c2v
        # posterior exactly zero decides "no error"
        e = (post < 0).astype(np.uint8)
        if not (h.mul(e) ^ s).any():
            return e, it
    return e, cfg.max_iterations


def decode_syndrome(s_e: BitBlock, h: ParityCheck, cfg: DecoderConfig = DecoderConfig(),
                    early_exit: bool = True) -> DecodeResult:
    """Find a low-weight ``e_hat`` with ``e_hat H^T = s_e``.

    Non-convergence is reported through ``converged=False``, never raised.
    ``early_exit=False`` runs bit-flipping for exactly ``max_iterations``
    rounds, the data-independent schedule an MPC evaluation has to follow.
    """
    if s_e.len != h.r:
        raise DimensionError(f"syndrome of {s_e.len} bits for code with r={h.r}")
    s = s_e.bits
    if cfg.bit_flipping:
        e, it = _bit_flip(s, h, cfg, early_exit)
    else:
        e, it = _sum_product(s, h, cfg)
    residual = h.mul(e) ^ s
    return DecodeResult(BitBlock.from_bits(e), not residual.any(), it, BitBlock.from_bits(residual))


def weight_bound(n: int, qber: float, sigmas: float = 5.0) -> int:
    """Largest plausible error weight: mean plus ``sigmas`` binomial deviations."""
    return int(n * qber + sigmas * math.sqrt(n * qber * (1.0 - qber)))


def verify_error_vector(e_hat: BitBlock, s_e: BitBlock, h: ParityCheck,
                        weight_bound: Optional[int] = None) -> Verdict:
    if s_e.len != h.r:
        raise DimensionError(f"syndrome of {s_e.len} bits for code with r={h.r}")
    if syndrome(e_hat, h) != s_e:
        return Verdict.SYNDROME_MISMATCH
    if weight_bound is not None and e_hat.weight() > weight_bound:
        return Verdict.WEIGHT_EXCEEDED
    return Verdict.ACCEPT


def min_weight_solutions(h: ParityCheck, s: BitBlock) -> tuple[int, list[BitBlock]]:
    """Exhaustive minimum-weight coset leaders (n <= 24 only)."""
    if h.n > 24:
        raise ValueError("exhaustive search limited to n <= 24")
    idx = np.arange(1 << h.n, dtype=np.int64)
    bits = ((idx[:, None] >> np.arange(h.n)) & 1).astype(np.uint8)
    syn = h.mul(bits)
    match = np.all(syn == s.bits, axis=1)
    weights = bits.sum(axis=1)
    w = int(weights[match].min())
    sols = [BitBlock.from_bits(b) for b in bits[match & (weights == w)]]
    return w, sols
