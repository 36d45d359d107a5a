"""Toeplitz privacy amplification, its multi-server offload and the key confirmation tag."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .bitlinalg import BitBlock, DimensionError, ToeplitzSeed, toeplitz_apply_fast
from .channel import KeyStore
from .sharing import Scheme, ShareVector, lin_combine, reconstruct, share


class PaError(RuntimeError):
    pass


class SpotCheckFailed(PaError):
    pass


@dataclass(frozen=True)
class PaPlan:
    n: int
    m: int
    seed: ToeplitzSeed

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise DimensionError(f"output length {self.m} must lie in [1, {self.n}]")
        if (self.seed.n, self.seed.m) != (self.n, self.m):
            raise DimensionError(f"seed is {self.seed.n}x{self.seed.m}, plan is {self.n}x{self.m}")

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator) -> "PaPlan":
        return cls(n, m, ToeplitzSeed.random(n, m, rng))


def pa_local(k_prime: BitBlock, plan: PaPlan) -> BitBlock:
    if k_prime.len != plan.n:
        raise DimensionError(f"key of {k_prime.len} bits for plan with n={plan.n}")
    return toeplitz_apply_fast(k_prime, plan.seed)


class PaServer(Protocol):
    def apply(self, share_: ShareVector, seed: ToeplitzSeed) -> ShareVector: ...


class LocalPaServer:
    """Stateless server: runs an ordinary PA on whatever share it is handed."""

    def __init__(self, name: str = "pa"):
        self.name = name
        self.received: list[ShareVector] = []
        self.keep_inputs = False

    def apply(self, share_: ShareVector, seed: ToeplitzSeed) -> ShareVector:
        if self.keep_inputs:
            self.received.append(share_)
        return lin_combine(share_, seed)


def run_rem_pa(k_prime: BitBlock, plan: PaPlan, n_servers: int, scheme: Scheme,
               rng: np.random.Generator, servers: Optional[Sequence[PaServer]] = None,
               spot_check: float = 0.0) -> BitBlock:
    """Share ``k_prime`` among servers, let each hash its share, reconstruct the key.

    Shares travel over an assumed secure channel. With ``spot_check > 0`` the
    peer recomputes that fraction of output bits locally and raises
    :class:`SpotCheckFailed` on any mismatch.
    """
    if n_servers < 2:
        raise PaError("REM-PA needs at least two servers")
    if k_prime.len != plan.n:
        raise DimensionError(f"key of {k_prime.len} bits for plan with n={plan.n}")
    if scheme.kind != "additive_gf2" and scheme.p <= plan.n:
        # each output is an integer count of up to n ones; it must not wrap before the mod-2 step
        raise PaError(f"prime {scheme.p} must exceed n={plan.n} for the mod-2 reduction")
    if servers is None:
        servers = [LocalPaServer(f"pa{i}") for i in range(n_servers)]
    if len(servers) != n_servers:
        raise PaError(f"{len(servers)} servers given for n_servers={n_servers}")
    shares = share(k_prime, scheme, n_servers, rng)
    returned = []
    for srv, sh in zip(servers, shares):
        out = srv.apply(sh, plan.seed)
        if out is None:
            continue
        if out.scheme != scheme or out.party_id != sh.party_id:
            raise PaError(f"server returned a share for {out.scheme}/{out.party_id}")
        if len(out) != plan.m:
            raise DimensionError(f"server returned {len(out)} elements, expected {plan.m}")
        returned.append(out)
    if len(returned) < scheme.min_parties(n_servers):
        raise PaError(f"only {len(returned)} of {scheme.min_parties(n_servers)} required shares returned")
    # reducing to bits: each output element is an integer sum of 0/1 products
    key = BitBlock.from_bits((reconstruct(returned) % 2).astype(np.uint8))
    if spot_check > 0.0:
        count = max(1, int(round(spot_check * plan.m)))
        cols = rng.choice(plan.m, size=min(count, plan.m), replace=False)
        if not _spot_ok(k_prime, plan.seed, key, cols):
            raise SpotCheckFailed(f"output disagrees with local recomputation on {count} sampled bits")
    return key


def _spot_ok(k: BitBlock, seed: ToeplitzSeed, out: BitBlock, cols: np.ndarray) -> bool:
    # column j of T is seed[m-1+i-j] for i = 0..n-1
    kb, sb = k.bits.astype(np.int64), seed.bits.bits.astype(np.int64)
    n, m = seed.n, seed.m
    for j in cols:
        col = sb[m - 1 - j: m - 1 - j + n]
        if int(kb @ col) & 1 != int(out.bits[j]):
            return False
    return True


# --- confirmation -------------------------------------------------------------

class ConfirmVerdict(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class ConfirmTag:
    tag: BitBlock
    hash_seed: ToeplitzSeed
    encrypted: bool

    def __post_init__(self):
        if self.tag.len < 1 or self.tag.len != self.hash_seed.m:
            raise DimensionError("tag length must be >= 1 and match the hash output")

    @property
    def wire_bits(self) -> int:
        return self.tag.len + self.hash_seed.bits.len


def make_tag(key: BitBlock, tag_len: int, rng: np.random.Generator,
             pad: Optional[BitBlock] = None) -> ConfirmTag:
    if tag_len < 1:
        raise DimensionError("tag_len must be >= 1")
    if key.len < tag_len:
        raise DimensionError(f"key of {key.len} bits is shorter than the {tag_len}-bit tag")
    seed = ToeplitzSeed.random(key.len, tag_len, rng)
    tag = toeplitz_apply_fast(key, seed)
    if pad is not None:
        if pad.len != tag_len:
            raise DimensionError(f"pad of {pad.len} bits for a {tag_len}-bit tag")
        tag = tag ^ pad
    return ConfirmTag(tag, seed, pad is not None)


def check_tag(key: BitBlock, tag: ConfirmTag, pad: Optional[BitBlock] = None) -> ConfirmVerdict:
    if (pad is not None) != tag.encrypted or key.len != tag.hash_seed.n:
        return ConfirmVerdict.REJECT
    expect = toeplitz_apply_fast(key, tag.hash_seed)
    if pad is not None:
        expect = expect ^ pad
    return ConfirmVerdict.ACCEPT if expect == tag.tag else ConfirmVerdict.REJECT


def confirm(k_a: BitBlock, k_b: BitBlock, tag_len: int, otp: Optional[KeyStore],
            rng: np.random.Generator, tamper: Optional[BitBlock] = None) -> ConfirmVerdict:
    """Alice tags her key, Bob checks it against his; ``otp`` is the shared pad store.

    ``otp=None`` sends the tag in clear (only sound before PA, where the tag is
    charged to the leakage ledger). ``tamper`` XORs the tag on the wire.
    """
    pad = otp.take(tag_len) if otp is not None else None
    tag = make_tag(k_a, tag_len, rng, pad)
    if tamper is not None:
        tag = ConfirmTag(tag.tag ^ tamper, tag.hash_seed, tag.encrypted)
    if k_b.len != k_a.len:
        return ConfirmVerdict.REJECT
    return check_tag(k_b, tag, pad)
