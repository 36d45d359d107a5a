"""Information-theoretic linear secret sharing and a trusted Beaver-triple dealer.

Schemes: additive over GF(2), additive over GF(p) and Shamir over GF(p).
GF(p) values are held in uint64 arrays, so ``p`` must stay below 2**63; the
default is the Mersenne prime 2**61 - 1. Shamir party ``i`` evaluates the
sharing polynomial at ``i + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .bitlinalg import BitBlock, DimensionError, ToeplitzSeed, toeplitz_apply_mod

MERSENNE_61 = (1 << 61) - 1


class SharingError(ValueError):
    pass


class ThresholdError(SharingError):
    """Too few shares to reconstruct."""


class ConsistencyError(SharingError):
    """Shares from different sharings, schemes or duplicated parties."""


class TripleExhausted(RuntimeError):
    pass


class TripleReuse(RuntimeError):
    pass


@dataclass(frozen=True)
class Scheme:
    kind: str  # "additive_gf2", "additive_gfp" or "shamir"
    p: int = 2
    threshold: int = 0

    def __post_init__(self):
        if self.kind not in ("additive_gf2", "additive_gfp", "shamir"):
            raise SharingError(f"unknown scheme {self.kind!r}")
        if self.kind == "additive_gf2" and self.p != 2:
            raise SharingError("additive GF(2) sharing has p = 2")
        if self.kind != "additive_gf2" and not 2 < self.p < 1 << 63:
            raise SharingError(f"prime {self.p} outside supported range (2, 2**63)")
        if self.kind == "shamir" and self.threshold < 1:
            raise SharingError("Shamir threshold t must be >= 1")

    @classmethod
    def additive_gf2(cls) -> "Scheme":
        return cls("additive_gf2")

    @classmethod
    def additive_gfp(cls, p: int = MERSENNE_61) -> "Scheme":
        return cls("additive_gfp", p)

    @classmethod
    def shamir(cls, t: int = 1, p: int = MERSENNE_61) -> "Scheme":
        return cls("shamir", p, t)

    @property
    def dtype(self):
        return np.uint8 if self.kind == "additive_gf2" else np.uint64

    def min_parties(self, n_parties: int) -> int:
        return self.threshold + 1 if self.kind == "shamir" else n_parties


@dataclass(frozen=True, eq=False)
class ShareVector:
    party_id: int
    scheme: Scheme
    values: np.ndarray
    n_parties: int

    def __post_init__(self):
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return self.values.size


def _as_elements(x, scheme: Scheme) -> np.ndarray:
    if isinstance(x, BitBlock):
        x = x.bits
    arr = np.asarray(x)
    if scheme.kind == "additive_gf2":
        return (arr.astype(np.uint8) & 1).ravel()
    if arr.dtype == object or (arr.size and int(np.max(arr)) >= scheme.p) or (arr.size and int(np.min(arr)) < 0):
        arr = np.array([int(v) % scheme.p for v in arr.ravel()], dtype=np.uint64)
    return arr.astype(np.uint64).ravel()


def _addmod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    s = a + b  # both < p < 2**63, cannot wrap
    return np.where(s >= np.uint64(p), s - np.uint64(p), s)


def _submod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    return np.where(a >= b, a - b, a + (np.uint64(p) - b))


def share(x, scheme: Scheme, n_parties: int, rng: np.random.Generator) -> list[ShareVector]:
    if n_parties < 2:
        raise SharingError("need at least two parties")
    if scheme.kind == "shamir" and scheme.threshold >= n_parties:
        raise SharingError(f"Shamir threshold {scheme.threshold} needs more than {n_parties} parties")
    vals = _as_elements(x, scheme)
    if scheme.kind == "additive_gf2":
        rand = rng.integers(0, 2, size=(n_parties - 1, vals.size), dtype=np.uint8)
        last = vals ^ np.bitwise_xor.reduce(rand, axis=0)
        parts = list(rand) + [last]
    elif scheme.kind == "additive_gfp":
        p = scheme.p
        rand = rng.integers(0, p, size=(n_parties - 1, vals.size), dtype=np.uint64)
        acc = vals.copy()
        for r in rand:
            acc = _submod(acc, r, p)
        parts = list(rand) + [acc]
    else:
        p, t = scheme.p, scheme.threshold
        coeffs = rng.integers(0, p, size=(t, vals.size), dtype=np.uint64).astype(object)
        secret = vals.astype(object)
        parts = []
        for i in range(n_parties):
            x_i = i + 1
            acc = np.zeros(vals.size, dtype=object)
            for c in coeffs[::-1]:  # Horner, highest degree first
                acc = (acc + c) * x_i % p
            parts.append(((acc + secret) % p).astype(np.uint64))
    return [ShareVector(i, scheme, np.ascontiguousarray(v), n_parties) for i, v in enumerate(parts)]


def _consistent(shares: Sequence[ShareVector]) -> tuple[Scheme, int, int]:
    if not shares:
        raise ThresholdError("no shares given")
    first = shares[0]
    ids = [s.party_id for s in shares]
    if len(set(ids)) != len(ids):
        raise ConsistencyError(f"duplicate party ids {ids}")
    for s in shares:
        if s.scheme != first.scheme or s.n_parties != first.n_parties:
            raise ConsistencyError("shares come from different schemes")
        if len(s) != len(first):
            raise ConsistencyError("shares differ in length")
        if not 0 <= s.party_id < s.n_parties:
            raise ConsistencyError(f"party id {s.party_id} outside 0..{s.n_parties - 1}")
    return first.scheme, first.n_parties, len(first)


def lagrange_at_zero(points: Sequence[int], p: int) -> list[int]:
    lam = []
    for i, xi in enumerate(points):
        num = den = 1
        for j, xj in enumerate(points):
            if i != j:
                num = num * xj % p
                den = den * (xj - xi) % p
        lam.append(num * pow(den, -1, p) % p)
    return lam


def reconstruct(shares: Sequence[ShareVector]) -> np.ndarray:
    scheme, n_parties, _ = _consistent(shares)
    need = scheme.min_parties(n_parties)
    if len(shares) < need:
        raise ThresholdError(f"{len(shares)} shares given, {need} required")
    if scheme.kind == "additive_gf2":
        return np.bitwise_xor.reduce(np.stack([s.values for s in shares]), axis=0)
    p = scheme.p
    if scheme.kind == "additive_gfp":
        acc = np.zeros(len(shares[0]), dtype=np.uint64)
        for s in shares:
            acc = _addmod(acc, s.values, p)
        return acc
    lam = lagrange_at_zero([s.party_id + 1 for s in shares], p)
    acc = np.zeros(len(shares[0]), dtype=object)
    for l, s in zip(lam, shares):
        acc = (acc + s.values.astype(object) * l) % p
    return acc.astype(np.uint64)


def add(a: ShareVector, b: ShareVector) -> ShareVector:
    """Share of ``x + y`` from shares of ``x`` and ``y`` held by the same party."""
    if a.party_id != b.party_id or a.scheme != b.scheme or len(a) != len(b):
        raise ConsistencyError("cannot add shares of different parties or schemes")
    if a.scheme.kind == "additive_gf2":
        vals = a.values ^ b.values
    else:
        vals = _addmod(a.values, b.values, a.scheme.p)
    return ShareVector(a.party_id, a.scheme, vals, a.n_parties)


def lin_combine(share_: ShareVector, matrix: Union[np.ndarray, ToeplitzSeed]) -> ShareVector:
    """Apply a public matrix to one party's share: returns a share of ``x @ M``.

    A :class:`ToeplitzSeed` is applied with the fast Toeplitz product, so a
    server hashing its share does exactly the work of a local hash.
    """
    scheme = share_.scheme
    p = scheme.p
    if isinstance(matrix, ToeplitzSeed):
        if matrix.n != len(share_):
            raise DimensionError(f"share of length {len(share_)} against Toeplitz n={matrix.n}")
        out = toeplitz_apply_mod(share_.values.astype(np.uint64), matrix, p)
    else:
        mat = np.asarray(matrix)
        if mat.ndim != 2 or mat.shape[0] != len(share_):
            raise DimensionError(f"share of length {len(share_)} against matrix of shape {mat.shape}")
        if scheme.kind == "additive_gf2":
            out = (share_.values.astype(np.int64) @ (mat.astype(np.int64) & 1)) & 1
        else:
            m_obj = np.array([[int(v) % p for v in row] for row in mat], dtype=object)
            out = np.array([int(v) % p for v in share_.values.astype(object) @ m_obj], dtype=object)
    return ShareVector(share_.party_id, scheme, np.asarray(out).astype(scheme.dtype), share_.n_parties)


# --- Beaver triples -----------------------------------------------------------

@dataclass(frozen=True)
class BeaverTriple:
    """One party's shares of a GF(2) triple ``(a, b, a & b)``."""
    party_id: int
    a: int
    b: int
    c: int


class TripleSupply:
    """Finite pool of dealt GF(2) triples; every triple is handed out at most once."""

    def __init__(self, a: np.ndarray, b: np.ndarray, c: np.ndarray):
        self.a, self.b, self.c = a, b, c
        self._used = np.zeros(a.shape[1], dtype=bool)
        self._cursor = 0

    @property
    def n_parties(self) -> int:
        return self.a.shape[0]

    @property
    def size(self) -> int:
        return self.a.shape[1]

    @property
    def consumed(self) -> int:
        return int(self._used.sum())

    def take_indices(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.max() >= self.size or idx.min() < 0):
            raise TripleExhausted(f"triple index outside supply of {self.size}")
        if self._used[idx].any():
            raise TripleReuse("triple already consumed")
        if np.unique(idx).size != idx.size:
            raise TripleReuse("the same triple requested twice")
        self._used[idx] = True
        return self.a[:, idx], self.b[:, idx], self.c[:, idx]

    def take(self, count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        while self._cursor < self.size and self._used[self._cursor]:
            self._cursor += 1
        if self._cursor + count > self.size:
            raise TripleExhausted(f"requested {count} triples, {self.size - self._cursor} left")
        idx = np.arange(self._cursor, self._cursor + count)
        self._cursor += count
        return self.take_indices(idx)

    def per_party(self) -> list[list[BeaverTriple]]:
        return [[BeaverTriple(i, int(self.a[i, k]), int(self.b[i, k]), int(self.c[i, k]))
                 for k in range(self.size)] for i in range(self.n_parties)]


def _deal(count: int, n_parties: int, rng: np.random.Generator):
    a = rng.integers(0, 2, size=count, dtype=np.uint8)
    b = rng.integers(0, 2, size=count, dtype=np.uint8)
    sh = []
    for secret in (a, b, a & b):
        parts = rng.integers(0, 2, size=(n_parties - 1, count), dtype=np.uint8)
        last = secret ^ np.bitwise_xor.reduce(parts, axis=0)
        sh.append(np.vstack([parts, last[None, :]]))
    return sh


def deal_triples(count: int, n_parties: int, rng: np.random.Generator) -> TripleSupply:
    if n_parties < 2:
        raise SharingError("need at least two parties")
    a, b, c = _deal(count, n_parties, rng)
    return TripleSupply(a, b, c)


class TripleDealer:
    """Trusted dealer producing fresh triples on demand; counts what it dealt."""

    def __init__(self, n_parties: int, rng: np.random.Generator, limit: int | None = None):
        self.n_parties = n_parties
        self.rng = rng
        self.limit = limit
        self.consumed = 0

    def take(self, count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.limit is not None and self.consumed + count > self.limit:
            raise TripleExhausted(f"dealer limit of {self.limit} triples reached")
        self.consumed += count
        a, b, c = _deal(count, self.n_parties, self.rng)
        return a, b, c
