"""Binary symmetric channels, error estimation, entropy and leakage accounting."""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .bitlinalg import BitBlock, DimensionError


class ParameterError(ValueError):
    pass


class KeyExhausted(RuntimeError):
    """The pre-shared key store cannot cover a one-time-pad request."""


def substream(seed: int, *names: int | str) -> np.random.Generator:
    """Independent generator for a named role within a seeded run.

    ``substream(7, "block", 3, "bob")`` is stable across processes, so each
    role's randomness can be reproduced on its own.
    """
    key = tuple(n if isinstance(n, int) else zlib.crc32(n.encode()) for n in names)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class ChannelParams:
    e: float
    d: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("e", "d"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.5:
                raise ParameterError(f"{name}={v} outside [0, 0.5]")


@dataclass(frozen=True)
class LeakEntry:
    label: str
    bits: int
    direction: str
    novel: bool = True


@dataclass
class LeakageLedger:
    """Append-only record of bits disclosed on the public channel.

    ``novel`` marks entries that carry information about the key beyond what
    earlier entries already determine (e.g. ``s_B`` once ``s_A`` and ``s_e``
    are public is not novel). Privacy amplification subtracts novel bits.
    """

    entries: list[LeakEntry] = field(default_factory=list)

    def record(self, label: str, bits: int, direction: str, novel: bool = True) -> None:
        if bits < 0:
            raise ParameterError("leaked bit count must be non-negative")
        self.entries.append(LeakEntry(label, int(bits), direction, novel))

    @property
    def total(self) -> int:
        return sum(e.bits for e in self.entries)

    @property
    def novel_total(self) -> int:
        return sum(e.bits for e in self.entries if e.novel)

    def total_for(self, prefix: str) -> int:
        return sum(e.bits for e in self.entries if e.label.startswith(prefix))

    def to_dict(self) -> dict:
        return {"total": self.total, "novel_total": self.novel_total,
                "entries": [asdict(e) for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class KeyStore:
    """Pool of previously agreed secret bits consumed as one-time pads."""

    def __init__(self, material: BitBlock):
        self._bits = material.bits
        self._cursor = 0

    @classmethod
    def random(cls, size: int, rng: np.random.Generator) -> "KeyStore":
        return cls(BitBlock.random(size, rng))

    @property
    def remaining(self) -> int:
        return self._bits.size - self._cursor

    @property
    def consumed(self) -> int:
        return self._cursor

    def take(self, count: int) -> BitBlock:
        if count > self.remaining:
            raise KeyExhausted(f"need {count} one-time-pad bits, {self.remaining} left")
        out = BitBlock.from_bits(self._bits[self._cursor:self._cursor + count])
        self._cursor += count
        return out


def bernoulli_block(length: int, p: float, rng: np.random.Generator) -> BitBlock:
    return BitBlock.from_bits((rng.random(length) < p).astype(np.uint8))


def transmit(k_a: BitBlock, p: ChannelParams, session: int | str = 0) -> tuple[BitBlock, BitBlock, BitBlock]:
    """Send ``k_a`` to Bob over BSC(e) and to Eve over an independent BSC(d).

    Returns ``(k_b, k_e, e_vec)`` with ``k_b = k_a ^ e_vec``.
    """
    e_vec = bernoulli_block(k_a.len, p.e, substream(p.seed, "channel", session, "bob"))
    eve_noise = bernoulli_block(k_a.len, p.d, substream(p.seed, "channel", session, "eve"))
    return k_a ^ e_vec, k_a ^ eve_noise, e_vec


def estimate_qber(k_a: BitBlock, k_b: BitBlock, sample_fraction: float, ledger: LeakageLedger,
                  rng: np.random.Generator, sample_size: int | None = None
                  ) -> tuple[float, BitBlock, BitBlock]:
    """Cut-and-choose QBER estimate.

    A uniformly random subset of positions is compared in public (each
    compared bit is charged to the ledger) and then discarded from both keys.
    """
    if k_a.len != k_b.len:
        raise DimensionError("keys differ in length")
    if not 0.0 < sample_fraction < 1.0:
        raise ParameterError(f"sample_fraction={sample_fraction} must lie in (0, 1)")
    if sample_size is None:
        sample_size = max(1, int(round(sample_fraction * k_a.len)))
    if sample_size > k_a.len:
        raise ParameterError(f"sample of {sample_size} bits exceeds key of {k_a.len}")
    idx = rng.choice(k_a.len, size=sample_size, replace=False)
    mask = np.zeros(k_a.len, dtype=bool)
    mask[idx] = True
    mismatches = int(np.count_nonzero(k_a.bits[mask] != k_b.bits[mask]))
    ledger.record("estimation/sample", sample_size, "both", novel=False)
    return mismatches / sample_size, k_a.select(~mask), k_b.select(~mask)


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ParameterError(f"binary entropy undefined at p={p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)
