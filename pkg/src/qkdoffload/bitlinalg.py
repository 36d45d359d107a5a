"""Packed GF(2) vectors, sparse parity-check matrices and Toeplitz hashing.

Bits are packed LSB-first: bit ``i`` of a block lives in bit ``i % 8`` of
byte ``i // 8``. Every wire format and fixture in the package uses this
order.

Toeplitz convention: a seed of ``n + m - 1`` bits defines the ``n x m``
matrix ``T[i][j] = seed[i - j + m - 1]`` and a key row vector ``k`` maps to
``k T``. With ``n == m`` and a seed that is a single one at index ``m - 1``
the matrix is the identity.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import gmpy2
import numpy as np


class DimensionError(ValueError):
    """Operand lengths do not agree."""


class AlistError(ValueError):
    """Malformed alist input. ``line`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class BitBlock:
    """Immutable packed bit vector over GF(2)."""

    __slots__ = ("_len", "_payload", "_bits")

    def __init__(self, length: int, payload: bytes):
        if length < 0:
            raise ValueError("negative length")
        nbytes = (length + 7) // 8
        if len(payload) != nbytes:
            raise ValueError(f"payload of {len(payload)} bytes cannot hold exactly {length} bits")
        if length % 8 and payload[-1] >> (length % 8):
            raise ValueError("trailing pad bits must be zero")
        self._len = length
        self._payload = bytes(payload)
        self._bits = None

    # construction -----------------------------------------------------
    @classmethod
    def from_bits(cls, bits: Iterable[int] | np.ndarray) -> "BitBlock":
        arr = np.asarray(bits, dtype=np.uint8).ravel() & 1
        out = cls(arr.size, np.packbits(arr, bitorder="little").tobytes())
        arr = arr.copy()
        arr.setflags(write=False)
        out._bits = arr
        return out

    @classmethod
    def from_bytes(cls, payload: bytes, length: int) -> "BitBlock":
        return cls(length, payload)

    @classmethod
    def zeros(cls, length: int) -> "BitBlock":
        return cls(length, bytes((length + 7) // 8))

    @classmethod
    def random(cls, length: int, rng: np.random.Generator) -> "BitBlock":
        return cls.from_bits(rng.integers(0, 2, size=length, dtype=np.uint8))

    @classmethod
    def unit(cls, length: int, index: int) -> "BitBlock":
        arr = np.zeros(length, dtype=np.uint8)
        arr[index] = 1
        return cls.from_bits(arr)

    @classmethod
    def from_int(cls, value: int, length: int) -> "BitBlock":
        return cls(length, int(value).to_bytes((length + 7) // 8, "little"))

    # views --------------------------------------------------------------
    @property
    def len(self) -> int:
        return self._len

    @property
    def payload(self) -> bytes:
        return self._payload

    @property
    def bits(self) -> np.ndarray:
        """Read-only uint8 array of 0/1 values."""
        if self._bits is None:
            arr = np.unpackbits(np.frombuffer(self._payload, dtype=np.uint8),
                                count=self._len, bitorder="little")
            arr.setflags(write=False)
            self._bits = arr
        return self._bits

    def to_int(self) -> int:
        return int.from_bytes(self._payload, "little")

    def weight(self) -> int:
        return int(np.count_nonzero(self.bits))

    def flip(self, *positions: int) -> "BitBlock":
        arr = self.bits.copy()
        for p in positions:
            arr[p] ^= 1
        return BitBlock.from_bits(arr)

    def select(self, mask: np.ndarray) -> "BitBlock":
        return BitBlock.from_bits(self.bits[mask])

    def __len__(self) -> int:
        return self._len

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return BitBlock.from_bits(self.bits[idx])
        return int(self.bits[idx])

    def __xor__(self, other: "BitBlock") -> "BitBlock":
        if not isinstance(other, BitBlock):
            return NotImplemented
        if other._len != self._len:
            raise DimensionError(f"xor of {self._len}-bit and {other._len}-bit blocks")
        a = np.frombuffer(self._payload, dtype=np.uint8)
        b = np.frombuffer(other._payload, dtype=np.uint8)
        return BitBlock(self._len, (a ^ b).tobytes())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitBlock):
            return NotImplemented
        return self._len == other._len and self._payload == other._payload

    def __hash__(self) -> int:
        return hash((self._len, self._payload))

    def __repr__(self) -> str:
        if self._len <= 64:
            return f"BitBlock({''.join(map(str, self.bits))})"
        return f"BitBlock(len={self._len}, weight={self.weight()})"


def concat(blocks: Sequence[BitBlock]) -> BitBlock:
    if not blocks:
        return BitBlock.zeros(0)
    return BitBlock.from_bits(np.concatenate([b.bits for b in blocks]))


@dataclass(frozen=True, eq=False)
class ParityCheck:
    """Sparse binary parity-check matrix held as row/column adjacency lists."""

    n: int
    r: int
    rows: tuple[tuple[int, ...], ...]
    cols: tuple[tuple[int, ...], ...] = field(default=())
    edge_row: np.ndarray = field(init=False, repr=False)
    edge_col: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1 or self.r < 1:
            raise ValueError("parity-check matrix needs n >= 1 and r >= 1")
        if len(self.rows) != self.r:
            raise ValueError(f"expected {self.r} rows, got {len(self.rows)}")
        rows = tuple(tuple(sorted(row)) for row in self.rows)
        cols: list[list[int]] = [[] for _ in range(self.n)]
        for i, row in enumerate(rows):
            for a, b in zip(row, row[1:]):
                if a == b:
                    raise ValueError(f"duplicate column {a} in row {i}")
            for j in row:
                if not 0 <= j < self.n:
                    raise ValueError(f"column index {j} out of range in row {i}")
                cols[j].append(i)
        derived = tuple(tuple(c) for c in cols)
        if self.cols and tuple(tuple(sorted(c)) for c in self.cols) != derived:
            raise ValueError("row and column adjacency lists disagree")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", derived)
        er = np.repeat(np.arange(self.r), [len(row) for row in rows])
        ec = np.fromiter((j for row in rows for j in row), dtype=np.int64, count=er.size)
        er.setflags(write=False)
        ec.setflags(write=False)
        object.__setattr__(self, "edge_row", er)
        object.__setattr__(self, "edge_col", ec)

    @classmethod
    def from_dense(cls, matrix) -> "ParityCheck":
        mat = np.asarray(matrix, dtype=np.uint8) & 1
        r, n = mat.shape
        return cls(n=n, r=r, rows=tuple(tuple(np.flatnonzero(row).tolist()) for row in mat))

    def to_dense(self) -> np.ndarray:
        """Dense copy, for tests and small-code tooling only."""
        mat = np.zeros((self.r, self.n), dtype=np.uint8)
        mat[self.edge_row, self.edge_col] = 1
        return mat

    @cached_property
    def col_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_col, minlength=self.n)

    @cached_property
    def row_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_row, minlength=self.r)

    @cached_property
    def _row_starts(self) -> np.ndarray:
        return np.minimum(np.concatenate(([0], np.cumsum(self.row_degrees)[:-1])),
                          max(self.edge_col.size - 1, 0))

    @property
    def rate(self) -> float:
        return 1.0 - self.r / self.n

    def mul(self, bits: np.ndarray) -> np.ndarray:
        """``bits @ H.T`` mod 2 for a 0/1 array whose last axis has length n."""
        bits = np.asarray(bits)
        if bits.shape[-1] != self.n:
            raise DimensionError(f"vector of length {bits.shape[-1]} against H with n={self.n}")
        gathered = bits[..., self.edge_col].astype(np.uint8)
        if gathered.shape[-1] == 0:
            return np.zeros(bits.shape[:-1] + (self.r,), dtype=np.uint8)
        out = np.bitwise_xor.reduceat(gathered, self._row_starts, axis=-1)
        out[..., self.row_degrees == 0] = 0
        return out & 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParityCheck):
            return NotImplemented
        return (self.n, self.r, self.rows) == (other.n, other.r, other.rows)

    def __hash__(self) -> int:
        return hash((self.n, self.r, self.rows))


def syndrome(k: BitBlock, h: ParityCheck) -> BitBlock:
    """Return ``k H^T``: bit i is the XOR of k over the columns of row i."""
    if k.len != h.n:
        raise DimensionError(f"key of {k.len} bits against code of length {h.n}")
    return BitBlock.from_bits(h.mul(k.bits))


# --- Toeplitz -------------------------------------------------------------

@dataclass(frozen=True)
class ToeplitzSeed:
    n: int
    m: int
    bits: BitBlock

    def __post_init__(self):
        if self.m < 1 or self.m > self.n:
            raise ValueError(f"need 1 <= m <= n, got n={self.n}, m={self.m}")
        if self.bits.len != self.n + self.m - 1:
            raise ValueError(f"seed must have n+m-1={self.n + self.m - 1} bits, got {self.bits.len}")

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator) -> "ToeplitzSeed":
        return cls(n, m, BitBlock.random(n + m - 1, rng))

    def dense(self) -> np.ndarray:
        """The explicit n x m matrix; O(nm) memory."""
        i = np.arange(self.n)[:, None]
        j = np.arange(self.m)[None, :]
        return self.bits.bits[i - j + self.m - 1]


def _check_toeplitz(k_len: int, t: ToeplitzSeed) -> None:
    if k_len != t.n:
        raise DimensionError(f"input of {k_len} bits against Toeplitz seed for n={t.n}")


def toeplitz_apply_naive(k: BitBlock, t: ToeplitzSeed) -> BitBlock:
    """Row-by-row product: output bit j is the parity of k AND column j of T.

    Column j of T, read top to bottom, is ``seed[m-1-j : m-1-j+n]``, so each
    output bit is one shifted AND and a popcount on word-packed integers.
    """
    _check_toeplitz(k.len, t)
    key = k.to_int()
    seed = t.bits.to_int()
    out = np.empty(t.m, dtype=np.uint8)
    for j in range(t.m):
        out[j] = (key & (seed >> (t.m - 1 - j))).bit_count() & 1
    return BitBlock.from_bits(out)


def _toeplitz_slots(values: np.ndarray, value_bits: int, t: ToeplitzSeed) -> np.ndarray:
    """Exact integer products ``values @ T`` as little-endian slot bytes.

    The product is a window of the linear convolution of reversed ``values``
    with the seed. Both operands are packed into big integers with one slot
    per coefficient (Kronecker substitution) and multiplied with GMP, whose
    FFT multiplication makes this quasi-linear. Slots are wide enough that no
    coefficient carries into its neighbour. Returns shape ``(m, slot_bytes)``.
    """
    n, m = t.n, t.m
    max_coeff_bits = value_bits + max(n, 1).bit_length()
    sb = (max_coeff_bits + 7) // 8

    vals = np.asarray(values)[::-1]
    a = np.zeros((n, sb), dtype=np.uint8)
    if value_bits <= 8:
        a[:, 0] = vals.astype(np.uint8)
    else:
        raw = vals.astype("<u8").view(np.uint8).reshape(n, 8)
        a[:, :min(8, sb)] = raw[:, :min(8, sb)]
    b = np.zeros((n + m - 1, sb), dtype=np.uint8)
    b[:, 0] = t.bits.bits

    prod = gmpy2.mpz(int.from_bytes(a.tobytes(), "little")) * gmpy2.mpz(int.from_bytes(b.tobytes(), "little"))
    total_slots = 2 * n + m - 1
    raw = int(prod).to_bytes(total_slots * sb, "little")
    slots = np.frombuffer(raw, dtype=np.uint8).reshape(total_slots, sb)
    # out[j] = conv[n + m - 2 - j]
    return slots[n - 1:n + m - 1][::-1]


def toeplitz_apply_fast(k: BitBlock, t: ToeplitzSeed) -> BitBlock:
    """Same result as :func:`toeplitz_apply_naive` via one big carry-less product."""
    _check_toeplitz(k.len, t)
    slots = _toeplitz_slots(k.bits, 1, t)
    return BitBlock.from_bits(slots[:, 0] & 1)


def toeplitz_apply_mod(values: np.ndarray, t: ToeplitzSeed, modulus: int) -> np.ndarray:
    """``values @ T`` reduced mod ``modulus`` for residues in ``[0, modulus)``.

    Used to hash secret shares over a prime field; ``modulus`` must be below
    2**63. Returns a uint64 array of length m.
    """
    values = np.asarray(values, dtype=np.uint64)
    _check_toeplitz(values.size, t)
    if modulus == 2:
        slots = _toeplitz_slots(values & np.uint64(1), 1, t)
        return (slots[:, 0] & 1).astype(np.uint64)
    vb = (modulus - 1).bit_length()
    slots = _toeplitz_slots(values, vb, t)
    sb = slots.shape[1]
    padded = np.zeros((slots.shape[0], 16), dtype=np.uint8)
    padded[:, :sb] = slots
    lo = padded[:, :8].copy().view("<u8").ravel().astype(object)
    hi = padded[:, 8:].copy().view("<u8").ravel().astype(object)
    red = (lo % modulus + (hi % modulus) * (pow(2, 64, modulus))) % modulus
    return red.astype(np.uint64)


# --- alist ----------------------------------------------------------------

def parse_alist(text: bytes | str | io.IOBase) -> ParityCheck:
    """Parse MacKay's alist format.

    Layout: ``n r`` / max column and row degree / column degrees / row
    degrees / n lines of 1-based row indices per column / r lines of 1-based
    column indices per row. Lists may be zero-padded to the maximum degree.
    """
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        try:
            text = text.decode("ascii")
        except UnicodeDecodeError as exc:
            raise AlistError("not an ASCII alist file") from exc
    lines = [(no, ln.split()) for no, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise AlistError("empty alist input")
    pos = 0

    def ints(expected: int | None, what: str) -> tuple[int, list[int]]:
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise AlistError(f"truncated file: missing {what}", last + 1)
        no, toks = lines[pos]
        pos += 1
        try:
            vals = [int(tok) for tok in toks]
        except ValueError:
            raise AlistError(f"non-integer token in {what}", no) from None
        if expected is not None and len(vals) != expected:
            raise AlistError(f"{what}: expected {expected} values, got {len(vals)}", no)
        return no, vals

    no, (n, r) = ints(2, "header 'n r'")
    if n < 1 or r < 1:
        raise AlistError("n and r must be positive", no)
    no, (max_col, max_row) = ints(2, "maximum degrees")
    no_cd, col_deg = ints(n, "column degrees")
    no_rd, row_deg = ints(r, "row degrees")
    if max(col_deg) != max_col or min(col_deg) < 0:
        raise AlistError("column degrees inconsistent with declared maximum", no_cd)
    if max(row_deg) != max_row or min(row_deg) < 0:
        raise AlistError("row degrees inconsistent with declared maximum", no_rd)
    if sum(col_deg) != sum(row_deg):
        raise AlistError("column and row degree totals differ", no_rd)

    def entries(deg: int, max_deg: int, bound: int, what: str) -> list[int]:
        no, vals = ints(None, what)
        if len(vals) not in (deg, max_deg) or len(vals) < deg:
            raise AlistError(f"{what}: expected {deg} entries (or {max_deg} zero-padded), got {len(vals)}", no)
        body, pad = vals[:deg], vals[deg:]
        if any(v != 0 for v in pad):
            raise AlistError(f"{what}: non-zero padding", no)
        for v in body:
            if not 1 <= v <= bound:
                raise AlistError(f"{what}: index {v} outside 1..{bound}", no)
        if len(set(body)) != len(body):
            raise AlistError(f"{what}: duplicate index", no)
        return [v - 1 for v in body]

    cols = [entries(col_deg[j], max_col, r, f"column {j + 1}") for j in range(n)]
    rows = [entries(row_deg[i], max_row, n, f"row {i + 1}") for i in range(r)]
    if pos != len(lines):
        raise AlistError("trailing data after row lists", lines[pos][0])
    try:
        return ParityCheck(n=n, r=r, rows=tuple(map(tuple, rows)), cols=tuple(map(tuple, cols)))
    except ValueError as exc:
        raise AlistError(str(exc), no_rd) from None


def emit_alist(h: ParityCheck) -> str:
    col_deg = [len(c) for c in h.cols]
    row_deg = [len(r) for r in h.rows]
    max_c, max_r = max(col_deg), max(row_deg)
    out = [f"{h.n} {h.r}", f"{max_c} {max_r}",
           " ".join(map(str, col_deg)), " ".join(map(str, row_deg))]
    for c in h.cols:
        out.append(" ".join(str(i + 1) for i in c) + " 0" * (max_c - len(c)))
    for row in h.rows:
        out.append(" ".join(str(j + 1) for j in row) + " 0" * (max_r - len(row)))
    return "\n".join(line.strip() for line in out) + "\n"
