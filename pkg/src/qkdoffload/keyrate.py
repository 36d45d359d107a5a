"""Secret-capacity and key-balance calculators for reverse reconciliation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .channel import ParameterError, binary_entropy


def _check(e: float, d: float) -> None:
    for name, v in (("e", e), ("d", d)):
        if not 0.0 <= v <= 0.5:
            raise ParameterError(f"{name}={v} outside [0, 0.5]")


def composite_rate(e: float, d: float) -> float:
    """Bit-error rate of the Bob-Eve channel formed by two independent BSCs."""
    return e + d - 2.0 * e * d


def secret_capacity(e: float, d: float) -> float:
    _check(e, d)
    return binary_entropy(composite_rate(e, d)) - binary_entropy(e)


def capacity_enc(e: float, d: float) -> float:
    """Capacity left after paying ``H_b(e)`` key bits per symbol to encrypt ``s_B``."""
    return secret_capacity(e, d) - binary_entropy(e)


def zero_crossing(e: float, tol: float = 1e-12) -> Optional[float]:
    """Smallest ``d`` in [0, 0.5] with ``capacity_enc(e, d) >= 0``; None if there is none.

    ``capacity_enc`` is non-decreasing in ``d``, so bisection is exact up to ``tol``.
    """
    if capacity_enc(e, 0.5) < 0.0:
        return None
    if capacity_enc(e, 0.0) >= 0.0:
        return 0.0
    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if capacity_enc(e, mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def permutation_cost(n: int) -> int:
    """Bits needed to name one permutation of n items: ceil(log2(n!))."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    if n < 64:
        return (math.factorial(n) - 1).bit_length()
    return math.ceil(math.lgamma(n + 1) / math.log(2))


@dataclass(frozen=True)
class CapacityPoint:
    e: float
    d: float
    c_s: float
    c_s_enc: float

    @property
    def feasible_enc(self) -> bool:
        return self.c_s_enc > 0.0


def generate_balance_curves(e_list: Iterable[float], d_grid: Sequence[float]) -> list[CapacityPoint]:
    rows = []
    for e in e_list:
        h_e = binary_entropy(e)
        for d in d_grid:
            c_s = secret_capacity(e, d)
            rows.append(CapacityPoint(e, d, c_s, c_s - h_e))
    return rows


CURVE_HEADER = ("e", "d", "c_s", "c_s_enc", "feasible")


def curves_csv(points: Iterable[CapacityPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for p in points:
        w.writerow([repr(p.e), repr(p.d), repr(p.c_s), repr(p.c_s_enc), int(p.feasible_enc)])
    return buf.getvalue()


def pa_output_length(n: int, qber: float, novel_leak: int, margin: int = 50) -> int:
    """Final key length used by the pipeline: ``n(1 - H_b(q)) - leak - margin``, floored at 0.

    Desk-scale bookkeeping only; it carries no finite-key security statement.
    """
    return max(0, math.floor(n * (1.0 - binary_entropy(min(qber, 0.5))) - novel_leak - margin))
