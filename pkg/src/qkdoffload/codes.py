"""Code fixtures: Hamming(7,4) and seeded random regular LDPC ensembles."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .bitlinalg import ParityCheck, emit_alist, parse_alist


def hamming74() -> ParityCheck:
    # column j is the binary expansion of j + 1, so every column is distinct
    cols = [[(j + 1) >> b & 1 for b in range(3)] for j in range(7)]
    return ParityCheck.from_dense(np.array(cols, dtype=np.uint8).T)


def _four_cycle_edges(rows: np.ndarray, n: int) -> np.ndarray:
    """Edge indices (into the row-major socket table) that close a 4-cycle."""
    r, dc = rows.shape
    bad = np.zeros(rows.size, dtype=bool)
    owner: dict[tuple[int, int], int] = {}
    for i in range(r):
        row = np.sort(rows[i])
        for a in range(dc):
            for b in range(a + 1, dc):
                key = (int(row[a]), int(row[b]))
                prev = owner.get(key)
                if prev is None:
                    owner[key] = i
                else:
                    pos = np.flatnonzero(rows[i] == row[a])[0]
                    bad[i * dc + pos] = True
    return np.flatnonzero(bad)


def regular_ldpc(n: int, dv: int = 3, dc: int = 6, seed: int = 0, max_passes: int = 200) -> ParityCheck:
    """Random (dv, dc)-regular code from the configuration model.

    Duplicate edges and 4-cycles are removed by degree-preserving edge swaps.
    Deterministic for a given seed.
    """
    if (n * dv) % dc:
        raise ValueError(f"n*dv={n * dv} is not divisible by dc={dc}")
    r = n * dv // dc
    rng = np.random.default_rng(seed)
    sockets = rng.permutation(np.repeat(np.arange(n), dv)).reshape(r, dc)

    def fix(bad: np.ndarray) -> None:
        for e in bad:
            i, a = divmod(int(e), dc)
            for _ in range(100):
                f = int(rng.integers(sockets.size))
                i2, b = divmod(f, dc)
                if i2 == i:
                    continue
                u, v = sockets[i, a], sockets[i2, b]
                if v in sockets[i] or u in sockets[i2]:
                    continue
                sockets[i, a], sockets[i2, b] = v, u
                break

    for _ in range(max_passes):
        dup = []
        for i, row in enumerate(sockets):
            seen = set()
            for a, v in enumerate(row.tolist()):
                if v in seen:
                    dup.append(i * dc + a)
                seen.add(v)
        if dup:
            fix(np.array(dup))
            continue
        cyc = _four_cycle_edges(sockets, n)
        if cyc.size == 0:
            break
        fix(cyc)
    return ParityCheck(n=n, r=r, rows=tuple(tuple(sorted(set(row.tolist()))) for row in sockets))


def load_fixture(name: str) -> ParityCheck:
    """Load one of the alist files bundled under ``qkdoffload/data``."""
    return parse_alist(resources.files("qkdoffload").joinpath("data", name).read_text())


def load_code(path: str | Path) -> ParityCheck:
    return parse_alist(Path(path).read_bytes())


def write_code(h: ParityCheck, path: str | Path) -> None:
    Path(path).write_text(emit_alist(h))
