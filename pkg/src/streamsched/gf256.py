"""GF(2^8) arithmetic and incremental Gaussian elimination.

Elements are ints in [0, 255]; the field is GF(2)[x] / (x^8 + x^4 + x^3 + x + 1).
Vectors are ``numpy.uint8`` arrays and all row operations go through a
precomputed 256x256 multiplication table.
"""
from __future__ import annotations

import numpy as np

POLY = 0x11B
GENERATOR = 0x03


class RankDeficientError(ValueError):
    """Raised when a system does not (yet) determine its unknowns."""


def _slow_mul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= POLY
    return r


def _build_tables():
    exp = np.zeros(512, dtype=np.int64)
    log = np.zeros(256, dtype=np.int64)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _slow_mul(x, GENERATOR)
    exp[255:510] = exp[:255]
    mul = np.zeros((256, 256), dtype=np.uint8)
    nz = np.arange(1, 256)
    mul[1:, 1:] = exp[log[nz][:, None] + log[nz][None, :]]
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[(255 - log[nz]) % 255]
    return exp, log, mul, inv


EXP, LOG, MUL_TABLE, INV_TABLE = _build_tables()


def add(a: int, b: int) -> int:
    return a ^ b


def mul(a: int, b: int) -> int:
    return int(MUL_TABLE[a, b])


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no multiplicative inverse in GF(2^8)")
    return int(INV_TABLE[a])


def scale(vec: np.ndarray, c: int) -> np.ndarray:
    """Multiply every symbol of ``vec`` by the scalar ``c``."""
    return MUL_TABLE[c][vec]


def dot(coeffs, vectors) -> np.ndarray:
    """Linear combination sum_i coeffs[i] * vectors[i]."""
    out = np.zeros_like(np.asarray(vectors[0], dtype=np.uint8))
    for c, v in zip(coeffs, vectors):
        if c:
            out ^= MUL_TABLE[int(c)][v]
    return out


class CoeffMatrix:
    """Coefficient rows kept in reduced row-echelon form.

    ``col_offset`` is the sequence index of column 0.  Each row may carry a
    payload (the right-hand side), which is transformed along with it.
    """

    def __init__(self, ncols: int, col_offset: int = 1):
        if ncols < 0:
            raise ValueError("ncols must be non-negative")
        self.ncols = ncols
        self.col_offset = col_offset
        self.rows: list[np.ndarray] = []
        self.payloads: list[np.ndarray | None] = []
        self.pivots: list[int] = []

    @property
    def rank(self) -> int:
        return len(self.rows)

    def copy(self) -> "CoeffMatrix":
        m = CoeffMatrix(self.ncols, self.col_offset)
        m.rows = [r.copy() for r in self.rows]
        m.payloads = [None if p is None else p.copy() for p in self.payloads]
        m.pivots = list(self.pivots)
        return m

    def widen(self, ncols: int) -> None:
        """Append zero columns on the right."""
        if ncols < self.ncols:
            raise ValueError("cannot shrink with widen()")
        extra = ncols - self.ncols
        if extra:
            self.rows = [np.concatenate([r, np.zeros(extra, np.uint8)]) for r in self.rows]
        self.ncols = ncols

    def drop_left(self, n: int) -> None:
        """Remove ``n`` leading columns; they must be zero in every row."""
        if n <= 0:
            return
        for r in self.rows:
            if r[:n].any():
                raise ValueError("dropped columns are not eliminated")
        self.rows = [r[n:].copy() for r in self.rows]
        self.pivots = [c - n for c in self.pivots]
        self.ncols -= n
        self.col_offset += n

    def insert(self, row, payload=None) -> bool:
        """Fold ``row`` in; returns True iff it was linearly independent."""
        row = np.array(row, dtype=np.uint8)
        if row.shape != (self.ncols,):
            raise ValueError(f"row length {row.shape} does not match {self.ncols} columns")
        pay = None if payload is None else np.array(payload, dtype=np.uint8)
        for r, p, c in zip(self.rows, self.payloads, self.pivots):
            f = int(row[c])
            if f:
                row ^= MUL_TABLE[f][r]
                if pay is not None and p is not None:
                    pay ^= MUL_TABLE[f][p]
        nz = np.flatnonzero(row)
        if nz.size == 0:
            return False
        piv = int(nz[0])
        k = int(INV_TABLE[row[piv]])
        row = MUL_TABLE[k][row]
        if pay is not None:
            pay = MUL_TABLE[k][pay]
        # back-eliminate the new pivot from existing rows to stay reduced
        for i, r in enumerate(self.rows):
            f = int(r[piv])
            if f:
                self.rows[i] = r ^ MUL_TABLE[f][row]
                if pay is not None and self.payloads[i] is not None:
                    self.payloads[i] = self.payloads[i] ^ MUL_TABLE[f][pay]
        pos = int(np.searchsorted(self.pivots, piv))
        self.rows.insert(pos, row)
        self.payloads.insert(pos, pay)
        self.pivots.insert(pos, piv)
        return True

    def pop_solved(self):
        """Remove and yield ``(column, value)`` for rows with a single nonzero."""
        keep_r, keep_p, keep_c, solved = [], [], [], []
        for r, p, c in zip(self.rows, self.payloads, self.pivots):
            if np.count_nonzero(r) == 1:
                solved.append((c, p))
            else:
                keep_r.append(r)
                keep_p.append(p)
                keep_c.append(c)
        self.rows, self.payloads, self.pivots = keep_r, keep_p, keep_c
        return solved

    def substitute(self, col: int, value: np.ndarray | None) -> None:
        """Eliminate a now-known column from every row, then re-reduce."""
        rows, pays = self.rows, self.payloads
        self.rows, self.payloads, self.pivots = [], [], []
        for r, p in zip(rows, pays):
            f = int(r[col])
            if f:
                r = r.copy()
                r[col] = 0
                if p is not None and value is not None:
                    p = p ^ MUL_TABLE[f][value]
            self.insert(r, p)


def rank_update(m: CoeffMatrix, row) -> tuple[CoeffMatrix, bool]:
    """Fold ``row`` into ``m`` (in place); report whether the rank grew."""
    increased = m.insert(row)
    return m, increased


def solve(m, rhs) -> list[np.ndarray]:
    """Solve ``rows @ x = rhs`` for the unknown symbol vectors ``x``.

    ``m`` is a :class:`CoeffMatrix` (its rows as currently stored) or any
    sequence of coefficient rows; ``rhs[i]`` pairs with row ``i``.  Raises
    :class:`RankDeficientError` if the rows do not determine every column.
    """
    rows = m.rows if isinstance(m, CoeffMatrix) else [np.asarray(r, np.uint8) for r in m]
    n = m.ncols if isinstance(m, CoeffMatrix) else (len(rows[0]) if rows else 0)
    if len(rhs) != len(rows):
        raise ValueError("need one right-hand side per row")
    if len(rows) < n:
        raise RankDeficientError(f"rank {len(rows)} < {n} unknowns")
    a = [np.array(r, dtype=np.uint8) for r in rows]
    b = [np.array(v, dtype=np.uint8) for v in rhs]
    for col in range(n):
        piv = next((i for i in range(col, len(a)) if a[i][col]), None)
        if piv is None:
            raise RankDeficientError(f"no pivot for column {col}")
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        k = int(INV_TABLE[a[col][col]])
        a[col] = MUL_TABLE[k][a[col]]
        b[col] = MUL_TABLE[k][b[col]]
        for i in range(len(a)):
            f = int(a[i][col])
            if i != col and f:
                a[i] = a[i] ^ MUL_TABLE[f][a[col]]
                b[i] = b[i] ^ MUL_TABLE[f][b[col]]
    return b[:n]
