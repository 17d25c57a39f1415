"""Finite function tables f: X x Y -> Z and their query oracles.

Values of Z are stored as integers 0..|Z|-1. Families:

* ``make_gt(N)``: GT on [N] x [N], 1-indexed at the interface, row/column
  ``k-1`` holds the value ``k``.
* ``make_chi(q)``, ``make_ps(q)``, ``make_ps_prime(q)``: quadratic character
  and perfect-square tests over the prime field F_q. The character's values
  {0, 1, -1} are encoded {0, 1, 2} so that answers live in Z_3.
* ``make_composed(n, q)``: inner product with an indexed column,
  g((x_1..x_n), (j, y)) = sum_i y_i x_ij mod 2.

Composed-function encodings: a row ``x`` is an nq-bit integer whose most
significant q bits are block x_1, and within a block bit j=1 is the most
significant. A column is ``(j - 1) * 2**n + y`` where y_1 is the most
significant of the n bits of y.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qtradeoff.qsim import Circuit, LocalUnitary, dim_cap, toffoli


class TableError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FunctionTable:
    """Dense table of f(x, y) with ``table[x, y]`` in range(size_z).

    ``row_labels`` records, for restricted tables, which row of the parent
    domain each row came from; algorithms that output parent-domain values
    are scored against it.
    """

    name: str
    size_z: int
    table: np.ndarray
    row_labels: tuple[int, ...] | None = None

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.int64)
        if t.ndim != 2 or 0 in t.shape:
            raise TableError(f"table must be a nonempty 2-d array, got shape {t.shape}")
        if self.size_z < 1:
            raise TableError("size_z must be positive")
        if t.min() < 0 or t.max() >= self.size_z:
            raise TableError(f"table values must lie in [0, {self.size_z})")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)
        if self.row_labels is not None:
            labels = tuple(int(v) for v in self.row_labels)
            if len(labels) != t.shape[0]:
                raise TableError("one row label per row required")
            object.__setattr__(self, "row_labels", labels)

    @property
    def size_x(self) -> int:
        return self.table.shape[0]

    @property
    def size_y(self) -> int:
        return self.table.shape[1]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.size_x, self.size_y, self.size_z

    def __call__(self, x: int, y: int) -> int:
        return int(self.table[x, y])

    def label(self, x: int) -> int:
        return x if self.row_labels is None else self.row_labels[x]

    def is_constant(self) -> bool:
        return bool(np.all(self.table == self.table.flat[0]))

    def identical_rows(self) -> list[tuple[int, int]]:
        """Pairs x < x' with f_x == f_x' (no algorithm can tell them apart)."""
        seen: dict[bytes, int] = {}
        pairs = []
        for x in range(self.size_x):
            key = self.table[x].tobytes()
            if key in seen:
                pairs.append((seen[key], x))
            else:
                seen[key] = x
        return pairs

    def to_json(self) -> dict:
        return {"name": self.name, "sizes": list(self.sizes), "table": [int(v) for v in self.table.reshape(-1)]}

    @classmethod
    def from_json(cls, data: dict | str) -> "FunctionTable":
        if isinstance(data, str):
            data = json.loads(data)
        try:
            name, sizes, flat = data["name"], data["sizes"], data["table"]
        except (KeyError, TypeError) as e:
            raise TableError(f"function-table JSON missing field: {e}") from None
        if len(sizes) != 3 or any(int(s) < 1 for s in sizes):
            raise TableError(f"bad sizes {sizes}")
        sx, sy, sz = (int(s) for s in sizes)
        if len(flat) != sx * sy:
            raise TableError(f"table length {len(flat)} != {sx} * {sy}")
        return cls(str(name), sz, np.asarray(flat, dtype=np.int64).reshape(sx, sy))


# --- families ---------------------------------------------------------------


def make_gt(N: int) -> FunctionTable:
    if N < 1:
        raise TableError("GT needs N >= 1")
    vals = np.arange(1, N + 1)
    return FunctionTable(f"GT_{N}", 2, (vals[:, None] > vals[None, :]).astype(np.int64))


def gt(x: int, y: int) -> int:
    return int(x > y)


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % d for d in range(2, math.isqrt(n) + 1))


def _check_odd_prime(q: int):
    if q == 2 or not is_prime(q):
        raise TableError(f"{q} is not an odd prime")


CHI_CODE = {0: 0, 1: 1, -1: 2}


def chi_values(q: int) -> np.ndarray:
    """Quadratic character of F_q as signed values in {-1, 0, 1}."""
    _check_odd_prime(q)
    squares = {z * z % q for z in range(1, q)}
    return np.array([0 if x == 0 else (1 if x in squares else -1) for x in range(q)], dtype=np.int64)


def make_chi(q: int) -> np.ndarray:
    """Quadratic character encoded into Z_3 (0 -> 0, 1 -> 1, -1 -> 2)."""
    return chi_values(q) % 3


def decode_chi(code: int) -> int:
    return {0: 0, 1: 1, 2: -1}[int(code)]


def make_ps(q: int) -> FunctionTable:
    _check_odd_prime(q)
    squares = {z * z % q for z in range(q)}
    idx = np.arange(q)
    sums = (idx[:, None] + idx[None, :]) % q
    return FunctionTable(f"PS_{q}", 2, np.isin(sums, list(squares)).astype(np.int64))


def make_ps_prime(q: int) -> FunctionTable:
    chi = make_chi(q)
    idx = np.arange(q)
    return FunctionTable(f"PSprime_{q}", 3, chi[(idx[:, None] + idx[None, :]) % q])


def composed_bit(x: int, i: int, j: int, n: int, q: int) -> int:
    """x_ij (1-indexed i in [n], j in [q]) of an nq-bit row index."""
    return (x >> (n * q - 1 - ((i - 1) * q + (j - 1)))) & 1


def composed_column(x: int, j: int, n: int, q: int) -> int:
    """The n bits x_1j..x_nj packed with x_1j most significant."""
    w = 0
    for i in range(1, n + 1):
        w = (w << 1) | composed_bit(x, i, j, n, q)
    return w


def make_composed(n: int, q: int, cap: int | None = None) -> FunctionTable:
    if n < 1 or q < 1:
        raise TableError("composed function needs n, q >= 1")
    sx, sy = 2 ** (n * q), q * 2**n
    cap = dim_cap() if cap is None else cap
    if sx * sy > cap:
        raise TableError(f"composed table {sx} x {sy} exceeds cap {cap}")
    xs = np.arange(sx)
    table = np.zeros((sx, sy), dtype=np.int64)
    for j in range(1, q + 1):
        w = np.zeros(sx, dtype=np.int64)
        for i in range(1, n + 1):
            w = (w << 1) | ((xs >> (n * q - 1 - ((i - 1) * q + (j - 1)))) & 1)
        for y in range(2**n):
            table[:, (j - 1) * 2**n + y] = np.bitwise_count(w & y) & 1
    return FunctionTable(f"composed_{n}_{q}", 2, table)


def composed_required_rows(n: int, q: int) -> list[int]:
    """Rows (x_1, 0^q, ..., 0^q) for every x_1 in {0,1}^q."""
    return [x1 << (q * (n - 1)) for x1 in range(2**q)]


def composed_subset(n: int, q: int, size: int) -> list[int]:
    """Required rows completed with the smallest remaining indices, sorted."""
    required = composed_required_rows(n, q)
    if size < len(required):
        raise TableError(f"|X| = {size} is smaller than the {len(required)} required rows")
    if size > 2 ** (n * q):
        raise TableError(f"|X| = {size} exceeds 2^(nq)")
    chosen = set(required)
    x = 0
    while len(chosen) < size:
        chosen.add(x)
        x += 1
    return sorted(chosen)


def restrict_composed(table: FunctionTable, subset: Sequence[int], n: int, q: int) -> FunctionTable:
    subset = sorted(int(s) for s in subset)
    if len(set(subset)) != len(subset):
        raise TableError("subset has repeated rows")
    missing = [r for r in composed_required_rows(n, q) if r not in set(subset)]
    if missing:
        raise TableError(f"subset is missing required rows {missing}")
    if subset[-1] >= table.size_x:
        raise TableError("subset row out of range")
    labels = subset if table.row_labels is None else [table.row_labels[s] for s in subset]
    return FunctionTable(f"{table.name}_restricted{len(subset)}", table.size_z, table.table[subset], tuple(labels))


# --- oracles ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OracleUnitary:
    """U|y>|a> = |y>|a + f(x, y) mod |Z|> for a fixed hidden row x."""

    base: FunctionTable
    hidden_x: int

    @property
    def dims(self) -> tuple[int, int]:
        return self.base.size_y, self.base.size_z

    def perm(self) -> np.ndarray:
        sy, sz = self.dims
        row = self.base.table[self.hidden_x]
        ys, a = np.divmod(np.arange(sy * sz), sz)
        return ys * sz + (a + row[ys]) % sz

    def local(self, query: str = "y", answer: str = "a") -> LocalUnitary:
        if self.base.size_y < 2 or self.base.size_z < 2:
            raise TableError("oracle registers need dimension >= 2")
        return LocalUnitary((query, answer), self.dims, perm=self.perm(), name=f"U_{self.base.name}[{self.hidden_x}]", kind="oracle")

    def matrix(self) -> np.ndarray:
        sy, sz = self.dims
        m = np.zeros((sy * sz, sy * sz))
        m[self.perm(), np.arange(sy * sz)] = 1.0
        return m


def make_oracle(f: FunctionTable, x: int) -> OracleUnitary:
    if not 0 <= x < f.size_x:
        raise TableError(f"hidden index {x} out of range [0, {f.size_x})")
    return OracleUnitary(f, x)


def controlled_oracle(
    oracle: OracleUnitary,
    y: str = "y",
    ancilla: str = "anc",
    control: str = "c",
    answer: str = "a",
) -> Circuit:
    """Controlled-U_f from two calls to U_f, one Toffoli and a |0> ancilla.

    |y>|0>|c>|a> -> |y>|0>|c>|a xor c f(y)>: the first call writes f(y) into
    the ancilla, the Toffoli copies c f(y) to the answer, the second call
    erases the ancilla.
    """
    if oracle.base.size_z != 2:
        raise TableError("controlled oracle needs a binary-output function")
    u = oracle.local(y, ancilla)
    return Circuit([u, toffoli(ancilla, control, answer), u])


def embed_or_instance(h: Sequence[int], n: int, q: int, table: FunctionTable | None = None) -> int:
    """Row with block x_1 = h and all other blocks zero.

    Returns the full-domain row index, or the row position inside ``table``
    when a restricted table is supplied.
    """
    if len(h) != q:
        raise TableError(f"h has {len(h)} values, expected q = {q}")
    x1 = 0
    for bit in h:
        if bit not in (0, 1):
            raise TableError("h must be 0/1 valued")
        x1 = (x1 << 1) | int(bit)
    x = x1 << (q * (n - 1))
    if table is None:
        return x
    labels = table.row_labels if table.row_labels is not None else tuple(range(table.size_x))
    try:
        return labels.index(x)
    except ValueError:
        raise TableError("restricted table lacks the embedded row") from None

