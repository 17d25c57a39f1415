"""Ordered search: restricting GT_N to a subset S of [N], and the bound arithmetic.

A query to GT(s_j, .) on [N] is simulated with a query-controlled oracle for
GT(j, .) on [N'] where N' = |S|. Values in [N] and [N'] are 1-indexed at the
interface; registers hold the value minus one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from qtradeoff.ftab import FunctionTable, OracleUnitary, controlled_oracle, gt, make_gt
from qtradeoff.qsim import Circuit, LocalUnitary, RegisterLayout, apply_batch, cnot, monomial, pauli_x

class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class SearchRestriction:
    N: int
    S: tuple[int, ...]

    def __post_init__(self):
        s = tuple(int(v) for v in self.S)
        object.__setattr__(self, "S", s)
        if not s:
            raise SearchError("S must be nonempty")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise SearchError("S must be strictly increasing")
        if s[0] < 1 or s[-1] > self.N:
            raise SearchError(f"S must lie in [1, {self.N}]")

    @classmethod
    def full(cls, N: int) -> "SearchRestriction":
        return cls(N, tuple(range(1, N + 1)))

    @property
    def n_prime(self) -> int:
        return len(self.S)

    @property
    def y_dim(self) -> int:
        """Dimension of the y register; N = 1 is padded to a qubit."""
        return max(self.N, 2)

    @property
    def b_dim(self) -> int:
        """Dimension of the B register; a lone element is padded to a qubit."""
        return max(self.n_prime, 2)

    def _check_y(self, y: int):
        if not 1 <= y <= self.N:
            raise SearchError(f"y = {y} outside [1, {self.N}]")


def a_map(r: SearchRestriction, y: int) -> int:
    r._check_y(y)
    return int(r.S[0] <= y)


def b_map(r: SearchRestriction, y: int) -> int:
    r._check_y(y)
    if r.S[0] > y:
        return 1
    return max(i for i, s in enumerate(r.S, start=1) if s <= y)


def v_unitary(r: SearchRestriction, y: str = "y", a: str = "aq", b: str = "breg") -> LocalUnitary:
    """|y>|a>|b> -> |y>|a xor A(y)>|b + B(y) mod N'> (0-indexed registers)."""
    amap = [a_map(r, v) for v in range(1, r.N + 1)]
    bmap = [b_map(r, v) - 1 for v in range(1, r.N + 1)]
    np_ = r.n_prime

    def fn(yv, av, bv):
        if yv >= r.N:
            return yv, av, bv
        if bv >= np_:
            return yv, av ^ amap[yv], bv
        return yv, av ^ amap[yv], (bv + bmap[yv]) % np_

    return monomial([y, a, b], [r.y_dim, 2, r.b_dim], fn, name="V")


def restricted_gt(r: SearchRestriction) -> FunctionTable:
    """GT on [N'] x [N'], with a zero padding column when N' = 1."""
    if r.n_prime == 1:
        return FunctionTable("GT_1_padded", 2, np.zeros((1, 2), dtype=np.int64))
    return make_gt(r.n_prime)


def layout(r: SearchRestriction) -> RegisterLayout:
    return RegisterLayout.of(("y", r.y_dim), ("aq", 2), ("breg", r.b_dim), ("anc", 2), ("a", 2))


def reduce_query(r: SearchRestriction, j: int) -> Circuit:
    """Circuit on (y, aq, breg, anc, a) with |y,0,0,0,a> -> |y,0,0,0,a xor GT(s_j, y)>.

    V, then GT(j, .) on the B register controlled by the A qubit (two oracle
    calls), then flip a when the A qubit is 0, then V^-1.
    """
    if not 1 <= j <= r.n_prime:
        raise SearchError(f"j = {j} outside [1, {r.n_prime}]")
    v = v_unitary(r)
    oracle = OracleUnitary(restricted_gt(r), j - 1)
    ctrl = controlled_oracle(oracle, y="breg", ancilla="anc", control="aq", answer="a")
    gadget = [pauli_x("aq"), cnot("aq", "a"), pauli_x("aq")]
    return Circuit([v, *ctrl.ops, *gadget, v.dagger()])


@dataclass
class ReductionCheck:
    correct: bool
    ancillas_restored: bool
    oracle_calls_per_query: int
    rows: list[tuple[int, int, int, int, int]]


def check_reduction(r: SearchRestriction, j: int) -> ReductionCheck:
    """Run the reduction on every basis |y, 0, 0, 0, a> and compare with GT(s_j, y).

    All 2N inputs are propagated together as one batch. ``rows`` holds
    (j, y, a, output bit, expected bit) with 1-indexed j, y.
    """
    lay = layout(r)
    circ = reduce_query(r, j)
    sj = r.S[j - 1]
    inputs = list(itertools.product(range(1, r.N + 1), (0, 1)))
    batch = np.zeros((len(inputs), lay.total_dim), dtype=complex)
    for k, (y, a) in enumerate(inputs):
        batch[k, np.ravel_multi_index((y - 1, 0, 0, 0, a), lay.dims)] = 1.0
    calls = 0
    for op in circ.ops:
        calls += op.kind == "oracle"
        batch = apply_batch(lay, batch, op)
    out = batch.reshape((len(inputs), *lay.dims))
    correct = restored = True
    rows = []
    for k, (y, a) in enumerate(inputs):
        want = a ^ gt(sj, y)
        clean = out[k, :, 0, 0, 0, :]
        # any weight outside aq = breg = anc = 0 means an ancilla was left dirty
        restored &= abs(np.linalg.norm(clean) - 1.0) <= 1e-9
        correct &= abs(abs(clean[y - 1, want]) - 1.0) <= 1e-9
        rows.append((j, y, a, int(np.argmax(np.abs(clean[y - 1]))), want))
    return ReductionCheck(correct, restored, calls, rows)


def gt_bound(N: int, c: float) -> tuple[int, float]:
    """Smallest T with (log log N + log T) T >= c log N, and the threshold (c/2) log N / log log N.

    Logs are base 2.
    """
    if N < 4:
        raise SearchError("gt_bound needs N >= 4")
    if not 0 < c < 2:
        raise SearchError("c must lie in (0, 2)")
    lg = math.log2(N)
    llg = math.log2(lg)
    T = 1
    while (llg + math.log2(T)) * T < c * lg:
        T += 1
    return T, (c / 2) * lg / llg
