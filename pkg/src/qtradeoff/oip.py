"""Query algorithms for oracle identification and their exact evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from qtradeoff import ftab
from qtradeoff.entropy import Distribution
from qtradeoff.ftab import FunctionTable, OracleUnitary
from qtradeoff.qsim import (
    H,
    LocalUnitary,
    QState,
    RegisterLayout,
    adder,
    apply,
    measure_distribution,
    monomial,
    pauli_x,
    unitary,
)


class QueryError(ValueError):
    pass


class _Query:
    """Placeholder step where the oracle is applied to (query, answer)."""

    def __repr__(self):
        return "QUERY"


QUERY = _Query()
Step = Union[LocalUnitary, _Query]


@dataclass(frozen=True, eq=False)
class QueryAlgorithm:
    """Alternating unitaries and oracle calls, read out on ``output``.

    ``output`` may coincide with ``answer`` for algorithms that just report an
    oracle value.
    """

    layout: RegisterLayout
    query: str
    answer: str
    output: str
    steps: tuple[Step, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        for r in (self.query, self.answer, self.output):
            self.layout.index(r)
        for s in self.steps:
            if isinstance(s, LocalUnitary):
                for t in s.targets:
                    self.layout.index(t)

    @property
    def T(self) -> int:
        return sum(s is QUERY for s in self.steps)

    @property
    def registers(self) -> tuple[str, ...]:
        return self.layout.names


@dataclass
class QueryTrace:
    final: QState
    after_query: list[QState]
    after_step: list[QState]
    oracle_calls: int


def _check_compatible(alg: QueryAlgorithm, oracle: OracleUnitary):
    sy, sz = oracle.dims
    if alg.layout.dim(alg.query) != sy or alg.layout.dim(alg.answer) != sz:
        raise QueryError(
            f"oracle acts on ({sy}, {sz}) but the algorithm's query/answer registers are "
            f"({alg.layout.dim(alg.query)}, {alg.layout.dim(alg.answer)})"
        )


def simulate(alg: QueryAlgorithm, oracle: OracleUnitary) -> QueryTrace:
    """Run from |0...0>, recording the state after every step and every query."""
    _check_compatible(alg, oracle)
    u = oracle.local(alg.query, alg.answer)
    state = QState.basis(alg.layout)
    after_query, after_step, calls = [], [], 0
    for s in alg.steps:
        if s is QUERY:
            state = apply(state, u)
            calls += 1
            after_query.append(state)
        else:
            state = apply(state, s)
        after_step.append(state)
    return QueryTrace(state, after_query, after_step, calls)


def run_query_algorithm(alg: QueryAlgorithm, oracle: OracleUnitary) -> Distribution:
    """Exact distribution of the final measurement of the output register."""
    return measure_distribution(simulate(alg, oracle).final, [alg.output])


# --- algorithms -------------------------------------------------------------


def constant_algorithm(size_y: int, size_z: int, size_out: int, value: int) -> QueryAlgorithm:
    """Zero queries; always outputs ``value``."""
    layout = RegisterLayout.of(("y", size_y), ("a", size_z), ("out", size_out))
    return QueryAlgorithm(layout, "y", "a", "out", (adder("out", size_out, value),), name=f"constant{value}")


def single_query_algorithm(size_y: int, size_z: int, y: int) -> QueryAlgorithm:
    """Query the fixed point ``y`` (0-indexed) once and report the answer."""
    layout = RegisterLayout.of(("y", size_y), ("a", size_z))
    return QueryAlgorithm(layout, "y", "a", "a", (adder("y", size_y, y), QUERY), name=f"query_at{y}")


def _hadamard_on_bits(q: int, n: int) -> np.ndarray:
    """I_q tensor H^(x n): Hadamard on the y bits of a (j, y) register."""
    hn = np.ones((1, 1))
    for _ in range(n):
        hn = np.kron(hn, H)
    return np.kron(np.eye(q), hn)


def bv_oip(n: int, q: int) -> QueryAlgorithm:
    """Column-by-column Bernstein-Vazirani identification of the composed row.

    Iteration j prepares |j> (sum_y |y>) (sum_z (-1)^z |z>) / sqrt(2^(n+1)),
    queries, and applies Hadamards to the n + 1 qubits, leaving
    |j>|x_1j..x_nj>|1>. The column is then XORed into the output register at
    its bit positions and the query and answer registers are returned to |0>
    using the now-known column, so the next iteration starts clean.
    """
    if n < 1 or q < 1:
        raise QueryError("bv_oip needs n, q >= 1")
    dy, nbits = q * 2**n, n * q
    layout = RegisterLayout.of(("y", dy), ("a", 2), ("out", 2**nbits))
    hy = _hadamard_on_bits(q, n)
    steps: list[Step] = []
    for j in range(1, q + 1):
        shift = (j - 1) * 2**n
        positions = [nbits - 1 - ((i - 1) * q + (j - 1)) for i in range(1, n + 1)]

        def spread(col: int, positions=positions) -> int:
            return sum(((col >> (n - i)) & 1) << p for i, p in enumerate(positions, start=1))

        def gather(o: int, positions=positions) -> int:
            return sum(((o >> p) & 1) << (n - i) for i, p in enumerate(positions, start=1))

        steps += [
            adder("y", dy, shift),
            unitary(["y"], [dy], hy, name=f"H_y[{j}]"),
            pauli_x("a"),
            unitary(["a"], [2], H, name="H_a"),
            QUERY,
            unitary(["y"], [dy], hy, name=f"H_y[{j}]"),
            unitary(["a"], [2], H, name=f"bv_readout[{j}]"),
            monomial(["y", "out"], [dy, 2**nbits], lambda y, o, sp=spread: (y, o ^ sp(y % 2**n)), name=f"record[{j}]"),
            monomial(["y", "out"], [dy, 2**nbits], lambda y, o, g=gather: (y ^ g(o), o), name=f"clear[{j}]"),
            adder("y", dy, -shift),
            pauli_x("a"),
        ]
    return QueryAlgorithm(layout, "y", "a", "out", steps, name=f"bv_oip_{n}_{q}")


def bv_readout_indices(alg: QueryAlgorithm) -> list[int]:
    """Step indices right after each iteration's final Hadamard."""
    return [i for i, s in enumerate(alg.steps) if isinstance(s, LocalUnitary) and s.name.startswith("bv_readout")]


# --- evaluation -------------------------------------------------------------


@dataclass
class OipReport:
    T: int
    per_x_failure: np.ndarray
    worst_failure: float
    dist_failure: float
    degenerate_pairs: list[tuple[int, int]] = field(default_factory=list)
    oracle_calls: list[int] = field(default_factory=list)

    @property
    def per_x_success(self) -> np.ndarray:
        return 1.0 - self.per_x_failure

    def to_json(self) -> dict:
        return {
            "T": self.T,
            "worst_failure": self.worst_failure,
            "dist_failure": self.dist_failure,
            "per_x": [float(v) for v in self.per_x_failure],
            "degenerate_pairs": [list(p) for p in self.degenerate_pairs],
        }


def evaluate_oip(alg: QueryAlgorithm, f: FunctionTable, mu: Distribution) -> OipReport:
    """Exact per-x failure (output != x) and its mu-average; no sampling.

    For restricted tables the algorithm is scored against ``f.label(x)``.
    """
    if len(mu) != f.size_x:
        raise QueryError(f"distribution over {len(mu)} outcomes, table has {f.size_x} rows")
    out_dim = alg.layout.dim(alg.output)
    fails = np.zeros(f.size_x)
    calls = []
    for x in range(f.size_x):
        trace = simulate(alg, ftab.make_oracle(f, x))
        calls.append(trace.oracle_calls)
        dist = measure_distribution(trace.final, [alg.output])
        label = f.label(x)
        fails[x] = 1.0 - (dist.prob(label) if label < out_dim else 0.0)
    fails = np.clip(fails, 0.0, 1.0)
    return OipReport(
        T=alg.T,
        per_x_failure=fails,
        worst_failure=float(fails.max()),
        dist_failure=float(np.dot(mu.masses, fails)),
        degenerate_pairs=f.identical_rows(),
        oracle_calls=calls,
    )
