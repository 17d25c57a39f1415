"""Sending x from Alice to Bob, and checking the qubit count against smooth max-entropy.

``compose_transmission`` has Bob run an oracle-identification algorithm in
which every oracle call is replaced by a run of a (approximately) clean
protocol for f. Both the composed run and the ideal query-only run are
simulated exactly, so the drift between them is measured, not estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from qtradeoff import comm, ftab, oip
from qtradeoff.comm import ALICE, BOB, CommProtocol, ProtocolError
from qtradeoff.entropy import Distribution, h_max, min_support_set
from qtradeoff.ftab import FunctionTable
from qtradeoff.qsim import (
    LocalUnitary,
    QState,
    Register,
    RegisterLayout,
    apply,
    l2_distance,
    measure_distribution,
    monomial,
)

SLACK = 1e-8
NS_SLACK = 1e-9


@dataclass(frozen=True)
class BoundCheck:
    """One named inequality ``lhs <= rhs`` (or ``>=``), evaluated with slack."""

    name: str
    lhs: float
    rhs: float
    relation: str = "<="
    slack: float = 0.0

    @property
    def passed(self) -> bool:
        if self.relation == "<=":
            return self.lhs <= self.rhs + self.slack
        return self.lhs >= self.rhs - self.slack

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs if self.relation == "<=" else self.lhs - self.rhs

    def to_json(self) -> dict:
        return {
            "inequality": self.name,
            "lhs": self.lhs,
            "relation": self.relation,
            "rhs": self.rhs,
            "slack": self.slack,
            "margin": self.margin,
            "passed": self.passed,
        }


@dataclass
class TransmissionReport:
    qubits_a_to_b: int
    qubits_b_to_a: int
    per_x_failure: np.ndarray
    avg_failure: float
    T: int = 0
    eps: float = 0.0
    size_z: int = 0
    oip_failure: np.ndarray | None = None
    drift: np.ndarray | None = None
    checks: list[BoundCheck] = field(default_factory=list)

    @property
    def worst_failure(self) -> float:
        return float(self.per_x_failure.max())

    @property
    def avg_oip_failure(self) -> float:
        return float("nan") if self.oip_failure is None else float(self._mu @ self.oip_failure)

    _mu: np.ndarray = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        out = {
            "qubits_a_to_b": self.qubits_a_to_b,
            "qubits_b_to_a": self.qubits_b_to_a,
            "T": self.T,
            "eps": self.eps,
            "avg_failure": self.avg_failure,
            "worst_failure": self.worst_failure,
            "per_x_failure": [float(v) for v in self.per_x_failure],
        }
        if self.oip_failure is not None:
            out["oip_per_x_failure"] = [float(v) for v in self.oip_failure]
            out["oip_avg_failure"] = self.avg_oip_failure
        if self.drift is not None:
            out["max_drift_per_query"] = [float(v) for v in self.drift.max(axis=0)]
        out["checks"] = [c.to_json() for c in self.checks]
        return out


def drift_bound(size_z: int, eps: float, i: int) -> float:
    return 2 * size_z**2 * math.sqrt(eps) * i


def failure_bound(gamma_avg: float, size_z: int, eps: float, T: int) -> float:
    return gamma_avg + 8 * size_z**2 * math.sqrt(eps) * T


def compose_transmission(alg: oip.QueryAlgorithm, p: CommProtocol, mu: Distribution) -> TransmissionReport:
    """Simulate Bob's query algorithm with every query answered by ``p``.

    Register order: Alice's input (held fixed per x and simulated as a
    classical control), the protocol's shared registers, the query register
    (= Bob's protocol input), the answer register (= protocol output), the
    algorithm's ancillas and its output register.
    """
    if p.kind not in ("clean", "approx_clean"):
        raise ProtocolError("compose_transmission needs a clean or approximately clean protocol")
    f = p.target
    if p.bob_input is None or p.alice_input is None:
        raise ProtocolError("the protocol needs both input registers")
    if p.layout.dim(p.bob_input) != alg.layout.dim(alg.query) or f.size_z != alg.layout.dim(alg.answer):
        raise ProtocolError("protocol input/output registers do not match the algorithm's query/answer registers")
    if len(mu) != f.size_x:
        raise ProtocolError("distribution does not match |X|")

    rename = {alg.query: p.bob_input, alg.answer: p.output}
    taken = set(p.layout.names)
    for r in alg.layout.names:
        if r not in rename:
            new = f"oip_{r}"
            while new in taken:
                new += "_"
            rename[r] = new
    shared = [p.layout.register(n) for n in p.shared_registers]
    alg_regs = [Register(rename[r.name], r.dim, BOB) for r in alg.layout.registers]
    layout = RegisterLayout((*shared, *alg_regs))
    alg_names = tuple(rename[n] for n in alg.layout.names)
    steps = [s if s is oip.QUERY else s.renamed(rename) for s in alg.steps]
    out_reg = rename[alg.output]
    out_dim = layout.dim(out_reg)

    T = alg.T
    sz = f.size_z
    eps = p.declared_error
    fails = np.zeros(f.size_x)
    gammas = np.zeros(f.size_x)
    drift = np.zeros((f.size_x, T))
    proto_ops = list(p.ops())
    factors = p.shared_factors()
    for x in range(f.size_x):
        fixed = {p.alice_input: x}
        ops = [comm.fixed_op(op, fixed) for op in proto_ops]
        ideal = oip.simulate(alg, ftab.make_oracle(f, x))
        state = QState.product(layout, factors)
        i = 0
        for s in steps:
            if s is oip.QUERY:
                for op in ops:
                    state = apply(state, op)
                ideal_state = QState.product(layout, {**factors, alg_names: ideal.after_query[i].amplitudes})
                drift[x, i] = l2_distance(state, ideal_state)
                i += 1
            else:
                state = apply(state, s)
        label = f.label(x)
        dist = measure_distribution(state, [out_reg])
        fails[x] = 1.0 - (dist.prob(label) if label < out_dim else 0.0)
        ideal_dist = measure_distribution(ideal.final, [alg.output])
        gammas[x] = 1.0 - (ideal_dist.prob(label) if label < out_dim else 0.0)
    fails, gammas = np.clip(fails, 0, 1), np.clip(gammas, 0, 1)

    led = p.ledger
    report = TransmissionReport(
        qubits_a_to_b=led.a_to_b * T,
        qubits_b_to_a=led.b_to_a * T,
        per_x_failure=fails,
        avg_failure=float(mu.masses @ fails),
        T=T,
        eps=eps,
        size_z=sz,
        oip_failure=gammas,
        drift=drift,
        _mu=mu.masses,
    )
    for i in range(1, T + 1):
        report.checks.append(
            BoundCheck(
                f"max_x drift after {i} queries <= 2|Z|^2 sqrt(eps) * {i}",
                float(drift[:, i - 1].max()), drift_bound(sz, eps, i), "<=", SLACK,
            )
        )
    report.checks.append(
        BoundCheck(
            "mu-average failure <= mu-average OIP failure + 8|Z|^2 sqrt(eps) T",
            report.avg_failure, failure_bound(report.avg_oip_failure, sz, eps, T), "<=", SLACK,
        )
    )
    if T:
        tv = np.abs(fails - gammas)
        report.checks.append(
            BoundCheck("max_x |failure - OIP failure| <= 4 * drift after T queries", float((tv - 4 * drift[:, -1]).max()), 0.0, "<=", SLACK)
        )
    return report


def measure_transmission(p: CommProtocol, mu: Distribution) -> TransmissionReport:
    """Failure of a protocol whose target is the identity on X."""
    f = p.target
    if f.size_y != 1 or not np.array_equal(f.table[:, 0], np.arange(f.size_x)):
        raise ProtocolError("not a transmission protocol (target must be x -> x)")
    if len(mu) != f.size_x:
        raise ProtocolError("distribution does not match |X|")
    fails = comm.failure_probabilities(p)[:, 0]
    led = p.ledger
    return TransmissionReport(led.a_to_b, led.b_to_a, fails, float(mu.masses @ fails), _mu=mu.masses)


def check_ns_bound(report: TransmissionReport, mu: Distribution, eps_achieved: float | None = None) -> BoundCheck:
    """qubits sent Alice -> Bob >= (1/2) H_max^eps(mu) at the measured failure eps.

    A consistency check on constructed protocols, not a proof of the bound.
    """
    eps = report.avg_failure if eps_achieved is None else eps_achieved
    if report.avg_failure > eps + 1e-12:
        raise ProtocolError(f"measured failure {report.avg_failure:.12g} exceeds eps {eps:.12g}")
    eps = min(max(eps, 0.0), 1.0 - 1e-15)
    return BoundCheck(
        f"qubits A->B >= 1/2 H_max^eps(mu) at eps = {eps:.12g}",
        float(report.qubits_a_to_b), 0.5 * h_max(mu, eps), ">=", NS_SLACK,
    )


def superdense_compressed_send(mu: Distribution, eps: float) -> tuple[CommProtocol, TransmissionReport]:
    """Superdense-code the rank of x inside the smallest set of mass >= 1 - eps.

    Uses ceil(H_max^eps(mu) / 2) qubits; x outside that set is decoded wrongly,
    so the failure is exactly the mass outside it.
    """
    S = min_support_set(mu, eps)
    size = len(mu)
    if size < 2:
        raise ProtocolError("need at least two outcomes")
    m = math.ceil(math.log2(len(S))) if len(S) > 1 else 0
    k = math.ceil(m / 2)
    rank = {x: i for i, x in enumerate(S)}
    f = FunctionTable(f"identity_{size}", size, np.arange(size).reshape(size, 1))
    regs, factors = comm.bell_pairs("ab", k, ALICE)
    layout = comm.protocol_layout((Register("x", size, ALICE), *regs, Register("out", size, BOB)))
    senders = [f"ab{i}_s" for i in range(k)]
    pairs = [f"ab{i}_{h}" for i in range(k) for h in ("s", "r")]

    def write(*v):
        idx = comm._decoded(v[:-1], m)
        return (*v[:-1], (v[-1] + S[idx if idx < len(S) else 0]) % size)

    bob: list[LocalUnitary] = [*comm.superdense_decode("ab", k), monomial(pairs + ["out"], [2] * (2 * k) + [size], write, name="write_support")]
    rounds = []
    if k:
        rounds.append(comm.Round(ALICE, (comm.superdense_encode(["x"], [size], senders, m, lambda x: rank.get(x, 0)),), tuple(senders)))
    rounds.append(comm.Round(BOB, tuple(bob)))
    p = CommProtocol(layout, f, "out", rounds, alice_input="x", shared_state=tuple(factors), declared_error=eps, name=f"compressed_superdense[{eps:g}]")
    return p, measure_transmission(p, mu)
