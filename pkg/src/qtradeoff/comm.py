"""Entanglement-assisted qubit-channel protocols.

A protocol is one global state plus a list of rounds. In each round a single
player applies local unitaries to registers they currently own, then hands
some qubit registers to the other player. Communication is ownership
relabeling; the ledger counts the qubits moved in each direction.

Builders here produce exact protocols (superdense transmission, "send x then
compute", the two-way protocol for the composed inner-product function) and
transform them: clean compilation by copy-and-uncompute, the input-copying
variant with its error-vector analysis, noise injection for fixtures, and
majority amplification.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from qtradeoff import ftab
from qtradeoff.ftab import FunctionTable
from qtradeoff.qsim import (
    LocalUnitary,
    Owner,
    QState,
    Register,
    RegisterLayout,
    SimulationError,
    dim_cap,
    adder,
    apply,
    cnot,
    copy_into,
    hadamard,
    measure_distribution,
    monomial,
    unitary,
)

ALICE, BOB = Owner.ALICE, Owner.BOB
EXACT_TOL = 1e-9

BELL = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Round:
    actor: Owner
    ops: tuple[LocalUnitary, ...] = ()
    moves: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "actor", Owner(self.actor))
        if self.actor is Owner.SHARED:
            raise ProtocolError("a round is performed by Alice or Bob")
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "moves", tuple(self.moves))

    def renamed(self, mapping: Mapping[str, str]) -> "Round":
        return Round(self.actor, tuple(op.renamed(mapping) for op in self.ops), tuple(mapping.get(m, m) for m in self.moves))


@dataclass(frozen=True)
class QubitLedger:
    a_to_b: int = 0
    b_to_a: int = 0

    @property
    def total(self) -> int:
        return self.a_to_b + self.b_to_a

    def __add__(self, other: "QubitLedger") -> "QubitLedger":
        return QubitLedger(self.a_to_b + other.a_to_b, self.b_to_a + other.b_to_a)

    def __mul__(self, k: int) -> "QubitLedger":
        return QubitLedger(self.a_to_b * k, self.b_to_a * k)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class CommProtocol:
    """A protocol computing ``target`` into Bob's ``output`` register.

    ``layout`` owners give the ownership before the first round. The shared
    state is a list of ``(register names, vector)`` factors prepared before
    any input is loaded; registers not covered start in |0>.
    """

    layout: RegisterLayout
    target: FunctionTable
    output: str
    rounds: tuple[Round, ...] = ()
    alice_input: str | None = None
    bob_input: str | None = None
    shared_state: tuple[tuple[tuple[str, ...], np.ndarray], ...] = ()
    declared_error: float = 0.0
    kind: str = "plain"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        object.__setattr__(
            self, "shared_state", tuple((tuple(names), np.asarray(v, dtype=complex)) for names, v in self.shared_state)
        )
        lay = self.layout
        f = self.target
        if self.alice_input is not None:
            _expect(lay, self.alice_input, f.size_x, ALICE)
        elif f.size_x != 1:
            raise ProtocolError("Alice input register required when |X| > 1")
        if self.bob_input is not None:
            _expect(lay, self.bob_input, f.size_y, BOB)
        elif f.size_y != 1:
            raise ProtocolError("Bob input register required when |Y| > 1")
        _expect(lay, self.output, f.size_z, BOB)
        io = {self.alice_input, self.bob_input, self.output}
        for names, vec in self.shared_state:
            if io & set(names):
                raise ProtocolError("input/output registers cannot be part of the shared state")
            if abs(np.linalg.norm(vec) - 1.0) > EXACT_TOL:
                raise ProtocolError(f"shared factor on {names} is not normalized")
        self.final_owners()

    @property
    def io_registers(self) -> tuple[str, ...]:
        return tuple(r for r in (self.alice_input, self.bob_input, self.output) if r is not None)

    @property
    def shared_registers(self) -> tuple[str, ...]:
        """Everything except the inputs and the output: entanglement and ancillas."""
        return tuple(n for n in self.layout.names if n not in self.io_registers)

    @property
    def ledger(self) -> QubitLedger:
        a = sum(len(r.moves) for r in self.rounds if r.actor is ALICE)
        b = sum(len(r.moves) for r in self.rounds if r.actor is BOB)
        return QubitLedger(a, b)

    def ops(self) -> Iterator[LocalUnitary]:
        for r in self.rounds:
            yield from r.ops

    def final_owners(self) -> dict[str, Owner]:
        """Walk the rounds, checking every op and move against current ownership."""
        owners = {r.name: r.owner for r in self.layout.registers}
        for k, rnd in enumerate(self.rounds):
            for op in rnd.ops:
                for t in op.targets:
                    if t not in owners:
                        raise ProtocolError(f"round {k}: unknown register {t!r}")
                    if owners[t] is not rnd.actor:
                        raise ProtocolError(
                            f"round {k}: {rnd.actor.value} touches {t!r} owned by {owners[t].value}"
                        )
                    if self.layout.dim(t) != op.dims[op.targets.index(t)]:
                        raise ProtocolError(f"round {k}: dimension mismatch on {t!r}")
            for m in rnd.moves:
                if m not in owners:
                    raise ProtocolError(f"round {k}: unknown register {m!r}")
                if self.layout.dim(m) != 2:
                    raise ProtocolError(f"round {k}: only qubits travel, {m!r} has dim {self.layout.dim(m)}")
                if owners[m] is not rnd.actor:
                    raise ProtocolError(f"round {k}: {rnd.actor.value} sends {m!r} it does not own")
                owners[m] = rnd.actor.other()
        if owners[self.output] is not BOB:
            raise ProtocolError("Bob must hold the output register at the end")
        return owners

    def shared_factors(self) -> dict[tuple[str, ...], np.ndarray]:
        return {names: vec for names, vec in self.shared_state}


def protocol_layout(registers: Sequence[Register], inputs: Sequence[str] = ("x", "y")) -> RegisterLayout:
    """Layout whose cap is scaled by the input dimensions.

    Input registers are classical controls: runs with ``fixed_inputs`` never
    hold them in superposition, so only the remaining space counts against the
    amplitude cap. Full-state runs re-check the plain cap.
    """
    scale = math.prod(r.dim for r in registers if r.name in inputs)
    return RegisterLayout(tuple(registers), cap=dim_cap() * scale)


def _expect(layout: RegisterLayout, name: str, dim: int, owner: Owner):
    if name not in layout:
        raise ProtocolError(f"missing register {name!r}")
    reg = layout.register(name)
    if reg.dim != dim:
        raise ProtocolError(f"register {name!r} has dim {reg.dim}, expected {dim}")
    if reg.owner is not owner:
        raise ProtocolError(f"register {name!r} must start with {owner.value}")


# --- execution --------------------------------------------------------------


def _input_values(p: CommProtocol, x: int, y: int) -> dict[str, int]:
    vals = {}
    if p.alice_input is not None:
        vals[p.alice_input] = x
    if p.bob_input is not None:
        vals[p.bob_input] = y
    return vals


def initial_state(p: CommProtocol, x: int, y: int, a: int = 0, *, fixed_inputs: bool = False) -> QState:
    """|x>|y>|phi>|a>, with the input registers dropped if ``fixed_inputs``."""
    inputs = _input_values(p, x, y)
    layout = p.layout.without(inputs) if fixed_inputs else p.layout
    if layout.total_dim > dim_cap():
        raise SimulationError(f"state needs {layout.total_dim} amplitudes, cap is {dim_cap()}")
    factors: dict = dict(p.shared_factors())
    if not fixed_inputs:
        for reg, v in inputs.items():
            factors[reg] = _basis(p.layout.dim(reg), v)
    factors[p.output] = _basis(p.layout.dim(p.output), a)
    return QState.product(layout, factors)


def _basis(dim: int, v: int) -> np.ndarray:
    if not 0 <= v < dim:
        raise ProtocolError(f"value {v} out of range for dim {dim}")
    e = np.zeros(dim, dtype=complex)
    e[v] = 1.0
    return e


def run(p: CommProtocol, x: int, y: int, a: int = 0, *, fixed_inputs: bool = False) -> QState:
    """Final global state on inputs (x, y) with the output register at |a>.

    With ``fixed_inputs`` the input registers are treated as classical
    controls and removed from the simulated layout; every op touching them
    must preserve their basis value.
    """
    sx = p.target.size_x
    sy = p.target.size_y
    if not (0 <= x < sx and 0 <= y < sy and 0 <= a < p.target.size_z):
        raise ProtocolError(f"inputs ({x}, {y}, {a}) out of range")
    state = initial_state(p, x, y, a, fixed_inputs=fixed_inputs)
    inputs = _input_values(p, x, y)
    for op in p.ops():
        state = apply(state, fixed_op(op, inputs) if fixed_inputs else op)
    return state


def fixed_op(op: LocalUnitary, values: Mapping[str, int]) -> LocalUnitary | complex:
    """``op.fix(values)``, memoized on the values of the op's own targets."""
    return _fixed(op, tuple((t, values[t]) for t in op.targets if t in values))


@functools.lru_cache(maxsize=1 << 16)
def _fixed(op: LocalUnitary, key: tuple[tuple[str, int], ...]) -> LocalUnitary | complex:
    return op.fix(dict(key))


def output_distribution(p: CommProtocol, x: int, y: int) -> np.ndarray:
    state = run(p, x, y, 0, fixed_inputs=True)
    return measure_distribution(state, [p.output]).masses


def failure_probabilities(p: CommProtocol) -> np.ndarray:
    """Pr[output != f(x, y)] for every input pair, from exact simulation."""
    f = p.target
    out = np.zeros((f.size_x, f.size_y))
    for x, y in itertools.product(range(f.size_x), range(f.size_y)):
        out[x, y] = 1.0 - output_distribution(p, x, y)[f(x, y)]
    return np.clip(out, 0.0, 1.0)


def worst_failure(p: CommProtocol) -> float:
    return float(failure_probabilities(p).max())


# --- superdense coding ------------------------------------------------------


def bell_pairs(prefix: str, k: int, sender: Owner) -> tuple[list[Register], list[tuple[tuple[str, str], np.ndarray]]]:
    """k Bell pairs; the ``_s`` half starts with the sender, ``_r`` with the receiver."""
    regs, factors = [], []
    for i in range(k):
        s, r = f"{prefix}{i}_s", f"{prefix}{i}_r"
        regs += [Register(s, 2, sender), Register(r, 2, sender.other())]
        factors.append(((s, r), BELL))
    return regs, factors


def _bits(v: int, m: int) -> list[int]:
    return [(v >> (m - 1 - t)) & 1 for t in range(m)]


def _from_bits(bits: Sequence[int]) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def superdense_encode(
    controls: Sequence[str],
    control_dims: Sequence[int],
    senders: Sequence[str],
    nbits: int,
    message: Callable[..., int],
) -> LocalUnitary:
    """Controlled Z^b1 X^b2 on each sender half, carrying ``message(*controls)``.

    Pair k carries message bits 2k and 2k+1 (most significant first); a missing
    second bit is 0.
    """
    k = len(senders)

    def fn(*vals):
        ctrl, halves = vals[: len(controls)], vals[len(controls) :]
        bits = _bits(message(*ctrl), nbits) + [0] * (2 * k - nbits)
        out, phase = [], 1
        for i, s in enumerate(halves):
            b1, b2 = bits[2 * i], bits[2 * i + 1]
            s2 = s ^ b2
            if b1 and s2:
                phase = -phase
            out.append(s2)
        return tuple(ctrl) + tuple(out), phase

    return monomial(list(controls) + list(senders), list(control_dims) + [2] * k, fn, name="sd_encode")


def superdense_decode(prefix: str, k: int) -> list[LocalUnitary]:
    """CNOT then H per pair; afterwards ``_s`` holds bit 2i and ``_r`` bit 2i+1."""
    ops = []
    for i in range(k):
        s, r = f"{prefix}{i}_s", f"{prefix}{i}_r"
        ops += [cnot(s, r), hadamard(s)]
    return ops


def _pair_regs(prefix: str, k: int) -> list[str]:
    return [f"{prefix}{i}_{h}" for i in range(k) for h in ("s", "r")]


def _decoded(pair_vals: Sequence[int], nbits: int) -> int:
    return _from_bits(list(pair_vals)[:nbits])


def superdense_send(n: int) -> CommProtocol:
    """Alice transmits an n-bit string with ceil(n/2) qubits and as many Bell pairs."""
    if n < 1:
        raise ProtocolError("need n >= 1 bits")
    size = 2**n
    k = math.ceil(n / 2)
    f = FunctionTable(f"identity_{n}", size, np.arange(size).reshape(size, 1))
    regs, factors = bell_pairs("ab", k, ALICE)
    layout = protocol_layout((Register("x", size, ALICE), *regs, Register("out", size, BOB)))
    senders = [f"ab{i}_s" for i in range(k)]
    pairs = _pair_regs("ab", k)
    write = monomial(
        pairs + ["out"],
        [2] * (2 * k) + [size],
        lambda *v: (tuple(v[:-1]) + ((v[-1] + _decoded(v[:-1], n)) % size,)),
        name="write_message",
    )
    rounds = [
        Round(ALICE, (superdense_encode(["x"], [size], senders, n, lambda x: x),), tuple(senders)),
        Round(BOB, (*superdense_decode("ab", k), write)),
    ]
    return CommProtocol(layout, f, "out", rounds, alice_input="x", shared_state=tuple(factors), name=f"superdense_{n}")


def send_and_compute(f: FunctionTable) -> CommProtocol:
    """Alice superdense-codes x to Bob, who then adds f(x, y) into the output."""
    sx, sy, sz = f.sizes
    m = math.ceil(math.log2(sx)) if sx > 1 else 0
    k = math.ceil(m / 2)
    regs, factors = bell_pairs("ab", k, ALICE)
    io = []
    if sx > 1:
        io.append(Register("x", sx, ALICE))
    if sy > 1:
        io.append(Register("y", sy, BOB))
    layout = protocol_layout((*io, *regs, Register("out", sz, BOB)))
    senders = [f"ab{i}_s" for i in range(k)]
    pairs = _pair_regs("ab", k)
    ydims = [sy] if sy > 1 else []

    def compute(*v):
        pv, rest = v[: 2 * k], v[2 * k :]
        y = rest[0] if sy > 1 else 0
        x = _decoded(pv, m)
        val = f(x, y) if x < sx else 0
        return tuple(v[:-1]) + ((v[-1] + val) % sz,)

    bob_ops = [*superdense_decode("ab", k), monomial(pairs + (["y"] if sy > 1 else []) + ["out"], [2] * (2 * k) + ydims + [sz], compute, name="compute_f")]
    rounds = []
    if k:
        rounds.append(Round(ALICE, (superdense_encode(["x"], [sx], senders, m, lambda x: x),), tuple(senders)))
    rounds.append(Round(BOB, tuple(bob_ops)))
    return CommProtocol(
        layout,
        f,
        "out",
        rounds,
        alice_input="x" if sx > 1 else None,
        bob_input="y" if sy > 1 else None,
        shared_state=tuple(factors),
        name=f"send_and_compute[{f.name}]",
    )


def constant_protocol(f: FunctionTable) -> CommProtocol:
    """No communication: Bob adds the constant value of f."""
    if not f.is_constant():
        raise ProtocolError(f"{f.name} is not constant")
    sx, sy, sz = f.sizes
    regs = [Register("x", sx, ALICE), Register("y", sy, BOB), Register("out", sz, BOB)]
    layout = protocol_layout(tuple(r for r in regs if r.name == "out" or r.dim > 1))
    c = int(f.table.flat[0])
    return CommProtocol(
        layout, f, "out", [Round(BOB, (adder("out", sz, c),))],
        alice_input="x" if sx > 1 else None, bob_input="y" if sy > 1 else None, name=f"constant[{f.name}]",
    )


def composed_protocol(n: int, q: int, f: FunctionTable | None = None) -> CommProtocol:
    """Two-way exact protocol for the composed inner-product function.

    Bob superdense-codes j to Alice with ceil(log2(q)/2) qubits, Alice answers
    with the column x_1j..x_nj using ceil(n/2) qubits, and Bob adds the parity
    of that column against his y. ``f`` may be a row-restricted table.
    """
    f = ftab.make_composed(n, q) if f is None else f
    sx, sy = f.size_x, f.size_y
    if sy != q * 2**n or f.size_z != 2:
        raise ProtocolError("table does not match the composed function for (n, q)")
    jbits = math.ceil(math.log2(q)) if q > 1 else 0
    kj, kc = math.ceil(jbits / 2), math.ceil(n / 2)
    jregs, jfac = bell_pairs("bj", kj, BOB)
    cregs, cfac = bell_pairs("ac", kc, ALICE)
    layout = protocol_layout((Register("x", sx, ALICE), Register("y", sy, BOB), *jregs, *cregs, Register("out", 2, BOB)))
    jsend = [f"bj{i}_s" for i in range(kj)]
    csend = [f"ac{i}_s" for i in range(kc)]
    jpairs, cpairs = _pair_regs("bj", kj), _pair_regs("ac", kc)

    def column(x: int, *jvals) -> int:
        j0 = _decoded(jvals, jbits) % q
        return ftab.composed_column(f.label(x), j0 + 1, n, q)

    def parity(y: int, *rest):
        col = _decoded(rest[:-1], n)
        bit = bin(col & (y % 2**n)).count("1") & 1
        return (y, *rest[:-1], rest[-1] ^ bit)

    rounds = []
    if kj:
        rounds.append(Round(BOB, (superdense_encode(["y"], [sy], jsend, jbits, lambda y: y // 2**n),), tuple(jsend)))
    alice_ops = [*superdense_decode("bj", kj), superdense_encode(["x", *jpairs], [sx] + [2] * len(jpairs), csend, n, column)]
    rounds.append(Round(ALICE, tuple(alice_ops), tuple(csend)))
    bob_ops = [*superdense_decode("ac", kc), monomial(["y", *cpairs, "out"], [sy] + [2] * len(cpairs) + [2], parity, name="inner_product")]
    rounds.append(Round(BOB, tuple(bob_ops)))
    return CommProtocol(
        layout, f, "out", rounds, alice_input="x", bob_input="y",
        shared_state=tuple(jfac + cfac), name=f"composed_{n}_{q}",
    )


# --- compilers --------------------------------------------------------------


def inverse_rounds(rounds: Sequence[Round]) -> list[Round]:
    """Rounds implementing the inverse unitary, with moves sent back."""
    out = []
    for rnd in reversed(rounds):
        if rnd.moves:
            out.append(Round(rnd.actor.other(), (), rnd.moves))
        if rnd.ops:
            out.append(Round(rnd.actor, tuple(op.dagger() for op in reversed(rnd.ops))))
    return out


def _fresh(layout: RegisterLayout, base: str) -> str:
    name = base
    while name in layout:
        name += "_"
    return name


def adder_v(work: str, output: str, dim: int) -> LocalUnitary:
    """V|z>|a> = |z>|a + z mod |Z|>."""
    return copy_into(work, dim, output, dim)


def compile_clean(p0: CommProtocol) -> CommProtocol:
    """Copy-and-uncompute: run p0 into a work register, add it to the output, undo p0."""
    worst = worst_failure(p0)
    if p0.declared_error != 0 or worst > EXACT_TOL:
        raise ProtocolError(f"compile_clean needs an exact protocol (worst failure {worst:.3g})")
    sz = p0.target.size_z
    work = _fresh(p0.layout, f"{p0.output}_work")
    regs = [Register(work, sz, BOB) if r.name == p0.output else r for r in p0.layout.registers]
    layout = RegisterLayout((*regs, Register(p0.output, sz, BOB)), cap=p0.layout.cap)
    body = [r.renamed({p0.output: work}) for r in p0.rounds]
    rounds = [*body, Round(BOB, (adder_v(work, p0.output, sz),)), *inverse_rounds(body)]
    return CommProtocol(
        layout, p0.target, p0.output, rounds, p0.alice_input, p0.bob_input,
        p0.shared_state, 0.0, "clean", f"clean[{p0.name}]",
    )


@dataclass
class ErrorAnalysis:
    """Error vectors U|x,y,phi,a> - |x,y,phi,a+f(x,y)> for every basis input."""

    eps: float
    size_z: int
    norms: np.ndarray
    max_cross_inner: np.ndarray
    vectors: dict[tuple[int, int, int], QState] = field(repr=False, default_factory=dict)

    @property
    def norm_bound(self) -> float:
        return 2 * self.size_z * math.sqrt(self.eps)

    @property
    def max_norm(self) -> float:
        return float(self.norms.max())

    @property
    def worst_cross(self) -> float:
        return float(self.max_cross_inner.max(initial=0.0))

    def certified(self, slack: float = 1e-8, ortho_tol: float = 1e-9) -> bool:
        return self.max_norm <= self.norm_bound + slack and self.worst_cross <= ortho_tol

    def to_json(self) -> dict:
        return {
            "eps": self.eps,
            "norm_bound": self.norm_bound,
            "max_norm": self.max_norm,
            "max_cross_inner_product": self.worst_cross,
            "norms": self.norms.tolist(),
        }


def analyze_errors(p: CommProtocol, eps: float, keep_vectors: bool = True) -> ErrorAnalysis:
    """Exact error vectors of a compiled protocol and their cross-y inner products."""
    f = p.target
    sx, sy, sz = f.sizes
    norms = np.zeros((sx, sy, sz))
    cross = np.zeros((sx, sz))
    vectors = {}
    for x, a in itertools.product(range(sx), range(sz)):
        errs = []
        for y in range(sy):
            ideal = initial_state(p, x, y, (a + f(x, y)) % sz)
            err = run(p, x, y, a) - ideal
            norms[x, y, a] = err.norm
            errs.append(err.amplitudes)
            if keep_vectors:
                vectors[(x, y, a)] = err
        if sy > 1:
            gram = np.abs(np.array(errs).conj() @ np.array(errs).T)
            np.fill_diagonal(gram, 0.0)
            cross[x, a] = gram.max()
    return ErrorAnalysis(eps, sz, norms, cross, vectors)


def compile_approx_clean(
    p0: CommProtocol, keep_vectors: bool = True, analyze: bool = True
) -> tuple[CommProtocol, ErrorAnalysis | None]:
    """Clean compilation for an eps-error protocol, inputs copied first.

    Alice and Bob copy their inputs into fresh ancillas; p0, the adder V and
    p0^-1 then read only the copies, and the copies are erased at the end so
    the shared register returns to its initial state on the ideal branch.
    ``analyze=False`` skips the full-state error analysis.
    """
    worst = worst_failure(p0)
    eps = p0.declared_error
    if worst > eps + 1e-12:
        raise ProtocolError(f"measured failure {worst:.6g} exceeds declared {eps:.6g}")
    sz = p0.target.size_z
    lay = p0.layout
    work = _fresh(lay, f"{p0.output}_work")
    mapping = {p0.output: work}
    regs = [Register(work, sz, BOB) if r.name == p0.output else r for r in lay.registers]
    pre, post = [], []
    if p0.alice_input is not None:
        xc = _fresh(lay, f"{p0.alice_input}_copy")
        mapping[p0.alice_input] = xc
        dx = lay.dim(p0.alice_input)
        regs.append(Register(xc, dx, ALICE))
        pre.append(Round(ALICE, (copy_into(p0.alice_input, dx, xc, dx),)))
        post.append(Round(ALICE, (copy_into(p0.alice_input, dx, xc, dx).dagger(),)))
    if p0.bob_input is not None:
        yc = _fresh(lay, f"{p0.bob_input}_copy")
        mapping[p0.bob_input] = yc
        dy = lay.dim(p0.bob_input)
        regs.append(Register(yc, dy, BOB))
        pre.append(Round(BOB, (copy_into(p0.bob_input, dy, yc, dy),)))
        post.append(Round(BOB, (copy_into(p0.bob_input, dy, yc, dy).dagger(),)))
    layout = RegisterLayout((*regs, Register(p0.output, sz, BOB)), cap=lay.cap)
    body = [r.renamed(mapping) for r in p0.rounds]
    rounds = [*pre, *body, Round(BOB, (adder_v(work, p0.output, sz),)), *inverse_rounds(body), *post]
    p = CommProtocol(
        layout, p0.target, p0.output, rounds, p0.alice_input, p0.bob_input,
        p0.shared_state, eps, "approx_clean", f"approx_clean[{p0.name}]",
    )
    return p, analyze_errors(p, eps, keep_vectors) if analyze else None


# --- fixtures and amplification -------------------------------------------


def noise_unitary(output: str, sz: int, eps: float, ancilla: str | None = None) -> LocalUnitary:
    """Rotation leaving each output value intact with probability exactly 1 - eps.

    For a qubit output this is a plane rotation |z> -> cos t |z> + sin t |z+1>.
    For larger outputs an extra qubit is used: each pair |z,0>, |z+1,1> is
    rotated, which is unitary for every |Z|.
    """
    t = math.asin(math.sqrt(eps))
    c, s = math.cos(t), math.sin(t)
    if ancilla is None:
        if sz != 2:
            raise ProtocolError("a single-register rotation only works for |Z| = 2")
        return unitary([output], [2], [[c, -s], [s, c]], name=f"noise{eps:g}")
    m = np.zeros((2 * sz, 2 * sz))
    for z in range(sz):
        lo, hi = z * 2, ((z + 1) % sz) * 2 + 1
        m[lo, lo], m[hi, lo] = c, s
        m[lo, hi], m[hi, hi] = -s, c
    return unitary([output, ancilla], [sz, 2], m, name=f"noise{eps:g}")


def inject_noise(p: CommProtocol, eps: float) -> CommProtocol:
    """Make an exact protocol fail with probability exactly eps on every input."""
    if not 0.0 <= eps < 1.0:
        raise ProtocolError(f"eps must lie in [0, 1), got {eps}")
    if eps == 0:
        return p
    worst = worst_failure(p)
    if worst > EXACT_TOL:
        raise ProtocolError(f"inject_noise expects an exact protocol (worst failure {worst:.3g})")
    sz = p.target.size_z
    layout = p.layout
    if sz == 2:
        noise = noise_unitary(p.output, sz, eps)
    else:
        anc = _fresh(layout, "noise")
        layout = layout.plus(Register(anc, 2, BOB))
        noise = noise_unitary(p.output, sz, eps, anc)
    rounds = list(p.rounds)
    if rounds and rounds[-1].actor is BOB and not rounds[-1].moves:
        rounds[-1] = Round(BOB, rounds[-1].ops + (noise,))
    else:
        rounds.append(Round(BOB, (noise,)))
    return replace(p, layout=layout, rounds=tuple(rounds), declared_error=eps, name=f"noisy{eps:g}[{p.name}]")


def majority_tail(eps: float, k: int) -> float:
    """Pr[at least (k+1)/2 of k independent trials fail]."""
    return sum(math.comb(k, i) * eps**i * (1 - eps) ** (k - i) for i in range((k + 1) // 2, k + 1))


def plurality(values: Sequence[int]) -> int:
    """Most frequent value, smallest value on ties."""
    counts: dict[int, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return min(counts, key=lambda v: (-counts[v], v))


def amplify(p: CommProtocol, k: int) -> CommProtocol:
    """Run p on k disjoint register blocks and write the plurality answer."""
    if k < 1 or k % 2 == 0:
        raise ProtocolError(f"k must be a positive odd integer, got {k}")
    inputs = {r: 0 for r in (p.alice_input, p.bob_input) if r is not None}
    for op in p.ops():
        for v in itertools.product(*(range(p.layout.dim(r)) for r in inputs)):
            try:
                op.fix(dict(zip(inputs, v)))
            except SimulationError:
                raise ProtocolError("amplify needs protocols that only read their inputs") from None
    sz = p.target.size_z
    local = [r for r in p.layout.registers if r.name not in inputs]
    regs = [r for r in p.layout.registers if r.name in inputs]
    rounds, factors = [], []
    outs = []
    for b in range(k):
        mapping = {r.name: f"{r.name}_b{b}" for r in local}
        regs += [Register(mapping[r.name], r.dim, r.owner) for r in local]
        rounds += [r.renamed(mapping) for r in p.rounds]
        factors += [(tuple(mapping[n] for n in names), vec) for names, vec in p.shared_state]
        outs.append(mapping[p.output])
    regs.append(Register(p.output, sz, BOB))
    vote = monomial(
        outs + [p.output], [sz] * (k + 1),
        lambda *v: (*v[:-1], (v[-1] + plurality(v[:-1])) % sz), name="plurality",
    )
    rounds.append(Round(BOB, (vote,)))
    return CommProtocol(
        RegisterLayout(tuple(regs), cap=p.layout.cap), p.target, p.output, rounds,
        p.alice_input, p.bob_input, tuple(factors), majority_tail(p.declared_error, k),
        "plain", f"amplified{k}[{p.name}]",
    )


# --- JSON -------------------------------------------------------------------


def _cplx(arr: np.ndarray) -> list:
    a = np.asarray(arr, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _uncplx(data) -> np.ndarray:
    a = np.asarray(data, dtype=float)
    if a.shape[-1] != 2:
        raise ProtocolError("complex arrays are stored as [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def op_to_json(op: LocalUnitary) -> dict:
    out = {"targets": list(op.targets), "dims": list(op.dims), "name": op.name, "kind": op.kind}
    if op.is_monomial:
        out["perm"] = [int(v) for v in op.perm]
        if op.phases is not None:
            out["phases"] = _cplx(op.phases)
    else:
        out["matrix"] = _cplx(op.matrix)
    return out


def op_from_json(d: Mapping) -> LocalUnitary:
    common = dict(name=d.get("name", ""), kind=d.get("kind", "gate"))
    if "matrix" in d:
        return LocalUnitary(tuple(d["targets"]), tuple(d["dims"]), matrix=_uncplx(d["matrix"]), **common)
    phases = _uncplx(d["phases"]) if d.get("phases") is not None else None
    return LocalUnitary(tuple(d["targets"]), tuple(d["dims"]), perm=np.asarray(d["perm"]), phases=phases, **common)


def protocol_to_json(p: CommProtocol) -> dict:
    return {
        "name": p.name,
        "kind": p.kind,
        "declared_error": p.declared_error,
        "target": p.target.to_json(),
        "registers": [[r.name, r.dim, r.owner.value] for r in p.layout.registers],
        "alice_input": p.alice_input,
        "bob_input": p.bob_input,
        "output": p.output,
        "shared_state": [{"registers": list(names), "vector": _cplx(v)} for names, v in p.shared_state],
        "rounds": [
            {"actor": r.actor.value, "ops": [op_to_json(op) for op in r.ops], "moves": list(r.moves)} for r in p.rounds
        ],
    }


def protocol_from_json(d: Mapping) -> CommProtocol:
    """Inverse of ``protocol_to_json``; every field is re-validated."""
    try:
        target = FunctionTable.from_json(d["target"])
        regs = [Register(str(n), int(dim), Owner(owner)) for n, dim, owner in d["registers"]]
        inputs = [r for r in (d.get("alice_input"), d.get("bob_input")) if r]
        layout = protocol_layout(regs, inputs)
        rounds = [Round(Owner(r["actor"]), [op_from_json(o) for o in r["ops"]], r.get("moves", ())) for r in d["rounds"]]
        shared = [(tuple(s["registers"]), _uncplx(s["vector"])) for s in d.get("shared_state", ())]
        return CommProtocol(
            layout, target, d["output"], rounds, d.get("alice_input"), d.get("bob_input"),
            shared, float(d.get("declared_error", 0.0)), d.get("kind", "plain"), d.get("name", ""),
        )
    except (KeyError, TypeError) as e:
        raise ProtocolError(f"malformed protocol JSON: {e!r}") from None
