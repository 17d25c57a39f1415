"""Dense state-vector simulation over heterogeneous qudit registers.

Registers are addressed by name. A state is a flat complex vector in row-major
order over the registers as listed in its layout (the first register is the
most significant index). Local unitaries act on an ordered subset of registers
and are applied by moving the target axes to the back of the tensor, so the
cost is O(total_dim * target_dim) and no global operator is ever formed.
Permutation-like (monomial) unitaries skip the matrix product entirely.
"""

from __future__ import annotations

import functools
import itertools
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from qtradeoff.entropy import Distribution

DEFAULT_CAP = 2**20
ATOL = 1e-9


class Owner(str, Enum):
    ALICE = "Alice"
    BOB = "Bob"
    SHARED = "Shared"

    def other(self) -> "Owner":
        if self is Owner.ALICE:
            return Owner.BOB
        if self is Owner.BOB:
            return Owner.ALICE
        raise ValueError("shared registers have no counterpart")


class SimulationError(ValueError):
    """Raised for malformed layouts, unknown registers and dimension overflow."""


def dim_cap() -> int:
    """Amplitude cap, overridable with the ``QT_DIM_CAP`` environment variable."""
    raw = os.environ.get("QT_DIM_CAP")
    return int(raw) if raw else DEFAULT_CAP


@dataclass(frozen=True)
class Register:
    name: str
    dim: int
    owner: Owner = Owner.SHARED

    def __post_init__(self):
        if not self.name.isidentifier():
            raise SimulationError(f"register name {self.name!r} is not an identifier")
        if self.dim < 2:
            raise SimulationError(f"register {self.name!r} has dim {self.dim} < 2")
        object.__setattr__(self, "owner", Owner(self.owner))


@dataclass(frozen=True)
class RegisterLayout:
    registers: tuple[Register, ...]
    cap: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "registers", tuple(self.registers))
        names = [r.name for r in self.registers]
        if len(set(names)) != len(names):
            raise SimulationError(f"duplicate register names in {names}")
        cap = dim_cap() if self.cap is None else self.cap
        if self.total_dim > cap:
            raise SimulationError(
                f"layout needs {self.total_dim} amplitudes, cap is {cap}"
            )

    @classmethod
    def of(cls, *specs, cap: int | None = None) -> "RegisterLayout":
        """Build from ``(name, dim[, owner])`` tuples."""
        return cls(tuple(Register(*s) for s in specs), cap=cap)

    @functools.cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.registers)

    @functools.cached_property
    def dims(self) -> tuple[int, ...]:
        return tuple(r.dim for r in self.registers)

    @functools.cached_property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    @functools.cached_property
    def _positions(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}

    def __contains__(self, name: str) -> bool:
        return name in self._positions

    def index(self, name: str) -> int:
        try:
            return self._positions[name]
        except KeyError:
            raise SimulationError(f"unknown register {name!r}") from None

    def register(self, name: str) -> Register:
        return self.registers[self.index(name)]

    def dim(self, name: str) -> int:
        return self.register(name).dim

    def without(self, names: Iterable[str]) -> "RegisterLayout":
        drop = set(names)
        for n in drop:
            self.index(n)
        return RegisterLayout(
            tuple(r for r in self.registers if r.name not in drop), cap=self.cap
        )

    def plus(self, *registers: Register) -> "RegisterLayout":
        return RegisterLayout(self.registers + tuple(registers), cap=self.cap)


@dataclass(frozen=True, eq=False)
class QState:
    """Amplitudes over a layout.

    ``normalized=False`` marks difference vectors (e.g. error vectors), which
    skip the unit-norm check.
    """

    layout: RegisterLayout
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != self.layout.total_dim:
            raise SimulationError(
                f"{amps.shape[0]} amplitudes for layout of dim {self.layout.total_dim}"
            )
        if self.normalized and abs(np.linalg.norm(amps) - 1.0) > ATOL:
            raise SimulationError(f"state norm {np.linalg.norm(amps)} is not 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, layout: RegisterLayout, values: Mapping[str, int] | None = None) -> "QState":
        """Computational basis state; registers not named in ``values`` are |0>."""
        values = values or {}
        for k, v in values.items():
            if not 0 <= v < layout.dim(k):
                raise SimulationError(f"basis value {v} out of range for register {k!r}")
        idx = np.ravel_multi_index(tuple(values.get(n, 0) for n in layout.names), layout.dims)
        amps = np.zeros(layout.total_dim, dtype=complex)
        amps[idx] = 1.0
        return cls(layout, amps)

    @classmethod
    def product(
        cls,
        layout: RegisterLayout,
        factors: Mapping[str | tuple[str, ...], np.ndarray],
    ) -> "QState":
        """Tensor product of per-register (or per-register-group) vectors.

        Keys are a register name or a tuple of names; the vector for a group is
        row-major over those registers in the given order. Unlisted registers
        start in |0>.
        """
        order: list[str] = []
        vec = np.ones(1, dtype=complex)
        for key, v in factors.items():
            names = (key,) if isinstance(key, str) else tuple(key)
            v = np.asarray(v, dtype=complex).reshape(-1)
            want = math.prod(layout.dim(n) for n in names)
            if v.shape[0] != want:
                raise SimulationError(f"factor for {names} has length {v.shape[0]}, expected {want}")
            order.extend(names)
            vec = np.kron(vec, v)
        if len(set(order)) != len(order):
            raise SimulationError("a register appears in two factors")
        for n in layout.names:
            if n not in order:
                order.append(n)
                vec = np.kron(vec, _basis_vec(layout.dim(n), 0))
        tensor = vec.reshape([layout.dim(n) for n in order])
        tensor = np.transpose(tensor, [order.index(n) for n in layout.names])
        return cls(layout, tensor.reshape(-1))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)

    def amplitude(self, values: Mapping[str, int]) -> complex:
        idx = tuple(values.get(n, 0) for n in self.layout.names)
        return complex(self.tensor()[idx])

    def __sub__(self, other: "QState") -> "QState":
        _check_same_layout(self, other)
        return QState(self.layout, self.amplitudes - other.amplitudes, normalized=False)

    def inner(self, other: "QState") -> complex:
        """<self|other>."""
        _check_same_layout(self, other)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def reorder(self, layout: RegisterLayout) -> "QState":
        """Same state expressed over a permutation of this layout's registers."""
        if sorted(layout.names) != sorted(self.layout.names):
            raise SimulationError("reorder needs the same register set")
        perm = [self.layout.index(n) for n in layout.names]
        amps = np.transpose(self.tensor(), perm).reshape(-1)
        return QState(layout, amps, self.normalized)


def _basis_vec(dim: int, value: int) -> np.ndarray:
    if not 0 <= value < dim:
        raise SimulationError(f"basis value {value} out of range for dim {dim}")
    v = np.zeros(dim, dtype=complex)
    v[value] = 1.0
    return v


def _check_same_layout(a: QState, b: QState):
    if a.layout.names != b.layout.names or a.layout.dims != b.layout.dims:
        raise SimulationError("states have different layouts")


@dataclass(frozen=True, eq=False)
class LocalUnitary:
    """A unitary on an ordered tuple of registers.

    Either ``matrix`` is given (dense, square over the product of target
    dims), or ``perm``/``phases`` describe a monomial unitary
    U|i> = phases[i] |perm[i]>. ``dims`` is required for the monomial form and
    checked against the layout on application.
    """

    targets: tuple[str, ...]
    dims: tuple[int, ...]
    matrix: np.ndarray | None = None
    perm: np.ndarray | None = None
    phases: np.ndarray | None = None
    name: str = ""
    kind: str = "gate"

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.targets) != len(self.dims):
            raise SimulationError("targets and dims differ in length")
        if len(set(self.targets)) != len(self.targets):
            raise SimulationError(f"repeated target in {self.targets}")
        size = self.size
        if self.matrix is not None:
            m = np.asarray(self.matrix, dtype=complex)
            if m.shape != (size, size):
                raise SimulationError(f"matrix shape {m.shape} does not match target dim {size}")
            if np.max(np.abs(m.conj().T @ m - np.eye(size)), initial=0.0) > ATOL:
                raise SimulationError(f"matrix for {self.name or self.targets} is not unitary")
            m.setflags(write=False)
            object.__setattr__(self, "matrix", m)
        else:
            if self.perm is None:
                raise SimulationError("need a matrix or a permutation")
            p = np.asarray(self.perm, dtype=np.int64)
            if p.shape != (size,) or not np.array_equal(np.sort(p), np.arange(size)):
                raise SimulationError("perm is not a permutation of the target space")
            p.setflags(write=False)
            object.__setattr__(self, "perm", p)
            if self.phases is not None:
                ph = np.asarray(self.phases, dtype=complex)
                if ph.shape != (size,) or np.max(np.abs(np.abs(ph) - 1.0), initial=0.0) > ATOL:
                    raise SimulationError("phases must be unit-modulus, one per basis state")
                ph.setflags(write=False)
                object.__setattr__(self, "phases", ph)

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def is_monomial(self) -> bool:
        return self.matrix is None

    def dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        m = np.zeros((self.size, self.size), dtype=complex)
        ph = self.phases if self.phases is not None else np.ones(self.size)
        m[self.perm, np.arange(self.size)] = ph
        return m

    def dagger(self) -> "LocalUnitary":
        name = f"{self.name}^-1" if self.name else ""
        if self.matrix is not None:
            return LocalUnitary(self.targets, self.dims, matrix=self.matrix.conj().T, name=name, kind=self.kind)
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.size)
        phases = None
        if self.phases is not None:
            phases = np.empty(self.size, dtype=complex)
            phases[self.perm] = self.phases.conj()
        return LocalUnitary(self.targets, self.dims, perm=inv, phases=phases, name=name, kind=self.kind)

    def renamed(self, mapping: Mapping[str, str]) -> "LocalUnitary":
        return LocalUnitary(
            tuple(mapping.get(t, t) for t in self.targets),
            self.dims,
            matrix=self.matrix,
            perm=self.perm,
            phases=self.phases,
            name=self.name,
            kind=self.kind,
        )

    def fix(self, values: Mapping[str, int]) -> "LocalUnitary | complex":
        """Restrict to the block where the named targets hold fixed basis values.

        The unitary must leave those registers' basis values unchanged (they are
        used as classical controls only). Returns the block on the remaining
        targets, or a global phase if no targets remain.
        """
        fixed = [t for t in self.targets if t in values]
        if not fixed:
            return self
        keep = [i for i, t in enumerate(self.targets) if t not in values]
        where = tuple(values[t] if t in values else slice(None) for t in self.targets)
        block = np.arange(self.size).reshape(self.dims)[where].reshape(-1)
        mask = np.zeros(self.size, dtype=bool)
        mask[block] = True
        sub_dims = tuple(self.dims[i] for i in keep)
        if self.matrix is not None:
            cols = self.matrix[:, block]
            if np.max(np.abs(np.delete(cols, block, axis=0)), initial=0.0) > ATOL:
                raise SimulationError(f"{self.name or self.targets} changes a fixed register")
            sub = cols[block, :]
            if not keep:
                return complex(sub[0, 0])
            return LocalUnitary(tuple(self.targets[i] for i in keep), sub_dims, matrix=sub, name=self.name, kind=self.kind)
        image = self.perm[block]
        if not np.all(mask[image]):
            raise SimulationError(f"{self.name or self.targets} changes a fixed register")
        pos = np.full(self.size, -1, dtype=np.int64)
        pos[block] = np.arange(block.size)
        sub_perm = pos[image]
        sub_ph = None if self.phases is None else self.phases[block]
        if not keep:
            return complex(1.0 if sub_ph is None else sub_ph[0])
        return LocalUnitary(
            tuple(self.targets[i] for i in keep), sub_dims, perm=sub_perm, phases=sub_ph, name=self.name, kind=self.kind
        )


def unitary(targets: Sequence[str], dims: Sequence[int], matrix, name: str = "") -> LocalUnitary:
    return LocalUnitary(tuple(targets), tuple(dims), matrix=np.asarray(matrix, dtype=complex), name=name)


def monomial(
    targets: Sequence[str],
    dims: Sequence[int],
    fn: Callable[..., tuple],
    name: str = "",
    kind: str = "gate",
) -> LocalUnitary:
    """Build a monomial unitary from a map on basis tuples.

    ``fn(*values)`` returns either the image tuple or ``(image_tuple, phase)``.
    """
    dims = tuple(dims)
    size = math.prod(dims)
    perm = np.empty(size, dtype=np.int64)
    phases = np.ones(size, dtype=complex)
    has_phase = False
    for i, vals in enumerate(itertools.product(*(range(d) for d in dims))):
        out = fn(*vals)
        if len(out) == 2 and isinstance(out[0], tuple):
            out, ph = out
            phases[i] = ph
            has_phase = True
        perm[i] = np.ravel_multi_index(tuple(out), dims)
    return LocalUnitary(tuple(targets), dims, perm=perm, phases=phases if has_phase else None, name=name, kind=kind)


def apply(state: QState, u: LocalUnitary | complex) -> QState:
    """Apply ``u`` to its target registers, identity elsewhere."""
    if not isinstance(u, LocalUnitary):
        return QState(state.layout, state.amplitudes * u, state.normalized)
    out = apply_batch(state.layout, state.amplitudes[None, :], u)
    return QState(state.layout, out[0], state.normalized)


def apply_batch(layout: RegisterLayout, amps: np.ndarray, u: LocalUnitary) -> np.ndarray:
    """Apply ``u`` to each row of a (batch, total_dim) array of amplitudes."""
    axes = [layout.index(t) + 1 for t in u.targets]
    for t, d in zip(u.targets, u.dims):
        if layout.dim(t) != d:
            raise SimulationError(f"register {t!r} has dim {layout.dim(t)}, unitary expects {d}")
    tensor = amps.reshape((amps.shape[0], *layout.dims))
    n = tensor.ndim
    tail = list(range(n - len(axes), n))
    moved = np.moveaxis(tensor, axes, tail)
    rest_shape = moved.shape[: n - len(axes)]
    flat = moved.reshape(-1, u.size)
    if u.matrix is not None:
        out = flat @ u.matrix.T
    else:
        src = flat if u.phases is None else flat * u.phases
        out = np.empty_like(flat)
        out[:, u.perm] = src
    out = np.moveaxis(out.reshape(rest_shape + u.dims), tail, axes)
    return out.reshape(amps.shape[0], -1)


def apply_all(state: QState, ops: Iterable[LocalUnitary]) -> QState:
    for op in ops:
        state = apply(state, op)
    return state


def measure_distribution(state: QState, registers: Sequence[str]) -> Distribution:
    """Exact Born-rule distribution of the named registers, others traced out.

    Outcomes are flattened row-major over ``registers`` in the given order.
    """
    layout = state.layout
    axes = [layout.index(r) for r in registers]
    probs = np.abs(state.tensor()) ** 2
    others = tuple(i for i in range(len(layout.dims)) if i not in axes)
    marg = probs.sum(axis=others) if others else probs
    # sum() keeps remaining axes in layout order; reorder to the requested order.
    remaining = [i for i in range(len(layout.dims)) if i in axes]
    marg = np.transpose(marg, [remaining.index(a) for a in axes])
    total = marg.sum()
    return Distribution(marg.reshape(-1) / total, shape=tuple(layout.dim(r) for r in registers))


def l2_distance(a: QState, b: QState) -> float:
    _check_same_layout(a, b)
    return float(np.linalg.norm(a.amplitudes - b.amplitudes))


def tv_distance(p: Distribution, q: Distribution) -> float:
    if p.shape != q.shape:
        raise SimulationError(f"outcome spaces differ: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p.masses - q.masses).sum())


# --- standard gates -------------------------------------------------------

H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)


def hadamard(target: str) -> LocalUnitary:
    return unitary([target], [2], H, name="H")


def pauli_x(target: str) -> LocalUnitary:
    return LocalUnitary((target,), (2,), perm=np.array([1, 0]), name="X")


def cnot(control: str, target: str) -> LocalUnitary:
    return monomial([control, target], [2, 2], lambda c, t: (c, t ^ c), name="CNOT")


def toffoli(c1: str, c2: str, target: str) -> LocalUnitary:
    return monomial([c1, c2, target], [2, 2, 2], lambda a, b, t: (a, b, t ^ (a & b)), name="Toffoli")


def adder(target: str, dim: int, k: int) -> LocalUnitary:
    """|a> -> |a + k mod dim>."""
    return LocalUnitary((target,), (dim,), perm=(np.arange(dim) + k) % dim, name=f"add{k}")


def copy_into(source: str, source_dim: int, target: str, target_dim: int) -> LocalUnitary:
    """|s>|t> -> |s>|t + s mod target_dim>."""
    return monomial(
        [source, target], [source_dim, target_dim], lambda s, t: (s, (t + s) % target_dim), name="copy"
    )


def uncopy(source: str, source_dim: int, target: str, target_dim: int) -> LocalUnitary:
    return copy_into(source, source_dim, target, target_dim).dagger()


@dataclass
class Circuit:
    """A gate list with a running count of oracle applications.

    Gates whose ``kind`` is ``"oracle"`` are counted each time the circuit runs.
    """

    ops: list[LocalUnitary] = field(default_factory=list)
    oracle_calls: int = 0

    @property
    def oracle_slots(self) -> int:
        return sum(op.kind == "oracle" for op in self.ops)

    def run(self, state: QState) -> QState:
        for op in self.ops:
            if op.kind == "oracle":
                self.oracle_calls += 1
            state = apply(state, op)
        return state

    def inverse(self) -> "Circuit":
        return Circuit([op.dagger() for op in reversed(self.ops)])
