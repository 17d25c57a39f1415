import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qtradeoff.entropy import Distribution
from qtradeoff.qsim import (
    H,
    Circuit,
    LocalUnitary,
    QState,
    Register,
    RegisterLayout,
    SimulationError,
    adder,
    apply,
    apply_batch,
    cnot,
    copy_into,
    hadamard,
    l2_distance,
    measure_distribution,
    monomial,
    pauli_x,
    toffoli,
    tv_distance,
    unitary,
)


def random_unitary(rng, d):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    qm, r = np.linalg.qr(z)
    return qm * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng, layout):
    v = rng.normal(size=layout.total_dim) + 1j * rng.normal(size=layout.total_dim)
    return QState(layout, v / np.linalg.norm(v))


def full_operator(layout, u: LocalUnitary) -> np.ndarray:
    """Reference: the global matrix built column by column from basis states."""
    dims = layout.dims
    out = np.zeros((layout.total_dim, layout.total_dim), dtype=complex)
    m = u.dense()
    pos = [layout.index(t) for t in u.targets]
    for col, idx in enumerate(np.ndindex(*dims)):
        sub = np.ravel_multi_index(tuple(idx[p] for p in pos), u.dims)
        for sub_out in range(u.size):
            amp = m[sub_out, sub]
            if amp == 0:
                continue
            new = list(idx)
            for p, v in zip(pos, np.unravel_index(sub_out, u.dims)):
                new[p] = v
            out[np.ravel_multi_index(new, dims), col] += amp
    return out


class TestLayout:
    def test_total_dim_and_order(self):
        lay = RegisterLayout.of(("a", 2), ("b", 3), ("c", 5))
        assert lay.total_dim == 30
        assert lay.names == ("a", "b", "c")
        assert lay.index("c") == 2

    def test_rejects_duplicates_small_dims_and_cap(self):
        with pytest.raises(SimulationError):
            RegisterLayout.of(("a", 2), ("a", 3))
        with pytest.raises(SimulationError):
            Register("a", 1)
        with pytest.raises(SimulationError):
            RegisterLayout.of(("a", 2**11), ("b", 2**10))
        assert RegisterLayout.of(("a", 2**10), ("b", 2**10)).total_dim == 2**20

    def test_cap_env_override(self, monkeypatch):
        monkeypatch.setenv("QT_DIM_CAP", "16")
        with pytest.raises(SimulationError):
            RegisterLayout.of(("a", 4), ("b", 8))

    def test_unknown_register(self):
        lay = RegisterLayout.of(("a", 2))
        with pytest.raises(SimulationError):
            lay.index("zz")
        with pytest.raises(SimulationError):
            apply(QState.basis(lay), hadamard("zz"))


class TestStates:
    def test_basis_and_product_agree(self):
        lay = RegisterLayout.of(("a", 2), ("b", 3), ("c", 2))
        s = QState.basis(lay, {"b": 2, "c": 1})
        assert s.amplitude({"b": 2, "c": 1}) == 1
        e2 = np.eye(3)[2]
        t = QState.product(lay, {"c": [0, 1], "b": e2})
        assert l2_distance(s, t) == 0

    def test_product_group_is_transposed_into_layout_order(self):
        lay = RegisterLayout.of(("a", 2), ("b", 3), ("c", 2))
        v = np.zeros(6)
        v[1 * 3 + 2] = 1.0  # c = 1, b = 2 in the factor's own order
        s = QState.product(lay, {("c", "b"): v})
        assert s.amplitude({"a": 0, "b": 2, "c": 1}) == 1

    def test_unnormalized_rejected(self):
        lay = RegisterLayout.of(("a", 2))
        with pytest.raises(SimulationError):
            QState(lay, np.array([1.0, 1.0]))
        assert QState(lay, np.array([1.0, 1.0]), normalized=False).norm == pytest.approx(math.sqrt(2))

    def test_amplitudes_are_read_only(self):
        s = QState.basis(RegisterLayout.of(("a", 2)))
        with pytest.raises(ValueError):
            s.amplitudes[0] = 0


class TestApply:
    def test_identity_and_hadamard(self):
        lay = RegisterLayout.of(("a", 2), ("b", 3))
        s = random_state(np.random.default_rng(0), lay)
        ident = unitary(["b"], [3], np.eye(3))
        assert l2_distance(apply(s, ident), s) == 0
        h = apply(QState.basis(RegisterLayout.of(("q", 2))), hadamard("q"))
        assert np.allclose(h.amplitudes, [1 / math.sqrt(2), 1 / math.sqrt(2)])

    def test_mod3_increment(self):
        lay = RegisterLayout.of(("x", 2), ("t", 3))
        s = QState.basis(lay, {"t": 2, "x": 1})
        out = apply(s, adder("t", 3, 1))
        assert out.amplitude({"x": 1, "t": 0}) == 1
        # against a brute-force index permutation of the whole vector
        perm = [x * 3 + (t + 1) % 3 for x in range(2) for t in range(3)]
        ref = np.zeros(6, dtype=complex)
        ref[perm] = s.amplitudes
        assert np.array_equal(out.amplitudes, ref)

    def test_rejects_non_unitary_and_dim_mismatch(self):
        with pytest.raises(SimulationError):
            unitary(["a"], [2], [[1, 1], [0, 1]])
        lay = RegisterLayout.of(("a", 3))
        with pytest.raises(SimulationError):
            apply(QState.basis(lay), hadamard("a"))

    @settings(max_examples=40, deadline=None)
    @given(
        dims=st.lists(st.integers(2, 4), min_size=1, max_size=4),
        data=st.data(),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_matches_global_operator(self, dims, data, seed):
        rng = np.random.default_rng(seed)
        names = [f"r{i}" for i in range(len(dims))]
        lay = RegisterLayout.of(*zip(names, dims))
        k = data.draw(st.integers(1, len(dims)))
        targets = data.draw(st.permutations(names))[:k]
        tdims = [lay.dim(t) for t in targets]
        u = unitary(targets, tdims, random_unitary(rng, math.prod(tdims)))
        s = random_state(rng, lay)
        out = apply(s, u)
        assert np.allclose(out.amplitudes, full_operator(lay, u) @ s.amplitudes, atol=1e-10)
        assert abs(out.norm - 1) <= 1e-9
        assert l2_distance(apply(out, u.dagger()), s) <= 1e-8

    @settings(max_examples=30, deadline=None)
    @given(dims=st.lists(st.integers(2, 4), min_size=2, max_size=4), seed=st.integers(0, 2**32 - 1))
    def test_monomial_matches_dense(self, dims, seed):
        rng = np.random.default_rng(seed)
        names = [f"r{i}" for i in range(len(dims))]
        lay = RegisterLayout.of(*zip(names, dims))
        targets = names[::-1][:2]
        tdims = [lay.dim(t) for t in targets]
        size = math.prod(tdims)
        perm = rng.permutation(size)
        phases = np.exp(2j * np.pi * rng.random(size))
        mono = LocalUnitary(tuple(targets), tuple(tdims), perm=perm, phases=phases)
        dense = unitary(targets, tdims, mono.dense())
        s = random_state(rng, lay)
        assert l2_distance(apply(s, mono), apply(s, dense)) <= 1e-12
        assert l2_distance(apply(apply(s, mono), mono.dagger()), s) <= 1e-12

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        lay = RegisterLayout.of(("a", 2), ("b", 3), ("c", 2))
        states = [random_state(rng, lay) for _ in range(4)]
        u = cnot("c", "a")
        batch = apply_batch(lay, np.array([s.amplitudes for s in states]), u)
        for row, s in zip(batch, states):
            assert np.allclose(row, apply(s, u).amplitudes)


class TestFix:
    def test_fix_restricts_to_block(self):
        u = copy_into("x", 3, "t", 3)
        sub = u.fix({"x": 2})
        assert sub.targets == ("t",)
        assert list(sub.perm) == [2, 0, 1]

    def test_fix_rejects_writes_to_fixed_register(self):
        with pytest.raises(SimulationError):
            cnot("c", "t").fix({"t": 0})
        with pytest.raises(SimulationError):
            hadamard("a").fix({"a": 0})

    def test_fix_all_targets_gives_phase(self):
        z = LocalUnitary(("a",), (2,), perm=np.arange(2), phases=np.array([1, -1]))
        assert z.fix({"a": 1}) == -1


class TestMeasurement:
    def test_examples(self):
        lay = RegisterLayout.of(("q", 2))
        assert measure_distribution(QState.basis(lay), ["q"]).prob(0) == 1
        plus = apply(QState.basis(lay), hadamard("q"))
        assert np.allclose(measure_distribution(plus, ["q"]).masses, [0.5, 0.5])
        bell_lay = RegisterLayout.of(("a", 2), ("b", 2))
        bell = apply(apply(QState.basis(bell_lay), hadamard("a")), cnot("a", "b"))
        d = measure_distribution(bell, ["a", "b"])
        assert d.as_dict() == pytest.approx({(0, 0): 0.5, (1, 1): 0.5})

    def test_order_of_registers(self):
        lay = RegisterLayout.of(("a", 2), ("b", 3))
        s = QState.basis(lay, {"a": 1, "b": 2})
        assert measure_distribution(s, ["b", "a"]).prob(2, 1) == 1

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_masses_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        lay = RegisterLayout.of(("a", 3), ("b", 2), ("c", 4))
        d = measure_distribution(random_state(rng, lay), ["c", "a"])
        assert np.all(d.masses >= 0)
        assert abs(d.masses.sum() - 1) <= 1e-12


class TestDistances:
    def test_l2_examples(self):
        lay = RegisterLayout.of(("q", 2))
        zero, one = QState.basis(lay), QState.basis(lay, {"q": 1})
        plus = apply(zero, hadamard("q"))
        assert l2_distance(zero, zero) == 0
        assert l2_distance(zero, one) == pytest.approx(math.sqrt(2))
        assert l2_distance(zero, plus) == pytest.approx(math.sqrt(2 - math.sqrt(2)))

    def test_tv_examples(self):
        assert tv_distance(Distribution([0.5, 0.5]), Distribution([0.5, 0.5])) == 0
        assert tv_distance(Distribution([1.0, 0.0]), Distribution([0.0, 1.0])) == 1
        assert tv_distance(Distribution([0.5, 0.5]), Distribution([0.8, 0.2])) == pytest.approx(0.3)
        with pytest.raises(ValueError):
            tv_distance(Distribution([1.0]), Distribution([0.5, 0.5]))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.0, 1.0))
    def test_tv_at_most_four_times_l2(self, seed, scale):
        rng = np.random.default_rng(seed)
        lay = RegisterLayout.of(("a", 3), ("b", 2))
        s = random_state(rng, lay)
        v = s.amplitudes + scale * (rng.normal(size=6) + 1j * rng.normal(size=6))
        t = QState(lay, v / np.linalg.norm(v))
        basis = unitary(["a", "b"], [3, 2], random_unitary(rng, 6))
        d = l2_distance(s, t)
        p = measure_distribution(apply(s, basis), ["a", "b"])
        q = measure_distribution(apply(t, basis), ["a", "b"])
        assert tv_distance(p, q) <= 4 * d + 1e-12


class TestGates:
    def test_toffoli_truth_table(self):
        lay = RegisterLayout.of(("a", 2), ("b", 2), ("c", 2))
        for a in (0, 1):
            for b in (0, 1):
                for c in (0, 1):
                    out = apply(QState.basis(lay, {"a": a, "b": b, "c": c}), toffoli("a", "b", "c"))
                    assert out.amplitude({"a": a, "b": b, "c": c ^ (a & b)}) == 1

    def test_pauli_x_and_hadamard_matrix(self):
        assert np.array_equal(pauli_x("a").dense(), [[0, 1], [1, 0]])
        assert np.allclose(hadamard("a").dense(), H)

    def test_circuit_counts_oracle_calls(self):
        lay = RegisterLayout.of(("a", 2))
        orc = LocalUnitary(("a",), (2,), perm=np.array([1, 0]), kind="oracle")
        circ = Circuit([orc, hadamard("a"), orc])
        assert circ.oracle_slots == 2
        circ.run(QState.basis(lay))
        circ.run(QState.basis(lay))
        assert circ.oracle_calls == 4

    def test_monomial_rejects_non_bijection(self):
        with pytest.raises(SimulationError):
            monomial(["a"], [2], lambda a: (0,))
