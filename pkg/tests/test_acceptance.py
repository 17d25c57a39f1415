"""One test per acceptance criterion; each records a PASS/FAIL line before asserting."""

import itertools
import math

import numpy as np
import pytest

from qtradeoff import cli, comm, ftab, oip, osearch, transmit
from qtradeoff.entropy import Distribution, h_max
from qtradeoff.ftab import FunctionTable
from qtradeoff.qsim import RegisterLayout, apply_batch

EPSILONS = (0.0, 0.01, 0.04, 0.25)


def brute_h_max(masses, eps):
    """log2 of the smallest subset with mass >= 1 - eps, over all 2^k subsets."""
    k = len(masses)
    masks = (np.arange(1, 2**k)[:, None] >> np.arange(k)) & 1
    ok = masks @ masses >= 1 - eps - 1e-12
    return math.log2(masks[ok].sum(axis=1).min())


def legendre(x, q):
    return 0 if x % q == 0 else (1 if pow(x, (q - 1) // 2, q) == 1 else -1)


def test_01_clean_compiler_exactness(acceptance_line):
    fixtures = {
        "constant": comm.constant_protocol(FunctionTable("const1", 2, np.ones((3, 2), dtype=np.int64))),
        "gt4": comm.send_and_compute(ftab.make_gt(4)),
        "composed22": comm.composed_protocol(2, 2),
    }
    worst, ledgers_ok = 0.0, True
    for p0 in fixtures.values():
        p = comm.compile_clean(p0)
        worst = max(worst, comm.analyze_errors(p, 0.0, keep_vectors=False).max_norm)
        ledgers_ok &= p.ledger.a_to_b == p0.ledger.a_to_b + p0.ledger.b_to_a
    ok = worst <= 1e-8 and ledgers_ok
    acceptance_line(1, "clean compiler exactness", ok, f"max l2 {worst:.2e}, ledgers {ledgers_ok}")
    assert ok


def test_02_approx_clean_certificates(acceptance_line):
    worst_slack, worst_cross = -np.inf, 0.0
    for name, build in (("gt4", lambda: comm.send_and_compute(ftab.make_gt(4))), ("ps3", lambda: comm.send_and_compute(ftab.make_ps_prime(3)))):
        for eps in EPSILONS:
            p0 = comm.inject_noise(build(), eps)
            _, an = comm.compile_approx_clean(p0, keep_vectors=False)
            assert an.size_z == (2 if name == "gt4" else 3)
            worst_slack = max(worst_slack, an.max_norm - an.norm_bound)
            worst_cross = max(worst_cross, an.worst_cross)
    ok = worst_slack <= 1e-8 and worst_cross <= 1e-9
    acceptance_line(2, "approx-clean certificates", ok, f"max(norm - 2|Z|sqrt eps) {worst_slack:.3g}, cross {worst_cross:.2e}")
    assert ok


@pytest.mark.slow
def test_03_transmission_drift(acceptance_line):
    worst_drift, worst_fail = -np.inf, -np.inf
    # (2, 2) sits at the 2^20 amplitude cap and takes about a minute, so it runs at one eps only
    cases = [(1, q, eps) for q in (1, 2, 3) for eps in EPSILONS] + [(2, 2, 0.04)]
    for n, q, eps in cases:
        mu = Distribution.uniform(2 ** (n * q))
        p0 = comm.inject_noise(comm.composed_protocol(n, q), eps)
        p, _ = comm.compile_approx_clean(p0, analyze=False)
        r = transmit.compose_transmission(oip.bv_oip(n, q), p, mu)
        for i in range(1, q + 1):
            worst_drift = max(worst_drift, r.drift[:, i - 1].max() - transmit.drift_bound(2, eps, i))
        worst_fail = max(worst_fail, r.avg_failure - transmit.failure_bound(r.avg_oip_failure, 2, eps, q))
    ok = worst_drift <= 1e-8 and worst_fail <= 1e-8
    acceptance_line(3, "transmission drift", ok, f"{len(cases)} cases; drift slack {worst_drift:.3g}, failure slack {worst_fail:.3g}")
    assert ok


@pytest.mark.slow
def test_04_composed_achievability(acceptance_line):
    bad = []
    for n, q in itertools.product((1, 2, 3), repeat=2):
        f = ftab.make_composed(n, q)
        rep = oip.evaluate_oip(oip.bv_oip(n, q), f, Distribution.uniform(f.size_x))
        p0 = comm.composed_protocol(n, q)
        half_logq = math.ceil(0.5 * math.log2(q))
        led = p0.ledger
        good = (
            rep.T == q
            and set(rep.oracle_calls) == {q}
            and rep.worst_failure <= 1e-9
            and comm.worst_failure(p0) <= 1e-9
            and (led.a_to_b, led.b_to_a) == (math.ceil(n / 2), half_logq)
            and (math.ceil(n / 2) + half_logq) * q >= 0.5 * n * q
        )
        if not good:
            bad.append((n, q))
    acceptance_line(4, "composed function achievability", not bad, f"failing pairs {bad}" if bad else "all 9 (n, q)")
    assert not bad


def test_05_ns_consistency(acceptance_line):
    checks = []
    for n in range(1, 7):
        mu = Distribution.uniform(2**n)
        r = transmit.measure_transmission(comm.superdense_send(n), mu)
        checks.append(transmit.check_ns_bound(r, mu))
    _, r = transmit.superdense_compressed_send(Distribution.uniform(4), 0.5)
    k2 = transmit.check_ns_bound(r, Distribution.uniform(4), 0.5)
    equality = k2.lhs == 1 and k2.rhs == 0.5
    for k in range(1, 9):
        mu = Distribution.uniform(2**k)
        _, r = transmit.superdense_compressed_send(mu, 0.5)
        checks.append(transmit.check_ns_bound(r, mu, 0.5))
        equality &= r.qubits_a_to_b == math.ceil(h_max(mu, 0.5) / 2)
    rng = np.random.default_rng(5)
    for _ in range(40):
        mu = Distribution(rng.dirichlet(np.ones(int(rng.integers(2, 13)))))
        for eps in (0.0, 0.05, 0.2, 0.5):
            _, r = transmit.superdense_compressed_send(mu, eps)
            checks.append(transmit.check_ns_bound(r, mu, r.avg_failure))
            equality &= r.qubits_a_to_b == math.ceil(h_max(mu, r.avg_failure) / 2 - 1e-12)
    for n, q in ((1, 1), (2, 1), (1, 2), (2, 2), (1, 3)):
        mu = Distribution.uniform(2 ** (n * q))
        r = transmit.compose_transmission(oip.bv_oip(n, q), comm.compile_clean(comm.composed_protocol(n, q)), mu)
        checks.append(transmit.check_ns_bound(r, mu, r.avg_failure))
    for eps in (0.01, 0.04):
        mu = Distribution.uniform(4)
        p, _ = comm.compile_approx_clean(comm.inject_noise(comm.composed_protocol(1, 2), eps), analyze=False)
        r = transmit.compose_transmission(oip.bv_oip(1, 2), p, mu)
        checks.append(transmit.check_ns_bound(r, mu, r.avg_failure))
    failed = [c.name for c in checks if not c.passed]
    ok = not failed and equality
    acceptance_line(5, "Nayak-Salzman consistency", ok, f"{len(checks)} protocols, k = 2 case {k2.lhs:g} >= {k2.rhs:g}")
    assert ok


@pytest.mark.slow
def test_06_controlled_oracle_and_reduction(acceptance_line):
    rng = np.random.default_rng(6)
    ctrl_ok = True
    for _ in range(20):
        sy = int(rng.integers(2, 9))
        f = FunctionTable("rand", 2, rng.integers(0, 2, size=(1, sy)))
        circ = ftab.controlled_oracle(ftab.make_oracle(f, 0))
        lay = RegisterLayout.of(("y", sy), ("anc", 2), ("c", 2), ("a", 2))
        inputs = list(itertools.product(range(sy), (0,), (0, 1), (0, 1)))
        batch = np.zeros((len(inputs), lay.total_dim), dtype=complex)
        want = np.zeros_like(batch)
        for k, (y, anc, c, a) in enumerate(inputs):
            batch[k, np.ravel_multi_index((y, anc, c, a), lay.dims)] = 1
            want[k, np.ravel_multi_index((y, 0, c, a ^ (c & int(f.table[0, y]))), lay.dims)] = 1
        calls = 0
        for op in circ.ops:
            calls += op.kind == "oracle"
            batch = apply_batch(lay, batch, op)
        ctrl_ok &= np.abs(batch - want).max() <= 1e-12 and calls == 2
    cases, red_ok = 0, True
    for N in range(1, 11):
        for mask in range(1, 2**N):
            r = osearch.SearchRestriction(N, tuple(i + 1 for i in range(N) if mask >> i & 1))
            for j in range(1, r.n_prime + 1):
                res = osearch.check_reduction(r, j)
                cases += 1
                red_ok &= res.correct and res.ancillas_restored and res.oracle_calls_per_query == 2
                red_ok &= all(got == (a ^ int(r.S[j - 1] > y)) for _, y, a, got, _ in res.rows)
    ok = ctrl_ok and red_ok
    acceptance_line(6, "controlled oracle and ordered-search reduction", ok, f"20 random f, {cases} (N, S, j) cases")
    assert ok


def test_07_entropy_oracle(acceptance_line):
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(1000):
        k = int(rng.integers(1, 13))
        masses = rng.dirichlet(np.full(k, rng.choice([0.3, 1.0, 5.0])))
        eps = float(rng.choice([0.0, rng.uniform(0, 0.99)]))
        mismatches += h_max(Distribution(masses), eps) != brute_h_max(masses, eps)
    uniform_ok = all(h_max(Distribution.uniform(2**k), 0.5) == k - 1 for k in range(1, 11))
    ok = mismatches == 0 and uniform_ok
    acceptance_line(7, "smooth max-entropy vs brute force", ok, f"{mismatches} mismatches in 1000, uniform halves {uniform_ok}")
    assert ok


def test_08_function_families(acceptance_line):
    chi_ok = balance_ok = True
    for q in (3, 5, 7, 11, 13):
        chi = ftab.chi_values(q)
        chi_ok &= all(chi[x * y % q] == chi[x] * chi[y] for x in range(q) for y in range(q))
        chi_ok &= all(chi[x] == legendre(x, q) for x in range(q))
        rows = np.vectorize(ftab.decode_chi)(ftab.make_ps_prime(q).table)
        balance_ok &= all((r == 1).sum() == (r == -1).sum() == (q - 1) // 2 for r in rows)
    ip_ok = True
    for n in range(1, 9):
        t = ftab.make_composed(n, 1).table
        ip_ok &= all(t[x, y] == bin(x & y).count("1") % 2 for x in range(2**n) for y in range(2**n))
    embed_ok = True
    for n, q in itertools.product((1, 2, 3), repeat=2):
        f = ftab.make_composed(n, q)
        for h in itertools.product((0, 1), repeat=q):
            got = ftab.make_oracle(f, ftab.embed_or_instance(h, n, q)).matrix()
            # controlled-U_h on (j, y, a): flip a by h_j when y_1 (the top bit of y) is set
            want = np.zeros_like(got)
            for j, y, a in itertools.product(range(q), range(2**n), range(2)):
                src = ((j * 2**n) + y) * 2 + a
                dst = ((j * 2**n) + y) * 2 + (a ^ (h[j] & (y >> (n - 1))))
                want[dst, src] = 1
            embed_ok &= np.array_equal(got, want)
    ok = chi_ok and balance_ok and ip_ok and embed_ok
    acceptance_line(8, "function-family properties", ok, f"chi {chi_ok}, balance {balance_ok}, IP {ip_ok}, embedding {embed_ok}")
    assert ok


def test_09_tradeoff_curve(acceptance_line):
    rep = cli.cmd_tradeoff_curve(100, 1, 50)
    rows = {r["q"]: r for r in rep.rows}
    ok = sorted(rows) == list(range(1, 51)) and rep.passed
    for q, r in rows.items():
        want = math.ceil(math.ceil(100 / q) / 2) + math.ceil(0.5 * math.log2(q))
        ok &= r["curve"] == pytest.approx(50 / q, abs=1e-12) and r["achieved"] == want and r["achieved"] >= r["curve"]
    acceptance_line(9, "tradeoff curve for log|X| = 100", ok, f"q = 1: {rows[1]['achieved']} vs {rows[1]['curve']:g}")
    assert ok


def test_10_amplification(acceptance_line):
    p = comm.inject_noise(comm.send_and_compute(ftab.make_gt(4)), 1 / 3)
    fails = comm.failure_probabilities(comm.amplify(p, 3))
    exact = np.abs(fails - 7 / 27).max() <= 1e-9
    base = p.ledger
    linear = all(
        (comm.amplify(p, k).ledger.a_to_b, comm.amplify(p, k).ledger.b_to_a) == (k * base.a_to_b, k * base.b_to_a)
        for k in (1, 3, 5)
    )
    ok = exact and linear
    acceptance_line(10, "majority amplification", ok, f"max |failure - 7/27| {np.abs(fails - 7 / 27).max():.2e}, ledger linear {linear}")
    assert ok
