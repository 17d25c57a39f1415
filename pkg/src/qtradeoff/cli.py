"""Command-line entry point: build constructions, check their bounds, emit reports.

Every subcommand writes a deterministic report (JSON by default, CSV with
``--format csv``) and exits 0 iff every named inequality holds.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np

from qtradeoff import comm, ftab, oip, osearch, transmit
from qtradeoff.entropy import Distribution, h_max, min_support_set
from qtradeoff.qsim import SimulationError, dim_cap
from qtradeoff.transmit import BoundCheck

EXACT = 1e-9


@dataclass
class VerificationReport:
    construction: str
    config: dict
    measured: dict = field(default_factory=dict)
    checks: list[BoundCheck] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, lhs: float, rhs: float, relation: str = "<=", slack: float = 0.0) -> BoundCheck:
        c = BoundCheck(name, float(lhs), float(rhs), relation, slack)
        self.checks.append(c)
        return c

    def to_json(self) -> dict:
        return _round_floats(
            {
                "construction": self.construction,
                "config": self.config,
                "measured": self.measured,
                "checks": [c.to_json() for c in self.checks],
                "rows": self.rows,
                "passed": self.passed,
                "provenance": _provenance(),
            }
        )

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"
        buf = io.StringIO()
        if self.rows:
            rows = _round_floats(self.rows)
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        else:
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["inequality", "lhs", "relation", "rhs", "slack", "margin", "passed"])
            for c in _round_floats([c.to_json() for c in self.checks]):
                w.writerow([c["inequality"], c["lhs"], c["relation"], c["rhs"], c["slack"], c["margin"], c["passed"]])
        return buf.getvalue()


def _fmt(v: float) -> float | str:
    if math.isnan(v) or math.isinf(v):
        return str(v)
    return float(f"{v:.12g}")


def _round_floats(obj):
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _provenance() -> dict:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    return {"package": version, "numpy": np.__version__, "dim_cap": dim_cap()}


# --- commands ---------------------------------------------------------------


def cmd_verify_composed(n: int, q: int, logx: int | None = None) -> VerificationReport:
    """Exact query and communication upper bounds for the composed function."""
    if n < 1 or q < 1:
        raise ValueError("n and q must be positive")
    full_logx = n * q
    logx = full_logx if logx is None else logx
    if q > logx:
        raise ValueError(f"q = {q} exceeds log|X| = {logx}")
    if logx > full_logx:
        raise ValueError(f"log|X| = {logx} exceeds nq = {full_logx}")
    rep = VerificationReport("verify-composed", {"n": n, "q": q, "logx": logx})
    f = ftab.make_composed(n, q)
    if logx < full_logx:
        f = ftab.restrict_composed(f, ftab.composed_subset(n, q, 2**logx), n, q)
    mu = Distribution.uniform(f.size_x)

    alg = oip.bv_oip(n, q)
    orep = oip.evaluate_oip(alg, f, mu)
    rep.measured["oip"] = orep.to_json() | {"oracle_calls": sorted(set(orep.oracle_calls))}
    rep.check(f"queries == q = {q}", orep.T, q, "<=")
    rep.check(f"queries >= q = {q}", orep.T, q, ">=")
    rep.check("max_x OIP failure <= 0", orep.worst_failure, 0.0, "<=", EXACT)

    p0 = comm.composed_protocol(n, q, f)
    led = p0.ledger
    worst = comm.worst_failure(p0)
    qcc = led.total
    rep.measured["protocol"] = {"a_to_b": led.a_to_b, "b_to_a": led.b_to_a, "worst_failure": worst}
    rep.check(f"A->B qubits == ceil(n/2) = {math.ceil(n / 2)}", led.a_to_b, math.ceil(n / 2), "<=")
    half_logq = math.ceil(math.ceil(math.log2(q)) / 2) if q > 1 else 0
    rep.check(f"B->A qubits == ceil(ceil(log2 q)/2) = {half_logq}", led.b_to_a, half_logq, "<=")
    rep.check("max_{x,y} protocol failure <= 0", worst, 0.0, "<=", EXACT)
    rep.check("Qcc0 * Qoip0 >= 1/2 log2|X|", qcc * orep.T, 0.5 * logx, ">=", EXACT)
    rep.check(
        "Qcc0 * Qoip0 <= 1/2 nq + q (1/2 + ceil(ceil(log2 q)/2))",
        qcc * orep.T, 0.5 * full_logx + q * (0.5 + half_logq), "<=", EXACT,
    )
    try:
        clean = comm.compile_clean(p0)
        tr = transmit.compose_transmission(alg, clean, mu)
    except SimulationError as e:
        rep.measured["transmission"] = {"skipped": str(e)}
    else:
        rep.measured["transmission"] = tr.to_json()
        rep.check("transmission: max_x failure <= 0", tr.worst_failure, 0.0, "<=", EXACT)
        rep.check(
            f"transmission: A->B qubits == clean ledger x T = {clean.ledger.a_to_b} x {alg.T}",
            tr.qubits_a_to_b, clean.ledger.a_to_b * alg.T, "<=",
        )
        rep.checks.append(transmit.check_ns_bound(tr, mu, tr.avg_failure))
    return rep


def tradeoff_rows(logx: int, qs: range) -> list[dict]:
    rows = []
    for q in qs:
        n = math.ceil(logx / q)
        half_logq = math.ceil(0.5 * math.log2(q))
        rows.append(
            {
                "q": q,
                "curve": 0.5 * logx / q,
                "achieved": math.ceil(n / 2) + half_logq,
                "min_consistent": math.ceil(0.5 * logx / q),
            }
        )
    return rows


def cmd_tradeoff_curve(logx: int, q_min: int = 1, q_max: int | None = None) -> VerificationReport:
    if logx < 1:
        raise ValueError("logX must be at least 1")
    q_max = logx if q_max is None else q_max
    qs = range(max(q_min, 1), q_max + 1)
    if not qs:
        raise ValueError("empty q range")
    rep = VerificationReport("tradeoff-curve", {"logx": logx, "q_min": qs.start, "q_max": qs.stop - 1})
    rep.rows = tradeoff_rows(logx, qs)
    for r in rep.rows:
        rep.check(f"q = {r['q']}: achieved >= 1/2 logX / q", r["achieved"], r["curve"], ">=", EXACT)
    return rep


def _fixture(name: str, eps: float = 0.0) -> comm.CommProtocol:
    builders = {
        "constant": lambda: comm.constant_protocol(ftab.FunctionTable("const1", 2, np.ones((3, 2), dtype=np.int64))),
        "gt4": lambda: comm.send_and_compute(ftab.make_gt(4)),
        "composed22": lambda: comm.composed_protocol(2, 2),
        "composed12": lambda: comm.composed_protocol(1, 2),
        "ps3": lambda: comm.send_and_compute(ftab.make_ps_prime(3)),
        "superdense3": lambda: comm.superdense_send(3),
    }
    if name not in builders:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(builders)}")
    return comm.inject_noise(builders[name](), eps)


def _load_protocol(args) -> comm.CommProtocol:
    if args.protocol:
        with open(args.protocol) as fh:
            return comm.protocol_from_json(json.load(fh))
    return _fixture(args.fixture, getattr(args, "eps", 0.0))


def cmd_verify_clean(p0: comm.CommProtocol) -> VerificationReport:
    p = comm.compile_clean(p0)
    rep = VerificationReport("verify-clean", {"protocol": p0.name})
    analysis = comm.analyze_errors(p, 0.0, keep_vectors=False)
    rep.measured = {
        "p0_ledger": {"a_to_b": p0.ledger.a_to_b, "b_to_a": p0.ledger.b_to_a},
        "ledger": {"a_to_b": p.ledger.a_to_b, "b_to_a": p.ledger.b_to_a},
        "max_error_norm": analysis.max_norm,
    }
    rep.check("max_{x,y,a} ||U|x,y,phi,a> - |x,y,phi,a+f>|| <= 0", analysis.max_norm, 0.0, "<=", 1e-8)
    rep.check("A->B qubits == p0 A->B + p0 B->A", p.ledger.a_to_b, p0.ledger.total, "<=")
    rep.check("A->B qubits >= p0 A->B + p0 B->A", p.ledger.a_to_b, p0.ledger.total, ">=")
    return rep


def cmd_verify_approx(p0: comm.CommProtocol) -> VerificationReport:
    p, an = comm.compile_approx_clean(p0, keep_vectors=False)
    rep = VerificationReport("verify-approx", {"protocol": p0.name, "eps": p0.declared_error})
    rep.measured = an.to_json() | {"size_z": an.size_z, "ledger": {"a_to_b": p.ledger.a_to_b, "b_to_a": p.ledger.b_to_a}}
    rep.check("max ||error_{x,y,a}|| <= 2|Z| sqrt(eps)", an.max_norm, an.norm_bound, "<=", 1e-8)
    rep.check("max_{y != y'} |<error_{x,y,a}|error_{x,y',a}>| <= 0", an.worst_cross, 0.0, "<=", 1e-9)
    return rep


def cmd_verify_transmit(n: int, q: int, eps: float, mu: Distribution | None = None) -> VerificationReport:
    """bv_oip with each query answered by the approximately clean composed protocol."""
    f = ftab.make_composed(n, q)
    mu = Distribution.uniform(f.size_x) if mu is None else mu
    p0 = comm.inject_noise(comm.composed_protocol(n, q), eps)
    p, _ = comm.compile_approx_clean(p0, analyze=False)
    tr = transmit.compose_transmission(oip.bv_oip(n, q), p, mu)
    rep = VerificationReport("verify-transmit", {"n": n, "q": q, "eps": eps})
    rep.measured = tr.to_json()
    rep.checks += tr.checks
    rep.checks.append(transmit.check_ns_bound(tr, mu, tr.avg_failure))
    return rep


def cmd_compressed_send(mu: Distribution, eps: float) -> VerificationReport:
    p, tr = transmit.superdense_compressed_send(mu, eps)
    rep = VerificationReport("compressed-send", {"eps": eps, "mu": mu.to_json()["masses"]})
    rep.measured = tr.to_json() | {"h_max": h_max(mu, eps)}
    rep.check("measured failure <= eps", tr.avg_failure, eps, "<=", 1e-12)
    rep.check("A->B qubits == ceil(H_max^eps / 2)", tr.qubits_a_to_b, math.ceil(h_max(mu, eps) / 2 - 1e-12), "<=")
    rep.checks.append(transmit.check_ns_bound(tr, mu, tr.avg_failure))
    return rep


def cmd_entropy(mu: Distribution, eps: float) -> VerificationReport:
    rep = VerificationReport("entropy", {"eps": eps, "mu": mu.to_json()["masses"]})
    S = min_support_set(mu, eps)
    rep.measured = {"h_max": h_max(mu, eps), "support_set": sorted(S), "support_mass": float(mu.masses[S].sum())}
    rep.check("mass of the chosen set >= 1 - eps", rep.measured["support_mass"], 1 - eps, ">=", 1e-12)
    return rep


def cmd_gt(N: int, c: float) -> VerificationReport:
    T, threshold = osearch.gt_bound(N, c)
    lg = math.log2(N)
    llg = math.log2(lg)
    rep = VerificationReport("gt-bound", {"N": N, "c": c})
    rep.measured = {"T": T, "threshold": threshold, "log2_N": lg, "log2_log2_N": llg}
    rep.check("(loglogN + log T) T >= c logN", (llg + math.log2(T)) * T, c * lg, ">=")
    if T > 1:
        rep.check("(loglogN + log(T-1)) (T-1) < c logN", (llg + math.log2(T - 1)) * (T - 1), c * lg - 1e-12, "<=")
    return rep


def cmd_reduce_dump(N: int, S: list[int], js: list[int] | None = None) -> VerificationReport:
    r = osearch.SearchRestriction(N, tuple(S))
    js = list(range(1, r.n_prime + 1)) if not js else js
    rep = VerificationReport("reduce-dump", {"N": N, "S": list(r.S), "j": js})
    for j in js:
        res = osearch.check_reduction(r, j)
        for jj, y, a, got, want in res.rows:
            rep.rows.append({"j": jj, "s_j": r.S[jj - 1], "y": y, "a": a, "out": got, "expected": want})
        rep.check(f"j = {j}: output == a xor GT(s_j, y) on all (y, a)", int(not res.correct), 0, "<=")
        rep.check(f"j = {j}: ancillas restored", int(not res.ancillas_restored), 0, "<=")
        rep.check(f"j = {j}: oracle calls per query == 2", res.oracle_calls_per_query, 2, "<=")
        rep.check(f"j = {j}: oracle calls per query >= 2", res.oracle_calls_per_query, 2, ">=")
    return rep


# --- argument parsing -------------------------------------------------------


def _mu_from_args(args, default_size: int | None = None) -> Distribution:
    if getattr(args, "mu", None):
        with open(args.mu) as fh:
            return Distribution.from_json(json.load(fh))
    if getattr(args, "masses", None):
        return Distribution([float(v) for v in args.masses.split(",")])
    size = args.uniform if getattr(args, "uniform", None) else default_size
    if size is None:
        raise ValueError("give --mu FILE, --masses or --uniform N")
    return Distribution.uniform(size)


def _add_mu_args(sp):
    sp.add_argument("--mu", help="distribution JSON file {'masses': [...]}")
    sp.add_argument("--masses", help="comma-separated masses")
    sp.add_argument("--uniform", type=int, help="uniform distribution on N outcomes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qtradeoff", description=__doc__.splitlines()[0])
    ap.add_argument("--cap", type=int, help="amplitude cap (default 2^20, or QT_DIM_CAP)")
    ap.add_argument("--out", help="write the report here instead of stdout")
    ap.add_argument("--format", choices=("json", "csv"), default="json")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("verify-composed", help="query/communication upper bounds for the composed function")
    sp.add_argument("n", type=int)
    sp.add_argument("q", type=int)
    sp.add_argument("--logx", type=int, help="restrict X to 2^logx rows")

    sp = sub.add_parser("tradeoff-curve", help="curve, achieved and minimal-consistent points per q")
    sp.add_argument("--logx", type=int, default=100)
    sp.add_argument("--q-min", type=int, default=1)
    sp.add_argument("--q-max", type=int)

    helps = {
        "verify-clean": "compile an exact protocol cleanly and check every basis input",
        "verify-approx": "error-vector norms and orthogonality after approximate clean compilation",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--fixture", default="gt4", help="constant, gt4, composed22, composed12, ps3 or superdense3")
        sp.add_argument("--protocol", help="protocol JSON file")
        if name == "verify-approx":
            sp.add_argument("--eps", type=float, default=0.0)

    sp = sub.add_parser("verify-transmit", help="OIP-driven transmission, or compressed superdense with --compressed")
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--q", type=int, default=2)
    sp.add_argument("--eps", type=float, default=0.0)
    sp.add_argument("--compressed", action="store_true")
    _add_mu_args(sp)

    sp = sub.add_parser("entropy", help="smooth max-entropy of a distribution")
    sp.add_argument("--eps", type=float, default=0.0)
    _add_mu_args(sp)

    sp = sub.add_parser("gt-bound", help="minimal T for the ordered-search inequality")
    sp.add_argument("N", type=int)
    sp.add_argument("c", type=float)

    sp = sub.add_parser("reduce-dump", help="truth table of the ordered-search reduction")
    sp.add_argument("N", type=int)
    sp.add_argument("--S", required=True, help="comma-separated sorted subset of [N]")
    sp.add_argument("--j", type=int, action="append")
    return ap


def dispatch(args) -> VerificationReport:
    c = args.command
    if c == "verify-composed":
        return cmd_verify_composed(args.n, args.q, args.logx)
    if c == "tradeoff-curve":
        return cmd_tradeoff_curve(args.logx, args.q_min, args.q_max)
    if c == "verify-clean":
        return cmd_verify_clean(_load_protocol(args))
    if c == "verify-approx":
        return cmd_verify_approx(_load_protocol(args))
    if c == "verify-transmit":
        if args.compressed:
            return cmd_compressed_send(_mu_from_args(args), args.eps)
        mu = _mu_from_args(args, 2 ** (args.n * args.q))
        return cmd_verify_transmit(args.n, args.q, args.eps, mu)
    if c == "entropy":
        return cmd_entropy(_mu_from_args(args), args.eps)
    if c == "gt-bound":
        return cmd_gt(args.N, args.c)
    if c == "reduce-dump":
        return cmd_reduce_dump(args.N, [int(v) for v in args.S.split(",")], args.j)
    raise ValueError(f"unknown command {c}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    saved = os.environ.get("QT_DIM_CAP")
    if args.cap is not None:
        os.environ["QT_DIM_CAP"] = str(args.cap)
    try:
        rep = dispatch(args)
        text = rep.render(args.format)
    except (ValueError, OSError, json.JSONDecodeError) as e:
        print(f"qtradeoff: error: {e}", file=sys.stderr)
        return 2
    finally:
        # the override is per invocation; callers in the same process keep their cap
        if saved is None:
            os.environ.pop("QT_DIM_CAP", None)
        else:
            os.environ["QT_DIM_CAP"] = saved
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if rep.passed else 1

if __name__ == "__main__":
    sys.exit(main())
