"""Command-line entry point: ``nisqpf solve|stochastic|depth-report|validate``.

Exit codes: 0 success/converged, 1 input error, 2 non-convergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .driver import BasisOptimizationError, QpfConfig, qpf_solve
from .powerflow import CaseError, build_fdlf_matrices, classical_fdlf, newton_raphson
from .sim import BELEM, NOISELESS, depth_and_gate_report
from .stochastic import correlated_distribution, run_stochastic
from .vqls import ENTANGLERS, METHODS, AnsatzConfig, OptimizerSettings, build_ansatz

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; 2 is reserved for non-convergence here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _qpf_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("exact", "shots"), default="exact")
    p.add_argument("--shots", type=int, default=100_000)
    p.add_argument("--noise", choices=("on", "off"), default="off")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--entangler", choices=ENTANGLERS, default="cnot-linear")
    p.add_argument("--max-evals", type=int, default=20_000)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--target-cost", type=float, default=None)
    p.add_argument("--optimizer", choices=METHODS, default="nelder-mead")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nisqpf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run one power flow")
    p.add_argument("--case", required=True, help="case file or built-in name")
    p.add_argument("--method", choices=("qpf", "fdlf", "nr"), default="qpf")
    p.add_argument("--out", type=Path, default=None)
    _qpf_args(p)

    p = sub.add_parser("stochastic", help="Monte Carlo power flow")
    p.add_argument("--case", required=True)
    p.add_argument("--buses", required=True, help="comma-separated bus ids")
    p.add_argument("--monitor", default=None, help="buses to record (default: --buses)")
    p.add_argument("--corr", type=float, default=0.75)
    p.add_argument("--std-frac", type=float, default=0.1)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--classical", action="store_true", help="use the dense FDLF solver")
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--out", type=Path, default=None)
    _qpf_args(p)

    p = sub.add_parser("depth-report", help="ansatz depth and gate counts")
    p.add_argument("--case", default=None)
    p.add_argument("--qubits", type=int, default=None, help="report a bare ansatz instead")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--entangler", choices=ENTANGLERS, default="cnot-linear")

    p = sub.add_parser("validate", help="parse and check a case file")
    p.add_argument("--case", required=True)
    return parser


def _config(args) -> QpfConfig:
    opt = OptimizerSettings(
        max_evals=args.max_evals,
        restarts=args.restarts,
        target_cost=args.target_cost,
        method=args.optimizer,
        seed=args.seed,
    )
    return QpfConfig(
        tol=args.tol,
        max_iterations=args.max_iter,
        mode=args.mode,
        shots=args.shots,
        noise=BELEM if args.noise == "on" else NOISELESS,
        seed=args.seed,
        optimizer=opt,
        n_layers=args.layers,
        entangler=args.entangler,
        workers=args.workers,
    )


def _settings(args) -> dict:
    skip = {"func", "out", "verbose", "command", "case"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _print_table(case, result) -> None:
    print(f"{'iter':>4}  " + "  ".join(f"V{b.id:<8d}" for b in case.buses))
    for k, s in enumerate(result.iterates, 1):
        print(f"{k:>4}  " + "  ".join(f"{v:<9.4f}" for v in s.V))
    print(f"{'bus':>4}  {'V':>9}  {'theta':>9}")
    for b, v, t in zip(case.buses, result.state.V, result.state.theta):
        print(f"{b.id:>4}  {v:9.4f}  {t:9.4f}")


def cmd_solve(args) -> int:
    case = io.load_case(args.case)
    t0 = time.perf_counter()
    stats, caches = {}, None
    if args.method == "nr":
        result = newton_raphson(case, args.tol, args.max_iter)
    elif args.method == "fdlf":
        result = classical_fdlf(case, args.tol, args.max_iter)
    else:
        qres = qpf_solve(case, _config(args))
        result, stats, caches = qres.result, qres.circuit_stats, qres.caches
    elapsed = time.perf_counter() - t0
    _print_table(case, result)
    status = "converged" if result.converged else "NOT converged"
    print(f"{args.method}: {status} after {result.iterations} iterations "
          f"(max mismatch {result.mismatch_history[-1]:.2e})")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        settings = _settings(args)
        settings["root_seed"] = args.seed
        io.write_json(args.out / "report.json",
                      io.run_report(case, result, args.method, settings, stats))
        io.write_iterations_csv(args.out / "iterations.csv", case, result)
        io.write_cost_trace_csv(args.out / "cost_trace.csv", caches)
        io.write_json(args.out / "depth_report.json", _depth_rows(stats))
        io.write_json(args.out / "timings.json", {"wall_clock_s": elapsed})
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _depth_rows(stats: dict) -> dict:
    keep = ("n_qubits", "n_layers", "entangler", "n_params", "depth", "entangling_gates",
            "total_gates")
    return {name: {k: s[k] for k in keep} for name, s in stats.items()}


def _bus_list(text: str) -> list[int]:
    try:
        buses = [int(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise CaseError(f"bad bus list {text!r}") from None
    if not buses:
        raise CaseError("empty bus list")
    return buses


def cmd_stochastic(args) -> int:
    if args.samples < 1:
        raise CaseError("--samples must be at least 1")
    if args.std_frac < 0:
        raise CaseError("--std-frac must be nonnegative")
    case = io.load_case(args.case)
    buses = _bus_list(args.buses)
    monitor = _bus_list(args.monitor) if args.monitor else buses
    try:
        dist = correlated_distribution(case, buses, args.corr, args.std_frac, args.samples,
                                       args.seed)
    except ValueError as e:
        raise CaseError(str(e)) from None
    t0 = time.perf_counter()
    res = run_stochastic(case, dist, _config(args), monitor, classical=args.classical)
    elapsed = time.perf_counter() - t0
    summary = res.summary()
    summary["settings"] = _settings(args)
    summary["schema_version"] = io.SCHEMA_VERSION
    print(f"{res.n_samples} samples solved, {res.failures} failed")
    np.set_printoptions(precision=4, suppress=True)
    print("injection correlation:\n", np.array(summary["injection_correlation"]))
    print("voltage correlation:\n", np.array(summary["voltage_correlation"]))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        io.write_json(args.out / "summary.json", summary)
        io.write_samples_csv(args.out / "samples.csv", res)
        io.write_histogram_csv(args.out / "histogram.csv", res, args.bins)
        io.write_json(args.out / "timings.json", {"wall_clock_s": elapsed})
    return EXIT_OK


def depth_report(case=None, qubits=None, layers=2, entangler="cnot-linear") -> dict:
    """Ansatz statistics per subsystem of ``case`` (or for a bare qubit count)."""
    sizes = {}
    if qubits is not None:
        sizes["ansatz"] = qubits
    else:
        m = build_fdlf_matrices(case)
        for name, mat in (("P", m.b_prime), ("Q", m.b_tilde)):
            if len(mat):
                sizes[name] = max(1, (len(mat) - 1).bit_length())
    out = {}
    for name, n in sizes.items():
        cfg = AnsatzConfig(n, layers, entangler)
        rep = depth_and_gate_report(build_ansatz(cfg))
        out[name] = {"n_qubits": n, "n_layers": layers, "entangler": entangler,
                     "n_params": cfg.n_params, "depth": rep.depth,
                     "entangling_gates": rep.cnot_count, "total_gates": rep.total_gates}
    return out


def cmd_depth_report(args) -> int:
    if args.case is None and args.qubits is None:
        raise CaseError("depth-report needs --case or --qubits")
    case = io.load_case(args.case) if args.qubits is None else None
    rows = depth_report(case, args.qubits, args.layers, args.entangler)
    print(f"{'block':<8}{'qubits':>7}{'params':>8}{'depth':>7}{'entangling':>12}{'gates':>7}")
    for name, r in rows.items():
        print(f"{name:<8}{r['n_qubits']:>7}{r['n_params']:>8}{r['depth']:>7}"
              f"{r['entangling_gates']:>12}{r['total_gates']:>7}")
    return EXIT_OK


def cmd_validate(args) -> int:
    case = io.load_case(args.case)
    kinds = [b.type for b in case.buses]
    print(f"{case.name}: {case.n_bus} buses ({kinds.count('PV')} PV, {kinds.count('PQ')} PQ), "
          f"{len(case.branches)} branches, base {case.base_mva} MVA: OK")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "stochastic": cmd_stochastic,
    "depth-report": cmd_depth_report,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CaseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except BasisOptimizationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
