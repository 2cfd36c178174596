"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 infeasible problem, 3 gradient check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from . import __version__
from .core import (
    DEFAULT_EPSILON,
    DEFAULT_MAX_ITER,
    DEFAULT_TAU,
    SolverConfig,
    cosine_cost,
    normalize_cost,
    sq_euclidean_cost,
    uniform,
)
from .errors import Infeasible, InvalidInput, MaskedOTError, TooLarge
from .gromov import DEFAULT_OUTER_ITERS
from .gtot import GraphTopology, MaskSpec, build_mask, combined_objective, gtot_regularizer, mgwd_regularizer
from .oracle import exact_mwd
from .sinkhorn import solve_mwd

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_GRADCHECK = 0, 1, 2, 3
GRADCHECK_TOL = 1e-3



class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def read_matrix_csv(path: str, header: bool = False) -> np.ndarray:
    """Rectangular CSV of floats; error messages carry 1-based row/column."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    if header:
        rows = rows[1:]
    if not rows:
        raise InputError(f"{path}: no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows, start=1):
        if len(row) != width:
            raise InputError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row, start=1):
            try:
                x = float(cell)
            except ValueError:
                raise InputError(f"{path}: row {i}, column {j}: cannot parse {cell.strip()!r} as a number") from None
            if not math.isfinite(x):
                raise InputError(f"{path}: row {i}, column {j}: value {cell.strip()!r} is not finite")
            out[i - 1, j - 1] = x
    return out


def read_graph_json(path: str) -> GraphTopology:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict) or "n" not in doc:
        raise InputError(f"{path}: expected an object with at least an 'n' field")
    edges = doc.get("edges", [])
    if not all(isinstance(e, list) and len(e) == 2 and all(isinstance(v, int) for v in e) for e in edges):
        raise InputError(f"{path}: 'edges' must be a list of [i, j] integer pairs")
    try:
        return GraphTopology(
            n=doc["n"],
            edges=tuple(tuple(e) for e in edges),
            edge_weights=doc.get("weights"),
            self_loops_added=bool(doc.get("self_loops", False)),
        )
    except (InvalidInput, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _parse_marginal(text, size, name):
    if text is None:
        return uniform(size)
    try:
        vals = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise InputError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if vals.size != size:
        raise InputError(f"{name}: {vals.size} entries for {size} points")
    return vals


def _solver_config(args) -> SolverConfig:
    return SolverConfig(epsilon=args.epsilon, tau=args.tau, max_iter=args.max_iter)


def _write_report(report: dict, out: str):
    text = json.dumps(report, indent=2)
    if out in (None, "-"):
        print(text)
    else:
        with open(out, "w") as fh:
            fh.write(text + "\n")


def _add_solver_flags(p, normalize_default):
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="entropic strength")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="stopping threshold")
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=normalize_default,
                   help="rescale the cost to max 2 before solving")
    p.add_argument("--emit-plan", action="store_true", help="include the transport plan in the report")
    p.add_argument("--header", action="store_true", help="skip one header line in CSV inputs")
    p.add_argument("--out", default="-", help="report path (default: stdout)")


def _mwd_inputs(args):
    if args.cost:
        if args.source or args.target:
            raise InputError("--cost cannot be combined with --source/--target")
        C = read_matrix_csv(args.cost, args.header)
    elif args.source and args.target:
        Xs = read_matrix_csv(args.source, args.header)
        Xt = read_matrix_csv(args.target, args.header)
        C = cosine_cost(Xs, Xt) if args.cosine else sq_euclidean_cost(Xs, Xt)
    else:
        raise InputError("give --cost, or both --source and --target")
    if args.normalize:
        C = normalize_cost(C)
    n, m = C.shape
    if args.mask == "ones":
        M = np.ones((n, m), dtype=bool)
    elif args.mask == "identity":
        if n != m:
            raise InputError(f"identity mask needs a square cost, got {n}x{m}")
        M = np.eye(n, dtype=bool)
    elif args.mask == "graph":
        if not args.graph:
            raise InputError("--mask graph requires --graph")
        topo = read_graph_json(args.graph)
        if topo.n != n or n != m:
            raise InputError(f"graph has {topo.n} vertices but the cost is {n}x{m}")
        M = build_mask(topo, MaskSpec.adjacency())
    else:
        if not args.mask_file:
            raise InputError("--mask file requires --mask-file")
        M = read_matrix_csv(args.mask_file, args.header)
        if M.shape != (n, m):
            raise InputError(f"mask is {M.shape[0]}x{M.shape[1]} but the cost is {n}x{m}")
    a = _parse_marginal(args.row_marginal, n, "--row-marginal")
    b = _parse_marginal(args.col_marginal, m, "--col-marginal")
    return C, M, a, b


def cmd_mwd(args) -> int:
    C, M, a, b = _mwd_inputs(args)
    cfg = _solver_config(args)
    sol = solve_mwd(C, M, a, b, cfg)
    report = {
        "distance": sol.distance,
        "iterations": sol.report.iterations,
        "converged": sol.report.converged,
        "marginal_residual": sol.report.marginal_residual,
        "marginal_residual_row": sol.report.marginal_residual_row,
        "marginal_residual_col": sol.report.marginal_residual_col,
    }
    if args.oracle:
        try:
            value, _ = exact_mwd(C, M, a, b)
            report["oracle_value"] = value
            report["oracle_gap"] = abs(sol.distance - value)
        except TooLarge as exc:
            report["oracle_skipped"] = str(exc)
    if args.emit_plan:
        report["plan"] = np.asarray(sol.plan).tolist()
    report["config"] = {
        **cfg.to_dict(),
        "normalize": args.normalize,
        "cost": args.cost,
        "source": args.source,
        "target": args.target,
        "cosine": args.cosine,
        "header": args.header,
        "mask": args.mask,
        "graph": args.graph,
        "mask_file": args.mask_file,
        "row_marginal": np.asarray(a).tolist(),
        "col_marginal": np.asarray(b).tolist(),
    }
    _write_report(report, args.out)
    return EXIT_OK


def _gtot_mask_spec(args) -> MaskSpec:
    if args.mask == "power":
        return MaskSpec.adjacency_power(args.k)
    return MaskSpec(args.mask)


def cmd_gtot(args) -> int:
    topo = read_graph_json(args.graph)
    Xs = read_matrix_csv(args.source, args.header)
    Xt = read_matrix_csv(args.target, args.header)
    if Xs.shape != Xt.shape or Xs.shape[0] != topo.n:
        raise InputError(f"embeddings {Xs.shape} and {Xt.shape} do not match a {topo.n}-vertex graph")
    cfg = _solver_config(args)
    spec = _gtot_mask_spec(args)
    mwd = gtot_regularizer(topo, Xs, Xt, spec, cfg, args.normalize)
    report = {
        "distance": mwd.value,
        "iterations": mwd.report.iterations,
        "converged": mwd.report.converged,
        "marginal_residual": mwd.report.marginal_residual,
        "mwd": mwd.value,
    }
    mgwd_value = 0.0
    if args.mgwd:
        mg = mgwd_regularizer(topo, Xs, Xt, spec, cfg, args.outer_iters, args.normalize)
        mgwd_value = mg.value
        report["mgwd"] = mg.value
        report["mgwd_outer_iterations"] = mg.report.outer_iterations
    if args.lam is not None or args.beta is not None:
        report["combined_penalty"] = combined_objective(0.0, mwd.value, mgwd_value, args.lam or 0.0, args.beta or 0.0)
    if args.emit_plan:
        report["plan"] = np.asarray(mwd.plan).tolist()
    report["config"] = {
        **cfg.to_dict(),
        "normalize": args.normalize,
        "graph": args.graph,
        "source": args.source,
        "target": args.target,
        "header": args.header,
        "mask": args.mask,
        "k": args.k,
        "mgwd": args.mgwd,
        "outer_iters": args.outer_iters,
        "lambda": args.lam,
        "beta": args.beta,
    }
    _write_report(report, args.out)
    return EXIT_OK


def cmd_demo(args) -> int:
    from .demo import history_csv, run_demo

    solver = SolverConfig(epsilon=args.epsilon, tau=args.tau, max_iter=args.max_iter)
    result = run_demo(seed=args.seed, lam=args.lam, beta=args.beta, epochs=args.epochs,
                      learning_rate=args.lr, n_graphs=args.graphs, d=args.dim,
                      domain_shift=args.domain_shift, solver=solver, normalize=args.normalize,
                      gradcheck=args.gradcheck, gradcheck_tol=GRADCHECK_TOL)
    if result.gradcheck_error is not None and not result.gradcheck_error <= GRADCHECK_TOL:
        print(f"gradient check failed: max relative error {result.gradcheck_error:.3e} > {GRADCHECK_TOL:g}",
              file=sys.stderr)
        return EXIT_GRADCHECK
    if args.out_history:
        with open(args.out_history, "w", newline="") as fh:
            fh.write(history_csv(result.history))
    final = result.history[-1]
    summary = {
        "final_objective": final["objective"],
        "initial_objective": result.history[0]["objective"],
        "final_task_loss": final["task_loss"],
        "weight_distance": final["weight_distance"],
    }
    if result.gradcheck_error is not None:
        summary["gradcheck_error"] = result.gradcheck_error
    print(json.dumps(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maskot", description="Masked optimal transport toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mwd", help="entropic masked Wasserstein distance")
    p.add_argument("--version", action="version", version=f"maskot mwd {__version__}")
    p.add_argument("--cost", help="cost matrix CSV")
    p.add_argument("--source", help="source embeddings CSV")
    p.add_argument("--target", help="target embeddings CSV")
    p.add_argument("--cosine", action="store_true", help="cosine cost (default: squared Euclidean)")
    p.add_argument("--mask", choices=("ones", "identity", "graph", "file"), default="ones")
    p.add_argument("--graph", help="graph JSON for --mask graph")
    p.add_argument("--mask-file", help="0/1 CSV for --mask file")
    p.add_argument("--row-marginal", help="comma-separated row marginal (default uniform)")
    p.add_argument("--col-marginal", help="comma-separated column marginal (default uniform)")
    p.add_argument("--oracle", action="store_true", help="compare with the exact min-cost-flow value")
    _add_solver_flags(p, normalize_default=False)
    p.set_defaults(func=cmd_mwd)

    p = sub.add_parser("gtot", help="GTOT (and masked Gromov) regularizer between two embedding sets")
    p.add_argument("--version", action="version", version=f"maskot gtot {__version__}")
    p.add_argument("--graph", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mask", choices=("adjacency", "ones", "identity", "power"), default="adjacency")
    p.add_argument("--k", type=int, default=2, help="hop count for --mask power")
    p.add_argument("--mgwd", action="store_true", help="also compute the masked Gromov regularizer")
    p.add_argument("--outer-iters", type=int, default=DEFAULT_OUTER_ITERS)
    p.add_argument("--lambda", dest="lam", type=float, help="weight of the MWD term")
    p.add_argument("--beta", type=float, help="weight of the MGWD term")
    _add_solver_flags(p, normalize_default=True)
    p.set_defaults(func=cmd_gtot)

    p = sub.add_parser("demo", help="toy GTOT fine-tuning run")
    p.add_argument("--version", action="version", version=f"maskot demo {__version__}")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--graphs", type=int, default=16)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--domain-shift", type=float, default=1.5)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--out-history", help="history CSV path")
    p.add_argument("--gradcheck", action="store_true", help="finite-difference check before training")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, InvalidInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MaskedOTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
