"""Command-line front end.

Exit codes: 0 success, 1 input error (message names the field), 2 solver
non-convergence or a failed certificate (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Any

import numpy as np

from . import __version__, bvp, multiflow, selftest
from .convex import ConvexError, LinearMap, function_from_dict
from .io import write_asdf, write_json, write_path_csv, write_surface_csv
from .lagrangians import BasicASD, Regularized, SwapASD, default_seed, verify_antiselfdual
from .problem import (
    ProblemError,
    ReportDocument,
    dump_report,
    load_problem,
    report_schema,
)

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


def _opts(model) -> bvp.SolveOptions:
    o = bvp.SolveOptions()
    for k, v in model.model_dump().items():
        if v is not None:
            setattr(o, k, v)
    return o


def _fn(tree: dict, loc: str):
    return function_from_dict(tree, loc)


def _matrix(A, loc: str):
    if A is None:
        return None
    try:
        return LinearMap(A)
    except ConvexError as e:
        raise ProblemError(loc, str(e)) from None


def _emit(args, prob, doc: ReportDocument, summary: str) -> None:
    text = dump_report(doc)
    target = args.report or getattr(prob.output, "report", None)
    if target:
        write_json(target, text)
    print(summary)


def _fmt(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.6e}" if math.isfinite(v) else str(v)
    return str(v)


def _solve_summary(rep: bvp.SolveReport) -> str:
    lines = [
        f"converged: {rep.converged}",
        f"action_value: {_fmt(rep.action_value)} (threshold {_fmt(rep.threshold)})",
        f"max_inclusion_residual: {_fmt(rep.max_inclusion_residual)}",
        f"boundary_residuals: {_fmt(rep.boundary_residuals[0])}, {_fmt(rep.boundary_residuals[1])}",
        f"iterations: {rep.iterations}",
    ]
    if rep.refinement_levels:
        lines.append(f"refinement_slope: {_fmt(rep.refinement_slope)}"
                     + (" (saturated)" if rep.refinement_saturated else ""))
    if rep.message:
        lines.append(f"message: {rep.message}")
    return "\n".join(lines)


def cmd_solve_flow(args) -> int:
    prob = load_problem(args.problem, "flow")
    phi = _fn(prob.phi, "phi")
    ap = bvp.flow_problem(phi, prob.x0, prob.T, prob.N)
    opts = _opts(prob.solver)
    if prob.refine:
        N = prob.N
        levels = [N, 2 * N, 4 * N]
        rep = bvp.refine_and_extrapolate(ap, levels, opts, jobs=args.jobs)
        path, _ = bvp.minimize_action(ap.with_steps(levels[-1]), opts)
    else:
        path, rep = bvp.minimize_action(ap, opts)
    csv = args.csv or prob.output.csv
    if csv:
        write_path_csv(csv, path.times, path.values)
    code = EXIT_OK if rep.converged else EXIT_NONCONVERGED
    doc = ReportDocument(command="solve-flow", exit_code=code, solve=bvp._json_safe(rep.to_dict()))
    _emit(args, prob, doc, _solve_summary(rep))
    return code


def cmd_solve_hamiltonian(args) -> int:
    prob = load_problem(args.problem, "hamiltonian")
    x1, x2, rep = bvp.solve_hamiltonian_connect(
        _fn(prob.phi1, "phi1"), _fn(prob.phi2, "phi2"), _fn(prob.psi1, "psi1"), _fn(prob.psi2, "psi2"),
        _matrix(prob.A1, "A1"), _matrix(prob.A2, "A2"), prob.T, prob.N, _opts(prob.solver), prob.n)
    csv = args.csv or prob.output.csv
    if csv:
        write_path_csv(csv, x1.times, np.hstack([x1.values, x2.values]))
    code = EXIT_OK if rep.converged else EXIT_NONCONVERGED
    doc = ReportDocument(command="solve-hamiltonian", exit_code=code, solve=bvp._json_safe(rep.to_dict()))
    _emit(args, prob, doc, _solve_summary(rep))
    return code


def cmd_solve_second_order(args) -> int:
    prob = load_problem(args.problem, "second_order")
    x, rep = bvp.solve_second_order(
        _fn(prob.phi, "phi"), _fn(prob.psi1, "psi1"), _fn(prob.psi2, "psi2"),
        _matrix(prob.A1, "A1"), _matrix(prob.A2, "A2"), prob.T, prob.N, _opts(prob.solver), prob.n)
    csv = args.csv or prob.output.csv
    if csv:
        write_path_csv(csv, x.times, x.values)
    code = EXIT_OK if rep.converged else EXIT_NONCONVERGED
    doc = ReportDocument(command="solve-second-order", exit_code=code, solve=bvp._json_safe(rep.to_dict()))
    _emit(args, prob, doc, _solve_summary(rep))
    return code


def _multiflow_solve(prob, jobs: int):
    kw = {"scheme": prob.scheme}
    if prob.lambda_schedule is not None:
        kw["lambda_schedule"] = tuple(prob.lambda_schedule)
    fp = multiflow.FlowProblem(_fn(prob.phi, "phi"), prob.x0, tuple(prob.horizons), **kw)
    surf, rep = multiflow.solve_n_param(fp, prob.grid.as_dims(), jobs=jobs)
    return fp, surf, rep


def _multiflow_summary(rep: multiflow.MultiflowReport) -> str:
    lines = [
        f"converged: {rep.converged}",
        f"max_inclusion_residual: {_fmt(rep.max_inclusion_residual)} (threshold {_fmt(rep.threshold)})",
        f"boundary_max_deviation: {_fmt(rep.boundary_max_deviation)}",
        f"action_value: {_fmt(rep.action_value)}",
    ]
    if rep.message:
        lines.append(f"message: {rep.message}")
    return "\n".join(lines)


def cmd_solve_multiflow(args) -> int:
    prob = load_problem(args.problem, "multiflow")
    fp, surf, rep = _multiflow_solve(prob, args.jobs)
    csv = args.csv or prob.output.csv
    if csv:
        write_surface_csv(csv, surf.axes, surf.values)
    asdf = args.asdf or prob.output.asdf
    if asdf:
        if surf.P != 2:
            raise ProblemError("output.asdf", "the ASDF grid format holds two-parameter surfaces only")
        write_asdf(asdf, surf.values)
    code = EXIT_OK if rep.converged else EXIT_NONCONVERGED
    doc = ReportDocument(command="solve-multiflow", exit_code=code, multiflow=rep.to_dict())
    _emit(args, prob, doc, _multiflow_summary(rep))
    return code


def cmd_estimates(args) -> int:
    prob = load_problem(args.problem, "multiflow")
    fp, surf, rep = _multiflow_solve(prob, args.jobs)
    cert = multiflow.compute_p0(fp.phi, fp.x0)
    est = multiflow.verify_estimates(surf, cert, fp.phi, fp.lambda_schedule, fp.x0)
    ok = est["all_ok"] and rep.converged
    code = EXIT_OK if ok else EXIT_NONCONVERGED
    doc = ReportDocument(command="estimates", exit_code=code, multiflow=rep.to_dict(),
                         estimates=bvp._json_safe(est))
    lines = [
        f"energy: {_fmt(est['energy'])} <= {_fmt(est['energy_bound'])} x 1.1: {est['energy_ok']}",
        f"edge: {_fmt(est['edge_sum'])} <= {_fmt(est['edge_bound'])} x 1.1: {est['edge_ok']}",
        f"resolvent slopes within |p0| + 1e-7: {est['resolvent_ok']}",
    ]
    _emit(args, prob, doc, "\n".join(lines))
    return code


def cmd_verify_asd(args) -> int:
    prob = load_problem(args.problem, "verify_asd")
    spec = prob.lagrangian
    phi = _fn(spec.phi, "lagrangian.phi")
    base = SwapASD(phi) if (spec.kind == "swap" or (spec.kind == "regularized" and spec.base == "swap")) \
        else BasicASD(phi)
    L = Regularized(base, spec.lam) if spec.kind == "regularized" else base
    seed = default_seed()
    gap = verify_antiselfdual(L, prob.samples, seed=seed, dim=prob.dim, scale=prob.scale)
    ok = gap <= prob.tolerance
    code = EXIT_OK if ok else EXIT_NONCONVERGED
    doc = ReportDocument(command="verify-asd", exit_code=code,
                         asd={"max_gap": bvp._json_safe(gap), "samples": prob.samples, "seed": seed,
                              "tolerance": prob.tolerance, "passed": ok})
    _emit(args, prob, doc, f"max gap: {_fmt(gap)} over {prob.samples} samples (seed {seed}); "
                           f"{'PASS' if ok else 'FAIL'} at {prob.tolerance:.1e}")
    return code


def cmd_selftest(args) -> int:
    rows = selftest.run()
    ok = all(r.passed for r in rows)
    code = EXIT_OK if ok else EXIT_NONCONVERGED
    doc = ReportDocument(command="selftest", exit_code=code,
                         selftest={"rows": [bvp._json_safe(r.to_dict()) for r in rows], "passed": ok})
    text = dump_report(doc)
    if args.report:
        write_json(args.report, text)
    sys.stdout.write(text if args.json else selftest.format_table(rows))
    return code


def cmd_schema(args) -> int:
    sys.stdout.write(json.dumps(report_schema(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asdflow", description="Zero-action solvers for convex gradient and Hamiltonian flows.")
    p.add_argument("--version", action="version", version=f"asdflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def problem_cmd(name, fn, help_, csv=True, asdf=False, jobs=False):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("problem", help="JSON problem file")
        sp.add_argument("--report", help="write the JSON report here (overrides output.report)")
        if csv:
            sp.add_argument("--csv", help="write the solution CSV here (overrides output.csv)")
        if asdf:
            sp.add_argument("--asdf", help="write the binary ASDF grid here (overrides output.asdf)")
        sp.add_argument("--jobs", type=int, default=1,
                        help="threads for refinement levels or lambda levels" if jobs else argparse.SUPPRESS)
        sp.set_defaults(func=fn)
        return sp

    problem_cmd("solve-flow", cmd_solve_flow, "gradient flow with an initial value", jobs=True)
    problem_cmd("solve-hamiltonian", cmd_solve_hamiltonian, "Hamiltonian path between two boundary manifolds")
    problem_cmd("solve-second-order", cmd_solve_second_order, "second-order boundary value problem")
    problem_cmd("solve-multiflow", cmd_solve_multiflow, "multi-parameter gradient flow", asdf=True, jobs=True)
    problem_cmd("verify-asd", cmd_verify_asd, "sample the anti-selfduality identity", csv=False)
    problem_cmd("estimates", cmd_estimates, "solve a multiflow problem and check the a priori bounds",
                csv=False, jobs=True)
    st = sub.add_parser("selftest", help="run the embedded verification fixtures")
    st.add_argument("--json", action="store_true", help="print the machine-readable report")
    st.add_argument("--report", help="also write the JSON report here")
    st.set_defaults(func=cmd_selftest)
    sc = sub.add_parser("schema", help="print the JSON schema of report documents")
    sc.set_defaults(func=cmd_schema)
    return p


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except ProblemError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvexError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"error: cannot write output: {e}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
