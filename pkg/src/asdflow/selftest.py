"""Embedded verification fixtures.

Each row computes one number and compares it with a tolerance.  Tolerances
can be overridden per row with ``ASDFLOW_SELFTEST_TOL_<ROW>`` (row name in
upper case), which is how a negative control is staged.  The report holds
no timings so that two runs produce identical bytes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import bvp, multiflow
from .convex import AbsSum, NormSquaredScaled, Quadratic, fenchel_gap
from .lagrangians import BasicASD, Regularized, verify_antiselfdual

TOL_ENV_PREFIX = "ASDFLOW_SELFTEST_TOL_"


@dataclass
class Row:
    name: str
    value: float
    comparison: str
    tolerance: float

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.value):
            return False
        if self.comparison == "<=":
            return self.value <= self.tolerance
        return self.value >= self.tolerance

    def to_dict(self):
        return {"name": self.name, "value": self.value, "comparison": self.comparison,
                "tolerance": self.tolerance, "passed": self.passed}


def _tol(name: str, default: float) -> float:
    raw = os.environ.get(TOL_ENV_PREFIX + name.upper())
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"{TOL_ENV_PREFIX + name.upper()} must be a number, got {raw!r}") from None


def _quadratic_catalog():
    return [
        NormSquaredScaled(1.0),
        NormSquaredScaled(3.0),
        Quadratic([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0], 0.25),
        Quadratic([[1.0, 0.0, 0.0], [0.0, 4.0, 1.0], [0.0, 1.0, 2.0]]),
    ]


def _asd_basic():
    return max(verify_antiselfdual(BasicASD(f), 1000, dim=2) for f in _quadratic_catalog())


def _asd_regularized():
    return max(verify_antiselfdual(Regularized(BasicASD(f), lam), 1000, dim=2)
               for f in _quadratic_catalog() for lam in (1e-1, 1e-3))


def _flow():
    phi = NormSquaredScaled(1.0)
    out = {}
    _, rep = bvp.minimize_action(bvp.flow_problem(phi, [1.0], 1.0, 256))
    out["flow_action"] = rep.action_value
    rr = bvp.refine_and_extrapolate(bvp.flow_problem(phi, [1.0], 1.0, 128), [128, 256, 512])
    out["flow_refinement_slope"] = rr.refinement_slope if rr.refinement_slope is not None else math.nan
    path, _ = bvp.solve_flow(phi, [1.0], 1.0, 1024)
    out["flow_oracle"] = float(np.max(np.abs(path.values[:, 0] - np.exp(-path.times))))
    out["_path"] = path
    return out


def _hamiltonian():
    # phi1 = phi2 = 1/2|.|^2, psi1 = 1/2(x-1)^2, psi2 = 1/2 x^2, A = 0:
    # x1' = -x2, x2' = -x1 with -x2(0) = x1(0) - 1 and x2(T) = x1(T)
    half = NormSquaredScaled(1.0)
    psi1 = Quadratic([[1.0]], [-1.0], 0.5)
    T = 1.0
    x1, x2, rep = bvp.solve_hamiltonian_connect(half, half, psi1, half, T=T, N=1024)
    t = x1.times
    # (x1 + x2) decays like e^{-t}, (x1 - x2) grows like e^{t}; the end
    # condition kills the growing mode, the start condition fixes the rest
    a = 0.5
    e1 = a * np.exp(-t)
    e2 = a * np.exp(-t)
    err = max(np.max(np.abs(x1.values[:, 0] - e1)), np.max(np.abs(x2.values[:, 0] - e2)))
    return {"hamiltonian_oracle": float(err), "hamiltonian_boundary": float(max(rep.boundary_residuals))}


def _second_order():
    # x'' = x, x'(0) = x(0) - 1, -x'(T) = x(T): x = (cosh t - sinh t) / 2
    half = NormSquaredScaled(1.0)
    x, _ = bvp.solve_second_order(half, Quadratic([[1.0]], [-1.0], 0.5), half, T=1.0, N=1024)
    t = x.times
    ex = 0.5 * np.cosh(t) - 0.5 * np.sinh(t)
    return {"second_order_oracle": float(np.max(np.abs(x.values[:, 0] - ex)))}


def _multiflow(path):
    phi = NormSquaredScaled(1.0)
    out = {}
    prob = multiflow.FlowProblem(phi, [1.0], (1.0, 1.0))
    S, rep = multiflow.solve_two_param(prob, (64, 64))
    s, t = S.axes
    U = S.values[..., 0]
    out["two_param_oracle"] = float(np.max(np.abs(U - np.exp(-np.minimum.outer(s, t)))))
    out["two_param_symmetry"] = float(np.max(np.abs(S.values - S.values.transpose(1, 0, 2))))
    out["two_param_faces"] = rep.boundary_max_deviation
    cert = multiflow.compute_p0(phi, [1.0])
    est = multiflow.verify_estimates(S, cert, phi, prob.lambda_schedule)
    out["energy_ratio"] = est["energy"] / est["energy_bound"]
    out["edge_ratio"] = est["edge_sum"] / est["edge_bound"]
    out["resolvent_slope_excess"] = max(est["resolvent_slopes"]) - cert.norm
    prob3 = multiflow.FlowProblem(phi, [1.0], (1.0, 1.0, 1.0))
    V, _ = multiflow.solve_n_param(prob3, (16, 16, 16))
    r, s3, t3 = np.meshgrid(*V.axes, indexing="ij")
    out["three_param_oracle"] = float(np.max(np.abs(V.values[..., 0] - np.exp(-np.minimum(np.minimum(r, s3), t3)))))
    W, _ = multiflow.solve_n_param(multiflow.FlowProblem(phi, [1.0], (1.0,)), (1024,))
    out["one_param_consistency"] = float(np.max(np.abs(W.values - path.values)))
    src, _ = bvp.solve_flow(phi, [1.0], 1.0, 64)
    out["change_of_variables_sum"] = multiflow.change_of_variables_check(phi, src, "sum")
    out["change_of_variables_wedge"] = multiflow.change_of_variables_check(phi, S, "wedge", C=0.5)
    out["change_of_variables_average3"] = multiflow.change_of_variables_check(phi, V, "average3")
    return out


def _resolvent():
    worst = 0.0
    xs = np.linspace(-2.0, 2.0, 20)
    lams = [1e-3, 1e-2, 1e-1, 1.0, 10.0]
    for phi in (NormSquaredScaled(1.0), Quadratic([[2.0]], [0.5]), AbsSum([1.0])):
        for x in xs:
            for lam in lams:
                J = phi._prox(np.array([x]), lam)
                worst = max(worst, fenchel_gap(phi, J, (np.array([x]) - J) / lam))
    return {"resolvent_inclusion": float(worst)}


FIXTURES: list[tuple[str, str, float]] = [
    ("asd_basic", "<=", 1e-8),
    ("asd_regularized", "<=", 1e-8),
    ("flow_action", "<=", 1e-2),
    ("flow_refinement_slope", ">=", 0.7),
    ("flow_oracle", "<=", 5e-3),
    ("hamiltonian_oracle", "<=", 5e-3),
    ("hamiltonian_boundary", "<=", 1e-4),
    ("second_order_oracle", "<=", 5e-3),
    ("two_param_oracle", "<=", 5e-3),
    ("two_param_symmetry", "<=", 0.0),
    ("two_param_faces", "<=", 0.0),
    ("resolvent_inclusion", "<=", 1e-7),
    ("energy_ratio", "<=", 1.1),
    ("edge_ratio", "<=", 1.1),
    ("resolvent_slope_excess", "<=", 1e-7),
    ("three_param_oracle", "<=", 1e-2),
    ("one_param_consistency", "<=", 1e-3),
    ("change_of_variables_sum", "<=", 1e-2),
    ("change_of_variables_wedge", "<=", 1e-2),
    ("change_of_variables_average3", "<=", 1e-2),
]


def run() -> list[Row]:
    values: dict[str, float] = {}
    values["asd_basic"] = _asd_basic()
    values["asd_regularized"] = _asd_regularized()
    fl = _flow()
    path = fl.pop("_path")
    values.update(fl)
    values.update(_hamiltonian())
    values.update(_second_order())
    values.update(_resolvent())
    values.update(_multiflow(path))
    return [Row(name, float(values[name]), cmp, _tol(name, tol)) for name, cmp, tol in FIXTURES]


def format_table(rows: list[Row]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'fixture':<{width}}  {'value':>13}  cmp  {'tolerance':>9}  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.value:>13.6e}  {r.comparison:>3}  {r.tolerance:>9.2e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    n_ok = sum(r.passed for r in rows)
    lines.append(f"{n_ok}/{len(rows)} fixtures passed")
    return "\n".join(lines) + "\n"
