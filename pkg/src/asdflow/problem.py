"""JSON problem files and report documents.

Problem files carry an integer ``version`` and a ``kind``; every field is
validated before numeric work and unknown fields are rejected.  Errors are
reported as :class:`ProblemError` with the dotted location of the field
(for example ``grid.M``).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .convex import ConvexFunction, SchemaError, function_from_dict

SCHEMA_VERSION = 1


class ProblemError(ValueError):
    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


Matrix = list[list[float]]
PosFloat = Annotated[float, Field(gt=0, allow_inf_nan=False)]
Steps = Annotated[int, Field(ge=2)]


class SolverOptionsModel(_Strict):
    max_iterations: Optional[Annotated[int, Field(ge=1)]] = None
    tolerance: Optional[PosFloat] = None
    mu_start: Optional[PosFloat] = None
    mu_min: Optional[PosFloat] = None
    action_c0: Optional[PosFloat] = None
    action_c1: Optional[PosFloat] = None
    feasibility_tol: Optional[PosFloat] = None


class OutputModel(_Strict):
    csv: Optional[str] = None
    report: Optional[str] = None
    asdf: Optional[str] = None


class FlowFile(_Strict):
    version: Literal[1]
    kind: Literal["flow"]
    phi: dict
    x0: list[float]
    T: PosFloat
    N: Steps
    refine: bool = False
    solver: SolverOptionsModel = SolverOptionsModel()
    output: OutputModel = OutputModel()


class HamiltonianFile(_Strict):
    version: Literal[1]
    kind: Literal["hamiltonian"]
    phi1: dict
    phi2: dict
    psi1: dict
    psi2: dict
    A1: Optional[Matrix] = None
    A2: Optional[Matrix] = None
    n: Optional[Annotated[int, Field(ge=1)]] = None
    T: PosFloat
    N: Steps
    solver: SolverOptionsModel = SolverOptionsModel()
    output: OutputModel = OutputModel()


class SecondOrderFile(_Strict):
    version: Literal[1]
    kind: Literal["second_order"]
    phi: dict
    psi1: dict
    psi2: dict
    A1: Optional[Matrix] = None
    A2: Optional[Matrix] = None
    n: Optional[Annotated[int, Field(ge=1)]] = None
    T: PosFloat
    N: Steps
    solver: SolverOptionsModel = SolverOptionsModel()
    output: OutputModel = OutputModel()


class GridModel(_Strict):
    M: Optional[Steps] = None
    N: Optional[Steps] = None
    dims: Optional[list[Steps]] = None

    @model_validator(mode="after")
    def _shape(self):
        if self.dims is None and (self.M is None or self.N is None):
            raise ValueError("give either M and N or dims")
        if self.dims is not None and (self.M is not None or self.N is not None):
            raise ValueError("give either M and N or dims, not both")
        return self

    def as_dims(self) -> list[int]:
        return list(self.dims) if self.dims is not None else [self.M, self.N]


class MultiflowFile(_Strict):
    version: Literal[1]
    kind: Literal["multiflow"]
    phi: dict
    x0: list[float]
    horizons: Annotated[list[PosFloat], Field(min_length=1, max_length=4)]
    grid: GridModel
    lambda_schedule: Optional[list[PosFloat]] = None
    scheme: Literal["midpoint", "backward_euler"] = "midpoint"
    output: OutputModel = OutputModel()

    @model_validator(mode="after")
    def _match(self):
        if len(self.grid.as_dims()) != len(self.horizons):
            raise ValueError(f"grid has {len(self.grid.as_dims())} axes but horizons has {len(self.horizons)}")
        return self


class LagrangianModel(_Strict):
    kind: Literal["basic", "swap", "regularized"]
    phi: dict
    lam: Optional[PosFloat] = None
    base: Literal["basic", "swap"] = "basic"

    @model_validator(mode="after")
    def _lam(self):
        if self.kind == "regularized" and self.lam is None:
            raise ValueError("regularized Lagrangians need lam")
        return self


class VerifyAsdFile(_Strict):
    version: Literal[1]
    kind: Literal["verify_asd"]
    lagrangian: LagrangianModel
    samples: Annotated[int, Field(ge=1)] = 1000
    dim: Optional[Annotated[int, Field(ge=1)]] = None
    scale: PosFloat = 1.0
    tolerance: PosFloat = 1e-8
    output: OutputModel = OutputModel()


ProblemFile = Annotated[
    Union[FlowFile, HamiltonianFile, SecondOrderFile, MultiflowFile, VerifyAsdFile],
    Field(discriminator="kind"),
]


class _Envelope(BaseModel):
    problem: ProblemFile


def _loc(err: dict) -> str:
    parts = [str(p) for p in err["loc"]]
    # drop the envelope and the discriminator tag
    if parts and parts[0] == "problem":
        parts = parts[1:]
    if parts and parts[0] in {"flow", "hamiltonian", "second_order", "multiflow", "verify_asd"}:
        parts = parts[1:]
    out = ""
    for p in parts:
        out += f"[{p}]" if p.isdigit() else (f".{p}" if out else p)
    return out or "$"


def _parse_fields(data: Any):
    if not isinstance(data, dict):
        raise ProblemError("$", "a problem file must be a JSON object")
    if "version" not in data:
        raise ProblemError("version", "missing schema version")
    if data.get("version") != SCHEMA_VERSION:
        raise ProblemError("version", f"unsupported schema version {data.get('version')!r}; expected {SCHEMA_VERSION}")
    try:
        return _Envelope(problem=data).problem
    except ValidationError as e:
        err = e.errors()[0]
        msg = err["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        raise ProblemError(_loc(err), msg) from None


_TREES = {
    "flow": ("phi",),
    "hamiltonian": ("phi1", "phi2", "psi1", "psi2"),
    "second_order": ("phi", "psi1", "psi2"),
    "multiflow": ("phi",),
}


def parse_problem(data: Any):
    """Validate a decoded JSON document, including its convex-function trees.

    Raises :class:`ProblemError` naming the offending field.
    """
    prob = _parse_fields(data)
    try:
        if prob.kind == "verify_asd":
            function_from_dict(prob.lagrangian.phi, "lagrangian.phi")
        else:
            for name in _TREES[prob.kind]:
                function_from_dict(getattr(prob, name), name)
    except SchemaError as e:
        raise ProblemError(e.location, e.detail) from None
    return prob


def load_problem(path: str | Path, expect: str | None = None):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ProblemError("$", f"cannot read {path}: {e.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProblemError("$", f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    prob = parse_problem(data)
    if expect is not None and prob.kind != expect:
        raise ProblemError("kind", f"expected kind {expect!r} for this command, got {prob.kind!r}")
    return prob


def build_function(tree: dict, loc: str) -> ConvexFunction:
    return function_from_dict(tree, loc)


# ---------------------------------------------------------------------------
# Report documents

Num = Union[float, Literal["Infinity", "-Infinity"], None]


class SolveReportModel(_Strict):
    action_value: Num
    max_inclusion_residual: Num
    boundary_residuals: list[Num]
    iterations: int
    converged: bool
    continuum_action: Num
    refinement_slope: Num
    refinement_saturated: bool
    refinement_sublinear: bool
    refinement_levels: list[dict[str, Union[Num, bool, int]]]
    max_domain_violation: Num
    stationarity: Num
    mu_final: Num
    threshold: Num
    extras: dict[str, Num]
    message: str


class MultiflowReportModel(_Strict):
    action_value: Num
    max_inclusion_residual: Num
    boundary_max_deviation: Num
    threshold: Num
    converged: bool
    scheme: str
    lambda_levels: list[dict[str, Num]]
    partial2_gap_minus: Num
    partial2_gap_plus: Num
    p0_norm: Num
    message: str


class AsdReportModel(_Strict):
    max_gap: Num
    samples: int
    seed: int
    tolerance: float
    passed: bool


class EstimatesReportModel(_Strict):
    energy: Num
    energy_bound: Num
    energy_ok: bool
    edge_norms: list[Num]
    edge_sum: Num
    edge_bound: Num
    edge_ok: bool
    resolvent_slopes: list[Num] = []
    resolvent_ok: bool = True
    all_ok: bool


class SelftestRow(_Strict):
    name: str
    value: Num
    comparison: Literal["<=", ">="]
    tolerance: float
    passed: bool


class SelftestReportModel(_Strict):
    rows: list[SelftestRow]
    passed: bool


class ReportDocument(_Strict):
    """Top-level report written by every subcommand."""

    schema_version: Literal[1] = 1
    command: Literal["solve-flow", "solve-hamiltonian", "solve-second-order", "solve-multiflow",
                     "verify-asd", "estimates", "selftest"]
    exit_code: Literal[0, 1, 2]
    solve: Optional[SolveReportModel] = None
    multiflow: Optional[MultiflowReportModel] = None
    asd: Optional[AsdReportModel] = None
    estimates: Optional[EstimatesReportModel] = None
    selftest: Optional[SelftestReportModel] = None


def report_schema() -> dict:
    return ReportDocument.model_json_schema()


def dump_report(doc: ReportDocument) -> str:
    return json.dumps(doc.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
