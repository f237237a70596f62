"""Discretised action functionals on path space and their zero-minimisers.

A path on ``[0, T]`` with ``N`` steps is an array of shape ``(N + 1, m)``.
The discrete action pairs the *midpoint* state with the *forward difference*
velocity,

    I_h(x) = h * sum_k L(xbar_k, d_k) + l(x_0, x_N),
    xbar_k = (x_k + x_{k+1}) / 2,   d_k = (x_{k+1} - x_k) / h,

because then ``h * sum_k <R xbar_k, d_k>`` telescopes exactly into
``1/2 <R x_N, x_N> - 1/2 <R x_0, x_0>``, and the action splits into a sum of
nonnegative Fenchel gaps (one per step) plus nonnegative boundary gaps.  The
zero set of the discrete action is the implicit-midpoint trajectory.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .convex import (
    INF,
    ConvexFunction,
    DimensionError,
    DomainError,
    LinearMap,
    NormSquaredScaled,
    Quadratic,
    SeparableSum,
    _dot,
    _vec,
)
from .lagrangians import (
    BasicASD,
    BoundaryLagrangian,
    LagrangianSpec,
    SeparableLagrangian,
    SwapASD,
    build_boundary,
)
from .optim import apg

SCHEME = "trapezoid-midpoint"


@dataclass(frozen=True)
class PathDiscretization:
    T: float
    N: int
    scheme: str = SCHEME

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError("PathDiscretization: T must be a positive finite number")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("PathDiscretization: N must be an integer >= 2")
        if self.scheme != SCHEME:
            raise ValueError(f"PathDiscretization: unknown scheme {self.scheme!r}")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.N + 1)


class DiscretePath:
    """Node values of a path; the derivative view is always recomputed."""

    def __init__(self, values: Any, T: float):
        v = np.array(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise DimensionError("DiscretePath needs an array of shape (N+1, n), N >= 1")
        if not np.isfinite(v).all():
            raise DomainError("DiscretePath values must be finite")
        self.values = v
        self.T = float(T)

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.N + 1)

    @property
    def derivative(self) -> np.ndarray:
        return np.diff(self.values, axis=0) / self.h

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.values[:-1] + self.values[1:])

    def __neg__(self):
        return DiscretePath(-self.values, self.T)


# ---------------------------------------------------------------------------
# Boundary Lagrangians for path problems
#
# Each boundary exposes ``terms``: (function, dual, matrix) triples whose sum
# f(M @ [a; b]) (or f*(M @ [a; b]) when dual) is the boundary Lagrangian.


class Boundary:
    dim: int | None = None
    fixed_start: np.ndarray | None = None
    fixed_end: np.ndarray | None = None

    def terms(self, m: int) -> list[tuple[ConvexFunction, bool, np.ndarray]]:
        return []

    def value(self, a: np.ndarray, b: np.ndarray) -> float:
        raise NotImplementedError

    def residuals(self, a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
        raise NotImplementedError

    def initial_point(self, m: int) -> np.ndarray:
        return np.zeros(m)

    def repair(self, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Endpoints moved onto the domain of the boundary Lagrangian."""
        return a, b


class InitialValueBoundary(Boundary):
    """``l(a, b) = 1/2|a|^2 - 2<a, x0> + |x0|^2 + 1/2|b|^2``.

    Selfdual for ``R = I``; together with a basic ASD Lagrangian the action
    equals the step gaps plus ``|x_0 - x0|^2``.
    """

    def __init__(self, x0: Any):
        self.x0 = _vec(x0, "x0")
        self.dim = self.x0.shape[0]

    def terms(self, m):
        x0 = self.x0
        q = Quadratic(np.eye(2 * m), np.concatenate([-2.0 * x0, np.zeros(m)]), float(x0 @ x0))
        return [(q, False, np.eye(2 * m))]

    def value(self, a, b):
        x0 = self.x0
        return float(0.5 * a @ a - 2.0 * a @ x0 + x0 @ x0 + 0.5 * b @ b)

    def residuals(self, a, b):
        r = a - self.x0
        return float(r @ r), 0.0

    def initial_point(self, m):
        return self.x0.copy()


class ZeroBoundary(Boundary):
    """``l = 0`` (no boundary coupling)."""

    def value(self, a, b):
        return 0.0

    def residuals(self, a, b):
        return 0.0, 0.0


class FixedEndpointBoundary(Boundary):
    """``l = 0`` if ``x_0 = start`` and ``x_N = end``, ``+inf`` otherwise."""

    def __init__(self, start: Any, end: Any):
        self.fixed_start = _vec(start, "start")
        self.fixed_end = _vec(end, "end")
        if self.fixed_start.shape != self.fixed_end.shape:
            raise DimensionError("start and end must have the same dimension")
        self.dim = self.fixed_start.shape[0]

    def value(self, a, b):
        ok = np.allclose(a, self.fixed_start, rtol=0, atol=1e-12) and np.allclose(b, self.fixed_end, rtol=0, atol=1e-12)
        return 0.0 if ok else INF

    def residuals(self, a, b):
        return float(np.abs(a - self.fixed_start).max()), float(np.abs(b - self.fixed_end).max())

    def initial_point(self, m):
        return self.fixed_start.copy()


class HamiltonianBoundary(Boundary):
    """Wraps a :class:`BoundaryLagrangian` for paths in ``R^{2n}``."""

    def __init__(self, ell: BoundaryLagrangian):
        self.ell = ell
        self.dim = 2 * ell.n

    def terms(self, m):
        n = self.ell.n
        I, Z = np.eye(n), np.zeros((n, n))
        e = self.ell
        return [
            (e.psi1t, False, np.hstack([I, Z, Z, Z])),
            (e.psi1t, True, np.hstack([-e.A1a, -I, Z, Z])),
            (e.psi2t, False, np.hstack([Z, Z, I, Z])),
            (e.psi2t, True, np.hstack([Z, Z, -e.A2a, I])),
        ]

    def value(self, a, b):
        return self.ell.value(a, b)

    def residuals(self, a, b):
        return self.ell.residuals(a, b)

    def initial_point(self, m):
        n = self.ell.n
        z = self.ell.psi1t._prox(np.zeros(n), 1.0)
        return np.concatenate([z, np.zeros(n)])

    def repair(self, a, b):
        n = self.ell.n
        a, b = a.copy(), b.copy()
        for v, f in ((a, self.ell.psi1t), (b, self.ell.psi2t)):
            if np.isinf(f._value(v[:n])):
                v[:n] = f._prox(v[:n], 1e-12)
        return a, b


@dataclass
class ActionProblem:
    L: LagrangianSpec
    boundary: Boundary
    disc: PathDiscretization
    dim: int = 0

    def __post_init__(self):
        if isinstance(self.L, SeparableLagrangian):
            raise TypeError("path problems need an ASD Lagrangian of the form Phi(x) + Phi*(-Bx - Rp)")
        dims = {d for d in (self.L.dim, self.boundary.dim, self.dim or None) if d is not None}
        if len(dims) != 1:
            raise DimensionError(f"Lagrangian, boundary and path dimensions disagree: {sorted(dims)}")
        self.dim = dims.pop()
        self.L.phi.check_dim(self.dim)

    def with_steps(self, N: int) -> "ActionProblem":
        return ActionProblem(self.L, self.boundary, PathDiscretization(self.disc.T, N), self.dim)


@dataclass
class SolveOptions:
    """Solver knobs.  ``mu_*`` drive the smoothing continuation for
    nonsmooth terms; smooth terms are never smoothed."""

    max_iterations: int = 20000
    round_iterations: int = 4000
    tolerance: float = 1e-11
    mu_start: float = 1e-1
    mu_min: float = 1e-5
    action_c0: float = 1e-2
    action_c1: float = 10.0
    feasibility_tol: float = 1e-4

    def action_threshold(self, h: float, T: float, smoothed: bool) -> float:
        return self.action_c0 * h + (self.action_c1 * self.mu_min * T if smoothed else 0.0)


@dataclass
class SolveReport:
    action_value: float
    max_inclusion_residual: float
    boundary_residuals: tuple[float, float]
    iterations: int
    converged: bool
    continuum_action: float = math.nan
    refinement_slope: float | None = None
    refinement_saturated: bool = False
    refinement_sublinear: bool = False
    refinement_levels: list[dict[str, float]] = field(default_factory=list)
    max_domain_violation: float = 0.0
    stationarity: float = math.nan
    mu_final: float = 0.0
    threshold: float = math.nan
    extras: dict[str, float] = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["boundary_residuals"] = list(self.boundary_residuals)
        return d

    def to_json(self) -> str:
        return json.dumps(_json_safe(self.to_dict()), indent=2, sort_keys=True)


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _json_safe(obj.item())
    return obj


# ---------------------------------------------------------------------------
# Action assembly


def _momentum_arg(L: LagrangianSpec, xbar: np.ndarray, d: np.ndarray) -> np.ndarray:
    v = -L.R(d)
    if L.B is not None:
        v = v - xbar @ L.B.matrix.T
    return v


def step_gaps(L: LagrangianSpec, path: DiscretePath) -> np.ndarray:
    """Per-step Fenchel gap ``Phi(xbar) + Phi*(v) - <xbar, v>``, ``v = -B xbar - R d``.

    Equal to ``L(xbar, d) + <R xbar, d>``; zero iff the claimed inclusion
    holds at that step.
    """
    xbar, d = path.midpoints, path.derivative
    v = _momentum_arg(L, xbar, d)
    fx = L.phi._value(xbar)
    fv = L.phi._conj(v)
    with np.errstate(invalid="ignore"):
        g = np.where(np.isinf(fx) | np.isinf(fv), INF, fx + fv - _dot(xbar, v))
    return np.where((g < 0) & (g > -1e-12), 0.0, g)


def assemble_action(prob: ActionProblem, path: DiscretePath) -> float:
    """``h * sum_k L(xbar_k, d_k) + l(x_0, x_N)``; ``+inf`` off the domain."""
    if path.n != prob.dim:
        raise DimensionError(f"path dimension {path.n} does not match problem dimension {prob.dim}")
    L = prob.L
    xbar, d = path.midpoints, path.derivative
    vals = L._value(xbar, d)
    if np.isinf(vals).any():
        return INF
    total = path.h * float(np.sum(vals)) + prob.boundary.value(path.values[0], path.values[-1])
    if math.isnan(total):
        raise FloatingPointError("NaN in action")
    return total


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def continuum_action(prob: ActionProblem, path: DiscretePath) -> float:
    """Exact-functional action of the piecewise-linear interpolant of ``path``.

    The interpolant is an admissible arc, so this is an upper bound for the
    continuum infimum (which is zero); each cell uses 5-point Gauss-Legendre.
    """
    L = prob.L
    x, d, h = path.values, path.derivative, path.h
    total = 0.0
    for xi, w in zip(_GL_NODES, _GL_WEIGHTS):
        s = 0.5 * h * (1.0 + xi)
        pts = x[:-1] + s * d
        vals = L._value(pts, d)
        if np.isinf(vals).any():
            return INF
        total += 0.5 * w * h * float(np.sum(vals))
    return total + prob.boundary.value(x[0], x[-1])


# ---------------------------------------------------------------------------
# Smoothed objective


class _Objective:
    """Smoothed action ``F_mu`` and its gradient with respect to node values."""

    def __init__(self, prob: ActionProblem):
        self.prob = prob
        L = prob.L
        self.phi = L.phi
        self.R = L.R
        self.B = None if L.B is None else L.B.matrix
        self.h = prob.disc.h
        m = prob.dim
        self.m = m
        self.bterms = prob.boundary.terms(m)
        self.primal_smooth = self.phi.is_smooth
        self.dual_smooth = self.phi.is_strongly_convex and self.phi.conj_closed_form
        self.nonsmooth = not (self.primal_smooth and self.dual_smooth) or any(
            not _smooth(f, dual) for f, dual, _ in self.bterms
        )
        self.mu = 0.0

    def _term(self, f, dual, v, mu):
        if _smooth(f, dual):
            if dual:
                return f._conj(v), f._conj_grad(v)
            return f._value(v), f._grad(v)
        if dual:
            return f.conj_envelope_grad(v, mu)
        return f.envelope_grad(v, mu)

    def __call__(self, X: np.ndarray) -> tuple[float, np.ndarray]:
        h, mu = self.h, self.mu
        xbar = 0.5 * (X[:-1] + X[1:])
        d = (X[1:] - X[:-1]) / h
        fx, gx = self._term(self.phi, False, xbar, mu)
        v = -self.R(d)
        if self.B is not None:
            v = v - xbar @ self.B.T
        fv, gv = self._term(self.phi, True, v, mu)
        # chain rule: d v / d xbar = -B, d v / d d = -R
        g_xbar = h * gx
        if self.B is not None:
            g_xbar = g_xbar - h * (gv @ self.B)
        g_d = -h * self.R(gv)
        G = np.zeros_like(X)
        G[:-1] += 0.5 * g_xbar - g_d / h
        G[1:] += 0.5 * g_xbar + g_d / h
        total = h * (float(np.sum(fx)) + float(np.sum(fv)))
        scale = h * (float(np.sum(np.abs(fx))) + float(np.sum(np.abs(fv))))
        if self.bterms:
            ab = np.concatenate([X[0], X[-1]])
            gab = np.zeros_like(ab)
            for f, dual, M in self.bterms:
                val, gr = self._term(f, dual, M @ ab, mu)
                total += float(val)
                scale += abs(float(val))
                gab += M.T @ gr
            m = self.m
            G[0] += gab[:m]
            G[-1] += gab[m:]
        self.scale = scale
        return total, G


def _smooth(f: ConvexFunction, dual: bool) -> bool:
    return (f.is_strongly_convex and f.conj_closed_form) if dual else f.is_smooth


class _H1Metric:
    """``P = (1/h) D^T D + h I`` on node values, applied columnwise."""

    def __init__(self, N: int, h: float):
        n = N + 1
        diag = np.full(n, 2.0 / h + h)
        diag[0] = diag[-1] = 1.0 / h + h
        ab = np.zeros((2, n))
        ab[0, 1:] = -1.0 / h
        ab[1] = diag
        self.cb = cholesky_banded(ab)

    def __call__(self, g: np.ndarray) -> np.ndarray:
        return cho_solve_banded((self.cb, False), g)


def _repair(prob: ActionProblem, X: np.ndarray) -> tuple[np.ndarray, float]:
    """Pull a smoothed minimiser back onto the domain of the action.

    Velocities with ``Phi*(-R d) = +inf`` are projected onto ``dom Phi*``
    (via the Moreau decomposition with a tiny parameter) and the path is
    re-integrated from its first node; nodes with ``Phi = +inf`` are then
    projected onto ``dom Phi`` and the endpoints onto the domain of the
    boundary Lagrangian.  Returns the repaired nodes and the largest
    node displacement.
    """
    L, phi = prob.L, prob.L.phi
    h = prob.disc.h
    Y = X
    if L.B is None and phi.conj_closed_form:
        d = np.diff(X, axis=0) / h
        v = -L.R(d)
        bad = np.isinf(phi._conj(v))
        if bad.any():
            lam = 1e-12
            vb = v[bad]
            v = v.copy()
            v[bad] = vb - lam * phi._prox(vb / lam, 1.0 / lam)
            d = -L.R(v)
            Y = np.empty_like(X)
            Y[0] = X[0]
            Y[1:] = X[0] + h * np.cumsum(d, axis=0)
    bad = np.isinf(phi._value(Y))
    if bad.any():
        Y = Y.copy()
        Y[bad] = phi._prox(Y[bad], 1e-12)
    a, b = prob.boundary.repair(Y[0], Y[-1])
    if not (np.array_equal(a, Y[0]) and np.array_equal(b, Y[-1])):
        Y = Y.copy()
        Y[0], Y[-1] = a, b
    if Y is X:
        return X, 0.0
    return Y, float(np.max(np.linalg.norm(Y - X, axis=-1)))


def certify(prob: ActionProblem, path: DiscretePath, report: SolveReport | None = None) -> SolveReport:
    """Fill the certificate fields of a report from Fenchel gaps only."""
    rep = report or SolveReport(INF, INF, (INF, INF), 0, False)
    gaps = step_gaps(prob.L, path)
    a, b = path.values[0], path.values[-1]
    br = prob.boundary.residuals(a, b)
    rep.max_inclusion_residual = float(np.max(gaps))
    rep.boundary_residuals = tuple(0.0 if -1e-12 < float(r) < 0.0 else float(r) for r in br)
    rep.action_value = float(assemble_action(prob, path))
    rep.continuum_action = float(continuum_action(prob, path))
    return rep


def minimize_action(prob: ActionProblem, opts: SolveOptions | None = None,
                    initial: np.ndarray | None = None) -> tuple[DiscretePath, SolveReport]:
    """Minimise the discrete action; the report certifies how close to zero it got.

    Accelerated gradient in the discrete ``H^1`` metric.  Smooth terms use
    exact gradients; nonsmooth ones are Moreau-smoothed with parameter ``mu``
    halved from ``mu_start`` to ``mu_min``, warm-starting each round.
    """
    opts = opts or SolveOptions()
    disc = prob.disc
    N, h, m = disc.N, disc.h, prob.dim
    obj = _Objective(prob)
    metric = _H1Metric(N, h)
    if initial is None:
        X = np.tile(prob.boundary.initial_point(m), (N + 1, 1))
    else:
        X = np.array(initial, dtype=float).reshape(N + 1, m)
    fixed = None
    bd = prob.boundary
    if bd.fixed_start is not None:
        X[0], X[-1] = bd.fixed_start, bd.fixed_end
        fixed = np.zeros_like(X, dtype=bool)
        fixed[0] = fixed[-1] = True
    mus = [0.0]
    if obj.nonsmooth:
        mus = []
        mu = opts.mu_start
        while mu > opts.mu_min * (1 + 1e-12):
            mus.append(mu)
            mu *= 0.5
        mus.append(opts.mu_min)
    iterations = 0
    lip = 1.0
    res = None
    strict = opts.action_threshold(h, disc.T, False)
    for i, mu in enumerate(mus):
        obj.mu = mu
        last = i == len(mus) - 1
        remaining = max(opts.max_iterations - iterations, 1)
        budget = remaining if last else min(opts.round_iterations, remaining)
        tol = max(opts.tolerance, 5e-2 * mu) if obj.nonsmooth else opts.tolerance
        obj(X)
        res = apg(obj, X, metric, tol=tol, maxiter=budget, lipschitz=lip, fixed=fixed,
                  slack=1e-14 * (obj.scale + 1.0))
        X, lip = res.x, max(res.lipschitz, 1e-3)
        iterations += res.iterations
        if obj.nonsmooth and not last and res.converged:
            # stop the continuation once the repaired path already certifies
            Y, moved = _repair(prob, X)
            a_val = assemble_action(prob, DiscretePath(Y, disc.T))
            if a_val <= strict and moved <= opts.feasibility_tol:
                break
        if iterations >= opts.max_iterations:
            break
    X, moved = _repair(prob, X)
    path = DiscretePath(X, disc.T)
    thr = opts.action_threshold(h, disc.T, obj.nonsmooth)
    rep = SolveReport(INF, INF, (INF, INF), iterations, False, stationarity=res.stationarity,
                      mu_final=obj.mu, threshold=thr, max_domain_violation=moved)
    certify(prob, path, rep)
    ok = res.converged and math.isfinite(rep.action_value) and rep.action_value <= thr \
        and moved <= opts.feasibility_tol
    rep.converged = bool(ok)
    if not ok:
        why = []
        if not res.converged:
            why.append(f"optimizer stopped at stationarity {res.stationarity:.3e} after {iterations} iterations")
        if not (math.isfinite(rep.action_value) and rep.action_value <= thr):
            why.append(f"action {rep.action_value:.3e} above threshold {thr:.3e}")
        if moved > opts.feasibility_tol:
            why.append(f"domain repair moved nodes by {moved:.3e}")
        rep.message = "; ".join(why)
    return path, rep


# ---------------------------------------------------------------------------
# Problem builders and high level solves


def _as_map(A: Any, n: int) -> LinearMap:
    if A is None:
        return LinearMap.zeros(n)
    return A if isinstance(A, LinearMap) else LinearMap(A)


def _infer_dim(*items: Any) -> int | None:
    for it in items:
        if isinstance(it, ConvexFunction) and it.dim is not None:
            return it.dim
        if isinstance(it, LinearMap):
            return it.n
        if isinstance(it, (list, np.ndarray)):
            return int(np.shape(it)[0])
    return None


def flow_problem(phi: ConvexFunction, x0: Any, T: float, N: int) -> ActionProblem:
    """Gradient flow ``-x' in dphi(x)``, ``x(0) = x0`` as a zero-action problem."""
    ivb = InitialValueBoundary(x0)
    return ActionProblem(BasicASD(phi), ivb, PathDiscretization(T, N), ivb.dim)


def solve_flow(phi: ConvexFunction, x0: Any, T: float, N: int,
               opts: SolveOptions | None = None) -> tuple[DiscretePath, SolveReport]:
    return minimize_action(flow_problem(phi, x0, T, N), opts)


def hamiltonian_problem(phi1, phi2, psi1, psi2, A1=None, A2=None, T: float = 1.0, N: int = 256,
                        n: int | None = None) -> ActionProblem:
    n = n or _infer_dim(phi1, phi2, psi1, psi2, A1, A2)
    if n is None:
        raise DimensionError("cannot infer the state dimension; pass n")
    Phi = SeparableSum([(phi1, (0, n)), (phi2, (n, 2 * n))])
    ell = build_boundary(psi1, psi2, _as_map(A1, n), _as_map(A2, n), n=n)
    return ActionProblem(SwapASD(Phi), HamiltonianBoundary(ell), PathDiscretization(T, N), 2 * n)


def _hamiltonian_extras(prob: ActionProblem, path: DiscretePath, phi1, phi2) -> dict[str, float]:
    n = prob.dim // 2
    xbar, d = path.midpoints, path.derivative
    g1 = phi1._value(xbar[:, :n]) + phi1._conj(-d[:, n:]) + _dot(xbar[:, :n], d[:, n:])
    g2 = phi2._value(xbar[:, n:]) + phi2._conj(-d[:, :n]) + _dot(xbar[:, n:], d[:, :n])
    return {"max_gap_momentum_eq": float(np.max(g1)), "max_gap_state_eq": float(np.max(g2))}


def solve_hamiltonian_connect(phi1, phi2, psi1, psi2, A1=None, A2=None, T: float = 1.0,
                              N: int = 1024, opts: SolveOptions | None = None, n: int | None = None):
    """Path from ``M_{+,psi1,A1}`` to ``M_{-,psi2,A2}`` along ``-x2' in dphi1(x1)``,
    ``-x1' in dphi2(x2)`` (i.e. ``x1' in d_2 H``, ``-x2' in d_1 H`` for
    ``H = phi1(x1) - phi2(x2)``).

    Returns ``(x1_path, x2_path, report)``.
    """
    prob = hamiltonian_problem(phi1, phi2, psi1, psi2, A1, A2, T, N, n)
    k = prob.dim // 2
    start = prob.boundary.initial_point(prob.dim)
    for name, f, part in (("phi1", phi1, start[:k]), ("phi2", phi2, start[k:])):
        if not math.isfinite(float(f._value(part))):
            raise DomainError(f"{name} is not finite at the initial iterate {part.tolist()}")
    path, rep = minimize_action(prob, opts)
    rep.extras.update(_hamiltonian_extras(prob, path, phi1, phi2))
    x1 = DiscretePath(path.values[:, :k], T)
    x2 = DiscretePath(path.values[:, k:], T)
    return x1, x2, rep


def solve_second_order(phi, psi1, psi2, A1=None, A2=None, T: float = 1.0, N: int = 1024,
                       opts: SolveOptions | None = None, n: int | None = None):
    """``x'' in dphi(x)`` with ``x'(0) in dpsi1(x(0)) + A1 x(0)`` and
    ``-x'(T) in dpsi2(x(T)) + A2 x(T)``.

    Runs the Hamiltonian connection with ``phi1 = phi`` and
    ``phi2 = 1/2|.|^2``, so the momentum is ``x2 = -x1'``; returns the
    state component and a report whose extras hold the second-difference
    Fenchel gap.
    """
    x1, x2, rep = solve_hamiltonian_connect(phi, NormSquaredScaled(1.0), psi1, psi2, A1, A2, T, N, opts, n)
    v = x1.values
    h = x1.h
    dd = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    g = phi._value(v[1:-1]) + phi._conj(dd) - _dot(v[1:-1], dd)
    rep.extras["max_second_difference_gap"] = float(np.max(g)) if g.size else 0.0
    return x1, rep


def refine_and_extrapolate(prob: ActionProblem, levels: Sequence[int] | None = None,
                           opts: SolveOptions | None = None, saturation: float = 1e-14,
                           jobs: int = 1) -> SolveReport:
    """Solve at ``N, 2N, 4N, ...`` and fit ``log(action)`` against ``log(h)``.

    The action fitted is the continuum action of each level's interpolated
    minimiser.  When every level is at or below ``saturation`` the slope is
    undefined and the report is flagged saturated instead.
    """
    if levels is None:
        N = prob.disc.N
        levels = [N, 2 * N, 4 * N]
    levels = list(levels)
    if len(levels) < 3:
        raise ValueError("refine_and_extrapolate needs at least three levels")

    def run(N):
        return minimize_action(prob.with_steps(N), opts)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run, levels))
    else:
        results = [run(N) for N in levels]
    rows = []
    for N, (_, r) in zip(levels, results):
        rows.append({"N": N, "h": prob.disc.T / N, "action_value": r.action_value,
                     "continuum_action": r.continuum_action, "converged": r.converged})
    rep = results[-1][1]
    rep.refinement_levels = rows
    errs = [not r.converged for _, r in results]
    if any(errs):
        rep.converged = False
        rep.message = (rep.message + "; " if rep.message else "") + "a refinement level did not converge"
    ca = np.array([row["continuum_action"] for row in rows])
    hs = np.array([row["h"] for row in rows])
    if np.all(ca <= saturation):
        rep.refinement_saturated = True
        rep.refinement_slope = None
        return rep
    if np.any(~np.isfinite(ca)) or np.any(ca <= 0):
        rep.refinement_slope = None
        rep.refinement_saturated = bool(np.all(np.isfinite(ca)))
        return rep
    slope = float(np.polyfit(np.log(hs), np.log(ca), 1)[0])
    rep.refinement_slope = slope
    rep.refinement_sublinear = slope < 0.9
    return rep
