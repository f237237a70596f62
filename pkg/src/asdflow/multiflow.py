"""Multi-parameter gradient flows ``sum_j du/dt_j in -dphi(u)``.

The solution is sought on a box ``[0, T_1] x ... x [0, T_P]`` with
``u = x0`` on every face ``t_j = 0``.  The combined derivative
``sum_j d/dt_j`` is the derivative along the diagonal direction
``(1, ..., 1)``, so the equation is a one-parameter flow on each diagonal
line (a *characteristic*) and the grid solver steps along those lines
with an implicit resolvent step of the Moreau-regularised ``phi``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .bvp import DiscretePath, _json_safe
from .convex import (
    INF,
    ConvexError,
    ConvexFunction,
    DomainError,
    MoreauEnvelope,
    _dot,
    _vec,
    fenchel_gap,
    prox,
    subgrad,
)
from .lagrangians import BasicASD, LagrangianSpec, Regularized, UnsupportedCombination

DEFAULT_LAMBDAS = (1e-1, 1e-2, 1e-3, 1e-4)
MEMORY_LIMIT = 2**31
MAX_PARAMS = 4
SCHEMES = ("midpoint", "backward_euler")
ESTIMATE_SLACK = 0.1


class MemoryBudgetError(ConvexError, MemoryError):
    """Grid too large for the desk-scale budget."""

    def __init__(self, required: int, limit: int = MEMORY_LIMIT):
        super().__init__(f"grid needs about {required} bytes, above the {limit} byte limit")
        self.required = required
        self.limit = limit


class CoverageError(ConvexError, ValueError):
    """Transformed coordinates fall outside the source grid."""


# ---------------------------------------------------------------------------
# Regularisation and resolvents


def lambda_regularize(L: LagrangianSpec, lam: float) -> Regularized:
    """Moreau regularisation of a basic ASD Lagrangian in the state variable."""
    if not isinstance(L, BasicASD):
        raise UnsupportedCombination("lambda_regularize: base must be a BasicASD Lagrangian")
    return Regularized(L, lam)


@dataclass
class ResolventResult:
    point: np.ndarray
    slope: np.ndarray
    residual: float


def resolvent(phi: ConvexFunction, x: Any, lam: float, tol: float = 1e-7) -> ResolventResult:
    """``J = prox(phi, x, lam)`` with the check ``(x - J)/lam in dphi(J)``.

    Raises :class:`DomainError` when the Fenchel gap of that inclusion
    exceeds ``tol``.
    """
    xv = _vec(x)
    J = prox(phi, xv, lam)
    g = (xv - J) / lam
    gap = fenchel_gap(phi, J, g)
    if not gap <= tol:
        raise DomainError(f"resolvent inclusion gap {gap:.3e} exceeds {tol:.1e}")
    return ResolventResult(J, g, float(gap))


@dataclass
class P0Certificate:
    """``p0 = -g`` for the minimal-norm ``g in dphi(x0)``; ``residual`` is the
    Fenchel gap of ``-p0 in dphi(x0)``."""

    p0: np.ndarray
    residual: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.p0))


def compute_p0(phi: ConvexFunction, x0: Any) -> P0Certificate:
    x = _vec(x0, "x0")
    g = subgrad(phi, x)
    g = np.where(np.abs(g) < 1e-12, 0.0, g)
    return P0Certificate(-g, float(fenchel_gap(phi, x, g)))


# ---------------------------------------------------------------------------
# Problem, grid and report types


@dataclass
class FlowProblem:
    phi: ConvexFunction
    x0: np.ndarray
    horizons: tuple[float, ...]
    lambda_schedule: tuple[float, ...] = DEFAULT_LAMBDAS
    scheme: str = "midpoint"

    def __post_init__(self):
        self.x0 = _vec(self.x0, "x0")
        self.phi.check_dim(self.x0.shape[0])
        self.horizons = tuple(float(h) for h in np.atleast_1d(self.horizons))
        if not self.horizons or any(not (h > 0 and math.isfinite(h)) for h in self.horizons):
            raise ValueError("horizons must be positive finite numbers")
        if len(self.horizons) > MAX_PARAMS:
            raise ValueError(f"at most {MAX_PARAMS} parameters are supported, got {len(self.horizons)}")
        lams = tuple(float(v) for v in self.lambda_schedule)
        if not lams or any(not v > 0 for v in lams) or any(b >= a for a, b in zip(lams, lams[1:])):
            raise ValueError("lambda_schedule must be a strictly decreasing list of positive numbers")
        self.lambda_schedule = lams
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @property
    def P(self) -> int:
        return len(self.horizons)


@dataclass
class SurfaceGrid:
    """Node values on a tensor grid; ``values`` has shape ``(*dims + 1, n)``."""

    horizons: tuple[float, ...]
    dims: tuple[int, ...]
    values: np.ndarray

    @property
    def P(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @property
    def steps(self) -> tuple[float, ...]:
        return tuple(T / M for T, M in zip(self.horizons, self.dims))

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, T, M + 1) for T, M in zip(self.horizons, self.dims)]

    # two-parameter aliases
    @property
    def S(self) -> float:
        return self.horizons[0]

    @property
    def T(self) -> float:
        return self.horizons[1]

    @property
    def M(self) -> int:
        return self.dims[0]

    @property
    def N(self) -> int:
        return self.dims[1]


@dataclass
class MultiflowReport:
    action_value: float
    max_inclusion_residual: float
    boundary_max_deviation: float
    threshold: float
    converged: bool
    scheme: str
    lambda_levels: list[dict[str, float]] = field(default_factory=list)
    partial2_gap_minus: float = math.nan
    partial2_gap_plus: float = math.nan
    p0_norm: float = math.nan
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return _json_safe(self.__dict__.copy())


# ---------------------------------------------------------------------------
# Stepping


def _step(phi_l: ConvexFunction, u: np.ndarray, h: float, scheme: str) -> np.ndarray:
    if scheme == "midpoint":
        return 2.0 * phi_l._prox(u, 0.5 * h) - u
    return phi_l._prox(u, h)


def _eval_point(u_old: np.ndarray, u_new: np.ndarray, scheme: str) -> np.ndarray:
    return 0.5 * (u_old + u_new) if scheme == "midpoint" else u_new


def _gaps(phi: ConvexFunction, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    fx = phi._value(x)
    fp = phi._conj(p)
    with np.errstate(invalid="ignore"):
        g = np.where(np.isinf(fx) | np.isinf(fp), INF, fx + fp - _dot(x, p))
    return np.where((g < 0) & (g > -1e-12), 0.0, g)


def march_characteristic(phi_l: ConvexFunction, x0: np.ndarray, h: float, steps: int,
                         scheme: str = "midpoint") -> np.ndarray:
    """One-parameter flow ``w' in -dphi_l(w)``, ``w(0) = x0``, on ``steps`` steps of size ``h``."""
    w = np.empty((steps + 1, x0.shape[0]))
    w[0] = x0
    for k in range(steps):
        w[k + 1] = _step(phi_l, w[k][None, :], h, scheme)[0]
    return w


def _diag_index(dims: Sequence[int]) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(M + 1) for M in dims], indexing="ij")
    return np.minimum.reduce(grids)


def _memory_bytes(dims: Sequence[int], n: int) -> int:
    nodes = int(np.prod([M + 1 for M in dims], dtype=np.int64))
    return 4 * nodes * n * 8


def _solve_level(prob: FlowProblem, dims: tuple[int, ...], lam: float) -> np.ndarray:
    """Grid solution for one ``lam``, in sorted-horizon axis order."""
    phi_l = MoreauEnvelope(prob.phi, lam)
    steps = [T / M for T, M in zip(prob.horizons, dims)]
    n = prob.x0.shape[0]
    shape = tuple(M + 1 for M in dims) + (n,)
    if np.allclose(steps, steps[0], rtol=1e-12, atol=0):
        # Equal spacing: each node's diagonal predecessor is a grid node, so
        # the grid is filled layer by layer in the min-index.
        h = steps[0]
        U = np.empty(shape)
        U[...] = prob.x0
        layer = _diag_index(dims)
        for ell in range(1, min(dims) + 1):
            idx = np.nonzero(layer == ell)
            prev = tuple(i - 1 for i in idx)
            U[idx] = _step(phi_l, U[prev], h, prob.scheme)
        return U
    # Unequal spacing: all characteristics start on a face at x0, so the value
    # at a node is the characteristic flow at r = min_j t_j; march with the
    # smallest step and interpolate linearly in r.
    h = min(steps)
    rmax = min(prob.horizons)
    K = int(math.ceil(rmax / h - 1e-9))
    w = march_characteristic(phi_l, prob.x0, h, K, prob.scheme)
    rgrid = np.arange(K + 1) * h
    grids = np.meshgrid(*[np.linspace(0.0, T, M + 1) for T, M in zip(prob.horizons, dims)], indexing="ij")
    r = np.minimum.reduce(grids)
    U = np.empty(shape)
    for j in range(n):
        U[..., j] = np.interp(r, rgrid, w[:, j])
    return U


def diagonal_residuals(phi: ConvexFunction, U: np.ndarray, h: float, scheme: str = "midpoint"):
    """Fenchel gaps of ``-D in dphi`` along grid diagonals (equal spacing).

    ``D = (U[i+1,...] - U[i,...]) / h`` is the combined derivative along
    ``(1, ..., 1)``.  Returns ``(gaps, evaluation points, D)``.
    """
    P = U.ndim - 1
    lo = tuple(slice(0, -1) for _ in range(P))
    hi = tuple(slice(1, None) for _ in range(P))
    u0, u1 = U[lo], U[hi]
    D = (u1 - u0) / h
    x = _eval_point(u0, u1, scheme)
    return _gaps(phi, x, -D), x, D


def _residuals(prob: FlowProblem, dims, U, phi_l=None):
    """Inclusion gaps for the grid solution ``U`` in sorted axis order."""
    steps = [T / M for T, M in zip(prob.horizons, dims)]
    if np.allclose(steps, steps[0], rtol=1e-12, atol=0):
        g, x, D = diagonal_residuals(prob.phi, U, steps[0], prob.scheme)
        return g, x, D, steps[0]
    # on an unequal grid the certified object is the marched characteristic
    h = min(steps)
    K = int(math.ceil(min(prob.horizons) / h - 1e-9))
    w = march_characteristic(phi_l, prob.x0, h, K, prob.scheme)
    D = np.diff(w, axis=0) / h
    x = _eval_point(w[:-1], w[1:], prob.scheme)
    return _gaps(prob.phi, x, -D), x, D, h


def _face_deviation(U: np.ndarray, x0: np.ndarray) -> float:
    dev = 0.0
    for ax in range(U.ndim - 1):
        face = np.take(U, 0, axis=ax)
        dev = max(dev, float(np.max(np.abs(face - x0))))
    return dev


def solve_n_param(prob: FlowProblem, dims: Sequence[int], jobs: int = 1,
                  threshold_c0: float = 1e-2) -> tuple[SurfaceGrid, MultiflowReport]:
    """Solve the ``P``-parameter flow on a grid with ``dims[j]`` steps along axis ``j``.

    Horizons may be given in any order; they are sorted decreasingly for the
    solve and the result is returned in the caller's axis order.  Every
    ``lam`` in the schedule is solved independently (``jobs`` threads) and
    the ``lam_min`` surface is returned.
    """
    dims = tuple(int(M) for M in np.atleast_1d(dims))
    if len(dims) != prob.P:
        raise ValueError(f"grid has {len(dims)} axes but the problem has {prob.P} horizons")
    if any(M < 2 for M in dims):
        raise ValueError("every grid dimension must be at least 2")
    need = _memory_bytes(dims, prob.x0.shape[0])
    if need > MEMORY_LIMIT:
        raise MemoryBudgetError(need)
    cert = compute_p0(prob.phi, prob.x0)  # also certifies x0 in dom dphi
    order = sorted(range(prob.P), key=lambda j: -prob.horizons[j])
    sp = FlowProblem(prob.phi, prob.x0, tuple(prob.horizons[j] for j in order),
                     prob.lambda_schedule, prob.scheme)
    sdims = tuple(dims[j] for j in order)
    lams = sp.lambda_schedule
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            surfaces = list(ex.map(lambda lam: _solve_level(sp, sdims, lam), lams))
    else:
        surfaces = [_solve_level(sp, sdims, lam) for lam in lams]
    levels = []
    for i, (lam, U) in enumerate(zip(lams, surfaces)):
        g, _, _, _ = _residuals(sp, sdims, U, MoreauEnvelope(sp.phi, lam))
        row = {"lam": lam, "max_inclusion_residual": float(np.max(g)) if g.size else 0.0}
        if i:
            row["distance_to_previous"] = float(np.max(np.abs(U - surfaces[i - 1])))
        levels.append(row)
    U = surfaces[-1]
    lam_min = lams[-1]
    g, x, D, h = _residuals(sp, sdims, U, MoreauEnvelope(sp.phi, lam_min))
    cell = float(np.prod([T / M for T, M in zip(sp.horizons, sdims)]))
    dev = _face_deviation(U, sp.x0)
    action = cell * float(np.sum(g)) if np.all(np.isfinite(g)) else INF
    # boundary integrals of |u - x0|^2 over the faces t_j = 0
    for ax in range(sp.P):
        face = np.take(U, 0, axis=ax)
        area = cell / (sp.horizons[ax] / sdims[ax])
        action += area * float(np.sum((face - sp.x0) ** 2))
    # the d_2 inclusion under both sign readings
    gm = _gaps(sp.phi, x, -D)
    fneg = sp.phi._value(-x)
    fc = sp.phi._conj(-D)
    with np.errstate(invalid="ignore"):
        gp = np.where(np.isinf(fneg) | np.isinf(fc), INF, fneg + fc - _dot(-x, -D))
    thr = threshold_c0 * h + lam_min
    res = float(np.max(g)) if g.size else 0.0
    dists = [row["distance_to_previous"] for row in levels[1:]]
    monotone = all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(dists, dists[1:]))
    ok = res <= thr and dev == 0.0 and monotone
    msg = []
    if res > thr:
        msg.append(f"inclusion residual {res:.3e} above {thr:.3e}")
    if not monotone:
        msg.append("distances between consecutive lambda levels do not decrease")
    rep = MultiflowReport(
        action_value=action, max_inclusion_residual=res, boundary_max_deviation=dev,
        threshold=thr, converged=bool(ok), scheme=sp.scheme, lambda_levels=levels,
        partial2_gap_minus=float(np.max(gm)) if gm.size else 0.0,
        partial2_gap_plus=float(np.max(gp)) if gp.size else 0.0,
        message="; ".join(msg),
    )
    inv = np.argsort(order)
    Uc = np.transpose(U, tuple(inv) + (sp.P,))
    surface = SurfaceGrid(tuple(prob.horizons), dims, np.ascontiguousarray(Uc))
    rep.p0_norm = cert.norm
    return surface, rep


def solve_two_param(prob: FlowProblem, grid: Sequence[int] = (64, 64), jobs: int = 1):
    """Two-parameter flow ``du/ds + du/dt in -dphi(u)``, ``u = x0`` on ``s = 0`` and ``t = 0``."""
    if prob.P != 2:
        raise ValueError("solve_two_param needs exactly two horizons")
    return solve_n_param(prob, grid, jobs)


# ---------------------------------------------------------------------------
# A priori estimates and invariants


def verify_estimates(surface: SurfaceGrid, cert: P0Certificate, phi: ConvexFunction | None = None,
                     lambda_schedule: Sequence[float] = DEFAULT_LAMBDAS, x0: Any = None,
                     slack: float = ESTIMATE_SLACK) -> dict[str, Any]:
    """Check the energy, edge-derivative and resolvent-slope bounds.

    * energy: ``sum_cells vol * sum_j |D_j u|^2 <= P * vol(box) * |p0|^2``
      (``2 S T |p0|^2`` for two parameters), with slack ``1 + slack``;
    * edge: the sum over faces of the largest combined derivative on the
      first diagonal step from that face is at most ``P |p0|`` (times
      ``1 + slack``);
    * slope: for each ``lam``, ``|(x0 - prox(phi, x0, lam)) / lam| <= |p0| + 1e-7``
      (only when ``phi`` is given).
    """
    U = surface.values
    P = surface.P
    steps = surface.steps
    p0 = cert.norm
    vol_cell = float(np.prod(steps))
    energy = 0.0
    for ax in range(P):
        d = np.diff(U, axis=ax) / steps[ax]
        # restrict to full cells so each axis contributes over the same boxes
        sl = tuple(slice(0, -1) if j != ax else slice(None) for j in range(P))
        energy += vol_cell * float(np.sum(d[sl] ** 2))
    vol = float(np.prod(surface.horizons))
    energy_bound = P * vol * p0**2
    out: dict[str, Any] = {
        "energy": energy,
        "energy_bound": energy_bound,
        "energy_ok": energy <= energy_bound * (1 + slack) + 1e-12,
    }
    edge_sum = 0.0
    equal = np.allclose(steps, steps[0], rtol=1e-12)
    if equal:
        h = steps[0]
        lo = tuple(slice(0, -1) for _ in range(P))
        hi = tuple(slice(1, None) for _ in range(P))
        D = (U[hi] - U[lo]) / h
        edges = []
        for ax in range(P):
            face = np.take(D, 0, axis=ax)
            edges.append(float(np.max(np.linalg.norm(face, axis=-1))))
        edge_sum = float(sum(edges))
        out["edge_norms"] = edges
    else:
        # combined derivative on the first characteristic step from each face
        r0 = min(steps)
        v = surface.values
        first = np.take(v, 1, axis=int(np.argmin(steps)))
        d0 = float(np.max(np.linalg.norm(first - np.take(v, 0, axis=int(np.argmin(steps))), axis=-1))) / r0
        out["edge_norms"] = [d0] * P
        edge_sum = P * d0
    out["edge_sum"] = edge_sum
    out["edge_bound"] = P * p0
    out["edge_ok"] = edge_sum <= P * p0 * (1 + slack) + 1e-12
    if phi is not None:
        xv = U[(0,) * P] if x0 is None else _vec(x0, "x0")
        slopes = []
        for lam in lambda_schedule:
            y = (xv - phi._prox(xv, lam)) / lam
            slopes.append(float(np.linalg.norm(y)))
        out["resolvent_slopes"] = slopes
        out["resolvent_ok"] = all(s <= p0 + 1e-7 for s in slopes)
    out["all_ok"] = bool(out["energy_ok"] and out["edge_ok"] and out.get("resolvent_ok", True))
    return out


def contraction_violation(U1: np.ndarray, U2: np.ndarray) -> float:
    """Largest increase of ``|U1 - U2|`` from a node to its diagonal successor.

    For two solutions of the same monotone flow the distance cannot grow
    along characteristics, so this is ``<= 0`` up to rounding.
    """
    P = U1.ndim - 1
    d = np.linalg.norm(U1 - U2, axis=-1)
    lo = tuple(slice(0, -1) for _ in range(P))
    hi = tuple(slice(1, None) for _ in range(P))
    return float(np.max(d[hi] - d[lo]))


# ---------------------------------------------------------------------------
# Change of variables


def _interp(axes: list[np.ndarray], values: np.ndarray, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    for j, ax in enumerate(axes):
        if np.any(pts[..., j] < ax[0] - tol) or np.any(pts[..., j] > ax[-1] + tol):
            raise CoverageError(f"transformed coordinate {j} leaves the source grid [{ax[0]}, {ax[-1]}]")
    pts = np.clip(pts, [a[0] for a in axes], [a[-1] for a in axes])
    if len(axes) == 1:
        return np.stack([np.interp(pts[..., 0], axes[0], values[:, j]) for j in range(values.shape[-1])], axis=-1)
    f = RegularGridInterpolator(tuple(axes), values, method="linear")
    return f(pts)


def change_of_variables_check(phi: ConvexFunction, source: Any, kind: str, *, C: float = 1.0,
                              grid: Sequence[int] | None = None, horizons: Sequence[float] | None = None,
                              scheme: str = "midpoint") -> float:
    """Build ``v`` from a solved flow by a substitution and return its inclusion residual.

    ``kind``:

    * ``"sum"``: ``source`` is a one-parameter path ``u``;
      ``v(s, t) = u((s + t) / 2)`` solves the two-parameter flow.
    * ``"wedge"``: ``source`` is a two-parameter surface;
      ``v(s, t) = u(s, (1 - C) s + C t)``.
    * ``"average3"``: ``source`` is a three-parameter field;
      ``v(r, s, t) = u((s + r)/2, (t + r)/2, (s + t)/2)``.

    ``v`` is sampled on an equally spaced grid (default: the source grid)
    by linear interpolation, and the returned value is the largest Fenchel
    gap of ``-D v in dphi`` along grid diagonals.
    """
    if kind == "sum":
        if isinstance(source, DiscretePath):
            axes, vals = [source.times], source.values
        else:
            axes, vals = [np.asarray(source[0], float)], np.asarray(source[1], float)
        if vals.ndim == 1:
            vals = vals[:, None]
        Tsrc = axes[0][-1]
        grid = tuple(grid) if grid else (vals.shape[0] - 1,) * 2
        horizons = tuple(horizons) if horizons else (Tsrc, Tsrc)
        def transform(X):
            return 0.5 * (X[..., 0] + X[..., 1])[..., None]
    elif kind == "wedge":
        axes, vals = source.axes, source.values
        grid = tuple(grid) if grid else source.dims
        horizons = tuple(horizons) if horizons else source.horizons
        def transform(X):
            return np.stack([X[..., 0], (1.0 - C) * X[..., 0] + C * X[..., 1]], axis=-1)
    elif kind == "average3":
        axes, vals = source.axes, source.values
        grid = tuple(grid) if grid else source.dims
        horizons = tuple(horizons) if horizons else source.horizons
        def transform(X):
            r, s, t = X[..., 0], X[..., 1], X[..., 2]
            return np.stack([(s + r) / 2, (t + r) / 2, (s + t) / 2], axis=-1)
    else:
        raise ValueError(f"unknown change of variables {kind!r}")
    steps = [T / M for T, M in zip(horizons, grid)]
    if not np.allclose(steps, steps[0], rtol=1e-12):
        raise ValueError("the target grid must be equally spaced")
    X = np.stack(np.meshgrid(*[np.linspace(0, T, M + 1) for T, M in zip(horizons, grid)], indexing="ij"), axis=-1)
    V = _interp(axes, vals, transform(X))
    g, _, _ = diagonal_residuals(phi, V, steps[0], scheme)
    return float(np.max(g))
