"""Closed catalog of convex functions on R^n.

Every node knows how to evaluate itself, its Fenchel conjugate and its
proximal map.  Node methods work on arrays whose *last* axis is the vector
coordinate, so a batch of ``K`` points of dimension ``n`` is an array of
shape ``(K, n)``; values come back with shape ``(K,)``.

The module level functions (:func:`evaluate`, :func:`prox`,
:func:`conj_eval`, ...) are the checked public surface: they validate
dimensions, reject NaN and return plain floats for single vectors.

Extended reals are IEEE floats; ``math.inf`` is the only non-finite value
ever returned.  NaN is always an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

__all__ = [
    "ConvexError",
    "DimensionError",
    "DomainError",
    "NumericalError",
    "ConvergenceError",
    "SchemaError",
    "Tolerances",
    "TOL",
    "LinearMap",
    "ConvexFunction",
    "Quadratic",
    "NormSquaredScaled",
    "AbsSum",
    "IndicatorBox",
    "LinearTilt",
    "SeparableSum",
    "MoreauEnvelope",
    "SumWithQuadratic",
    "half_norm_squared",
    "evaluate",
    "prox",
    "conj_eval",
    "subgrad",
    "moreau_eval",
    "fenchel_gap",
    "split_operator",
    "function_from_dict",
]

INF = math.inf


class ConvexError(Exception):
    """Base class for errors raised by the convex kernel."""


class DimensionError(ConvexError, ValueError):
    pass


class DomainError(ConvexError, ValueError):
    """A point is outside the domain where an operation is defined."""


class NumericalError(ConvexError, FloatingPointError):
    """A NaN appeared where a number was expected."""


class ConvergenceError(ConvexError, RuntimeError):
    """An inner iteration stopped before reaching its tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class Tolerances:
    """Tolerances shared by the kernel; every default is documented in README."""

    domain: float = 1e-9
    subgrad_lambda: float = 1e-6
    conj_gap: float = 1e-9
    conj_maxiter: int = 500
    prox_tol: float = 1e-13
    prox_maxiter: int = 500
    positivity: float = 1e-10
    skew: float = 1e-12


TOL = Tolerances()


def _vec(x: Any, name: str = "x") -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if np.isnan(a).any():
        raise NumericalError(f"{name} contains NaN")
    return a


def _check_nan(v: np.ndarray, what: str) -> np.ndarray:
    if np.isnan(v).any():
        raise NumericalError(f"NaN produced by {what}")
    return v


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


# ---------------------------------------------------------------------------
# Linear maps


class LinearMap:
    """Dense square matrix with positivity / skewness predicates."""

    __slots__ = ("matrix",)

    def __init__(self, entries: Any):
        m = np.array(entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"LinearMap needs a square matrix, got shape {m.shape}")
        if not np.isfinite(m).all():
            raise NumericalError("LinearMap entries must be finite")
        m.setflags(write=False)
        self.matrix = m

    @classmethod
    def zeros(cls, n: int) -> "LinearMap":
        return cls(np.zeros((n, n)))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def T(self) -> "LinearMap":
        return LinearMap(self.matrix.T)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.matrix.T

    def __repr__(self) -> str:
        return f"LinearMap({self.matrix.tolist()!r})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LinearMap) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self) -> int:
        return hash(self.matrix.tobytes())

    def split(self) -> tuple["LinearMap", "LinearMap"]:
        sym = (self.matrix + self.matrix.T) / 2
        return LinearMap(sym), LinearMap(self.matrix - sym)

    def min_symmetric_eigenpair(self) -> tuple[float, np.ndarray]:
        sym = (self.matrix + self.matrix.T) / 2
        w, v = np.linalg.eigh(sym)
        return float(w[0]), v[:, 0]

    def is_positive(self, tol: float = TOL.positivity) -> bool:
        return self.min_symmetric_eigenpair()[0] >= -tol

    def is_skew(self, tol: float = TOL.skew) -> bool:
        return float(np.max(np.abs(self.matrix + self.matrix.T), initial=0.0)) <= tol

    def is_zero(self) -> bool:
        return not self.matrix.any()

    def to_list(self) -> list[list[float]]:
        return self.matrix.tolist()


def split_operator(A: LinearMap | Any) -> tuple[LinearMap, LinearMap]:
    """Return ``(A_s, A_a)``, symmetric and skew parts with ``A_s + A_a == A``.

    ``A_a`` is formed as ``A - A_s`` so the sum reproduces ``A`` exactly in
    floating point.
    """
    if not isinstance(A, LinearMap):
        A = LinearMap(A)
    return A.split()


# ---------------------------------------------------------------------------
# Catalog nodes


class ConvexFunction:
    """Abstract catalog node.

    Subclasses implement ``_value``, ``_conj`` and ``_prox`` on batched arrays.
    ``dim`` is ``None`` for nodes that act coordinatewise with scalar
    parameters and therefore accept any dimension.
    """

    dim: int | None = None
    is_smooth: bool = False
    is_strongly_convex: bool = False
    conj_closed_form: bool = True

    def _value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _conj(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _conj_with_gap(self, p: np.ndarray) -> tuple[np.ndarray, float]:
        return self._conj(p), 0.0

    def _prox(self, x: np.ndarray, lam: float) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        raise ConvexError(f"{type(self).__name__} is not differentiable")

    def _conj_grad(self, p: np.ndarray) -> np.ndarray:
        raise ConvexError(f"conjugate of {type(self).__name__} is not differentiable")

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    # compact numeric helpers used by the solvers -------------------------

    def check_dim(self, n: int) -> None:
        if self.dim is not None and self.dim != n:
            raise DimensionError(f"{type(self).__name__} has dimension {self.dim}, got {n}")

    def envelope_grad(self, x: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
        """Value and gradient of the Moreau envelope with parameter ``mu``."""
        z = self._prox(x, mu)
        r = x - z
        val = self._value(z) + 0.5 * _dot(r, r) / mu
        return val, r / mu

    def conj_envelope_grad(self, v: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
        """Value and gradient of the Moreau envelope of the conjugate.

        Uses only the prox of the function itself:
        ``grad = prox_{f/mu}(v/mu)`` and the Fenchel-Young equality at that
        point for the value.
        """
        z = self._prox(v / mu, 1.0 / mu)
        w = v - mu * z
        val = _dot(z, w) - self._value(z) + 0.5 * mu * _dot(z, z)
        return val, z


def _param(v: Any, name: str) -> np.ndarray:
    a = np.array(v, dtype=float)
    if np.isnan(a).any():
        raise NumericalError(f"{name} contains NaN")
    a.setflags(write=False)
    return a


def _param_dim(*arrays: np.ndarray) -> int | None:
    dims = {a.shape[-1] for a in arrays if a.ndim >= 1}
    if len(dims) > 1:
        raise DimensionError(f"inconsistent parameter dimensions {sorted(dims)}")
    return dims.pop() if dims else None


class Quadratic(ConvexFunction):
    """``f(x) = 1/2 <Qx, x> + <b, x> + c`` with ``Q`` symmetric PSD."""

    def __init__(self, Q: Any, b: Any = None, c: float = 0.0):
        Qm = Q.matrix if isinstance(Q, LinearMap) else np.array(Q, dtype=float)
        if Qm.ndim != 2 or Qm.shape[0] != Qm.shape[1]:
            raise DimensionError("Quadratic: Q must be square")
        Qm = (Qm + Qm.T) / 2
        n = Qm.shape[0]
        w, U = np.linalg.eigh(Qm)
        scale = max(1.0, float(np.max(np.abs(w), initial=0.0)))
        if w[0] < -TOL.positivity * scale:
            raise DomainError(f"Quadratic: Q is not positive semidefinite (min eigenvalue {w[0]:.3e})")
        w = np.where(np.abs(w) <= 1e-13 * scale, 0.0, w)
        self.Q = _param(Qm, "Q")
        self.b = _param(np.zeros(n) if b is None else b, "b")
        if self.b.shape != (n,):
            raise DimensionError("Quadratic: b must match Q")
        self.c = float(c)
        self.dim = n
        self._w = w
        self._U = U
        self._winv = np.where(w > 0, 1.0 / np.where(w > 0, w, 1.0), 0.0)
        self.is_smooth = True
        self.is_strongly_convex = bool(w[0] > 0)

    def _value(self, x):
        return 0.5 * _dot(x @ self.Q, x) + x @ self.b + self.c

    def _grad(self, x):
        return x @ self.Q + self.b

    def _conj(self, p):
        v = p - self.b
        coords = v @ self._U
        null = self._w == 0
        out = 0.5 * np.sum(coords**2 * self._winv, axis=-1) - self.c
        if null.any():
            off = np.sqrt(np.sum(coords[..., null] ** 2, axis=-1))
            scale = 1.0 + np.sqrt(np.sum(v * v, axis=-1))
            out = np.where(off <= TOL.domain * scale, out, INF)
        return out

    def _conj_grad(self, p):
        if not self.is_strongly_convex:
            raise ConvexError("Quadratic: conjugate gradient needs Q positive definite")
        return ((p - self.b) @ self._U * self._winv) @ self._U.T

    def _prox(self, x, lam):
        coords = (x - lam * self.b) @ self._U
        return (coords / (1.0 + lam * self._w)) @ self._U.T

    def to_dict(self):
        d: dict[str, Any] = {"kind": "quadratic", "Q": self.Q.tolist()}
        if self.b.any():
            d["b"] = self.b.tolist()
        if self.c:
            d["c"] = self.c
        return d

    def __repr__(self):
        return f"Quadratic(Q={self.Q.tolist()}, b={self.b.tolist()}, c={self.c})"


class NormSquaredScaled(ConvexFunction):
    """``f(x) = alpha/2 ||x||^2``; ``alpha = 1`` is the self-conjugate case."""

    is_smooth = True
    is_strongly_convex = True

    def __init__(self, alpha: float = 1.0):
        if not alpha > 0:
            raise DomainError("NormSquaredScaled: alpha must be > 0")
        self.alpha = float(alpha)

    def _value(self, x):
        return 0.5 * self.alpha * _dot(x, x)

    def _grad(self, x):
        return self.alpha * x

    def _conj(self, p):
        return 0.5 * _dot(p, p) / self.alpha

    def _conj_grad(self, p):
        return p / self.alpha

    def _prox(self, x, lam):
        return x / (1.0 + lam * self.alpha)

    def to_dict(self):
        return {"kind": "norm_squared", "alpha": self.alpha}

    def __repr__(self):
        return f"NormSquaredScaled({self.alpha})"


def half_norm_squared() -> NormSquaredScaled:
    return NormSquaredScaled(1.0)


class AbsSum(ConvexFunction):
    """Weighted l1 norm ``sum_i w_i |x_i|`` with ``w >= 0``."""

    def __init__(self, weights: Any = 1.0):
        w = _param(weights, "weights")
        if (w < 0).any():
            raise DomainError("AbsSum: weights must be >= 0")
        self.weights = w
        self.dim = _param_dim(w)

    def _value(self, x):
        return np.sum(self.weights * np.abs(x), axis=-1)

    def _conj(self, p):
        w = self.weights
        ok = np.all(np.abs(p) <= w + TOL.domain * (1.0 + w), axis=-1)
        return np.where(ok, 0.0, INF)

    def _prox(self, x, lam):
        t = lam * self.weights
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)

    def to_dict(self):
        w = self.weights
        return {"kind": "abs_sum", "weights": float(w) if w.ndim == 0 else w.tolist()}

    def __repr__(self):
        return f"AbsSum({self.weights.tolist()})"


class IndicatorBox(ConvexFunction):
    """Indicator of ``{lo <= x <= hi}``; infinite bounds are allowed."""

    def __init__(self, lo: Any, hi: Any):
        lo_a = _param(-INF if lo is None else lo, "lo")
        hi_a = _param(INF if hi is None else hi, "hi")
        if lo_a.ndim and hi_a.ndim == 0:
            hi_a = _param(np.full(lo_a.shape, float(hi_a)), "hi")
        if hi_a.ndim and lo_a.ndim == 0:
            lo_a = _param(np.full(hi_a.shape, float(lo_a)), "lo")
        if (lo_a > hi_a).any():
            raise DomainError("IndicatorBox: empty box (lo > hi)")
        self.lo = lo_a
        self.hi = hi_a
        self.dim = _param_dim(lo_a, hi_a)

    def _slack(self, bound):
        return TOL.domain * (1.0 + np.where(np.isfinite(bound), np.abs(bound), 0.0))

    def _value(self, x):
        ok = (x >= self.lo - self._slack(self.lo)) & (x <= self.hi + self._slack(self.hi))
        return np.where(np.all(ok, axis=-1), 0.0, INF)

    def _conj(self, p):
        lo, hi = self.lo, self.hi
        with np.errstate(invalid="ignore"):
            up = np.where(p > 0, hi * p, 0.0)
            down = np.where(p < 0, lo * p, 0.0)
        return np.sum(up + down, axis=-1)

    def _prox(self, x, lam):
        return np.clip(x, self.lo, self.hi)

    def to_dict(self):
        def enc(a):
            if a.ndim == 0:
                return float(a) if np.isfinite(a) else None
            return [float(v) if np.isfinite(v) else None for v in a]

        return {"kind": "box", "lo": enc(self.lo), "hi": enc(self.hi)}

    def __repr__(self):
        return f"IndicatorBox({self.lo.tolist()}, {self.hi.tolist()})"


class LinearTilt(ConvexFunction):
    """``f(x) = base(x) + <v, x>``."""

    def __init__(self, base: ConvexFunction, v: Any):
        self.base = base
        self.v = _param(v, "v")
        if self.v.ndim != 1:
            raise DimensionError("LinearTilt: v must be a vector")
        if base.dim is not None and base.dim != self.v.shape[0]:
            raise DimensionError("LinearTilt: v does not match base dimension")
        self.dim = self.v.shape[0]
        self.is_smooth = base.is_smooth
        self.is_strongly_convex = base.is_strongly_convex
        self.conj_closed_form = base.conj_closed_form

    def _value(self, x):
        return self.base._value(x) + x @ self.v

    def _grad(self, x):
        return self.base._grad(x) + self.v

    def _conj(self, p):
        return self.base._conj(p - self.v)

    def _conj_with_gap(self, p):
        return self.base._conj_with_gap(p - self.v)

    def _conj_grad(self, p):
        return self.base._conj_grad(p - self.v)

    def _prox(self, x, lam):
        return self.base._prox(x - lam * self.v, lam)

    def to_dict(self):
        return {"kind": "tilt", "base": self.base.to_dict(), "v": self.v.tolist()}

    def __repr__(self):
        return f"LinearTilt({self.base!r}, {self.v.tolist()})"


class SeparableSum(ConvexFunction):
    """Sum of functions acting on consecutive index blocks ``[start, stop)``."""

    def __init__(self, blocks: Sequence[tuple[ConvexFunction, tuple[int, int]]]):
        if not blocks:
            raise DimensionError("SeparableSum needs at least one block")
        pos = 0
        norm: list[tuple[ConvexFunction, tuple[int, int]]] = []
        for f, (start, stop) in blocks:
            start, stop = int(start), int(stop)
            if start != pos or stop <= start:
                raise DimensionError(f"SeparableSum blocks must tile [0, n) in order; got [{start}, {stop})")
            f.check_dim(stop - start)
            norm.append((f, (start, stop)))
            pos = stop
        self.blocks = tuple(norm)
        self.dim = pos
        fs = [f for f, _ in norm]
        self.is_smooth = all(f.is_smooth for f in fs)
        self.is_strongly_convex = all(f.is_strongly_convex for f in fs)
        self.conj_closed_form = all(f.conj_closed_form for f in fs)

    def _each(self, x, fn):
        return [fn(f, x[..., a:b]) for f, (a, b) in self.blocks]

    def _value(self, x):
        return sum(self._each(x, lambda f, xs: f._value(xs)))

    def _conj(self, p):
        return sum(self._each(p, lambda f, ps: f._conj(ps)))

    def _conj_with_gap(self, p):
        parts = self._each(p, lambda f, ps: f._conj_with_gap(ps))
        return sum(v for v, _ in parts), max(g for _, g in parts)

    def _grad(self, x):
        return np.concatenate(self._each(x, lambda f, xs: f._grad(xs)), axis=-1)

    def _conj_grad(self, p):
        return np.concatenate(self._each(p, lambda f, ps: f._conj_grad(ps)), axis=-1)

    def _prox(self, x, lam):
        return np.concatenate(self._each(x, lambda f, xs: f._prox(xs, lam)), axis=-1)

    def to_dict(self):
        return {
            "kind": "separable",
            "blocks": [{"f": f.to_dict(), "start": a, "stop": b} for f, (a, b) in self.blocks],
        }

    def __repr__(self):
        return f"SeparableSum({list(self.blocks)!r})"


class MoreauEnvelope(ConvexFunction):
    """``f_lam(x) = min_z base(z) + ||x - z||^2 / (2 lam)``."""

    is_smooth = True

    def __init__(self, base: ConvexFunction, lam: float):
        if not lam > 0:
            raise DomainError("MoreauEnvelope: lam must be > 0")
        self.base = base
        self.lam = float(lam)
        self.dim = base.dim
        self.is_strongly_convex = base.is_strongly_convex
        self.conj_closed_form = base.conj_closed_form

    def _value(self, x):
        z = self.base._prox(x, self.lam)
        r = x - z
        return self.base._value(z) + 0.5 * _dot(r, r) / self.lam

    def _grad(self, x):
        return (x - self.base._prox(x, self.lam)) / self.lam

    def _conj(self, p):
        return self.base._conj(p) + 0.5 * self.lam * _dot(p, p)

    def _conj_with_gap(self, p):
        v, g = self.base._conj_with_gap(p)
        return v + 0.5 * self.lam * _dot(p, p), g

    def _conj_grad(self, p):
        return self.base._conj_grad(p) + self.lam * p

    def _prox(self, x, lam):
        return x + (lam / (self.lam + lam)) * (self.base._prox(x, self.lam + lam) - x)

    def to_dict(self):
        return {"kind": "moreau", "base": self.base.to_dict(), "lam": self.lam}

    def __repr__(self):
        return f"MoreauEnvelope({self.base!r}, {self.lam})"


class SumWithQuadratic(ConvexFunction):
    """``f(x) = base(x) + 1/2 <A x, x>``; only the symmetric part of ``A`` enters.

    When ``base`` is itself quadratic the node folds into a single
    :class:`Quadratic` and everything is closed form.  Otherwise the prox is
    an inner accelerated forward-backward loop and the conjugate a
    prox-gradient ascent with a duality-gap stop.
    """

    def __init__(self, base: ConvexFunction, A: LinearMap | Any):
        if not isinstance(A, LinearMap):
            A = LinearMap(A)
        base.check_dim(A.n)
        sym, _ = A.split()
        w = np.linalg.eigvalsh(sym.matrix)
        if w[0] < -TOL.positivity * max(1.0, float(np.abs(w).max())):
            raise DomainError("SumWithQuadratic: symmetric part of A must be PSD")
        self.base = base
        self.A = A
        self.dim = A.n
        self._S = sym.matrix
        self._Lq = float(max(w[-1], 0.0))
        self._folded: ConvexFunction | None = None
        if sym.is_zero():
            self._folded = base
        elif isinstance(base, (Quadratic, NormSquaredScaled)):
            if isinstance(base, NormSquaredScaled):
                base = Quadratic(base.alpha * np.eye(A.n))
            self._folded = Quadratic(base.Q + self._S, base.b, base.c)
        inner = self._folded
        self.is_smooth = base.is_smooth
        self.is_strongly_convex = base.is_strongly_convex or bool(w[0] > 0)
        self.conj_closed_form = inner is not None and inner.conj_closed_form

    def _quad(self, x):
        return 0.5 * _dot(x @ self._S, x)

    def _value(self, x):
        if self._folded is not None:
            return self._folded._value(x)
        return self.base._value(x) + self._quad(x)

    def _grad(self, x):
        if self._folded is not None:
            return self._folded._grad(x)
        return self.base._grad(x) + x @ self._S

    def _conj_grad(self, p):
        if self._folded is not None:
            return self._folded._conj_grad(p)
        raise ConvexError("SumWithQuadratic: conjugate gradient needs a quadratic base")

    def _prox(self, x, lam):
        if self._folded is not None:
            return self._folded._prox(x, lam)
        # minimise base(z) + 1/2 z (S + I/lam) z - <x/lam, z>
        step = 1.0 / (self._Lq + 1.0 / lam)
        z = self.base._prox(x / (1.0 + lam * self._Lq), lam / (1.0 + lam * self._Lq))
        y = z
        t = 1.0
        scale = 1.0 + np.max(np.abs(x), initial=0.0)
        for _ in range(TOL.prox_maxiter):
            g = y @ self._S + (y - x) / lam
            z_new = self.base._prox(y - step * g, step)
            change = float(np.max(np.abs(z_new - z), initial=0.0))
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = z_new + ((t - 1.0) / t_new) * (z_new - z)
            z, t = z_new, t_new
            if change <= TOL.prox_tol * scale:
                return z
        raise ConvergenceError("SumWithQuadratic prox did not converge", change)

    def _conj(self, p):
        return self._conj_with_gap(p)[0]

    def _conj_with_gap(self, p):
        if self._folded is not None:
            return self._folded._conj_with_gap(p)
        # sup_x <p,x> - base(x) - 1/2 xSx by forward-backward ascent; the
        # upper bound comes from base*(u) + q*(p - u), u in d base(x).
        step = 1.0 / self._Lq
        S_pinv = np.linalg.pinv(self._S)
        x = self.base._prox(np.zeros_like(p), step)
        y = x
        t = 1.0
        gap = INF
        lower = upper = np.full(p.shape[:-1], -INF)
        for _ in range(TOL.conj_maxiter):
            fw = y - step * (y @ self._S - p)
            x_new = self.base._prox(fw, step)
            u = (fw - x_new) / step
            lower = _dot(p, x_new) - self.base._value(x_new) - self._quad(x_new)
            v = p - u
            vz = v @ S_pinv
            in_range = np.linalg.norm(vz @ self._S - v, axis=-1) <= 1e-9 * (1.0 + np.linalg.norm(v, axis=-1))
            upper = np.where(in_range, self.base._conj(u) + 0.5 * _dot(v, vz), INF)
            with np.errstate(invalid="ignore"):
                gaps = np.where(np.isfinite(upper), upper - lower, INF)
            gap = float(np.max(gaps, initial=0.0))
            if gap <= TOL.conj_gap * (1.0 + float(np.max(np.abs(lower), initial=0.0))):
                return 0.5 * (lower + upper), gap
            if float(np.max(lower, initial=0.0)) > 1e12:
                return np.where(lower > 1e12, INF, lower), gap
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            x, t = x_new, t_new
        return lower, gap

    def to_dict(self):
        return {"kind": "sum_quadratic", "base": self.base.to_dict(), "A": self.A.to_list()}

    def __repr__(self):
        return f"SumWithQuadratic({self.base!r}, {self.A!r})"


# ---------------------------------------------------------------------------
# Checked public operations


def _prep(f: ConvexFunction, x: Any, name: str = "x") -> np.ndarray:
    a = _vec(x, name)
    f.check_dim(a.shape[-1])
    if np.isinf(a).any():
        raise DomainError(f"{name} must be finite")
    return a


def _out(v: np.ndarray, what: str):
    v = _check_nan(np.asarray(v, dtype=float), what)
    return float(v) if v.ndim == 0 else v


def evaluate(f: ConvexFunction, x: Any) -> float:
    """``f(x)``; ``+inf`` exactly when ``x`` is outside ``dom f``."""
    return _out(f._value(_prep(f, x)), "evaluate")


def prox(f: ConvexFunction, x: Any, lam: float) -> np.ndarray:
    """``argmin_z f(z) + ||x - z||^2 / (2 lam)``."""
    if not lam > 0:
        raise DomainError("prox: lam must be > 0")
    return _check_nan(f._prox(_prep(f, x), float(lam)), "prox")


def conj_eval(f: ConvexFunction, p: Any, *, return_gap: bool = False):
    """Fenchel conjugate ``f*(p) = sup_x <x, p> - f(x)``.

    ``+inf`` is a legitimate result.  Nodes without a closed form use an
    inner ascent; ``return_gap=True`` also returns the certified duality gap
    of that computation (0 for closed forms).
    """
    val, gap = f._conj_with_gap(_prep(f, p, "p"))
    val = _out(val, "conj_eval")
    return (val, gap) if return_gap else val


def moreau_eval(f: ConvexFunction, x: Any, lam: float) -> float:
    """Moreau envelope ``f(z) + ||x - z||^2/(2 lam)`` at ``z = prox(f, x, lam)``."""
    if not lam > 0:
        raise DomainError("moreau_eval: lam must be > 0")
    a = _prep(f, x)
    z = f._prox(a, float(lam))
    r = a - z
    return _out(f._value(z) + 0.5 * _dot(r, r) / lam, "moreau_eval")


def fenchel_gap(f: ConvexFunction, x: Any, p: Any, tol: float = 1e-12) -> float:
    """``f(x) + f*(p) - <x, p>``, clamped at 0 when within ``-tol``.

    A value ``<= tol`` certifies ``p in df(x)``; ``+inf`` when ``f*(p)`` is.
    """
    a = _prep(f, x)
    b = _prep(f, p, "p")
    fx = f._value(a)
    if np.any(np.isinf(fx)):
        raise DomainError("fenchel_gap: x is outside dom f")
    fp = f._conj(b)
    with np.errstate(invalid="ignore"):
        g = np.where(np.isinf(fp), INF, fx + fp - _dot(a, b))
    g = np.where((g < 0) & (g >= -tol), 0.0, g)
    return _out(g, "fenchel_gap")


def subgrad(f: ConvexFunction, x: Any, lam: float | None = None, tol: float = 1e-6) -> np.ndarray:
    """Minimal-norm subgradient, via ``(x - prox(f, x, lam)) / lam`` as ``lam -> 0``.

    One Richardson step combines ``lam`` and ``lam / 2``.  Raises
    :class:`DomainError` when ``df(x)`` is empty and verifies the result
    with the Fenchel gap.
    """
    lam = TOL.subgrad_lambda if lam is None else float(lam)
    a = _prep(f, x)
    if np.any(np.isinf(f._value(a))):
        raise DomainError("subgrad: x is outside dom f, the subdifferential is empty")
    g1 = (a - f._prox(a, lam)) / lam
    g2 = (a - f._prox(a, lam / 2)) / (lam / 2)
    g = 2.0 * g2 - g1
    # Richardson can overshoot at kinks; keep the extrapolation only if it certifies.
    for cand in (g, g2):
        gap = f._value(a) + f._conj(cand) - _dot(a, cand)
        scale = 1.0 + np.abs(f._value(a)) + np.sqrt(_dot(a, a) * _dot(cand, cand))
        if np.all(np.isfinite(gap)) and np.all(gap <= tol * scale):
            return _check_nan(cand, "subgrad")
    raise DomainError("subgrad: no certified subgradient (empty subdifferential at x?)")


# ---------------------------------------------------------------------------
# Serialization


class SchemaError(ConvexError, ValueError):
    """Malformed function tree; ``location`` names the offending field."""

    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location
        self.detail = message


_KEYS = {
    "quadratic": ({"Q"}, {"b", "c"}),
    "norm_squared": (set(), {"alpha"}),
    "abs_sum": (set(), {"weights"}),
    "box": ({"lo", "hi"}, set()),
    "tilt": ({"base", "v"}, set()),
    "separable": ({"blocks"}, set()),
    "moreau": ({"base", "lam"}, set()),
    "sum_quadratic": ({"base", "A"}, set()),
}


def _num(v: Any, loc: str, allow_none: bool = False):
    def ok(e):
        return (allow_none and e is None) or (isinstance(e, (int, float)) and not isinstance(e, bool))

    if ok(v):
        return v
    if isinstance(v, list) and all(ok(e) for e in v):
        return v
    if isinstance(v, list) and all(isinstance(r, list) and all(ok(e) for e in r) for r in v):
        return v
    raise SchemaError(loc, f"expected a number or numeric array, got {v!r}")


def _box_bound(v: Any, sign: float):
    if v is None:
        return sign * INF
    if isinstance(v, list):
        return [sign * INF if e is None else e for e in v]
    return v


def function_from_dict(d: Any, loc: str = "$") -> ConvexFunction:
    """Build a catalog node from its JSON tree; errors carry the field path."""
    if not isinstance(d, dict):
        raise SchemaError(loc, "expected an object")
    kind = d.get("kind")
    if kind not in _KEYS:
        raise SchemaError(f"{loc}.kind", f"unknown kind {kind!r}; expected one of {sorted(_KEYS)}")
    required, optional = _KEYS[kind]
    keys = set(d) - {"kind"}
    for k in sorted(keys - required - optional):
        raise SchemaError(f"{loc}.{k}", "unknown field")
    for k in sorted(required - keys):
        raise SchemaError(f"{loc}.{k}", "missing field")
    try:
        if kind == "quadratic":
            return Quadratic(_num(d["Q"], f"{loc}.Q"), None if "b" not in d else _num(d["b"], f"{loc}.b"),
                             _num(d.get("c", 0.0), f"{loc}.c"))
        if kind == "norm_squared":
            return NormSquaredScaled(_num(d.get("alpha", 1.0), f"{loc}.alpha"))
        if kind == "abs_sum":
            return AbsSum(_num(d.get("weights", 1.0), f"{loc}.weights"))
        if kind == "box":
            return IndicatorBox(_box_bound(_num(d["lo"], f"{loc}.lo", True), -1.0),
                                _box_bound(_num(d["hi"], f"{loc}.hi", True), 1.0))
        if kind == "tilt":
            return LinearTilt(function_from_dict(d["base"], f"{loc}.base"), _num(d["v"], f"{loc}.v"))
        if kind == "moreau":
            return MoreauEnvelope(function_from_dict(d["base"], f"{loc}.base"), _num(d["lam"], f"{loc}.lam"))
        if kind == "sum_quadratic":
            return SumWithQuadratic(function_from_dict(d["base"], f"{loc}.base"), LinearMap(_num(d["A"], f"{loc}.A")))
        blocks = d["blocks"]
        if not isinstance(blocks, list):
            raise SchemaError(f"{loc}.blocks", "expected a list")
        parts = []
        for i, blk in enumerate(blocks):
            bl = f"{loc}.blocks[{i}]"
            if not isinstance(blk, dict) or set(blk) != {"f", "start", "stop"}:
                raise SchemaError(bl, "expected an object with exactly f, start, stop")
            parts.append((function_from_dict(blk["f"], f"{bl}.f"), (blk["start"], blk["stop"])))
        return SeparableSum(parts)
    except SchemaError:
        raise
    except (ConvexError, ValueError, TypeError) as exc:
        raise SchemaError(loc, str(exc)) from exc
