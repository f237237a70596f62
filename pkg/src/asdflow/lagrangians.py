"""Anti-selfdual Lagrangians, selfdual boundary Lagrangians and manifolds.

Every ASD Lagrangian built here has the form

    L(x, p) = Phi(x) + Phi*(-B x - R p)

with ``Phi`` a catalog convex function, ``B`` skew (zero unless the
Lagrangian encodes an operator ``A``) and ``R`` one of the involutions
identity, negation or pair swap.  Its conjugate is assembled symbolically,

    L*(q, y) = Phi*(q + B R y) + Phi(-R y),

so :func:`verify_antiselfdual` compares two different formula routes rather
than one code path with itself.
"""

from __future__ import annotations

import os
from typing import Any

import numpy as np

from .convex import (
    INF,
    ConvexError,
    ConvexFunction,
    DimensionError,
    DomainError,
    LinearMap,
    MoreauEnvelope,
    SumWithQuadratic,
    _dot,
    _vec,
)

DEFAULT_SEED = 1729
SEED_ENV = "ASDFLOW_SEED"


class UnsupportedCombination(ConvexError, TypeError):
    """The conjugate of this Lagrangian has no closed form in the catalog."""


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    return DEFAULT_SEED if raw in (None, "") else int(raw)


class Automorphism:
    """Involution ``R`` of the state space: identity, negation or pair swap."""

    TAGS = ("identity", "negation", "swap")

    def __init__(self, tag: str):
        if tag not in self.TAGS:
            raise ValueError(f"unknown automorphism {tag!r}")
        self.tag = tag

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.tag == "identity":
            return x
        if self.tag == "negation":
            return -x
        n = x.shape[-1]
        if n % 2:
            raise DimensionError("swap automorphism needs an even dimension")
        h = n // 2
        return np.concatenate([x[..., h:], x[..., :h]], axis=-1)

    def __eq__(self, other):
        return isinstance(other, Automorphism) and other.tag == self.tag

    def __hash__(self):
        return hash(self.tag)

    def __repr__(self):
        return f"Automorphism({self.tag!r})"


IDENTITY = Automorphism("identity")
NEGATION = Automorphism("negation")
SWAP = Automorphism("swap")


def _skew_apply(B: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    return 0.0 if B is None else x @ B.T


class LagrangianSpec:
    """``L(x, p) = Phi(x) + Phi*(-B x - R p)``; see the module docstring."""

    kind = "generic"

    def __init__(self, phi: ConvexFunction, R: Automorphism, B: LinearMap | None = None):
        self.phi = phi
        self.R = R
        if B is not None:
            if not B.is_skew():
                raise DomainError("LagrangianSpec: B must be skew")
            if B.is_zero():
                B = None
        self.B = B
        self.dim = phi.dim if B is None else B.n

    @property
    def _Bm(self):
        return None if self.B is None else self.B.matrix

    def check(self, x: Any, p: Any) -> tuple[np.ndarray, np.ndarray]:
        x, p = _vec(x), _vec(p, "p")
        if x.shape != p.shape:
            raise DimensionError(f"x and p shapes differ: {x.shape} vs {p.shape}")
        self.phi.check_dim(x.shape[-1])
        if self.R.tag == "swap" and x.shape[-1] % 2:
            raise DimensionError("swap Lagrangian needs an even dimension")
        return x, p

    # batched kernels ----------------------------------------------------

    def _value(self, x, p):
        return self.phi._value(x) + self.phi._conj(-_skew_apply(self._Bm, x) - self.R(p))

    def _conj(self, q, y):
        if not self.phi.conj_closed_form:
            raise UnsupportedCombination(f"{self.kind}: conjugate of {self.phi!r} is not closed form")
        Ry = self.R(y)
        return self.phi._conj(q + _skew_apply(self._Bm, Ry)) + self.phi._value(-Ry)

    def value(self, x: Any, p: Any) -> float:
        x, p = self.check(x, p)
        return _scalar(self._value(x, p))

    def conj(self, q: Any, y: Any) -> float:
        """``L*(q, y) = sup_{x,p} <q, x> + <y, p> - L(x, p)``."""
        q, y = self.check(q, y)
        return _scalar(self._conj(q, y))

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


def _scalar(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


class BasicASD(LagrangianSpec):
    kind = "basic"

    def __init__(self, phi: ConvexFunction):
        super().__init__(phi, IDENTITY)

    def to_dict(self):
        return {"kind": self.kind, "phi": self.phi.to_dict()}

    def __repr__(self):
        return f"BasicASD({self.phi!r})"


class SwapASD(LagrangianSpec):
    """``L(x, p) = Phi(x) + Phi*(-S p)`` on ``R^{2n}``."""

    kind = "swap"

    def __init__(self, Phi: ConvexFunction):
        if Phi.dim is not None and Phi.dim % 2:
            raise DimensionError("SwapASD needs Phi on an even-dimensional space")
        super().__init__(Phi, SWAP)

    def to_dict(self):
        return {"kind": self.kind, "Phi": self.Phi.to_dict()}

    @property
    def Phi(self):
        return self.phi

    def __repr__(self):
        return f"SwapASD({self.phi!r})"


class Regularized(LagrangianSpec):
    """``L_lam(x,p) = inf_z L(z,p) + ||x-z||^2/(2 lam) + lam/2 ||p||^2``.

    Evaluated literally by that formula (Moreau envelope in ``x`` plus the
    momentum quadratic); the conjugate algebra instead uses
    ``(Phi_lam)* = Phi* + lam/2 ||.||^2``.
    """

    kind = "regularized"

    def __init__(self, base: LagrangianSpec, lam: float):
        if not lam > 0:
            raise DomainError("Regularized: lam must be > 0")
        if base.B is not None or isinstance(base, SeparableLagrangian):
            raise UnsupportedCombination("Regularized: base must be BasicASD, SwapASD or Regularized")
        self.base = base
        self.lam = float(lam)
        super().__init__(MoreauEnvelope(base.phi, lam), base.R)

    def _value(self, x, p):
        phi = self.base.phi
        z = phi._prox(x, self.lam)
        r = x - z
        env = phi._value(z) + 0.5 * _dot(r, r) / self.lam
        return env + phi._conj(-self.R(p)) + 0.5 * self.lam * _dot(p, p)

    def _conj(self, q, y):
        phi = self.base.phi
        if not phi.conj_closed_form:
            raise UnsupportedCombination("Regularized: base conjugate is not closed form")
        Ry = self.R(y)
        return phi._conj(q) + 0.5 * self.lam * _dot(q, q) + self.phi._value(-Ry)

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(), "lam": self.lam}

    def __repr__(self):
        return f"Regularized({self.base!r}, {self.lam})"


class ManifoldLagrangian(LagrangianSpec):
    """ASD Lagrangian of ``M_{+,psi,A}`` (R = I) or ``M_{-,psi,A}`` (R = -I).

    A positive ``A`` is reduced to its skew part by absorbing
    ``1/2 <A_s x, x>`` into ``psi``.
    """

    kind = "manifold"

    def __init__(self, psi: ConvexFunction, A: LinearMap | None, sign: str):
        if sign not in ("+", "-"):
            raise ValueError("sign must be '+' or '-'")
        self.psi = psi
        self.sign = sign
        if A is None:
            phi, skew = psi, None
        else:
            if not A.is_positive():
                lam, v = A.min_symmetric_eigenpair()
                raise DomainError(f"A is not positive: <Av,v> = {lam:.3e} along v = {v.tolist()}")
            _, skew = A.split()
            phi = SumWithQuadratic(psi, A)
        self.A = A
        super().__init__(phi, IDENTITY if sign == "+" else NEGATION, skew)


class SeparableLagrangian(LagrangianSpec):
    """``L(x, p) = f(x) + g(p)``; a generic probe, not ASD in general."""

    kind = "separable"

    def __init__(self, f: ConvexFunction, g: ConvexFunction, R: Automorphism = IDENTITY):
        self.f, self.g = f, g
        super().__init__(f, R)

    def _value(self, x, p):
        return self.f._value(x) + self.g._value(p)

    def _conj(self, q, y):
        if not (self.f.conj_closed_form and self.g.conj_closed_form):
            raise UnsupportedCombination("SeparableLagrangian: conjugate not closed form")
        return self.f._conj(q) + self.g._conj(y)

    def to_dict(self):
        return {"kind": self.kind, "f": self.f.to_dict(), "g": self.g.to_dict()}


def build_basic_asd(phi: ConvexFunction) -> BasicASD:
    return BasicASD(phi)


def build_swap_asd(Phi: ConvexFunction) -> SwapASD:
    return SwapASD(Phi)


def evaluate_lagrangian(L: LagrangianSpec, x: Any, p: Any) -> float:
    return L.value(x, p)


def _inf_aware_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    both = np.isinf(a) & np.isinf(b)
    with np.errstate(invalid="ignore"):
        d = np.abs(a - b)
    return np.where(both, 0.0, d)


def verify_antiselfdual(L: LagrangianSpec, samples: int = 1000, seed: int | None = None,
                        dim: int | None = None, scale: float = 1.0) -> float:
    """Max over seeded samples of ``|L*(p, x) - L(-R x, -R p)|``.

    Samples are standard normal (times ``scale``).  Both sides infinite
    counts as agreement; one side infinite is an infinite gap.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    n = L.dim if L.dim is not None else dim
    if n is None:
        n = 2 if L.R.tag == "swap" else 1
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    x = scale * rng.standard_normal((samples, n))
    p = scale * rng.standard_normal((samples, n))
    lhs = L._conj(p, x)
    rhs = L._value(-L.R(x), -L.R(p))
    return float(np.max(_inf_aware_gap(lhs, rhs)))


# ---------------------------------------------------------------------------
# Boundary Lagrangian


class BoundaryLagrangian:
    """S-selfdual boundary Lagrangian on ``(a, b) = ((a1, a2), (b1, b2))``.

    ``l(a, b) = psi1~(a1) + psi1~*(-A1a a1 - a2) + psi2~(b1) + psi2~*(-A2a b1 + b2)``
    where ``psi_i~ = psi_i + 1/2 <A_i^s x, x>`` and ``A_i^a`` is the skew part.
    """

    def __init__(self, psi1: ConvexFunction, psi2: ConvexFunction, A1: LinearMap, A2: LinearMap):
        for name, A in (("A1", A1), ("A2", A2)):
            if not A.is_positive():
                lam, v = A.min_symmetric_eigenpair()
                raise DomainError(f"{name} is not positive: <Av,v> = {lam:.3e} along v = {v.tolist()}")
        if A1.n != A2.n:
            raise DimensionError("A1 and A2 must have the same size")
        self.psi1, self.psi2, self.A1, self.A2 = psi1, psi2, A1, A2
        self.n = A1.n
        self.psi1t = SumWithQuadratic(psi1, A1)
        self.psi2t = SumWithQuadratic(psi2, A2)
        self.A1a = A1.split()[1].matrix
        self.A2a = A2.split()[1].matrix

    def _split(self, a, b):
        n = self.n
        return a[..., :n], a[..., n:], b[..., :n], b[..., n:]

    def _parts(self, a, b):
        a1, a2, b1, b2 = self._split(a, b)
        start = self.psi1t._value(a1) + self.psi1t._conj(-a1 @ self.A1a.T - a2)
        end = self.psi2t._value(b1) + self.psi2t._conj(-b1 @ self.A2a.T + b2)
        return start, end

    def _value(self, a, b):
        s, e = self._parts(a, b)
        return s + e

    def _conj(self, q, r):
        if not (self.psi1t.conj_closed_form and self.psi2t.conj_closed_form):
            raise UnsupportedCombination("boundary conjugate needs closed-form psi_i~*")
        q1, q2, r1, r2 = self._split(q, r)
        one = self.psi1t._conj(q1 + q2 @ self.A1a.T) + self.psi1t._value(-q2)
        two = self.psi2t._conj(r1 - r2 @ self.A2a.T) + self.psi2t._value(r2)
        return one + two

    def value(self, a: Any, b: Any) -> float:
        a, b = _vec(a, "a"), _vec(b, "b")
        if a.shape[-1] != 2 * self.n or b.shape[-1] != 2 * self.n:
            raise DimensionError(f"boundary points must have dimension {2 * self.n}")
        return _scalar(self._value(a, b))

    def conj(self, q: Any, r: Any) -> float:
        q, r = _vec(q, "q"), _vec(r, "r")
        return _scalar(self._conj(q, r))

    def residuals(self, a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
        """Fenchel gaps of both boundary inclusions (each >= 0)."""
        a1, a2, b1, b2 = self._split(a, b)
        s, e = self._parts(a, b)
        return float(s + _dot(a1, a2)), float(e - _dot(b1, b2))


def build_boundary(psi1: ConvexFunction, psi2: ConvexFunction, A1: Any = None, A2: Any = None,
                   n: int | None = None) -> BoundaryLagrangian:
    n = n or psi1.dim or psi2.dim or (None if A1 is None else np.shape(A1)[0])
    if n is None:
        raise DimensionError("build_boundary: cannot infer the dimension; pass n")
    A1 = LinearMap.zeros(n) if A1 is None else (A1 if isinstance(A1, LinearMap) else LinearMap(A1))
    A2 = LinearMap.zeros(n) if A2 is None else (A2 if isinstance(A2, LinearMap) else LinearMap(A2))
    return BoundaryLagrangian(psi1, psi2, A1, A2)


def verify_boundary_selfdual(ell: BoundaryLagrangian, samples: int = 100, seed: int | None = None) -> float:
    """Max gap ``|l*(x, p) - l(-S x, S p)|`` over seeded samples."""
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    m = 2 * ell.n
    x = rng.standard_normal((samples, m))
    p = rng.standard_normal((samples, m))
    lhs = ell._conj(x, p)
    rhs = ell._value(-SWAP(x), SWAP(p))
    return float(np.max(_inf_aware_gap(lhs, rhs)))


# ---------------------------------------------------------------------------
# Manifolds


class ManifoldSpec:
    """``M_{+,psi,A}``, ``M_{-,psi,A}`` or ``M_{S,Phi}`` as the zero set of
    ``L(x, p) + <R x, p>``."""

    def __init__(self, kind: str, fn: ConvexFunction, A: Any = None):
        if kind not in ("plus", "minus", "swap"):
            raise ValueError(f"unknown manifold kind {kind!r}")
        self.kind = kind
        if kind == "swap":
            self.lagrangian: LagrangianSpec = SwapASD(fn)
        else:
            if A is not None and not isinstance(A, LinearMap):
                A = LinearMap(A)
            self.lagrangian = ManifoldLagrangian(fn, A, "+" if kind == "plus" else "-")

    @classmethod
    def plus(cls, psi, A=None):
        return cls("plus", psi, A)

    @classmethod
    def minus(cls, psi, A=None):
        return cls("minus", psi, A)

    @classmethod
    def swap(cls, Phi):
        return cls("swap", Phi)


def manifold_residual(M: ManifoldSpec, x: Any, p: Any) -> float:
    """Nonnegative defect ``L(x, p) + <R x, p>``; ``+inf`` if ``x`` is off ``dom``."""
    L = M.lagrangian
    x, p = L.check(x, p)
    v = L._value(x, p)
    with np.errstate(invalid="ignore"):
        r = np.where(np.isinf(v), INF, v + _dot(L.R(x), p))
    r = np.where((r < 0) & (r > -1e-12), 0.0, r)
    return _scalar(r)
