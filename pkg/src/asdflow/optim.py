"""Accelerated gradient descent in a fixed quadratic metric.

Minimises a smooth convex ``F`` using FISTA steps ``x = y - P^{-1} grad F(y) / L``
where ``P`` is a user supplied SPD preconditioner, ``L`` is found by
backtracking, and momentum is reset whenever it points uphill
(O'Donoghue & Candes gradient restart).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

FunGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class APGResult:
    x: np.ndarray
    value: float
    stationarity: float
    iterations: int
    converged: bool
    lipschitz: float


def apg(fun_grad: FunGrad, x0: np.ndarray, solve_metric: Callable[[np.ndarray], np.ndarray],
        *, tol: float = 1e-10, maxiter: int = 5000, lipschitz: float = 1.0,
        fixed: np.ndarray | None = None, slack: float = 0.0) -> APGResult:
    """Run preconditioned FISTA until ``sqrt(<g, P^{-1} g>) <= tol``.

    ``fixed`` is a boolean mask of entries that are held at their initial
    values (their gradient components are zeroed before preconditioning).
    ``slack`` is the absolute rounding noise of ``F``; the sufficient decrease
    test tolerates it so that tiny objective values do not stall the search.
    """
    x = np.array(x0, dtype=float)
    L = float(lipschitz)

    def fg(z):
        f, g = fun_grad(z)
        if fixed is not None:
            g = np.where(fixed, 0.0, g)
        return f, g

    f_x, g_x = fg(x)
    if not math.isfinite(f_x):
        raise FloatingPointError("objective is not finite at the initial iterate")
    y, f_y, g_y = x, f_x, g_x
    t = 1.0
    stat = math.inf
    for it in range(1, maxiter + 1):
        z = solve_metric(g_y)
        if fixed is not None:
            z = np.where(fixed, 0.0, z)
        gz = float(np.vdot(g_y, z))
        stat_y = math.sqrt(max(gz, 0.0))
        if stat_y <= tol and f_y <= f_x:
            return APGResult(y, f_y, stat_y, it - 1, True, L)
        while True:
            x_new = y - z / L
            f_new, g_new = fg(x_new)
            if math.isfinite(f_new) and f_new <= f_y - 0.5 * gz / L + slack + 1e-15 * abs(f_y):
                break
            L *= 2.0
            if L > 1e300:
                return APGResult(x, f_x, stat, it, False, L)
        if float(np.vdot(g_y, x_new - x)) > 0.0:
            t = 1.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        x_prev = x
        x, f_x, g_x = x_new, f_new, g_new
        if beta > 0.0:
            y = x + beta * (x - x_prev)
            f_y, g_y = fg(y)
            if not math.isfinite(f_y):
                y, f_y, g_y, t_new = x, f_x, g_x, 1.0
        else:
            y, f_y, g_y = x, f_x, g_x
        t = t_new
        L *= 0.95
        stat = stat_y
    z = solve_metric(g_x)
    if fixed is not None:
        z = np.where(fixed, 0.0, z)
    stat = math.sqrt(max(float(np.vdot(g_x, z)), 0.0))
    return APGResult(x, f_x, stat, maxiter, stat <= tol, L)
