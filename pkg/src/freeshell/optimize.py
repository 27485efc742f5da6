"""Limited-memory quasi-Newton minimizer with a strong Wolfe line search.

Used by the flattening engine for every energy solve. The implementation
is deliberately self-contained and deterministic: fixed-order dot
products, no randomization, no parallel reductions, so identical inputs
produce bit-identical iterates. ``memory=0`` degrades to steepest descent
with the same line search.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import LineSearchError, NonFiniteError

WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9
LS_MAX_TRIALS = 60


@dataclass
class Objective:
    """A differentiable scalar objective.

    ``eval`` maps a flat variable vector to ``(energy, gradient)``; the
    gradient has length ``dim``.
    """

    eval: Callable[[np.ndarray], tuple]
    dim: int


@dataclass
class SolveStats:
    iterations: int
    final_energy: float
    grad_norm: float
    converged: bool
    n_evals: int = 0


@dataclass
class SolverOptions:
    memory: int = 10
    grad_tol: float | None = None  # default 1e-6 * sqrt(dim)
    max_iters: int = 500
    history: list = field(default_factory=list, repr=False)


def _check_finite(f: float, g: np.ndarray, where: str) -> None:
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite energy or gradient {where}")


def minimize(obj: Objective, x0, opts: SolverOptions | None = None):
    """Minimize ``obj`` from ``x0``; returns ``(x, SolveStats)``.

    Accepted steps satisfy the strong Wolfe conditions (c1=1e-4, c2=0.9),
    so the energy decreases monotonically. Converged means the infinity
    norm of the gradient dropped below ``grad_tol``.
    """
    opts = opts or SolverOptions()
    x = np.asarray(x0, dtype=float).copy()
    if x.size != obj.dim:
        raise ValueError(f"x0 has size {x.size}, objective expects {obj.dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite start point")
    grad_tol = opts.grad_tol if opts.grad_tol is not None else 1e-6 * np.sqrt(obj.dim)

    evals = [0]

    def fg(z):
        evals[0] += 1
        f, g = obj.eval(z)
        return float(f), np.asarray(g, dtype=float)

    f, g = fg(x)
    _check_finite(f, g, "at start point")

    s_hist: list = []
    y_hist: list = []
    rho_hist: list = []
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    it = 0
    while gnorm > grad_tol and it < opts.max_iters:
        p = _direction(g, s_hist, y_hist, rho_hist, opts.memory)
        dphi0 = float(np.dot(g, p))
        if dphi0 >= 0.0:
            # history produced a non-descent direction; restart with -g
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            p = -g
            dphi0 = float(np.dot(g, p))
            if dphi0 >= 0.0:
                break  # gradient is numerically zero
        alpha0 = 1.0
        if it == 0:
            alpha0 = min(1.0, 1.0 / max(gnorm, 1e-12))
        try:
            alpha, f_new, g_new = _line_search(fg, x, p, f, g, dphi0, alpha0)
        except LineSearchError:
            if abs(dphi0) <= 1e-12 * (1.0 + abs(f)):
                break  # expected decrease is below double-precision noise
            raise
        s = alpha * p
        x = x + s
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            if opts.memory > 0:
                s_hist.append(s)
                y_hist.append(y)
                rho_hist.append(1.0 / sy)
                if len(s_hist) > opts.memory:
                    s_hist.pop(0)
                    y_hist.pop(0)
                    rho_hist.pop(0)
        f, g = f_new, g_new
        _check_finite(f, g, f"at iteration {it}")
        gnorm = float(np.max(np.abs(g)))
        it += 1

    stats = SolveStats(iterations=it, final_energy=f, grad_norm=gnorm,
                       converged=gnorm <= grad_tol, n_evals=evals[0])
    return x, stats


def _direction(g, s_hist, y_hist, rho_hist, memory):
    if memory <= 0 or not s_hist:
        return -g
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    # scale by the most recent curvature estimate
    s, y = s_hist[-1], y_hist[-1]
    gamma = float(np.dot(s, y)) / max(float(np.dot(y, y)), 1e-300)
    q *= gamma
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return -q


def _line_search(fg, x, p, f0, g0, dphi0, alpha0):
    """Strong Wolfe line search (bracket then zoom)."""
    trials = [0]

    def phi(alpha):
        trials[0] += 1
        if trials[0] > LS_MAX_TRIALS:
            raise LineSearchError(
                f"no Wolfe step after {LS_MAX_TRIALS} trials")
        f, g = fg(x + alpha * p)
        return f, g, float(np.dot(g, p))

    alpha_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    alpha = alpha0
    f_a = g_a = dphi_a = None
    for _ in range(LS_MAX_TRIALS):
        f_a, g_a, dphi_a = phi(alpha)
        if (not np.isfinite(f_a)) or f_a > f0 + WOLFE_C1 * alpha * dphi0 or \
                (alpha_prev > 0.0 and f_a >= f_prev):
            return _zoom(phi, f0, dphi0, alpha_prev, f_prev, dphi_prev,
                         alpha, f_a, p)
        if abs(dphi_a) <= -WOLFE_C2 * dphi0:
            return alpha, f_a, g_a
        if dphi_a >= 0.0:
            return _zoom(phi, f0, dphi0, alpha, f_a, dphi_a,
                         alpha_prev, f_prev, p)
        alpha_prev, f_prev, dphi_prev = alpha, f_a, dphi_a
        alpha = min(2.0 * alpha, 1e10)
    raise LineSearchError(f"no Wolfe step after {LS_MAX_TRIALS} trials")


def _zoom(phi, f0, dphi0, a_lo, f_lo, dphi_lo, a_hi, f_hi, p):
    """Narrow an interval known to contain a strong Wolfe point."""
    for _ in range(LS_MAX_TRIALS):
        # bisection with a quadratic-interpolation attempt
        if np.isfinite(f_hi) and dphi_lo != 0.0:
            denom = 2.0 * (f_hi - f_lo - dphi_lo * (a_hi - a_lo))
            a_mid = a_lo - dphi_lo * (a_hi - a_lo) ** 2 / denom if denom != 0.0 else None
        else:
            a_mid = None
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        width = hi - lo
        if a_mid is None or not np.isfinite(a_mid) or \
                a_mid <= lo + 0.1 * width or a_mid >= hi - 0.1 * width:
            a_mid = 0.5 * (a_lo + a_hi)
        f_m, g_m, dphi_m = phi(a_mid)
        if (not np.isfinite(f_m)) or f_m > f0 + WOLFE_C1 * a_mid * dphi0 or f_m >= f_lo:
            a_hi, f_hi = a_mid, f_m
        else:
            if abs(dphi_m) <= -WOLFE_C2 * dphi0:
                return a_mid, f_m, g_m
            if dphi_m * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, dphi_lo = a_mid, f_m, dphi_m
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            # interval collapsed; accept the best Armijo point
            if f_lo <= f0 + WOLFE_C1 * a_lo * dphi0 and a_lo > 0.0:
                f_m, g_m, dphi_m = phi(a_lo)
                return a_lo, f_m, g_m
            raise LineSearchError("line search interval collapsed")
    raise LineSearchError(f"no Wolfe step after {LS_MAX_TRIALS} zoom steps")


def finite_difference_check(obj: Objective, x, h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error for coordinate i is ``|g_fd[i] - g[i]| / max(1, |g[i]|)``.
    """
    x = np.asarray(x, dtype=float)
    if h <= 0.0:
        raise ValueError("h must be positive")
    _, g = obj.eval(x)
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite analytic gradient")
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        f_plus, _ = obj.eval(x + e)
        f_minus, _ = obj.eval(x - e)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"non-finite energy near coordinate {i}")
        g_fd = (f_plus - f_minus) / (2.0 * h)
        err = abs(g_fd - g[i]) / max(1.0, abs(g[i]))
        worst = max(worst, err)
    return worst
