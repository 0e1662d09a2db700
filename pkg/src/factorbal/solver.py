"""Weight selection by maximizing the unconstrained concave dual.

The primal problem picks nonnegative per-unit weights with minimal sum of
squares subject to the balance constraints Bw = b. Eliminating the
nonnegativity multipliers through the KKT conditions leaves a concave,
piecewise-quadratic, continuously differentiable dual in the balance
multipliers only:

    maximize  sum_i [ -(1/4) (lam' B_i)^2 [lam' B_i < 0] - lam' b_i ]

whose gradient equals B w(lam) - b with w_i(lam) = max(0, -lam' B_i)/2.
A semismooth Newton iteration with backtracking line search (gradient
ascent as fallback) drives the gradient to zero; unbounded growth of the
multipliers certifies primal infeasibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.optimize import linprog

from .balance import BalanceSystem
from .errors import InfeasibleProblemError

CONVERGED = "converged"
INFEASIBLE = "infeasible"
MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs for the dual ascent.

    ``grad_tol`` is the gradient max-norm threshold; when None it defaults
    to 1e-9 times the number of units, keeping the stopping rule size
    independent. ``divergence_norm`` bounds the multiplier max-norm beyond
    which the dual is declared unbounded (primal infeasible).
    """

    grad_tol: float | None = None
    max_iters: int = 500
    line_search_shrink: float = 0.5
    line_search_slope: float = 1e-4
    divergence_norm: float = 1e8
    hessian_regularization: float = 1e-10

    def __post_init__(self):
        for name in (
            "max_iters",
            "line_search_shrink",
            "line_search_slope",
            "divergence_norm",
            "hessian_regularization",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.grad_tol is not None and self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")


@dataclass(frozen=True)
class DualSolution:
    """Multipliers, recovered weights and convergence diagnostics.

    ``objective_trace`` records the dual objective at the start and after
    every accepted line-search step (non-decreasing by construction).
    """

    lam: np.ndarray
    gamma: np.ndarray
    weights: np.ndarray
    objective: float
    iterations: int
    status: str
    grad_norm: float
    objective_trace: tuple[float, ...] = ()

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def dual_objective(lam: np.ndarray, system: BalanceSystem) -> float:
    """Value of the unconstrained concave dual at ``lam``."""
    u = system.B.T @ np.asarray(lam, dtype=float)
    neg = u < 0
    return float(-0.25 * np.sum(u[neg] ** 2) - lam @ system.b)


def _eval(lam, B, b):
    u = B.T @ lam
    neg = u < 0
    w = np.where(neg, -0.5 * u, 0.0)
    obj = -0.25 * float(u[neg] @ u[neg]) - float(lam @ b)
    grad = B @ w - b
    return u, neg, w, obj, grad


def _newton_direction(B, neg, grad, reg_factor):
    """Ascent direction from the generalized Hessian -(1/2) B_act B_act'."""
    if not np.any(neg):
        return None
    B_act = B[:, neg]
    A = 0.5 * (B_act @ B_act.T)
    tr = np.trace(A)
    ridge = reg_factor * tr / A.shape[0] if tr > 0 else reg_factor
    A[np.diag_indices_from(A)] += ridge
    try:
        c, low = sla.cho_factor(A, check_finite=False)
        d = sla.cho_solve((c, low), grad, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        d = None
    if d is None or not np.all(np.isfinite(d)) or grad @ d <= 0:
        # fall back to a truncated eigendecomposition step
        evals, evecs = np.linalg.eigh(A)
        good = evals > max(ridge, 1e-14 * evals[-1])
        if not np.any(good):
            return None
        d = evecs[:, good] @ ((evecs[:, good].T @ grad) / evals[good])
        if grad @ d <= 0:
            return None
    return d


def solve_dual(system: BalanceSystem, options: SolverOptions | None = None) -> DualSolution:
    """Maximize the dual and recover the optimal nonnegative weights.

    Deterministic: starts from zero multipliers. Returns a solution with
    status ``converged`` (gradient max-norm below tolerance, so the
    weights satisfy the balance constraints), ``infeasible`` (multipliers
    diverged, certifying there is no nonnegative feasible point) or
    ``max_iters`` (best iterate with diagnostics).
    """
    opts = options or SolverOptions()
    B, b = system.B, system.b
    p, n = B.shape
    tol = opts.grad_tol if opts.grad_tol is not None else 1e-9 * n

    lam = np.zeros(p)
    u, neg, w, obj, grad = _eval(lam, B, b)
    trace = [obj]
    iters = 0
    status = MAX_ITERS
    while iters < opts.max_iters:
        gnorm = float(np.max(np.abs(grad), initial=0.0))
        if gnorm <= tol:
            status = CONVERGED
            break
        if np.max(np.abs(lam), initial=0.0) > opts.divergence_norm:
            status = INFEASIBLE
            break
        d = _newton_direction(B, neg, grad, opts.hessian_regularization)
        if d is None:
            d = grad / max(1.0, gnorm)
        step = 1.0
        slope = float(grad @ d)
        accepted = False
        for _ in range(80):
            cand = lam + step * d
            cu, cneg, cw, cobj, cgrad = _eval(cand, B, b)
            if cobj >= obj + opts.line_search_slope * step * slope:
                lam, u, neg, w, obj, grad = cand, cu, cneg, cw, cobj, cgrad
                trace.append(obj)
                accepted = True
                break
            step *= opts.line_search_shrink
        iters += 1
        if not accepted:
            # no ascent possible at floating precision; treat as converged
            # if the residual is small, otherwise report the stall
            status = CONVERGED if gnorm <= max(tol, 1e-7 * (1 + np.max(np.abs(b)))) else MAX_ITERS
            break

    gnorm = float(np.max(np.abs(grad), initial=0.0))
    if status == MAX_ITERS and np.max(np.abs(lam), initial=0.0) > opts.divergence_norm:
        status = INFEASIBLE
    gamma = np.where(u >= 0, u, 0.0)
    return DualSolution(
        lam=lam,
        gamma=gamma,
        weights=w,
        objective=obj,
        iterations=iters,
        status=status,
        grad_norm=gnorm,
        objective_trace=tuple(trace),
    )


def check_feasibility(system: BalanceSystem, tol: float = 1e-9) -> bool:
    """Whether any nonnegative weight vector satisfies Bw = b exactly.

    Runs a linear-programming phase-1 on the constraint system; this is
    the infeasibility certificate backing the primal oracle.
    """
    B, b = system.B, system.b
    scale = max(1.0, float(np.max(np.abs(b))))
    res = linprog(
        c=np.zeros(system.n),
        A_eq=B,
        b_eq=b,
        bounds=(0, None),
        method="highs",
    )
    if res.status == 2:
        return False
    if not res.success:
        return False
    return bool(np.max(np.abs(B @ res.x - b)) <= 1e-7 * scale)


def primal_oracle(system: BalanceSystem, tol: float = 1e-9, max_pivots: int | None = None) -> np.ndarray:
    """Direct active-set solution of min sum w_i^2, Bw = b, w >= 0.

    Test-support oracle for small systems (hundreds of units): searches
    over zero sets, solving each candidate's equality-constrained problem
    through its normal equations, starting from a feasible vertex and the
    unconstrained minimum-norm solution's sign pattern. Raises
    ``InfeasibleProblemError`` when no feasible point exists.
    """
    B = system.B
    b = system.b
    p, n = B.shape
    scale = max(1.0, float(np.max(np.abs(b))))
    feas_tol = 1e-8 * scale

    # unconstrained minimum-norm solution; feasible iff system is consistent
    w_free = np.linalg.lstsq(B, b, rcond=None)[0]
    if np.max(np.abs(B @ w_free - b)) > feas_tol:
        raise InfeasibleProblemError(
            "balance constraints are mutually inconsistent (no solution even "
            "without the nonnegativity requirement)"
        )
    if np.all(w_free >= -tol * scale):
        return np.maximum(w_free, 0.0)

    res = linprog(
        c=np.zeros(n), A_eq=B, b_eq=b, bounds=(0, None), method="highs"
    )
    if res.status == 2 or not res.success:
        raise InfeasibleProblemError(
            "no nonnegative weights satisfy the balance constraints"
        )
    w = np.maximum(res.x, 0.0)

    def subproblem(free_mask):
        """Minimum-norm solution constrained to the free support."""
        cols = np.flatnonzero(free_mask)
        u = np.zeros(n)
        if cols.size:
            sol, *_ = np.linalg.lstsq(B[:, cols], b, rcond=None)
            u[cols] = sol
        return u, cols

    max_pivots = max_pivots or 20 * n
    active = w <= tol * scale
    for _ in range(max_pivots):
        u, cols = subproblem(~active)
        attained = np.max(np.abs(B @ u - b)) <= feas_tol
        if attained and np.all(u[cols] >= -tol * scale):
            # candidate optimum on this face: check multiplier signs
            if cols.size:
                lam, *_ = np.linalg.lstsq(B[:, cols].T, -2.0 * u[cols], rcond=None)
            else:
                lam = np.zeros(p)
            reduced = lam @ B[:, active] if np.any(active) else np.array([])
            if reduced.size == 0 or np.min(reduced) >= -1e-7 * scale:
                return np.maximum(u, 0.0)
            release = np.flatnonzero(active)[int(np.argmin(reduced))]
            active[release] = False
            w = u
            continue
        # move toward the face solution until a variable hits zero
        direction = u - w
        moving = direction < -tol * scale
        if not np.any(moving):
            active[~active & (np.abs(u) <= tol * scale)] = True
            w = u
            continue
        steps = -w[moving] / direction[moving]
        alpha = min(1.0, float(np.min(steps)))
        w = w + alpha * direction
        blocked = np.flatnonzero(moving)[steps <= alpha + 1e-12]
        active[blocked] = True
        w[blocked] = 0.0
    raise RuntimeError("active-set oracle failed to converge; system too large?")
