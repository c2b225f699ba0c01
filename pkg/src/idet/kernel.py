"""Log-barrier interior-point solver for smooth concave maximization.

Problems have the form::

    maximize    f(x)
    subject to  c_i(x) >= 0          (c_i smooth concave)
                A x <= b             (affine budgets)
                lo < x < hi          (box, infinite sides allowed)

Callers supply values, gradients and Hessians analytically.  Centering
uses damped Newton steps with backtracking; the barrier weight starts at
``mu0`` and is divided by ``mu_factor`` until ``m * mu < opt_tol`` where
``m`` counts the barrier terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exceptions import NumericError

CONVERGED = "converged"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"


@dataclass
class ConcaveProgram:
    """Concave program in a real decision vector of length ``n_vars``.

    ``objective(x)`` returns ``(value, gradient, hessian)``.
    ``constraints(x)``, if given, returns ``(values, jacobian, hessians)``
    with shapes (m,), (m, n) and (m, n, n); each value must stay >= 0.
    ``objective_value`` and ``constraint_values`` optionally return just the
    values; the line search uses them to skip derivative work.
    """

    objective: Callable
    n_vars: int
    constraints: Optional[Callable] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    budget_matrix: Optional[np.ndarray] = None
    budget_rhs: Optional[np.ndarray] = None
    objective_value: Optional[Callable] = None
    constraint_values: Optional[Callable] = None

    def value_of(self, x):
        if self.objective_value is not None:
            return self.objective_value(x)
        return self.objective(x)[0]

    def constraint_values_of(self, x):
        if self.constraint_values is not None:
            return self.constraint_values(x)
        return self.constraints(x)[0]

    def __post_init__(self):
        n = int(self.n_vars)
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float).reshape(n)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float).reshape(n)
        if self.budget_matrix is None:
            self.budget_matrix = np.zeros((0, n))
            self.budget_rhs = np.zeros(0)
        else:
            self.budget_matrix = np.atleast_2d(np.asarray(self.budget_matrix, float))
            self.budget_rhs = np.atleast_1d(np.asarray(self.budget_rhs, float))
            if self.budget_matrix.shape != (self.budget_rhs.shape[0], n):
                raise ValueError("budget matrix and right-hand side are inconsistent")


@dataclass
class KernelOptions:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-7
    max_iter: int = 500
    mu0: float = 1.0
    mu_factor: float = 10.0
    newton_tol: float = 1e-10
    # intermediate barrier stages only need a rough center
    center_tol: float = 1e-6


@dataclass
class KernelSolution:
    x: np.ndarray
    objective_value: float
    kkt_residual: float
    iterations: int
    status: str
    central_path: list = field(default_factory=list)
    barrier_trace: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status == CONVERGED


class _Barrier:
    """Barrier function bookkeeping for one program."""

    def __init__(self, program):
        self.p = program
        self.lo_idx = np.flatnonzero(np.isfinite(program.lower))
        self.hi_idx = np.flatnonzero(np.isfinite(program.upper))
        self.n_cons = 0
        self.m = len(self.lo_idx) + len(self.hi_idx) + program.budget_rhs.shape[0]

    def slacks(self, x):
        p = self.p
        return (
            x[self.lo_idx] - p.lower[self.lo_idx],
            p.upper[self.hi_idx] - x[self.hi_idx],
            p.budget_rhs - p.budget_matrix @ x,
        )

    def linear_step_limit(self, x, d):
        """Largest step keeping box and budget slacks positive (times 0.99)."""
        s_lo, s_hi, s_b = self.slacks(x)
        rates = [d[self.lo_idx], -d[self.hi_idx], -(self.p.budget_matrix @ d)]
        limit = np.inf
        for s, r in zip((s_lo, s_hi, s_b), rates):
            neg = r < 0
            if np.any(neg):
                limit = min(limit, float(np.min(s[neg] / -r[neg])))
        return 0.99 * limit if np.isfinite(limit) else np.inf

    def value(self, x, mu):
        """Barrier objective and the raw objective, or None outside the domain."""
        p = self.p
        s_lo, s_hi, s_b = self.slacks(x)
        if np.any(s_lo <= 0) or np.any(s_hi <= 0) or np.any(s_b <= 0):
            return None
        f = p.value_of(x)
        if not np.isfinite(f):
            return None
        total = np.sum(np.log(s_lo)) + np.sum(np.log(s_hi)) + np.sum(np.log(s_b))
        if p.constraints is not None:
            c = np.asarray(p.constraint_values_of(x), dtype=float)
            if np.any(~np.isfinite(c)) or np.any(c <= 0):
                return None
            total += np.sum(np.log(c))
        return f + mu * total, f

    def derivatives(self, x, mu):
        p = self.p
        f, g, h = p.objective(x)
        g = np.array(g, dtype=float)
        h = np.array(h, dtype=float)
        if not (np.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise NumericError("objective, gradient or Hessian is not finite")
        s_lo, s_hi, s_b = self.slacks(x)
        grad = g.copy()
        hess = h.copy()
        grad[self.lo_idx] += mu / s_lo
        grad[self.hi_idx] -= mu / s_hi
        diag = np.zeros(p.n_vars)
        diag[self.lo_idx] += mu / s_lo**2
        diag[self.hi_idx] += mu / s_hi**2
        hess[np.diag_indices_from(hess)] -= diag
        a = p.budget_matrix
        if a.shape[0]:
            grad -= mu * a.T @ (1.0 / s_b)
            hess -= mu * (a.T * (1.0 / s_b**2)) @ a
        if p.constraints is not None:
            c, jac, hc = p.constraints(x)
            jac = np.asarray(jac, dtype=float)
            inv = 1.0 / np.asarray(c, dtype=float)
            if not (np.all(np.isfinite(inv)) and np.all(np.isfinite(jac))):
                raise NumericError("constraint values or gradients are not finite")
            grad += mu * jac.T @ inv
            hess += mu * (np.tensordot(inv, hc, axes=1) - (jac.T * inv**2) @ jac)
        return f, grad, hess


def _newton_direction(grad, hess):
    """Solve ``-hess d = grad``; regularizes if ``-hess`` is not positive definite."""
    neg = -hess
    neg = 0.5 * (neg + neg.T)
    scale = max(1.0, float(np.max(np.abs(np.diag(neg)))))
    shift = 0.0
    for _ in range(30):
        try:
            factor = cho_factor(neg + shift * np.eye(len(grad)), check_finite=False)
            d = cho_solve(factor, grad, check_finite=False)
            if np.all(np.isfinite(d)):
                return d
        except (LinAlgError, ValueError):
            pass
        shift = 1e-12 * scale if shift == 0.0 else shift * 10.0
    raise NumericError("Newton system could not be factorized")


def _centering(bar, x, mu, opts, budget, trace, tol=None):
    """Damped Newton ascent on the barrier objective; returns (x, steps, decrement)."""
    tol = opts.newton_tol if tol is None else tol
    steps = 0
    decrement = np.inf
    current = bar.value(x, mu)
    if current is None:
        raise NumericError("centering started outside the barrier domain")
    while steps < budget:
        _, grad, hess = bar.derivatives(x, mu)
        d = _newton_direction(grad, hess)
        decrement = float(grad @ d)
        if decrement / 2.0 <= tol:
            break
        t = min(1.0, bar.linear_step_limit(x, d))
        accepted = False
        for _ in range(60):
            trial = bar.value(x + t * d, mu)
            if trial is not None and trial[0] >= current[0] + 0.25 * t * decrement:
                accepted = True
                break
            t *= 0.5
        steps += 1
        if not accepted:
            break
        x = x + t * d
        current = trial
        trace.append(float(current[0]))
    return x, steps, max(decrement, 0.0)


def _strict_box_point(program, x0=None):
    lo, hi = program.lower, program.upper
    if np.any(hi <= lo):
        return None
    if x0 is None:
        x = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
        x = np.where(np.isfinite(lo) & ~np.isfinite(hi), lo + 1.0, x)
        x = np.where(~np.isfinite(lo) & np.isfinite(hi), hi - 1.0, x)
        return x
    x = np.array(x0, dtype=float)
    width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    margin = 1e-6 * width
    x = np.where(np.isfinite(lo), np.maximum(x, lo + margin), x)
    x = np.where(np.isfinite(hi), np.minimum(x, hi - margin), x)
    return x


def _is_strictly_feasible(bar, x):
    return bar.value(x, 1.0) is not None


def feasibility_phase1(program, opts=None, x0=None):
    """Find a strictly feasible point by maximizing the smallest slack.

    Returns the point, or ``None`` when the constraints admit no strictly
    feasible point.
    """
    opts = opts or KernelOptions()
    # a warm-start barrier weight makes the slack search crawl; restart the schedule
    opts = replace(opts, mu0=max(opts.mu0, 1.0), mu_factor=min(opts.mu_factor, 10.0))
    start = _strict_box_point(program, x0)
    if start is None:
        return None
    n = program.n_vars
    bar = _Barrier(program)
    s_lo, s_hi, s_b = bar.slacks(start)
    cons_vals = np.zeros(0)
    if program.constraints is not None:
        cons_vals = np.asarray(program.constraint_values_of(start), dtype=float)
    if not np.all(np.isfinite(cons_vals)):
        raise NumericError("constraints are not finite at the phase-1 start")
    slacks = np.concatenate([s_b, cons_vals])
    if slacks.size == 0 or np.min(slacks) > 0:
        return start
    a = program.budget_matrix
    r = a.shape[0]

    def aux_objective(z):
        g = np.zeros(n + 1)
        g[-1] = 1.0
        return z[-1], g, np.zeros((n + 1, n + 1))

    def aux_constraints(z):
        x, s = z[:-1], z[-1]
        vals, jacs, hess = [], [], []
        if r:
            vals.append(program.budget_rhs - a @ x - s)
            jacs.append(np.hstack([-a, -np.ones((r, 1))]))
            hess.append(np.zeros((r, n + 1, n + 1)))
        if program.constraints is not None:
            c, jc, hc = program.constraints(x)
            m = len(c)
            vals.append(np.asarray(c, float) - s)
            jacs.append(np.hstack([np.asarray(jc, float), -np.ones((m, 1))]))
            h = np.zeros((m, n + 1, n + 1))
            h[:, :n, :n] = hc
            hess.append(h)
        return np.concatenate(vals), np.vstack(jacs), np.concatenate(hess)

    cap = max(1.0, float(np.max(np.abs(slacks))))
    # infinite box sides get a wide finite stand-in so the barrier stays bounded
    reach = 1e4 * (1.0 + np.abs(start)) + cap
    lower = np.where(np.isfinite(program.lower), program.lower, start - reach)
    upper = np.where(np.isfinite(program.upper), program.upper, start + reach)
    aux = ConcaveProgram(
        objective=aux_objective,
        n_vars=n + 1,
        constraints=aux_constraints,
        lower=np.append(lower, -np.inf),
        upper=np.append(upper, cap),
    )
    z0 = np.append(start, float(np.min(slacks)) - 1.0)
    sol = _barrier_solve(aux, z0, opts, stop=lambda z: z[-1] > 0)
    if sol.x[-1] > 0:
        return sol.x[:-1]
    return None


def _barrier_solve(program, x0, opts, stop=None):
    bar = _Barrier(program)
    cons_count = 0
    if program.constraints is not None:
        cons_count = len(np.atleast_1d(program.constraint_values_of(x0)))
    m = bar.m + cons_count
    x = np.array(x0, dtype=float)
    mu = opts.mu0 if m else 0.0
    iterations = 0
    central, trace = [], []
    status = MAX_ITER
    decrement = np.inf
    while iterations < opts.max_iter:
        final = m == 0 or m * mu < opts.opt_tol
        tol = opts.newton_tol if final else max(opts.newton_tol, opts.center_tol)
        x, steps, decrement = _centering(bar, x, mu, opts, opts.max_iter - iterations, trace, tol)
        iterations += steps
        central.append(float(program.value_of(x)))
        if stop is not None and stop(x):
            status = CONVERGED
            break
        if m == 0 or m * mu < opts.opt_tol:
            if decrement / 2.0 <= max(opts.newton_tol, opts.opt_tol):
                status = CONVERGED
            break
        mu /= opts.mu_factor
    f = float(program.value_of(x))
    kkt = max(m * mu, decrement / 2.0 if np.isfinite(decrement) else np.inf)
    if status == CONVERGED and kkt > opts.opt_tol and stop is None:
        status = MAX_ITER
    return KernelSolution(
        x=x, objective_value=f, kkt_residual=kkt, iterations=iterations,
        status=status, central_path=central, barrier_trace=trace,
    )


def solve(program, x0=None, opts=None):
    """Maximize a concave program from ``x0``.

    A start that is not strictly feasible is replaced by a phase-1 point;
    if none exists the solution carries ``status == "infeasible"``.
    """
    opts = opts or KernelOptions()
    if x0 is None:
        x0 = _strict_box_point(program)
        if x0 is None:
            return KernelSolution(np.full(program.n_vars, np.nan), -np.inf, np.inf, 0, INFEASIBLE)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (program.n_vars,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({program.n_vars},)")
    if not np.all(np.isfinite(x0)):
        raise NumericError("x0 is not finite")
    bar = _Barrier(program)
    if not _is_strictly_feasible(bar, x0):
        start = feasibility_phase1(program, opts, x0)
        if start is None or not _is_strictly_feasible(bar, start):
            return KernelSolution(x0, -np.inf, np.inf, 0, INFEASIBLE)
        x0 = start
    return _barrier_solve(program, x0, opts)
