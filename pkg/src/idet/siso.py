"""Alternating optimization of powers and splitting ratios for SISO-OFDM.

Two strategies are available.  ``"blockwise"`` solves three blocks in turn:

1. powers ``p`` with ``rho`` and ``psi`` fixed (concave in ``p`` because the
   surrogate only contains ``sqrt(p)`` and linear terms);
2. splitting ratios ``rho`` with ``p`` and ``psi`` fixed (concave through
   ``sqrt(1 - rho)``, harvested-power constraints become lower bounds);
3. the closed-form ``psi`` update, which makes the surrogate tight.

Because the harvested-power constraint couples ``p`` and ``rho``, the block
iteration can stop at points that are not stationary for the joint problem.
The default ``"joint"`` strategy therefore maximizes a surrogate that is
concave in ``(p, rho)`` together (see :mod:`idet.powersplit`) and then applies
the closed-form auxiliary updates.

Either loop stops when the objective changes by less than the tolerance.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernel, powersplit
from .exceptions import SurrogateDomainError
from .model import (
    ResourceAllocation,
    _overhead,
    cp_energy_siso,
    eh_thresholds,
    evaluate,
    feasibility_residuals,
    interference_gains,
)
from .report import CONVERGED, INFEASIBLE, MAX_ITER, SolveReport
from .transform import SurrogateState, psi_star_siso, r_tilde_siso

LN2 = np.log(2.0)
RHO_GUARD = 1.0 - 1e-9
MAX_OUTER = 200
N_STARTS = 2
_WARM_OPTS = kernel.KernelOptions(opt_tol=1e-9, mu0=1e-2, mu_factor=100, max_iter=500)


def _objective(rates, kind):
    return float(np.min(rates)) if kind == "fair" else float(np.sum(rates))


def upper_bound_rates(params, channels):
    """Per-user rate bound obtained by dropping interference and antenna noise.

    ``B/(N+L-1) * sum_k log2(1 + N**2 |H[j,k]|**2 P_tx / sigma_cov**2)``.
    Infinite when the conversion noise is zero.
    """
    n = params.n_subcarriers
    gains = channels.siso_gains()
    if params.conversion_noise == 0:
        return np.full(gains.shape[0], np.inf)
    snr = n * n * gains * params.tx_power / params.conversion_noise
    return params.bandwidth / _overhead(params, channels) * np.sum(np.log2(1.0 + snr), axis=1)


class _Cached:
    """Remember the last evaluation so the line search and Newton step share it."""

    def __init__(self, fn):
        self.fn = fn
        self.key = None
        self.value = None

    def __call__(self, x):
        key = x.tobytes()
        if key != self.key:
            self.value = self.fn(x)
            self.key = key
        return self.value


def _power_rate_terms(params, channels, rho, psi):
    """Coefficients of ``u[j,k] = a sqrt(p[j,k]) - sum_b c[j,b,k] p[b,k] - d``."""
    n = params.n_subcarriers
    share = 1.0 - np.minimum(rho, RHO_GUARD)
    gains = channels.siso_gains()
    a = 2.0 * psi * np.sqrt(gains * share[:, None] * n)
    c = (psi**2 * share[:, None] * n)[:, None, :] * interference_gains(params, channels)
    idx = np.arange(gains.shape[0])
    c = np.array(c)
    c[idx, idx, :] = 0.0
    d = psi**2 * (share[:, None] * params.antenna_noise + params.conversion_noise)
    return a, c, d


def _power_rates(powers, a, c, d, kappa, with_derivatives=True):
    """Surrogate rates as functions of the power matrix, with derivatives.

    Returns ``(rates (J,), grad (J, J*N), hess (J, J*N, J*N))`` or ``None``
    when some surrogate SINR leaves the domain ``u > -1``.
    """
    n_rx, n_sc = powers.shape
    sq = np.sqrt(powers)
    u = a * sq - np.einsum("abk,bk->ak", c, powers) - d
    one_u = 1.0 + u
    if np.any(one_u <= 0) or not np.all(np.isfinite(one_u)):
        return None
    rates = kappa / LN2 * np.sum(np.log(one_u), axis=1)
    if not with_derivatives:
        return rates, None, None
    w = kappa / (LN2 * one_u)
    idx = np.arange(n_rx)
    du = -c.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        own_slope = np.where(a > 0, a / (2.0 * sq), 0.0)
        own_curv = np.where(a > 0, -a / (4.0 * sq**3), 0.0)
    du[idx, idx, :] += own_slope
    grad = (w[:, None, :] * du).reshape(n_rx, n_rx * n_sc)
    dim = n_rx * n_sc
    hess = np.zeros((n_rx, dim, dim))
    b, bp, k = np.meshgrid(np.arange(n_rx), np.arange(n_rx), np.arange(n_sc), indexing="ij")
    rows, cols = b * n_sc + k, bp * n_sc + k
    v = w / one_u
    outer = -v[:, None, None, :] * du[:, :, None, :] * du[:, None, :, :]
    hess[:, rows, cols] = outer
    diag = (idx[:, None] * n_sc + np.arange(n_sc)[None, :])
    hess[idx[:, None], diag, diag] += w * own_curv
    return rates, grad, hess


def _eh_rows(params, channels, rho, thresholds):
    """Harvested-power constraints as budget rows ``A p <= b`` (p flattened)."""
    n = params.n_subcarriers
    scale = rho / _overhead(params, channels)
    gains = interference_gains(params, channels)
    rows = -(scale * n)[:, None] * gains.reshape(gains.shape[0], -1)
    rhs = scale * (cp_energy_siso(params, channels) + n * params.antenna_noise) - thresholds
    return rows, rhs


def _build_power_program(params, channels, rho, psi, kind, thresholds):
    n_rx, n_sc = params.n_receivers, params.n_subcarriers
    dim = n_rx * n_sc
    a, c, d = _power_rate_terms(params, channels, rho, psi)
    kappa = 1.0 / _overhead(params, channels)
    eh_a, eh_b = _eh_rows(params, channels, rho, thresholds)
    active = thresholds > 0
    budget_a = np.vstack([np.ones((1, dim)), eh_a[active]])
    budget_b = np.concatenate([[params.power_budget], eh_b[active]])

    if kind == "sum":
        @_Cached
        def objective(x):
            out = _power_rates(x.reshape(n_rx, n_sc), a, c, d, kappa)
            if out is None:
                return -np.inf, np.zeros(dim), np.zeros((dim, dim))
            rates, grad, hess = out
            return rates.sum(), grad.sum(axis=0), hess.sum(axis=0)

        return kernel.ConcaveProgram(
            objective=objective, n_vars=dim, lower=np.zeros(dim),
            budget_matrix=budget_a, budget_rhs=budget_b,
        )

    def objective(x):
        g = np.zeros(dim + 1)
        g[-1] = 1.0
        return x[-1], g, np.zeros((dim + 1, dim + 1))

    @_Cached
    def constraints(x):
        out = _power_rates(x[:-1].reshape(n_rx, n_sc), a, c, d, kappa)
        jac = np.zeros((n_rx, dim + 1))
        jac[:, -1] = -1.0
        hess = np.zeros((n_rx, dim + 1, dim + 1))
        if out is None:
            return np.full(n_rx, -np.inf), jac, hess
        rates, grad, h = out
        jac[:, :-1] = grad
        hess[:, :-1, :-1] = h
        return rates - x[-1], jac, hess

    return kernel.ConcaveProgram(
        objective=objective, n_vars=dim + 1, constraints=constraints,
        lower=np.append(np.zeros(dim), -np.inf),
        budget_matrix=np.hstack([budget_a, np.zeros((budget_a.shape[0], 1))]),
        budget_rhs=budget_b,
    )


def _split_program(params, channels, powers, psi, j, lower):
    """One receiver's splitting-ratio subproblem (rates are separable in rho)."""
    n = params.n_subcarriers
    gains = channels.siso_gains()[j]
    interference = np.einsum("bk,bk->k", interference_gains(params, channels)[j], powers)
    interference -= interference_gains(params, channels)[j, j] * powers[j]
    interference = np.maximum(interference, 0.0)
    lin = 2.0 * psi[j] * np.sqrt(gains * n * powers[j])
    e = n * interference + params.antenna_noise
    q = psi[j] ** 2
    kappa = 1.0 / _overhead(params, channels)

    def objective(x):
        r = x[0]
        s = np.sqrt(max(1.0 - r, 0.0))
        u = lin * s - q * ((1.0 - r) * e + params.conversion_noise)
        one_u = 1.0 + u
        if np.any(one_u <= 0) or s == 0:
            return -np.inf, np.zeros(1), np.zeros((1, 1))
        du = -lin / (2.0 * s) + q * e
        d2u = -lin / (4.0 * s**3)
        val = kappa / LN2 * np.sum(np.log(one_u))
        grad = kappa / LN2 * np.sum(du / one_u)
        hess = kappa / LN2 * np.sum(d2u / one_u - du**2 / one_u**2)
        return val, np.array([grad]), np.array([[hess]])

    return kernel.ConcaveProgram(objective=objective, n_vars=1, lower=[lower], upper=[1.0])


def _split_lower_bounds(params, channels, powers, thresholds):
    """Smallest splitting ratio meeting each harvested-power threshold."""
    alloc = ResourceAllocation(powers=powers, split_ratios=np.ones(params.n_receivers))
    full = evaluate(params, channels, alloc).eh_power_per_user
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = np.where(thresholds > 0, thresholds / full, 0.0)
    return lower


def check_feasible(params, channels, thresholds=None):
    """Return a power matrix meeting every harvested-power threshold at rho = 1, or None."""
    if thresholds is None:
        thresholds = eh_thresholds(params)
    n_rx, n_sc = params.n_receivers, params.n_subcarriers
    dim = n_rx * n_sc
    uniform = np.full(dim, params.power_budget / dim)
    if not np.any(thresholds > 0):
        return uniform.reshape(n_rx, n_sc)
    eh_a, eh_b = _eh_rows(params, channels, np.ones(n_rx), thresholds)
    active = thresholds > 0
    program = kernel.ConcaveProgram(
        objective=lambda x: (0.0, np.zeros(dim), np.zeros((dim, dim))),
        n_vars=dim,
        lower=np.zeros(dim),
        budget_matrix=np.vstack([np.ones((1, dim)), eh_a[active]]),
        budget_rhs=np.concatenate([[params.power_budget], eh_b[active]]),
    )
    if np.all(eh_a[active] @ uniform < eh_b[active]):
        return uniform.reshape(n_rx, n_sc)
    point = kernel.feasibility_phase1(program, x0=uniform * 0.999)
    return None if point is None else point.reshape(n_rx, n_sc)


STRATEGIES = ("joint", "blockwise")


def power_split_model(params, channels):
    """Joint (p, rho) structure of the SISO model."""
    n = params.n_subcarriers
    ov = _overhead(params, channels)
    gains = interference_gains(params, channels)
    cross = np.array(gains)
    idx = np.arange(params.n_receivers)
    cross[idx, idx, :] = 0.0
    return powersplit.PowerSplitModel(
        own=channels.siso_gains(),
        cross=cross,
        e0=(cp_energy_siso(params, channels) + n * params.antenna_noise) / ov,
        e1=n / ov * gains.reshape(params.n_receivers, -1),
        n_subcarriers=n,
        antenna_noise=params.antenna_noise,
        conversion_noise=params.conversion_noise,
        kappa=params.bandwidth / ov,
        budget=params.power_budget,
    )


def _iterate(work, channels, kind, powers, thresholds, max_outer, opts, strategy):
    n_rx, n_sc = work.n_receivers, work.n_subcarriers
    rho = np.ones(n_rx)
    state = SurrogateState(psi_siso=np.ones((n_rx, n_sc)))
    trace = []
    previous = work.tolerance
    status = MAX_ITER
    iterations = 0
    tol = work.tolerance

    def surrogate(p, r, st):
        alloc = ResourceAllocation(powers=p, split_ratios=np.minimum(r, RHO_GUARD))
        try:
            return _objective(r_tilde_siso(work, channels, alloc, st), kind)
        except SurrogateDomainError:
            return -np.inf

    model = power_split_model(work, channels) if strategy == "joint" else None

    for iterations in range(1, max_outer + 1):
        psi = np.asarray(state.psi_siso, dtype=float)
        if model is not None:
            powers, rho, _ = powersplit.joint_step(
                model, powers, rho, kind, thresholds, opts, psi=psi)
            alloc = ResourceAllocation(powers=powers, split_ratios=rho)
            state = SurrogateState(psi_siso=psi_star_siso(work, channels, alloc))
            current = _objective(evaluate(work, channels, alloc).throughput_per_user, kind)
            trace.append(current)
            if abs(current - previous) < tol:
                status = CONVERGED
                break
            previous = current
            continue

        # power block
        program = _build_power_program(work, channels, rho, psi, kind, thresholds)
        x0 = powers.reshape(-1)
        if kind == "fair":
            alloc = ResourceAllocation(powers=powers, split_ratios=np.minimum(rho, RHO_GUARD))
            try:
                base = float(np.min(r_tilde_siso(work, channels, alloc, state)))
            except SurrogateDomainError:
                base = -1.0
            x0 = np.append(x0, base - 0.1 * (1.0 + abs(base)))
        sol = kernel.solve(program, x0, opts)
        if sol.status != kernel.INFEASIBLE:
            candidate = np.maximum(sol.x[: n_rx * n_sc].reshape(n_rx, n_sc), 0.0)
            if surrogate(candidate, rho, state) >= surrogate(powers, rho, state):
                powers = candidate

        # splitting-ratio block, separable over receivers
        lower = _split_lower_bounds(work, channels, powers, thresholds)
        if np.any(lower > 1.0):
            status = INFEASIBLE
            break
        new_rho = rho.copy()
        for j in range(n_rx):
            if lower[j] >= RHO_GUARD:
                new_rho[j] = max(lower[j], 0.0)
                continue
            prog = _split_program(work, channels, powers, psi, j, lower[j])
            x0 = np.array([min(max(rho[j], lower[j]), 1.0)])
            res = kernel.solve(prog, x0, opts)
            if res.status != kernel.INFEASIBLE:
                new_rho[j] = float(np.clip(res.x[0], lower[j], 1.0))
        if surrogate(powers, new_rho, state) >= surrogate(powers, rho, state):
            rho = new_rho
        else:
            rho = np.maximum(rho, lower)

        # closed-form auxiliary update
        alloc = ResourceAllocation(powers=powers, split_ratios=rho)
        state = SurrogateState(psi_siso=psi_star_siso(work, channels, alloc))
        current = _objective(evaluate(work, channels, alloc).throughput_per_user, kind)
        trace.append(current)
        if abs(current - previous) < tol:
            status = CONVERGED
            break
        previous = current

    return powers, rho, trace, status, iterations


def _alternate(params, channels, kind, max_outer=MAX_OUTER, seed=None, kernel_opts=None,
               strategy="joint", n_starts=N_STARTS):
    start = time.perf_counter()
    bandwidth = params.bandwidth
    work = params.replace(bandwidth=1.0)
    opts = kernel_opts or _WARM_OPTS
    thresholds = np.asarray(eh_thresholds(work), dtype=float)
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")

    anchor = check_feasible(work, channels, thresholds)
    if anchor is None:
        return SolveReport(
            allocation=None, objective=0.0, objective_kind=kind, status=INFEASIBLE,
            seed=seed, wall_time=time.perf_counter() - start,
            message="DC requirements exceed what the power budget can deliver at rho = 1",
        )
    eh_a, eh_b = _eh_rows(work, channels, np.ones(work.n_receivers), thresholds)
    active = thresholds > 0

    def feasible(p):
        return bool(np.all(eh_a[active] @ p.reshape(-1) <= eh_b[active]))

    best, best_score = None, -np.inf
    patterns = powersplit.start_patterns(channels.siso_gains(), work.power_budget, n_starts, seed)
    for index, pattern in enumerate(patterns):
        init = anchor if index == 0 else powersplit.blend_feasible(pattern, anchor, feasible)
        run = _iterate(work, channels, kind, init, thresholds, max_outer, opts, strategy)
        score = run[2][-1] if run[2] and run[3] != INFEASIBLE else -np.inf
        if best is None or score > best_score + work.tolerance:
            best, best_score = run + (index,), score
    powers, rho, trace, status, iterations, chosen = best
    alloc = ResourceAllocation(powers=powers, split_ratios=rho)
    point = evaluate(params, channels, alloc, kind)
    if status == INFEASIBLE:
        point_obj = 0.0
    else:
        point_obj = point.objective
    return SolveReport(
        allocation=alloc,
        objective=point_obj,
        objective_kind=kind,
        objective_trace=[v * bandwidth for v in trace],
        feasibility_residuals=feasibility_residuals(params, channels, alloc),
        iterations=iterations,
        status=status,
        seed=seed,
        wall_time=time.perf_counter() - start,
        rates=point.throughput_per_user,
        dc=point.dc_per_user,
        message=f"best of {len(patterns)} starts: start {chosen}",
    )


def solve_fair_siso(params, channels, max_outer=MAX_OUTER, seed=None, kernel_opts=None,
                    strategy="joint", n_starts=N_STARTS):
    """Maximize the minimum user throughput (powers, splitting ratios).

    The alternation is run from ``n_starts`` initial power patterns (uniform,
    orthogonal, then random draws from ``seed``) and the best end point kept.
    """
    return _alternate(params, channels, "fair", max_outer, seed, kernel_opts, strategy, n_starts)


def solve_sum_siso(params, channels, max_outer=MAX_OUTER, seed=None, kernel_opts=None,
                   strategy="joint", n_starts=N_STARTS):
    """Maximize the total throughput (powers, splitting ratios); multi-start as above."""
    return _alternate(params, channels, "sum", max_outer, seed, kernel_opts, strategy, n_starts)
