"""Alternating optimization of beamformers and splitting ratios for MISO-OFDM.

Beamformers enter the kernel as real coordinates ordered by
(subcarrier, stream, antenna, re/im) so every surrogate Hessian is block
diagonal over subcarriers.  With ``g_re = (Re h, -Im h)`` and
``g_im = (Im h, Re h)`` the product ``h . w`` has real part ``g_re @ z``
and imaginary part ``g_im @ z``, hence ``|h . w|**2 = z' Q z`` with
``Q = g_re g_re' + g_im g_im'``.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernel, powersplit
from .exceptions import SurrogateDomainError
from .model import (
    ResourceAllocation,
    _overhead,
    beam_products,
    eh_power_bound_miso,
    eh_thresholds,
    evaluate,
    feasibility_residuals,
    miso_cp_term,
)
from .report import CONVERGED, INFEASIBLE, MAX_ITER, MisoSolveReport
from .siso import LN2, MAX_OUTER, N_STARTS, RHO_GUARD, _WARM_OPTS, _Cached, _objective
from .transform import (
    SurrogateState,
    psi_eh_star_full,
    psi_id_star,
    r_hat_miso,
)


class _Layout:
    """Maps beamformer arrays (J, N, M) to real coordinate vectors and back."""

    def __init__(self, params, channels):
        self.J, self.N, self.M = params.n_receivers, params.n_subcarriers, params.n_antennas
        self.block = 2 * self.J * self.M
        self.dim = self.N * self.block
        h = channels.miso_vectors()  # (J, N, M)
        g_re = np.stack([h.real, -h.imag], axis=-1).reshape(self.J, self.N, 2 * self.M)
        g_im = np.stack([h.imag, h.real], axis=-1).reshape(self.J, self.N, 2 * self.M)
        self.g_re, self.g_im = g_re, g_im
        self.Q = np.einsum("jka,jkb->jkab", g_re, g_re) + np.einsum("jka,jkb->jkab", g_im, g_im)

    def to_vector(self, w):
        z = np.stack([w.real, w.imag], axis=-1)  # (J, N, M, 2)
        return np.transpose(z, (1, 0, 2, 3)).reshape(-1)

    def to_beams(self, x):
        z = x.reshape(self.N, self.J, self.M, 2)
        return np.transpose(z[..., 0] + 1j * z[..., 1], (1, 0, 2))

    def blocks(self, x):
        return x.reshape(self.N, self.J, 2 * self.M)

    def linear_coeffs(self, psi):
        """``c[j, k]`` with ``Re(conj(psi[j, k]) h[j, k] . w) = c[j, k] @ z``."""
        return psi.real[..., None] * self.g_re + psi.imag[..., None] * self.g_im


def _rate_terms(params, channels, layout, rho, psi_id):
    n = params.n_subcarriers
    share = 1.0 - np.minimum(rho, RHO_GUARD)
    mag = np.abs(psi_id) ** 2
    alpha = 2.0 * np.sqrt(n * share)[:, None, None] * layout.linear_coeffs(psi_id)
    beta = mag * n * share[:, None]
    delta = mag * (share[:, None] * params.antenna_noise + params.conversion_noise)
    return alpha, beta, delta


def _miso_rates(x, layout, alpha, beta, delta, kappa, with_derivatives=True):
    """Surrogate rates ``R_hat_j(x)`` with gradients and Hessians, or None off-domain."""
    J, N = layout.J, layout.N
    z = layout.blocks(x)  # (N, J, 2M)
    qz = np.einsum("jkab,kpb->jkpa", layout.Q, z)  # (J, N, J', 2M)
    quad = np.einsum("kpa,jkpa->jkp", z, qz)
    idx = np.arange(J)
    quad[idx, :, idx] = 0.0
    own = np.einsum("jka,kja->jk", alpha, z)
    u = own - beta * quad.sum(axis=2) - delta
    one_u = 1.0 + u
    if np.any(one_u <= 0) or not np.all(np.isfinite(one_u)):
        return None
    rates = kappa / LN2 * np.sum(np.log(one_u), axis=1)
    if not with_derivatives:
        return rates, None, None
    w = kappa / (LN2 * one_u)  # (J, N)
    du = -2.0 * beta[:, :, None, None] * qz  # (J, N, J', 2M)
    du[idx, :, idx, :] = alpha
    grad = np.einsum("jk,jkpa->jkpa", w, du).reshape(J, layout.dim)
    b = layout.block
    hess = np.zeros((J, layout.dim, layout.dim))
    v = w / one_u
    m2 = 2 * layout.M
    for k in range(N):
        sl = slice(k * b, (k + 1) * b)
        g = du[:, k].reshape(J, b)
        blk = -v[:, k, None, None] * np.einsum("ja,jb->jab", g, g)
        curv = -2.0 * (w[:, k] * beta[:, k])[:, None, None] * layout.Q[:, k]  # (J, 2M, 2M)
        for p in range(J):
            ps = slice(p * m2, (p + 1) * m2)
            mask = idx != p
            blk[mask, ps, ps] += curv[mask]
        hess[:, sl, sl] = blk
    return rates, grad, hess


def _eh_rows(params, channels, layout, rho, psi_eh, thresholds):
    """Linearized harvested-power constraints ``A x <= b`` at the current psi_eh."""
    n = params.n_subcarriers
    ov = _overhead(params, channels)
    # psi_eh[j, k, jp] multiplies h[j, k] . w[jp, k]
    coeff = psi_eh.real[..., None] * layout.g_re[:, :, None, :] + psi_eh.imag[..., None] * layout.g_im[:, :, None, :]
    scale = rho * n / ov
    rows = -(2.0 * scale)[:, None] * coeff.reshape(layout.J, -1)
    const = rho / ov * (miso_cp_term(params, channels) - n * np.sum(np.abs(psi_eh) ** 2, axis=(1, 2)))
    const = const + rho * params.antenna_noise
    return rows, const - thresholds


def _budget_constraint(power_budget, dim):
    def values(x):
        return power_budget - x @ x, -2.0 * x, -2.0 * np.eye(dim)
    return values


def _w_program(params, channels, layout, rho, psi_id, psi_eh, thresholds, kind):
    dim = layout.dim
    alpha, beta, delta = _rate_terms(params, channels, layout, rho, psi_id)
    kappa = 1.0 / _overhead(params, channels)
    active = thresholds > 0
    eh_a, eh_b = _eh_rows(params, channels, layout, rho, psi_eh, thresholds)
    eh_a, eh_b = eh_a[active], eh_b[active]
    budget_fn = _budget_constraint(params.power_budget, dim)

    if kind == "sum":
        @_Cached
        def objective(x):
            out = _miso_rates(x, layout, alpha, beta, delta, kappa)
            if out is None:
                return -np.inf, np.zeros(dim), np.zeros((dim, dim))
            rates, grad, hess = out
            return rates.sum(), grad.sum(axis=0), hess.sum(axis=0)

        def constraints(x):
            c, g, h = budget_fn(x)
            return np.array([c]), g[None, :], h[None]

        return kernel.ConcaveProgram(
            objective=objective, n_vars=dim, constraints=constraints,
            budget_matrix=eh_a if eh_a.shape[0] else None,
            budget_rhs=eh_b if eh_a.shape[0] else None,
        )

    def objective(x):
        g = np.zeros(dim + 1)
        g[-1] = 1.0
        return x[-1], g, np.zeros((dim + 1, dim + 1))

    @_Cached
    def constraints(x):
        J = layout.J
        vals = np.full(J + 1, -np.inf)
        jac = np.zeros((J + 1, dim + 1))
        hess = np.zeros((J + 1, dim + 1, dim + 1))
        c, g, h = budget_fn(x[:-1])
        vals[J], jac[J, :-1], hess[J, :-1, :-1] = c, g, h
        jac[:J, -1] = -1.0
        out = _miso_rates(x[:-1], layout, alpha, beta, delta, kappa)
        if out is None:
            return vals, jac, hess
        rates, grad, hs = out
        vals[:J] = rates - x[-1]
        jac[:J, :-1] = grad
        hess[:J, :-1, :-1] = hs
        return vals, jac, hess

    has_eh = eh_a.shape[0] > 0
    return kernel.ConcaveProgram(
        objective=objective, n_vars=dim + 1, constraints=constraints,
        budget_matrix=np.hstack([eh_a, np.zeros((eh_a.shape[0], 1))]) if has_eh else None,
        budget_rhs=eh_b if has_eh else None,
    )


def matched_filter_beams(params, channels):
    """Uniform-power maximum-ratio beams ``w[j, k] = conj(h[j, k]) / |h[j, k]| * sqrt(p)``."""
    h = channels.miso_vectors()
    norm = np.linalg.norm(h, axis=-1, keepdims=True)
    direction = np.where(norm > 0, np.conj(h) / np.where(norm > 0, norm, 1.0), 0.0)
    direction[(norm[..., 0] == 0)] = 1.0 / np.sqrt(params.n_antennas)
    share = params.power_budget / (params.n_receivers * params.n_subcarriers)
    return direction * np.sqrt(share)


def zero_forcing_beams(params, channels):
    """Uniform-power regularized zero-forcing beams.

    Per subcarrier the directions are the normalized columns of
    ``H^H (H H^H + a I)^-1`` with ``a = J (sigma0^2 + sigma_cov^2) / (N P_tx)``,
    written for the unconjugated product ``h . w``.
    """
    h = channels.miso_vectors()  # (J, N, M)
    J = params.n_receivers
    reg = J * (params.antenna_noise + params.conversion_noise) / params.power_budget
    hk = np.transpose(h, (1, 0, 2))  # (N, J, M)
    gram = hk @ np.conj(np.transpose(hk, (0, 2, 1))) + max(reg, 1e-12) * np.eye(J)
    cols = np.conj(np.transpose(hk, (0, 2, 1))) @ np.linalg.inv(gram)  # (N, M, J)
    w = np.transpose(cols, (2, 0, 1))  # (J, N, M)
    norm = np.linalg.norm(w, axis=-1, keepdims=True)
    fallback = matched_filter_beams(params, channels)
    share = params.power_budget / (J * params.n_subcarriers)
    direction = np.where(norm > 0, w / np.where(norm > 0, norm, 1.0), 0.0)
    return np.where(norm > 0, direction * np.sqrt(share), fallback)


def _bound_at_full_split(params, channels, w):
    alloc = ResourceAllocation(beamformers=w, split_ratios=np.ones(params.n_receivers))
    return eh_power_bound_miso(params, channels, alloc)


def init_feasible_miso(params, channels, max_outer=MAX_OUTER, kernel_opts=None):
    """Maximize the smallest harvested-power margin at ``rho = 1``.

    Alternates a beamformer step on the linearized harvested power with the
    closed-form ``psi_eh`` update.  Returns ``(W, psi_eh, trace)``, or
    ``(None, None, trace)`` when some threshold cannot be reached.
    """
    opts = kernel_opts or _WARM_OPTS
    thresholds = np.asarray(eh_thresholds(params), dtype=float)
    layout = _Layout(params, channels)
    J, dim = layout.J, layout.dim
    ones = np.ones(J)
    w = matched_filter_beams(params, channels)
    psi_eh = psi_eh_star_full(channels, ResourceAllocation(beamformers=w, split_ratios=ones))
    budget_fn = _budget_constraint(params.power_budget, dim)
    trace = []
    margin = float(np.min(_bound_at_full_split(params, channels, w) - thresholds))
    previous = margin
    for _ in range(max_outer):
        eh_a, eh_b = _eh_rows(params, channels, layout, ones, psi_eh, thresholds)

        def objective(x):
            g = np.zeros(dim + 1)
            g[-1] = 1.0
            return x[-1], g, np.zeros((dim + 1, dim + 1))

        def constraints(x, eh_a=eh_a, eh_b=eh_b):
            c, g, h = budget_fn(x[:-1])
            vals = np.concatenate([eh_b - eh_a @ x[:-1] - x[-1], [c]])
            jac = np.zeros((J + 1, dim + 1))
            jac[:J, :-1] = -eh_a
            jac[:J, -1] = -1.0
            jac[J, :-1] = g
            hess = np.zeros((J + 1, dim + 1, dim + 1))
            hess[J, :-1, :-1] = h
            return vals, jac, hess

        x0 = layout.to_vector(w) * (1.0 - 1e-6)
        surplus = float(np.min(eh_b - eh_a @ x0))
        x0 = np.append(x0, surplus - 1e-3 * (1.0 + abs(surplus)))
        program = kernel.ConcaveProgram(objective=objective, n_vars=dim + 1, constraints=constraints)
        sol = kernel.solve(program, x0, opts)
        if sol.status != kernel.INFEASIBLE:
            cand = layout.to_beams(sol.x[:-1])
            cand_margin = float(np.min(_bound_at_full_split(params, channels, cand) - thresholds))
            if cand_margin >= margin:
                w, margin = cand, cand_margin
        psi_eh = psi_eh_star_full(channels, ResourceAllocation(beamformers=w, split_ratios=ones))
        trace.append(margin)
        if abs(margin - previous) < params.tolerance:
            break
        previous = margin
    if margin < 0:
        return None, None, trace
    return w, psi_eh, trace


def _iterate(work, channels, layout, kind, w, fallback, thresholds, max_outer, opts):
    J, N = layout.J, layout.N
    rho = np.ones(J)
    psi_id = np.ones((J, N), dtype=complex)
    psi_eh = psi_eh_star_full(channels, ResourceAllocation(beamformers=w, split_ratios=rho))
    trace = []
    previous = work.tolerance
    status = MAX_ITER
    iterations = 0
    residual = np.inf

    def surrogate(beams, r, pid):
        alloc = ResourceAllocation(beamformers=beams, split_ratios=np.minimum(r, RHO_GUARD))
        try:
            return _objective(r_hat_miso(work, channels, alloc, SurrogateState(psi_id=pid)), kind)
        except SurrogateDomainError:
            return -np.inf

    for iterations in range(1, max_outer + 1):
        gains = []
        # beamformer block; with one antenna a beam is a phase and the joint step covers it.
        # At rho = 1 the rate surrogate carries no signal, so the first pass starts with rho.
        if layout.M > 1 and iterations > 1:
            before = surrogate(w, rho, psi_id)
            program = _w_program(work, channels, layout, rho, psi_id, psi_eh, thresholds, kind)
            x0 = layout.to_vector(w)
            if kind == "fair":
                x0 = np.append(x0, before - 0.1 * (1.0 + abs(before)) if np.isfinite(before) else -1.0)
            sol = kernel.solve(program, x0, opts)
            if sol.status != kernel.INFEASIBLE:
                cand = layout.to_beams(sol.x[: layout.dim])
                if surrogate(cand, rho, psi_id) >= before:
                    w = cand
            gains.append(surrogate(w, rho, psi_id) - before)
            psi_eh = psi_eh_star_full(channels, ResourceAllocation(beamformers=w, split_ratios=rho))

        # joint power and splitting-ratio block with the beam directions held fixed
        before = surrogate(w, rho, psi_id)
        directions = _directions(w, fallback)
        model = power_split_model(work, channels, directions)
        powers = np.sum(np.abs(w) ** 2, axis=-1)
        # psi = 1 on the first pass, as for SISO; closed form at the current point afterwards
        psi = np.ones((J, N)) if iterations == 1 else None
        powers, rho, _ = powersplit.joint_step(model, powers, rho, kind, thresholds, opts, psi=psi)
        w = directions * np.sqrt(powers)[..., None]
        gains.append(surrogate(w, rho, psi_id) - before)

        # closed-form auxiliary updates
        alloc = ResourceAllocation(beamformers=w, split_ratios=rho)
        psi_id = psi_id_star(work, channels, alloc)
        psi_eh = psi_eh_star_full(channels, alloc)
        current = _objective(evaluate(work, channels, alloc).throughput_per_user, kind)
        trace.append(current)
        residual = max(0.0, *gains)
        if abs(current - previous) < work.tolerance:
            status = CONVERGED
            break
        previous = current

    return w, rho, psi_id, psi_eh, trace, status, iterations, residual


def _alternate(params, channels, kind, max_outer=MAX_OUTER, seed=None, kernel_opts=None,
               n_starts=N_STARTS):
    start = time.perf_counter()
    bandwidth = params.bandwidth
    work = params.replace(bandwidth=1.0)
    opts = kernel_opts or _WARM_OPTS
    thresholds = np.asarray(eh_thresholds(work), dtype=float)
    layout = _Layout(work, channels)

    w = matched_filter_beams(work, channels)
    if np.any(_bound_at_full_split(work, channels, w) < thresholds):
        w, _, _ = init_feasible_miso(work, channels, max_outer, opts)
    if w is None:
        return MisoSolveReport(
            allocation=None, objective=0.0, objective_kind=kind, status=INFEASIBLE,
            seed=seed, wall_time=time.perf_counter() - start,
            message="DC requirements exceed the largest harvested-power bound at rho = 1",
        )
    fallback = matched_filter_beams(work, channels)
    fallback = fallback / np.maximum(np.linalg.norm(fallback, axis=-1, keepdims=True), 1e-300)
    directions = _directions(w, fallback)
    anchor = np.sum(np.abs(w) ** 2, axis=-1)

    def feasible(p):
        beams = directions * np.sqrt(np.maximum(p, 0.0))[..., None]
        return bool(np.all(_bound_at_full_split(work, channels, beams) >= thresholds))

    def beams_feasible(beams):
        return bool(np.all(_bound_at_full_split(work, channels, beams) >= thresholds))

    strength = np.sum(np.abs(channels.miso_vectors()) ** 2, axis=-1)
    patterns = powersplit.start_patterns(strength, work.power_budget, n_starts, seed)
    starts = [w]
    if layout.M > 1 and n_starts > 1:
        # spatial separation is the other basin worth trying besides the matched filter
        starts.append(powersplit.blend_feasible(zero_forcing_beams(work, channels), w,
                                                beams_feasible))
    for pattern in patterns[1:]:
        starts.append(directions * np.sqrt(powersplit.blend_feasible(pattern, anchor, feasible))[..., None])
    starts = starts[:max(n_starts, 1)]
    best, best_score = None, -np.inf
    for index, w0 in enumerate(starts):
        run = _iterate(work, channels, layout, kind, w0, fallback, thresholds, max_outer, opts)
        score = run[4][-1] if run[4] else -np.inf
        if best is None or score > best_score + work.tolerance:
            best, best_score = run + (index,), score
    w, rho, psi_id, psi_eh, trace, status, iterations, residual, chosen = best
    alloc = ResourceAllocation(beamformers=w, split_ratios=rho)
    point = evaluate(params, channels, alloc, kind)
    return MisoSolveReport(
        allocation=alloc,
        objective=0.0 if status == INFEASIBLE else point.objective,
        objective_kind=kind,
        objective_trace=[v * bandwidth for v in trace],
        feasibility_residuals=feasibility_residuals(params, channels, alloc),
        iterations=iterations,
        status=status,
        seed=seed,
        wall_time=time.perf_counter() - start,
        rates=point.throughput_per_user,
        dc=point.dc_per_user,
        stationarity_residual=float(residual) * bandwidth,
        psi_eh=psi_eh,
        psi_id=psi_id,
        message=f"best of {len(starts)} starts: start {chosen}",
    )


def _directions(w, fallback):
    """Unit beam directions; streams with zero power keep the fallback direction."""
    norm = np.linalg.norm(w, axis=-1, keepdims=True)
    return np.where(norm > 1e-150, w / np.where(norm > 1e-150, norm, 1.0), fallback)


def power_split_model(params, channels, directions):
    """Joint (p, rho) structure of the MISO model for fixed unit beam directions."""
    n = params.n_subcarriers
    ov = _overhead(params, channels)
    gains = np.abs(beam_products(channels, directions)) ** 2  # (J, J, N)
    cross = np.array(gains)
    idx = np.arange(params.n_receivers)
    cross[idx, idx, :] = 0.0
    return powersplit.PowerSplitModel(
        own=gains[idx, idx, :],
        cross=cross,
        e0=miso_cp_term(params, channels) / ov + params.antenna_noise,
        e1=n / ov * gains.reshape(params.n_receivers, -1),
        n_subcarriers=n,
        antenna_noise=params.antenna_noise,
        conversion_noise=params.conversion_noise,
        kappa=params.bandwidth / ov,
        budget=params.power_budget,
    )


def solve_fair_miso(params, channels, max_outer=MAX_OUTER, seed=None, kernel_opts=None,
                    n_starts=N_STARTS):
    """Maximize the minimum user throughput over beamformers and splitting ratios.

    Runs from ``n_starts`` power patterns along the initial beam directions
    and keeps the best end point.
    """
    return _alternate(params, channels, "fair", max_outer, seed, kernel_opts, n_starts)


def solve_sum_miso(params, channels, max_outer=MAX_OUTER, seed=None, kernel_opts=None,
                   n_starts=N_STARTS):
    """Maximize the total throughput over beamformers and splitting ratios."""
    return _alternate(params, channels, "sum", max_outer, seed, kernel_opts, n_starts)
