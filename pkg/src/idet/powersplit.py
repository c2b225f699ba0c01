"""Joint power and splitting-ratio step shared by the SISO and MISO solvers.

With fixed beam directions both models have the same structure in the
per-stream powers ``p`` and the splitting ratios ``rho`` (``s = 1 - rho``)::

    SINR[j, k] = N s_j g[j, k] p[j, k] / (N s_j I[j, k](p) + s_j sigma0 + sigma_cov)
    P_EH[j]    = rho_j * (e0[j] + e1[j] . p)

where ``I[j, k](p) = sum_b c[j, b, k] p[b, k]``.  The surrogate below is
jointly concave in ``(p, rho)``: the quadratic transform handles the ratio,
``sqrt(s p)`` is a geometric mean, and the bilinear ``s * I`` is bounded by
``(tau s**2 + I**2 / tau) / 2`` which is tight at ``tau = I / s``.  The
harvested-power requirement ``rho_j (e0 + e1 . p) >= thr`` is imposed as
``log rho_j + log(e0 + e1 . p) >= log thr``, which is concave.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel

LN2 = np.log(2.0)


@dataclass
class PowerSplitModel:
    own: np.ndarray      # (J, N) signal gains
    cross: np.ndarray    # (J, J, N) interference gains, zero diagonal
    e0: np.ndarray       # (J,) power-independent harvested term at rho = 1
    e1: np.ndarray       # (J, J*N) harvested gain per unit power at rho = 1
    n_subcarriers: int
    antenna_noise: float
    conversion_noise: float
    kappa: float         # 1 / (N + L - 1)
    budget: float

    @property
    def shape(self):
        return self.own.shape

    def interference(self, powers):
        return np.einsum("abk,bk->ak", self.cross, powers)

    def sinr(self, powers, rho):
        n = self.n_subcarriers
        s = (1.0 - rho)[:, None]
        signal = n * s * self.own * powers
        denom = n * s * self.interference(powers) + s * self.antenna_noise + self.conversion_noise
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(signal > 0, signal / denom, 0.0)

    def rates(self, powers, rho):
        return self.kappa * np.sum(np.log2(1.0 + self.sinr(powers, rho)), axis=1)

    def harvested(self, powers, rho):
        return rho * (self.e0 + self.e1 @ powers.reshape(-1))

    def auxiliaries(self, powers, rho):
        """Closed-form ``psi`` and ``tau`` making the surrogate tight."""
        n = self.n_subcarriers
        s = (1.0 - rho)[:, None]
        inter = self.interference(powers)
        denom = n * s * inter + s * self.antenna_noise + self.conversion_noise
        psi = np.sqrt(n * s * self.own * np.maximum(powers, 0.0)) / denom
        s_ref = np.where(s > 1e-3, s, 1.0)
        tau = np.maximum(inter, 1e-12) / s_ref
        return psi, tau


def _surrogate_terms(model, x, psi, tau):
    J, N = model.shape
    p = x[: J * N].reshape(J, N)
    s = 1.0 - x[J * N:]
    if np.any(p < 0) or np.any(s <= 0):
        return None
    n = model.n_subcarriers
    amp = 2.0 * psi * np.sqrt(n * model.own)
    c = psi**2 * n
    inter = model.interference(p)
    f = np.sqrt(s[:, None] * p)
    u = (amp * f - 0.5 * c * (tau * s[:, None] ** 2 + inter**2 / tau)
         - psi**2 * (s[:, None] * model.antenna_noise + model.conversion_noise))
    one_u = 1.0 + u
    if np.any(one_u <= 0) or not np.all(np.isfinite(one_u)):
        return None
    return p, s, amp, c, inter, f, one_u


def _rate_values(model, x, psi, tau):
    """Surrogate rates over ``x = [p (J*N), rho (J)]``, or None outside the domain."""
    terms = _surrogate_terms(model, x, psi, tau)
    if terms is None:
        return None
    return model.kappa / LN2 * np.sum(np.log(terms[-1]), axis=1)


def _rate_derivatives(model, x, psi, tau):
    """Surrogate rates with gradients (J, dim) and Hessians (J, dim, dim), or None."""
    terms = _surrogate_terms(model, x, psi, tau)
    if terms is None:
        return None
    p, s, amp, c, inter, f, one_u = terms
    J, N = model.shape
    rates = model.kappa / LN2 * np.sum(np.log(one_u), axis=1)

    live = (amp > 0) & (f > 0)
    safe_f = np.where(live, f, 1.0)
    sc = s[:, None]
    f_s = np.where(live, p / (2.0 * safe_f), 0.0)
    f_p = np.where(live, sc / (2.0 * safe_f), 0.0)
    f_ss = np.where(live, -(p**2) / (4.0 * safe_f**3), 0.0)
    f_pp = np.where(live, -(sc**2) / (4.0 * safe_f**3), 0.0)
    f_sp = np.where(live, 1.0 / (4.0 * safe_f), 0.0)

    u_rho = -(amp * f_s - c * tau * sc - psi**2 * model.antenna_noise)
    u_rr = amp * f_ss - c * tau
    w = model.kappa / (LN2 * one_u)
    v = w / one_u

    jj, kk = np.arange(J), np.arange(N)
    # E[j, k, b*N + k] = cross[j, b, k]: how p[b, k] enters receiver j's interference on k
    E = np.zeros((J, N, J, N))
    E[:, kk, :, kk] = np.transpose(model.cross, (2, 0, 1))
    E = np.concatenate([E.reshape(J, N, J * N), np.zeros((J, N, J))], axis=2)
    # du/dp and du/drho for each (j, k)
    G = -(c * inter / tau)[:, :, None] * E
    G[jj[:, None], kk[None, :], jj[:, None] * N + kk[None, :]] += amp * f_p
    G[jj[:, None], kk[None, :], J * N + jj[:, None]] = u_rho

    grad = np.einsum("jk,jka->ja", w, G)
    hess = (-np.einsum("jk,jka,jkb->jab", v, G, G)
            - np.einsum("jk,jka,jkb->jab", c / tau * w, E, E))
    own = jj[:, None] * N + kk[None, :]
    rho_idx = J * N + jj
    hess[jj[:, None], own, own] += w * amp * f_pp
    hess[jj, rho_idx, rho_idx] += np.sum(w * u_rr, axis=1)
    mixed = -w * amp * f_sp
    hess[jj[:, None], own, rho_idx[:, None]] += mixed
    hess[jj[:, None], rho_idx[:, None], own] += mixed
    return rates, grad, hess


def _harvest_values(model, x, thresholds, active):
    J, N = model.shape
    idx = np.flatnonzero(active)
    rho = x[J * N + idx]
    energy = model.e0[idx] + model.e1[idx] @ x[: J * N]
    ok = (rho > 0) & (energy > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.log(rho) + np.log(energy) - np.log(thresholds[idx])
    return np.where(ok, vals, -np.inf)


def _harvest_constraints(model, x, thresholds, active):
    J, N = model.shape
    dim = J * N + J
    p = x[: J * N]
    idx = np.flatnonzero(active)
    vals = np.empty(len(idx))
    jac = np.zeros((len(idx), dim))
    hess = np.zeros((len(idx), dim, dim))
    for row, j in enumerate(idx):
        rho = x[J * N + j]
        energy = model.e0[j] + model.e1[j] @ p
        if rho <= 0 or energy <= 0:
            vals[row] = -np.inf
            continue
        vals[row] = np.log(rho) + np.log(energy) - np.log(thresholds[j])
        jac[row, : J * N] = model.e1[j] / energy
        jac[row, J * N + j] = 1.0 / rho
        hess[row, : J * N, : J * N] = -np.outer(model.e1[j], model.e1[j]) / energy**2
        hess[row, J * N + j, J * N + j] = -1.0 / rho**2
    return vals, jac, hess


def build_program(model, psi, tau, kind, thresholds):
    """Concave program in ``[p, rho]`` (plus an epigraph variable for ``fair``)."""
    J, N = model.shape
    dim = J * N + J
    active = np.asarray(thresholds) > 0
    lower = np.zeros(dim)
    upper = np.concatenate([np.full(J * N, np.inf), np.ones(J)])
    budget_row = np.concatenate([np.ones(J * N), np.zeros(J)])[None, :]

    cache = {}

    def rates_at(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = _rate_derivatives(model, z, psi, tau)
        return cache[key]

    if kind == "sum":
        def objective(x):
            out = rates_at(x)
            if out is None:
                return -np.inf, np.zeros(dim), np.zeros((dim, dim))
            r, g, h = out
            return r.sum(), g.sum(axis=0), h.sum(axis=0)

        def objective_value(x):
            r = _rate_values(model, x, psi, tau)
            return -np.inf if r is None else r.sum()

        def harvest(x):
            return _harvest_constraints(model, x, thresholds, active)

        def harvest_values(x):
            return _harvest_values(model, x, thresholds, active)

        has_eh = bool(np.any(active))
        return kernel.ConcaveProgram(
            objective=objective, n_vars=dim, constraints=harvest if has_eh else None,
            lower=lower, upper=upper, budget_matrix=budget_row, budget_rhs=[model.budget],
            objective_value=objective_value, constraint_values=harvest_values if has_eh else None,
        )

    def objective(x):
        g = np.zeros(dim + 1)
        g[-1] = 1.0
        return x[-1], g, np.zeros((dim + 1, dim + 1))

    def constraints(x):
        z = x[:-1]
        vals = np.full(J, -np.inf)
        jac = np.zeros((J, dim + 1))
        jac[:, -1] = -1.0
        hess = np.zeros((J, dim + 1, dim + 1))
        out = rates_at(z)
        if out is not None:
            r, g, h = out
            vals = r - x[-1]
            jac[:, :-1] = g
            hess[:, :-1, :-1] = h
        if np.any(active):
            hv, hj, hh = _harvest_constraints(model, z, thresholds, active)
            m = len(hv)
            hj_full = np.zeros((m, dim + 1))
            hj_full[:, :-1] = hj
            hh_full = np.zeros((m, dim + 1, dim + 1))
            hh_full[:, :-1, :-1] = hh
            vals = np.concatenate([vals, hv])
            jac = np.vstack([jac, hj_full])
            hess = np.concatenate([hess, hh_full])
        return vals, jac, hess

    def constraint_values(x):
        z = x[:-1]
        r = _rate_values(model, z, psi, tau)
        vals = np.full(J, -np.inf) if r is None else r - x[-1]
        if np.any(active):
            vals = np.concatenate([vals, _harvest_values(model, z, thresholds, active)])
        return vals

    return kernel.ConcaveProgram(
        objective=objective, n_vars=dim + 1, constraints=constraints,
        objective_value=lambda x: x[-1], constraint_values=constraint_values,
        lower=np.append(lower, -np.inf), upper=np.append(upper, np.inf),
        budget_matrix=np.hstack([budget_row, [[0.0]]]), budget_rhs=[model.budget],
    )


def _objective(rates, kind):
    return float(np.min(rates)) if kind == "fair" else float(np.sum(rates))


# largest first; entries pinned at a bound make the barrier crawl
INTERIOR_MARGINS = (1e-3, 1e-6, 1e-9)


def _interior_start(model, powers, rho, thresholds, margin=1e-9):
    """Nudge ``(p, rho)`` strictly inside the box, budget and harvested-power sets."""
    p = np.maximum(powers, 0.0)
    floor = margin * model.budget / p.size
    p = np.maximum(p, floor)
    total = p.sum()
    if total >= model.budget * (1.0 - margin):
        p = p * (model.budget * (1.0 - margin) / total)
    energy = model.e0 + model.e1 @ p.reshape(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = np.where(thresholds > 0, thresholds / energy, 0.0)
    lower = np.where(np.isfinite(lower), lower, 1.0)
    r = np.clip(rho, margin, 1.0 - margin)
    # just past the harvested-power bound, not a jump across the interval
    bumped = np.minimum(lower + margin * (1.0 - lower), 0.5 * (np.minimum(lower, 1.0) + 1.0))
    r = np.where(r <= lower, bumped, r)
    r = np.where(r <= 0.0, 1e-6, r)
    return p, r


def _start_point(model, powers, rho, thresholds, psi, tau):
    """Largest-margin interior start where the surrogate with ``psi, tau`` is defined."""
    active = thresholds > 0
    for margin in INTERIOR_MARGINS:
        p, r = _interior_start(model, powers, rho, thresholds, margin)
        z = np.concatenate([p.reshape(-1), r])
        if _rate_values(model, z, psi, tau) is None:
            continue
        if np.all(_harvest_values(model, z, thresholds, active) > 0):
            return p, r
    return p, r


def joint_step(model, powers, rho, kind, thresholds, opts, psi=None, tau=None):
    """One minorize-maximize step in ``(p, rho)``; never lowers the true objective.

    ``psi`` and ``tau`` default to their closed-form values at the current
    point.  Returns ``(powers, rho, kernel_solution)``.
    """
    J, N = model.shape
    if psi is None or tau is None:
        psi_c, tau_c = model.auxiliaries(powers, rho)
        psi = psi_c if psi is None else psi
        tau = tau_c if tau is None else tau
    thresholds = np.asarray(thresholds, dtype=float)
    start_p, start_rho = _start_point(model, powers, rho, thresholds, psi, tau)
    z0 = np.concatenate([start_p.reshape(-1), start_rho])
    out = _rate_derivatives(model, z0, psi, tau)
    if out is None:
        # the supplied auxiliaries leave the surrogate domain here; use the tight ones
        psi, tau = model.auxiliaries(start_p, start_rho)
        out = _rate_derivatives(model, z0, psi, tau)
    program = build_program(model, psi, tau, kind, thresholds)
    x0 = z0
    if kind == "fair":
        base = float(np.min(out[0])) if out is not None else -1.0
        x0 = np.append(z0, base - 0.1 * (1.0 + abs(base)))
    sol = kernel.solve(program, x0, opts)
    if sol.status == kernel.INFEASIBLE:
        return powers, rho, sol
    cand_p = np.maximum(sol.x[: J * N].reshape(J, N), 0.0)
    cand_rho = np.clip(sol.x[J * N: J * N + J], 0.0, 1.0)
    feasible = np.all(model.harvested(cand_p, cand_rho) >= np.asarray(thresholds) * (1 - 1e-12))
    feasible &= cand_p.sum() <= model.budget * (1 + 1e-12)
    before = _objective(model.rates(powers, rho), kind)
    if feasible and _objective(model.rates(cand_p, cand_rho), kind) >= before:
        return cand_p, cand_rho, sol
    return powers, rho, sol


def orthogonal_pattern(own, budget):
    """Power pattern giving each subcarrier to one receiver, uniform over subcarriers.

    Receivers take turns claiming their strongest remaining subcarrier, so
    every receiver gets at least one when ``N >= J``.
    """
    n_rx, n_sc = own.shape
    free = np.ones(n_sc, dtype=bool)
    pattern = np.zeros((n_rx, n_sc))
    turn = 0
    while free.any():
        j = turn % n_rx
        k = int(np.argmax(np.where(free, own[j], -np.inf)))
        pattern[j, k] = budget / n_sc
        free[k] = False
        turn += 1
    return pattern


def start_patterns(own, budget, n_starts, seed=None):
    """Initial power patterns: uniform, orthogonal, then seeded random draws."""
    n_rx, n_sc = own.shape
    uniform = np.full((n_rx, n_sc), budget / (n_rx * n_sc))
    starts = [uniform]
    if n_starts > 1 and n_rx > 1:
        # a sliver of uniform power keeps every entry strictly positive
        starts.append(0.98 * orthogonal_pattern(own, budget) + 0.02 * uniform)
    rng = np.random.default_rng(seed)
    while len(starts) < n_starts:
        starts.append(rng.dirichlet(np.ones(n_rx * n_sc)).reshape(n_rx, n_sc) * budget)
    return starts[:max(n_starts, 1)]


def blend_feasible(candidate, anchor, feasible, steps=40):
    """Point on the segment from ``anchor`` towards ``candidate`` as far as ``feasible`` allows.

    ``anchor`` must be feasible and the feasible set convex along the segment.
    """
    if feasible(candidate):
        return candidate
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if feasible(anchor + mid * (candidate - anchor)):
            lo = mid
        else:
            hi = mid
    return anchor + lo * (candidate - anchor)
