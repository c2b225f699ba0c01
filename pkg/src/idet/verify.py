"""Self-verification suites behind ``idet verify``.

Each suite returns ``{"suite", "pass", "checks": [...]}``.  Reports carry no
timing information, so the same seed always yields byte-identical JSON.
"""

from __future__ import annotations

import json

import numpy as np

from . import miso, oracle, siso
from .channels import generate_channels
from .model import (
    ResourceAllocation,
    SystemParams,
    dc_output,
    eh_power_bound_miso,
    eh_power_siso,
    eh_power_threshold,
    parseval_check,
    sinr_miso,
    sinr_siso,
    throughput_miso,
    throughput_siso,
)
from .report import INFEASIBLE
from .transform import (
    SurrogateState,
    gamma_hat_miso,
    gamma_tilde_siso,
    p_hat_eh_miso,
    psi_eh_star_full,
    psi_id_star,
    psi_star_siso,
    r_hat_miso,
    r_tilde_siso,
)

SUITES = ("model", "transform", "solvers", "oracle")
DEFAULT_BLOCKS = 100_000


def _check(name, passed, **values):
    out = {"name": name, "pass": bool(passed)}
    for key, value in values.items():
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        out[key] = value
    return out


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))) if a.size else 0.0


def random_instance(rng, n_subcarriers, n_receivers, n_antennas=1, max_length=1,
                    dc_requirement=0.0, beams=False, **fields):
    """A random system, channel set and feasible-looking allocation drawn from ``rng``."""
    params = SystemParams(n_subcarriers=n_subcarriers, n_receivers=n_receivers,
                          n_antennas=n_antennas, dc_requirements=(dc_requirement,) * n_receivers,
                          **fields)
    channels = generate_channels(n_subcarriers, n_receivers, n_antennas, max_length,
                                 float(rng.uniform(0, 1)), int(rng.integers(2**63)))
    rho = rng.uniform(0.05, 0.95, n_receivers)
    if beams:
        w = rng.standard_normal((n_receivers, n_subcarriers, n_antennas)) \
            + 1j * rng.standard_normal((n_receivers, n_subcarriers, n_antennas))
        w *= np.sqrt(params.power_budget / np.sum(np.abs(w) ** 2))
        alloc = ResourceAllocation(beamformers=w, split_ratios=rho)
    else:
        p = rng.dirichlet(np.ones(n_receivers * n_subcarriers)) * params.power_budget
        alloc = ResourceAllocation(powers=p.reshape(n_receivers, n_subcarriers), split_ratios=rho)
    return params, channels, alloc


def _dims(rng, n_max=8, j_max=3):
    n = int(rng.integers(1, n_max + 1))
    return n, int(rng.integers(1, j_max + 1)), int(rng.integers(1, n + 1))


def model_suite(seed, n_instances=1000):
    rng = np.random.default_rng([seed, 0])
    checks = []

    worst = 0.0
    for _ in range(n_instances):
        n, j, length = _dims(rng)
        ch = generate_channels(n, j, 1, length, 0.5, int(rng.integers(2**63)))
        freq = np.sum(np.abs(ch.freq) ** 2, axis=-1)
        time = np.sum(np.abs(ch.taps) ** 2, axis=-1)
        worst = max(worst, float(np.max(np.abs(freq - time) / time)))
    checks.append(_check("fft_energy_consistency", worst < 1e-10, max_rel_residual=worst))

    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 65))
        s = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        ok, res = parseval_check(s, np.fft.ifft(s) * np.sqrt(n))
        worst = max(worst, res)
    checks.append(_check("parseval", worst < 1e-10, max_rel_residual=worst))

    worst = 0.0
    for _ in range(n_instances):
        params = SystemParams(n_subcarriers=1, diode_k0=float(rng.uniform(0, 0.1)),
                              diode_k1=float(rng.uniform(0, 2)), diode_k2=float(rng.uniform(0.01, 2)))
        target = float(params.diode_k0 + rng.uniform(0, 5))
        back = float(dc_output(params, eh_power_threshold(params, target)))
        worst = max(worst, abs(back - target) / max(abs(target), 1e-300))
    checks.append(_check("dc_inversion", worst < 1e-9, max_rel_residual=worst))

    worst = 0.0
    for _ in range(200):
        n, j, length = _dims(rng)
        params, ch, alloc = random_instance(rng, n, j, 1, length)
        beams = ResourceAllocation(beamformers=np.sqrt(alloc.powers)[..., None],
                                   split_ratios=alloc.split_ratios)
        worst = max(worst, _rel(sinr_miso(params, ch, beams), sinr_siso(params, ch, alloc)),
                    _rel(throughput_miso(params, ch, beams), throughput_siso(params, ch, alloc)))
    checks.append(_check("miso_reduces_to_siso", worst < 1e-9, max_rel_residual=worst))

    ok = True
    for _ in range(200):
        n, j, length = _dims(rng)
        params, ch, alloc = random_instance(rng, n, j, 1, length)
        ok &= bool(np.all(eh_power_siso(params, ch, alloc) >= 0))
        ok &= bool(np.all(throughput_siso(params, ch, alloc) >= 0))
    checks.append(_check("nonnegative_rates_and_power", ok))
    return _suite("model", checks)


def transform_suite(seed, n_instances=1000):
    rng = np.random.default_rng([seed, 1])
    gamma_res = rate_res = 0.0
    minorant = True
    for _ in range(n_instances):
        n, j, length = _dims(rng)
        params, ch, alloc = random_instance(rng, n, j, 1, length)
        state = SurrogateState(psi_siso=psi_star_siso(params, ch, alloc))
        gamma_res = max(gamma_res, _rel(gamma_tilde_siso(params, ch, alloc, state),
                                        sinr_siso(params, ch, alloc)))
        rate_res = max(rate_res, _rel(r_tilde_siso(params, ch, alloc, state),
                                      throughput_siso(params, ch, alloc)))
        other = SurrogateState(psi_siso=state.psi_siso * rng.uniform(0.5, 1.5, state.psi_siso.shape))
        minorant &= bool(np.all(gamma_tilde_siso(params, ch, alloc, other)
                                <= sinr_siso(params, ch, alloc) * (1 + 1e-12) + 1e-15))
    checks = [
        _check("siso_sinr_tight", gamma_res < 1e-9, max_rel_residual=gamma_res),
        _check("siso_rate_tight", rate_res < 1e-9, max_rel_residual=rate_res),
        _check("siso_minorant", minorant),
    ]
    gamma_res = rate_res = eh_res = 0.0
    for _ in range(n_instances):
        n, j, length = _dims(rng)
        m = int(rng.integers(1, 5))
        params, ch, alloc = random_instance(rng, n, j, m, length, beams=True)
        state = SurrogateState(psi_id=psi_id_star(params, ch, alloc),
                               psi_eh=psi_eh_star_full(ch, alloc))
        gamma_res = max(gamma_res, _rel(gamma_hat_miso(params, ch, alloc, state),
                                        sinr_miso(params, ch, alloc)))
        rate_res = max(rate_res, _rel(r_hat_miso(params, ch, alloc, state),
                                      throughput_miso(params, ch, alloc)))
        eh_res = max(eh_res, _rel(p_hat_eh_miso(params, ch, alloc, state),
                                  eh_power_bound_miso(params, ch, alloc)))
    checks += [
        _check("miso_sinr_tight", gamma_res < 1e-9, max_rel_residual=gamma_res),
        _check("miso_rate_tight", rate_res < 1e-9, max_rel_residual=rate_res),
        _check("miso_eh_tight", eh_res < 1e-9, max_rel_residual=eh_res),
    ]
    return _suite("transform", checks)


def _trace_ok(report, bound=None, tol=1e-8):
    trace = np.asarray(report.objective_trace, float)
    steps = np.diff(trace)
    monotone = bool(np.all(steps >= -tol * np.maximum(1.0, np.abs(trace[:-1])))) if steps.size else True
    bounded = True if bound is None else bool(np.all(trace <= bound * (1 + 1e-9)))
    return monotone, bounded


def solvers_suite(seed, n_instances=3):
    rng = np.random.default_rng([seed, 2])
    checks = []
    for i in range(n_instances):
        dc = float(rng.uniform(0.0, 0.3))
        params, ch, _ = random_instance(rng, 4, 2, 1, 2, dc_requirement=dc)
        for kind, fn in (("fair", siso.solve_fair_siso), ("sum", siso.solve_sum_siso)):
            rep = fn(params, ch, seed=seed)
            if rep.status == INFEASIBLE:
                checks.append(_check(f"siso_{kind}[{i}]", True, status=rep.status))
                continue
            bound = siso.upper_bound_rates(params, ch)
            bound = float(bound.min() if kind == "fair" else bound.sum())
            monotone, bounded = _trace_ok(rep, bound)
            dc_ok = bool(np.all(rep.dc >= np.asarray(params.dc_requirements) - 1e-6))
            checks.append(_check(f"siso_{kind}[{i}]", monotone and bounded and dc_ok
                                 and rep.iterations < siso.MAX_OUTER, status=rep.status,
                                 objective=rep.objective, iterations=rep.iterations,
                                 monotone=monotone, bounded=bounded, dc_ok=dc_ok))

    for i in range(max(1, n_instances // 2)):
        params, ch, _ = random_instance(rng, 2, 2, 1, 1, dc_requirement=float(rng.uniform(0, 0.2)))
        grid = oracle.grid_search_siso(params, ch, resolution=21)
        for kind, fn in (("fair", siso.solve_fair_siso), ("sum", siso.solve_sum_siso)):
            rep = fn(params, ch, seed=seed)
            if grid[kind] is None:
                checks.append(_check(f"grid_audit_{kind}[{i}]", True, grid=None, status=rep.status))
                continue
            ok = rep.status != INFEASIBLE and rep.objective >= grid[kind] - 2e-2
            checks.append(_check(f"grid_audit_{kind}[{i}]", ok, objective=rep.objective,
                                 grid=grid[kind]))

    for i in range(max(1, n_instances // 2)):
        params, ch, _ = random_instance(rng, 4, 2, 1, 2, dc_requirement=float(rng.uniform(0, 0.2)))
        a = siso.solve_fair_siso(params, ch, seed=seed)
        b = miso.solve_fair_miso(params, ch, seed=seed)
        if a.status == INFEASIBLE or b.status == INFEASIBLE:
            ok = a.status == b.status
            checks.append(_check(f"miso_m1[{i}]", ok, siso=a.status, miso=b.status))
            continue
        rel = abs(a.objective - b.objective) / max(abs(a.objective), 1e-12)
        checks.append(_check(f"miso_m1[{i}]", rel < 1e-3, siso=a.objective, miso=b.objective,
                             rel_gap=rel))
    return _suite("solvers", checks)


def oracle_suite(seed, n_blocks=DEFAULT_BLOCKS):
    params = SystemParams(n_subcarriers=8, n_receivers=2)
    ch = generate_channels(8, 2, 1, 3, 0.5, seed)
    alloc = oracle.full_power_allocation(params)
    trace = oracle.simulate_blocks(params, ch, alloc, n_blocks, seed=seed)
    energy = oracle.energy_checks(params, ch, alloc, trace)
    gauss = oracle.gaussianity_test(trace, params, alloc)
    indep = oracle.independence_test(trace)
    control = oracle.simulate_blocks(params, ch, alloc, n_blocks, seed=seed, block_correlation=1.0)
    rejected = not oracle.independence_test(control)["pass"]
    checks = []
    for report in (energy, gauss, indep):
        failed = [c["statistic"] for c in report["checks"] if not c["pass"]]
        checks.append(_check(report["test"], report["pass"], n_checks=len(report["checks"]),
                             failed=failed))
    checks.append(_check("correlated_control_rejected", rejected))
    checks.append(_check("energy_detail", energy["pass"], records=energy["checks"]))
    return _suite("oracle", checks)


def _suite(name, checks):
    return {"suite": name, "pass": all(c["pass"] for c in checks), "checks": checks}


def run_suite(name, seed=0, n_blocks=DEFAULT_BLOCKS):
    """Run one suite (or ``"all"``) and return the report dict."""
    if name == "all":
        parts = [run_suite(s, seed, n_blocks) for s in SUITES]
        return {"suite": "all", "seed": seed, "pass": all(p["pass"] for p in parts), "suites": parts}
    if name == "model":
        out = model_suite(seed)
    elif name == "transform":
        out = transform_suite(seed)
    elif name == "solvers":
        out = solvers_suite(seed)
    elif name == "oracle":
        out = oracle_suite(seed, n_blocks)
        out["blocks"] = n_blocks
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
    out["seed"] = seed
    return out


def dumps(report):
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else repr(v)
    if isinstance(value, np.integer):
        return int(value)
    return value
