"""Ground-truth oracles: a time-domain link simulator, statistical tests and grid searches.

The simulator builds each OFDM block as ``x = [s_0 .. s_{N-1}, s_0 .. s_{L-2}]``
(the cyclic extension is appended), convolves the whole stream with the
taps, and splits every received block of ``N + L - 1`` samples into the
first ``L - 1`` samples (which carry the tail of the previous block) and
the window ``[L - 1, N + L - 2]`` that the decoder transforms.

Random numbers come from Philox generators seeded by ``SeedSequence``
children, one per run of ``CHUNK`` blocks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .model import (
    ResourceAllocation,
    _overhead,
    cp_energy_siso,
    eh_power_bound_miso,
    eh_thresholds,
    interference_gains,
    miso_cp_term,
    ofdm_energy_siso,
)

CHUNK = 4096


def _rng(seed, index):
    child = np.random.SeedSequence(seed).spawn(index + 1)[index]
    return np.random.Generator(np.random.Philox(child))


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _idft(freq):
    n = freq.shape[-1]
    return np.fft.ifft(freq, axis=-1) * np.sqrt(n)


def _dft(time):
    n = time.shape[-1]
    return np.fft.fft(time, axis=-1) / np.sqrt(n)


@dataclass(frozen=True, eq=False)
class TimeDomainTrace:
    """Simulated blocks; axis 0 indexes blocks, block ``b`` follows block ``b - 1``.

    ``symbols`` (B, J, N) are per-stream frequency symbols, ``time_symbols``
    (B, M, N) the per-antenna time samples, ``transmit`` (B, M, N+L-1) the
    blocks with cyclic extension, ``received`` (B, J, N+L-1) the receiver
    streams including noise and ``noise`` the antenna-noise part of it.
    """

    symbols: np.ndarray
    time_symbols: np.ndarray
    transmit: np.ndarray
    received: np.ndarray
    noise: np.ndarray
    n_subcarriers: int
    max_length: int
    seed: int

    @property
    def n_blocks(self):
        return self.received.shape[0]

    def cp_samples(self, j):
        return self.received[:, j, : self.max_length - 1]

    def window(self, j):
        return self.received[:, j, self.max_length - 1:]


def _stream_symbols(params, alloc, rng, shape):
    """Frequency-domain stream symbols; SISO streams carry power p, MISO unit power."""
    z = _cn(rng, shape)
    if alloc.beamformers is None:
        return z * np.sqrt(np.maximum(alloc.powers, 0.0))[None]
    return z


def _antenna_symbols(alloc, symbols):
    """Per-antenna frequency samples ``X[b, m, k]``."""
    if alloc.beamformers is None:
        return symbols.sum(axis=1, keepdims=True)
    return np.einsum("jkm,bjk->bmk", alloc.beamformers, symbols)


def _link_output(taps, transmit, previous_tail):
    """Convolve consecutive blocks with per-antenna taps, block by block.

    ``taps`` (M, L); ``transmit`` (B, M, T); ``previous_tail`` (M, L-1) holds
    the last samples of the block preceding the first one.
    """
    n_blocks, n_ant, length = transmit.shape
    n_taps = taps.shape[1]
    tails = np.concatenate([previous_tail[None], transmit[:-1, :, length - (n_taps - 1):]], axis=0) \
        if n_taps > 1 else np.zeros((n_blocks, n_ant, 0), dtype=complex)
    extended = np.concatenate([tails, transmit], axis=2)  # (B, M, L-1+T)
    out = np.zeros((n_blocks, length), dtype=complex)
    for m in range(n_ant):
        for l in range(n_taps):
            if taps[m, l] != 0:
                out += taps[m, l] * extended[:, m, n_taps - 1 - l: n_taps - 1 - l + length]
    return out


def simulate_blocks(params, channels, alloc, n_blocks, seed=0, block_correlation=0.0,
                    components=False):
    """Simulate ``n_blocks`` consecutive OFDM blocks at every receiver.

    A leading block is simulated and discarded so every kept block has a real
    predecessor.  ``block_correlation`` mixes each block's symbols with the
    previous block's (``c * prev + sqrt(1 - c**2) * fresh``); it exists only to
    build correlated controls for :func:`independence_test`.  With
    ``components=True`` a dict of the signal, interference and noise parts of
    the post-DFT decoder samples is returned alongside the trace.
    """
    if int(n_blocks) < 2:
        raise ConfigError("simulation needs at least two blocks")
    n = params.n_subcarriers
    taps = channels.taps
    J, M, L = taps.shape
    if (J, n) != alloc.powers.shape:
        raise ConfigError("allocation shape does not match the system")
    total = int(n_blocks) + 1
    streams = []
    noises = []
    for c, startb in enumerate(range(0, total, CHUNK)):
        rng = _rng(seed, c)
        size = min(CHUNK, total - startb)
        streams.append(_stream_symbols(params, alloc, rng, (size, J, n)))
        noises.append(_cn(rng, (size, J, n + L - 1)) * np.sqrt(params.antenna_noise))
    symbols = np.concatenate(streams)
    noise = np.concatenate(noises)
    c = float(block_correlation)
    if c != 0.0:
        mixed = symbols.copy()
        for b in range(1, total):
            mixed[b] = c * mixed[b - 1] + np.sqrt(max(1.0 - c * c, 0.0)) * symbols[b]
        symbols = mixed

    def chain(sym):
        freq = _antenna_symbols(alloc, sym)                     # (B, M', N)
        time = _idft(freq)
        transmit = np.concatenate([time, time[..., : L - 1]], axis=2)
        received = np.empty((total, J, n + L - 1), dtype=complex)
        tap_rows = taps if alloc.beamformers is not None else taps[:, :1, :]
        for j in range(J):
            zero_tail = np.zeros((transmit.shape[1], L - 1), dtype=complex)
            received[:, j] = _link_output(tap_rows[j], transmit, zero_tail)
        return time, transmit, received

    time_symbols, transmit, clean = chain(symbols)
    received = clean + noise
    trace = TimeDomainTrace(
        symbols=symbols[1:], time_symbols=time_symbols[1:], transmit=transmit[1:],
        received=received[1:], noise=noise[1:], n_subcarriers=n, max_length=L, seed=seed,
    )
    if not components:
        return trace
    parts = {"signal": np.empty((total - 1, J, n), dtype=complex),
             "interference": np.empty((total - 1, J, n), dtype=complex)}
    for j in range(J):
        own = np.zeros_like(symbols)
        own[:, j] = symbols[:, j]
        _, _, rx_own = chain(own)
        window_all = _dft(clean[1:, j, L - 1:])
        window_own = _dft(rx_own[1:, j, L - 1:])
        parts["signal"][:, j] = window_own
        parts["interference"][:, j] = window_all - window_own
    parts["noise"] = _dft(noise[1:, :, L - 1:])
    return trace, parts


def _mean_se(x):
    """Sample mean and a standard error that allows for lag-1 dependence between blocks."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    mean = x.mean(axis=0)
    d = x - mean
    var = np.mean(d * d, axis=0)
    lag = np.mean(d[1:] * d[:-1], axis=0) if n > 1 else 0.0
    eff = np.maximum(var + 2.0 * lag, var * 1e-3)
    return mean, np.sqrt(eff / n)


def check_record(statistic, estimate, stderr, threshold, passed, **extra):
    record = {
        "statistic": statistic,
        "estimate": float(estimate),
        "stderr": float(stderr),
        "threshold": float(threshold),
        "pass": bool(passed),
    }
    record.update(extra)
    return record


def empirical_energies(trace, j):
    """Per-block received energies in the CP and the decoder window.

    Returns ``(E_cp, E_os, se_cp, se_os)``.
    """
    cp = np.sum(np.abs(trace.cp_samples(j)) ** 2, axis=1)
    os_ = np.sum(np.abs(trace.window(j)) ** 2, axis=1)
    m_cp, se_cp = _mean_se(cp)
    m_os, se_os = _mean_se(os_)
    return float(m_cp), float(m_os), float(se_cp), float(se_os)


def _symbol_covariance(params, alloc):
    """Covariance ``C[a, b] = E s_a conj(s_b)`` of one block's time samples, per antenna."""
    n = params.n_subcarriers
    if alloc.beamformers is None:
        spectrum = alloc.powers.sum(axis=0)[None, :]
    else:
        w = alloc.beamformers
        spectrum = np.einsum("jkm,jkq->mqk", w, np.conj(w))
        spectrum = np.stack([spectrum[m, m].real for m in range(w.shape[2])])
    idx = np.arange(n)
    phase = np.exp(2j * np.pi * np.outer(idx, idx) / n)  # [a, k]
    return np.einsum("ak,mk,bk->mab", phase, spectrum, np.conj(phase)) / n


def exact_cp_energy_siso(params, channels, alloc, j=None):
    """Expected CP energy for an arbitrary SISO power allocation.

    Accounts for the correlation of the time samples when the spectrum is
    not flat, so it equals the closed form only at uniform full power.
    """
    n = params.n_subcarriers
    taps = channels.taps[:, 0, :]
    J, L = taps.shape
    cov = _symbol_covariance(params, alloc)[0]
    out = np.zeros(J)
    for jj in range(J):
        h = taps[jj]
        total = 0.0
        for nn in range(L - 1):
            cur = [(l, nn - l) for l in range(L) if nn - l >= 0]
            prev = [(l, (n + L - 1 + nn - l) - n) for l in range(L) if nn - l < 0]
            for group in (cur, prev):
                for l1, a in group:
                    for l2, b in group:
                        total += (h[l1] * np.conj(h[l2]) * cov[a % n, b % n]).real
            total += params.antenna_noise
        out[jj] = total
    return out if j is None else float(out[j])


def gaussianity_test(trace, params=None, alloc=None, expected_variance=None, antenna=0):
    """Per-index moment checks of the time-domain samples against a circular Gaussian.

    Mean within 4 SE of zero, variance within 3 SE of the expected value,
    excess kurtosis ``E|s|^4 / (E|s|^2)^2 - 2`` within 4 SE of zero.
    """
    s = trace.time_symbols[:, antenna, :]
    n_blocks, n = s.shape
    if expected_variance is None:
        if alloc is None:
            raise ValueError("need the allocation or the expected variance")
        expected_variance = float(np.real(np.trace(_symbol_covariance(params, alloc)[antenna])) / n)
    records = []
    for idx in range(n):
        x = s[:, idx]
        a = np.abs(x) ** 2
        m1 = a.mean()
        mean = x.mean()
        se_mean = np.sqrt(m1 / n_blocks) if m1 > 0 else 0.0
        records.append(check_record(
            f"mean[{idx}]", abs(mean), se_mean, 4.0 * se_mean,
            abs(mean) <= 4.0 * se_mean + 1e-300, index=idx))
        var_se = np.sqrt(np.var(a) / n_blocks)
        gap = abs(m1 - expected_variance)
        records.append(check_record(
            f"variance[{idx}]", m1, var_se, 3.0 * var_se,
            gap <= 3.0 * var_se + 1e-12 * max(expected_variance, 1.0), index=idx,
            expected=expected_variance))
        if m1 > 0:
            m2 = np.mean(a * a)
            kurt = m2 / m1**2 - 2.0
            infl = (a * a - m2) / m1**2 - 2.0 * m2 * (a - m1) / m1**3
            k_se = float(np.std(infl) / np.sqrt(n_blocks))
            records.append(check_record(
                f"excess_kurtosis[{idx}]", kurt, k_se, 4.0 * k_se,
                abs(kurt) <= 4.0 * k_se, index=idx))
        else:
            records.append(check_record(f"excess_kurtosis[{idx}]", 0.0, 0.0, 0.0, True, index=idx,
                                        note="degenerate at zero"))
    return _summarize("gaussianity", records)


def _cov_check(x, y, label, threshold=4.0, **extra):
    dx = x - x.mean()
    dy = y - y.mean()
    cov = np.mean(dx * np.conj(dy))
    se = np.sqrt(np.mean(np.abs(dx) ** 2 * np.abs(dy) ** 2) / x.shape[0])
    if se == 0:
        return check_record(label, abs(cov), 0.0, 0.0, True, **extra)
    return check_record(label, abs(cov), se, threshold * se, abs(cov) <= threshold * se, **extra)


def independence_test(trace, antenna=0, max_pairs=64, intra_block=True):
    """Cross-block and within-block covariance checks at 4 SE.

    Pairs ``(n1, n2)`` come from a regular subsample of the index grid.
    """
    s = trace.time_symbols[:, antenna, :]
    n = s.shape[1]
    step = max(1, int(np.ceil(n * n / max_pairs) ** 0.5))
    grid = list(range(0, n, step))
    records = []
    cur, prev = s[1:], s[:-1]
    for n1, n2 in itertools.product(grid, grid):
        records.append(_cov_check(cur[:, n1], prev[:, n2], f"cross_block[{n1},{n2}]", pair=[n1, n2]))
    if intra_block:
        for n1, n2 in itertools.product(grid, grid):
            if n1 < n2:
                records.append(_cov_check(s[:, n1], s[:, n2], f"within_block[{n1},{n2}]", pair=[n1, n2]))
    return _summarize("independence", records)


def _summarize(name, records):
    return {"test": name, "pass": all(r["pass"] for r in records), "checks": records}


def energy_checks(params, channels, alloc, trace, threshold=3.0):
    """Compare simulated CP and window energies with the closed forms (SISO)."""
    records = []
    cp_closed = cp_energy_siso(params, channels)
    os_closed = ofdm_energy_siso(params, channels, alloc)
    cp_exact = exact_cp_energy_siso(params, channels, alloc)
    for j in range(params.n_receivers):
        e_cp, e_os, se_cp, se_os = empirical_energies(trace, j)
        records.append(check_record(
            f"cp_energy[{j}]", e_cp, se_cp, threshold * se_cp,
            abs(e_cp - cp_closed[j]) <= threshold * se_cp + 1e-12, expected=float(cp_closed[j]),
            exact=float(cp_exact[j])))
        records.append(check_record(
            f"os_energy[{j}]", e_os, se_os, threshold * se_os,
            abs(e_os - os_closed[j]) <= threshold * se_os + 1e-12, expected=float(os_closed[j])))
        emp = alloc.split_ratios[j] / _overhead(params, channels) * np.sum(
            np.abs(trace.received[:, j]) ** 2, axis=1)
        m, se = _mean_se(emp)
        model_value = alloc.split_ratios[j] / _overhead(params, channels) * (cp_closed[j] + os_closed[j])
        records.append(check_record(
            f"eh_power[{j}]", m, se, threshold * se, abs(m - model_value) <= threshold * se + 1e-12,
            expected=float(model_value)))
    return _summarize("energy", records)


def miso_bound_check(params, channels, alloc, trace, threshold=3.0):
    """Simulated received energy must not exceed the beamforming bound (3 SE slack)."""
    records = []
    bound = eh_power_bound_miso(params, channels, alloc)
    ov = _overhead(params, channels)
    for j in range(params.n_receivers):
        rho = alloc.split_ratios[j]
        if rho == 0:
            continue
        energy = np.sum(np.abs(trace.received[:, j]) ** 2, axis=1)
        m, se = _mean_se(energy)
        limit = bound[j] * ov / rho
        records.append(check_record(
            f"bound[{j}]", m, se, threshold * se, m <= limit + threshold * se, expected=float(limit)))
    return _summarize("miso_bound", records)


def sinr_component_check(params, channels, alloc, n_blocks, seed=0, threshold=3.0):
    """Post-DFT signal, interference and noise powers versus the SINR terms.

    Compares against both interference conventions and reports which one the
    simulation supports.
    """
    trace, parts = simulate_blocks(params, channels, alloc, n_blocks, seed, components=True)
    n = params.n_subcarriers
    gains = channels.siso_gains()
    own = params.replace(sinr_convention="own-channel")
    literal = params.replace(sinr_convention="as-written")
    records = []
    expected = {
        "signal": n * gains * alloc.powers,
        "interference": n * _interference(own, channels, alloc.powers),
        "noise": np.full(alloc.powers.shape, params.antenna_noise),
    }
    literal_interference = n * _interference(literal, channels, alloc.powers)
    literal_fit = True
    for key, target in expected.items():
        power = np.abs(parts[key]) ** 2
        m, se = _mean_se(power)
        for j, k in itertools.product(range(target.shape[0]), range(target.shape[1])):
            ok = abs(m[j, k] - target[j, k]) <= threshold * se[j, k] + 1e-12
            records.append(check_record(
                f"{key}[{j},{k}]", m[j, k], se[j, k], threshold * se[j, k], ok,
                expected=float(target[j, k])))
            if key == "interference":
                literal_fit &= bool(abs(m[j, k] - literal_interference[j, k]) <= threshold * se[j, k] + 1e-12)
    report = _summarize("sinr_components", records)
    report["as_written_consistent"] = literal_fit
    return report


def _interference(params, channels, powers):
    g = np.array(interference_gains(params, channels))
    idx = np.arange(g.shape[0])
    g[idx, idx, :] = 0.0
    return np.einsum("abk,bk->ak", g, powers)


def _simplex_grid(dim, points, total):
    """All vectors with entries ``i * total / (points - 1)`` summing to at most ``total``."""
    steps = points - 1
    combos = [c for c in itertools.product(range(points), repeat=dim) if sum(c) <= steps]
    return np.asarray(combos, dtype=float) * (total / steps)


def _best_split(rates_fn, eh_full, thresholds, rho_grid):
    """Best feasible per-user rate over the splitting-ratio grid.

    ``rates_fn(rho)`` gives rates of shape (P, J) for a scalar ``rho``;
    ``eh_full`` is the harvested power at ``rho = 1``, shape (P, J).
    """
    best = np.full(eh_full.shape, -np.inf)
    arg = np.full(eh_full.shape, np.nan)
    for rho in rho_grid:
        r = rates_fn(rho)
        ok = dc_output_ok(rho * eh_full, thresholds)
        better = ok & (r > best)
        best = np.where(better, r, best)
        arg = np.where(better, rho, arg)
    return best, arg


def dc_output_ok(eh, thresholds):
    return eh >= thresholds[None, :] * (1 - 1e-12)


def grid_search_siso(params, channels, resolution=21):
    """Exhaustive search over powers on the budget simplex and splitting ratios.

    ``resolution`` is the number of grid points per axis.  The rate and
    harvested power of receiver ``j`` depend on ``rho_j`` only, so the
    splitting ratios are optimized per receiver for each power point.
    Returns a dict with the best fair and sum objectives and allocations
    (``None`` when no grid point is feasible).
    """
    J, n = params.n_receivers, params.n_subcarriers
    if J > 2 or n > 2:
        raise ConfigError("grid search is limited to J <= 2 and N <= 2")
    if resolution < 2:
        raise ConfigError("resolution must be at least 2")
    thresholds = np.asarray(eh_thresholds(params), dtype=float)
    grid = _simplex_grid(J * n, resolution, params.power_budget)
    powers = grid.reshape(-1, J, n)
    gains = channels.siso_gains()
    g = np.array(interference_gains(params, channels))
    idx = np.arange(J)
    cross = g.copy()
    cross[idx, idx, :] = 0.0
    inter = np.einsum("abk,pbk->pak", cross, powers)
    ov = _overhead(params, channels)
    eh_full = (cp_energy_siso(params, channels)[None, :]
               + n * np.einsum("abk,pbk->pa", g, powers) + n * params.antenna_noise) / ov

    def rates(rho):
        s = 1.0 - rho
        signal = n * s * gains[None] * powers
        denom = n * s * inter + s * params.antenna_noise + params.conversion_noise
        sinr = np.where(signal > 0, signal / denom, 0.0)
        return params.bandwidth / ov * np.sum(np.log2(1.0 + sinr), axis=2)

    rho_grid = np.linspace(0.0, 1.0, resolution)
    best, arg = _best_split(rates, eh_full, thresholds, rho_grid)
    feasible = np.all(np.isfinite(best), axis=1)
    out = {"n_points": int(len(powers) * len(rho_grid)), "feasible": bool(np.any(feasible))}
    for kind, score in (("fair", best.min(axis=1)), ("sum", best.sum(axis=1))):
        score = np.where(feasible, score, -np.inf)
        if not np.any(feasible):
            out[kind] = None
            out[f"{kind}_allocation"] = None
            continue
        i = int(np.argmax(score))
        out[kind] = float(score[i])
        out[f"{kind}_allocation"] = ResourceAllocation(powers=powers[i], split_ratios=arg[i])
    return out


def grid_search_miso(params, channels, resolution=9):
    """Coarse search over two-antenna beams on one subcarrier for up to two receivers.

    Each beam is ``sqrt(p) (cos t, sin t e^{i f})``; the common phase of a
    beam does not affect any rate or harvested power.
    """
    J, n, M = params.n_receivers, params.n_subcarriers, params.n_antennas
    if J > 2 or n != 1 or M != 2:
        raise ConfigError("MISO grid search is limited to J <= 2, N = 1, M = 2")
    thresholds = np.asarray(eh_thresholds(params), dtype=float)
    pw = _simplex_grid(J, resolution, params.power_budget)
    theta = np.linspace(0.0, np.pi / 2, resolution)
    phi = np.linspace(0.0, 2 * np.pi, resolution, endpoint=False)
    angles = np.array(list(itertools.product(theta, phi)))
    combos = np.array(list(itertools.product(range(len(angles)), repeat=J)))
    h = channels.miso_vectors()[:, 0, :]  # (J, M)
    ov = _overhead(params, channels)
    cp = miso_cp_term(params, channels)
    rho_grid = np.linspace(0.0, 1.0, resolution)
    best = {"fair": -np.inf, "sum": -np.inf}
    best_alloc = {"fair": None, "sum": None}
    for p in pw:
        t = angles[combos]  # (C, J, 2)
        dirs = np.stack([np.cos(t[..., 0]), np.sin(t[..., 0]) * np.exp(1j * t[..., 1])], axis=-1)
        w = dirs * np.sqrt(p)[None, :, None]  # (C, J, M)
        a = np.einsum("am,cbm->cab", h, w)  # (C, J, J')
        power = np.abs(a) ** 2
        own = np.einsum("caa->ca", power)
        inter = power.sum(axis=2) - own
        eh_full = (cp[None] + n * power.sum(axis=2)) / ov + params.antenna_noise

        def rates(rho):
            s = 1.0 - rho
            signal = n * s * own
            denom = n * s * inter + s * params.antenna_noise + params.conversion_noise
            return params.bandwidth / ov * np.log2(1.0 + np.where(signal > 0, signal / denom, 0.0))

        r, arg = _best_split(rates, eh_full, thresholds, rho_grid)
        feasible = np.all(np.isfinite(r), axis=1)
        for kind, score in (("fair", r.min(axis=1)), ("sum", r.sum(axis=1))):
            score = np.where(feasible, score, -np.inf)
            i = int(np.argmax(score))
            if score[i] > best[kind]:
                best[kind] = float(score[i])
                best_alloc[kind] = ResourceAllocation(beamformers=w[i][:, None, :], split_ratios=arg[i])
    return {
        "fair": None if not np.isfinite(best["fair"]) else best["fair"],
        "sum": None if not np.isfinite(best["sum"]) else best["sum"],
        "fair_allocation": best_alloc["fair"],
        "sum_allocation": best_alloc["sum"],
    }


def full_power_allocation(params, rho=None):
    """Uniform powers that use the whole budget, shared equally by the receivers."""
    J, n = params.n_receivers, params.n_subcarriers
    powers = np.full((J, n), params.power_budget / (J * n))
    rho = np.ones(J) if rho is None else np.broadcast_to(np.asarray(rho, float), (J,))
    return ResourceAllocation(powers=powers, split_ratios=rho)


