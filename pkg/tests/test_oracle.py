import math

import numpy as np
import pytest

from idet.channels import ChannelSet, generate_channels
from idet.exceptions import ConfigError
from idet.model import (
    ResourceAllocation,
    SystemParams,
    cp_energy_siso,
    dc_output,
    eh_power_siso,
    eh_power_threshold,
    evaluate,
    ofdm_energy_siso,
)
from idet.oracle import (
    empirical_energies,
    energy_checks,
    exact_cp_energy_siso,
    full_power_allocation,
    gaussianity_test,
    grid_search_miso,
    grid_search_siso,
    independence_test,
    miso_bound_check,
    simulate_blocks,
    sinr_component_check,
)

BLOCKS = 20000


def unit_channel(n, j=1):
    return ChannelSet(taps=np.ones((j, 1), dtype=complex), n_subcarriers=n)


def test_zero_power_zero_noise_is_silent():
    params = SystemParams(n_subcarriers=4, n_receivers=2, antenna_noise=0.0)
    ch = generate_channels(4, 2, 1, 3, seed=1)
    alloc = ResourceAllocation(powers=np.zeros((2, 4)), split_ratios=[0.5, 0.5])
    tr = simulate_blocks(params, ch, alloc, 10, seed=0)
    assert np.all(tr.received == 0)


def test_identity_channel_reproduces_time_block():
    params = SystemParams(n_subcarriers=8, antenna_noise=0.0)
    tr = simulate_blocks(params, unit_channel(8), full_power_allocation(params), 20, seed=2)
    np.testing.assert_allclose(tr.window(0), tr.time_symbols[:, 0], atol=1e-12)


def test_cyclic_extension_layout():
    params = SystemParams(n_subcarriers=6)
    ch = generate_channels(6, 1, 1, 3, seed=3)
    tr = simulate_blocks(params, ch, full_power_allocation(params), 5, seed=4)
    np.testing.assert_array_equal(tr.transmit[:, 0, :6], tr.time_symbols[:, 0])
    np.testing.assert_array_equal(tr.transmit[:, 0, 6:], tr.time_symbols[:, 0, :2])


def test_parseval_per_block():
    params = SystemParams(n_subcarriers=8, n_receivers=2)
    tr = simulate_blocks(params, unit_channel(8, 2), full_power_allocation(params), 50, seed=5)
    freq = np.sum(np.abs(tr.symbols.sum(axis=1)) ** 2, axis=1)
    time = np.sum(np.abs(tr.time_symbols[:, 0]) ** 2, axis=1)
    np.testing.assert_allclose(time, freq, rtol=1e-10)


def test_single_tap_has_no_cp_energy():
    params = SystemParams(n_subcarriers=4)
    tr = simulate_blocks(params, unit_channel(4), full_power_allocation(params), 10, seed=6)
    assert empirical_energies(tr, 0)[0] == 0.0


def test_energies_match_closed_forms():
    params = SystemParams(n_subcarriers=8, n_receivers=2)
    ch = generate_channels(8, 2, 1, 3, pdp_decay=0.5, seed=7)
    alloc = full_power_allocation(params, rho=0.4)
    tr = simulate_blocks(params, ch, alloc, BLOCKS, seed=8)
    report = energy_checks(params, ch, alloc, tr)
    assert report["pass"], [c for c in report["checks"] if not c["pass"]]
    np.testing.assert_allclose(exact_cp_energy_siso(params, ch, alloc), cp_energy_siso(params, ch), rtol=1e-12)


def test_noise_only_window_energy():
    params = SystemParams(n_subcarriers=8, antenna_noise=0.3)
    ch = generate_channels(8, 1, 1, 2, seed=9)
    alloc = ResourceAllocation(powers=np.zeros((1, 8)), split_ratios=[0.5])
    _, e_os, _, se = empirical_energies(simulate_blocks(params, ch, alloc, BLOCKS, seed=10), 0)
    assert abs(e_os - 8 * 0.3) <= 3 * se
    assert ofdm_energy_siso(params, ch, alloc)[0] == pytest.approx(8 * 0.3)


def test_gaussianity_full_and_half_power():
    params = SystemParams(n_subcarriers=8)
    ch = unit_channel(8)
    full = full_power_allocation(params)
    rep = gaussianity_test(simulate_blocks(params, ch, full, BLOCKS, seed=11), params, full)
    assert rep["pass"]
    assert rep["checks"][1]["expected"] == pytest.approx(params.tx_power)
    half = ResourceAllocation(powers=full.powers / 2, split_ratios=[1.0])
    rep = gaussianity_test(simulate_blocks(params, ch, half, BLOCKS, seed=12), params, half)
    assert rep["pass"] and rep["checks"][1]["expected"] == pytest.approx(params.tx_power / 2)


def test_gaussianity_degenerate_zero_power():
    params = SystemParams(n_subcarriers=4)
    zero = ResourceAllocation(powers=np.zeros((1, 4)), split_ratios=[0.0])
    rep = gaussianity_test(simulate_blocks(params, unit_channel(4), zero, 100, seed=1), params, zero)
    assert rep["pass"]


def test_non_gaussian_symbols_are_flagged():
    params = SystemParams(n_subcarriers=1)
    alloc = full_power_allocation(params)
    tr = simulate_blocks(params, unit_channel(1), alloc, BLOCKS, seed=13)
    # a constant-modulus symbol has excess kurtosis -1
    tr.time_symbols[:] = np.exp(1j * np.angle(tr.time_symbols))
    assert not gaussianity_test(tr, expected_variance=1.0)["pass"]


def test_independence_and_correlated_control():
    params = SystemParams(n_subcarriers=8)
    alloc = full_power_allocation(params)
    assert independence_test(simulate_blocks(params, unit_channel(8), alloc, BLOCKS, seed=14))["pass"]
    control = simulate_blocks(params, unit_channel(8), alloc, BLOCKS, seed=14, block_correlation=1.0)
    assert not independence_test(control)["pass"]


def test_independence_single_subcarrier():
    params = SystemParams(n_subcarriers=1)
    tr = simulate_blocks(params, unit_channel(1), full_power_allocation(params), 1000, seed=15)
    rep = independence_test(tr)
    assert rep["pass"] and len(rep["checks"]) == 1


def test_simulation_is_deterministic():
    params = SystemParams(n_subcarriers=4, n_receivers=2)
    ch = generate_channels(4, 2, 1, 2, seed=16)
    alloc = full_power_allocation(params)
    a = simulate_blocks(params, ch, alloc, 300, seed=17)
    b = simulate_blocks(params, ch, alloc, 300, seed=17)
    np.testing.assert_array_equal(a.received, b.received)
    assert not np.array_equal(a.received, simulate_blocks(params, ch, alloc, 300, seed=18).received)


def test_needs_two_blocks():
    params = SystemParams(n_subcarriers=2)
    with pytest.raises(ConfigError):
        simulate_blocks(params, unit_channel(2), full_power_allocation(params), 1)


def test_sinr_components_follow_own_channel_convention():
    params = SystemParams(n_subcarriers=4, n_receivers=2)
    ch = generate_channels(4, 2, 1, 2, seed=19)
    rng = np.random.default_rng(0)
    alloc = ResourceAllocation(powers=rng.dirichlet(np.ones(8)).reshape(2, 4) * 4, split_ratios=[0.3, 0.6])
    rep = sinr_component_check(params, ch, alloc, BLOCKS, seed=20)
    assert rep["pass"]


def test_miso_bound_holds_for_random_beams():
    params = SystemParams(n_subcarriers=4, n_receivers=2, n_antennas=2)
    ch = generate_channels(4, 2, 2, 2, seed=21)
    rng = np.random.default_rng(1)
    for _ in range(3):
        w = rng.standard_normal((2, 4, 2)) + 1j * rng.standard_normal((2, 4, 2))
        w *= math.sqrt(params.power_budget / np.sum(np.abs(w) ** 2))
        alloc = ResourceAllocation(beamformers=w, split_ratios=[0.5, 0.5])
        assert miso_bound_check(params, ch, alloc, simulate_blocks(params, ch, alloc, 5000, seed=22))["pass"]


def test_grid_single_variable_matches_analytic_optimum():
    # one user, one subcarrier: full power, rho at the smallest value meeting the requirement
    params = SystemParams(n_subcarriers=1, dc_requirements=0.5)
    ch = unit_channel(1)
    grid = grid_search_siso(params, ch, resolution=201)
    probe = ResourceAllocation(powers=[[1.0]], split_ratios=[1.0])
    eh_full = eh_power_siso(params, ch, probe)[0]
    rho_star = eh_power_threshold(params, 0.5) / eh_full
    best = evaluate(params, ch, ResourceAllocation(powers=[[1.0]], split_ratios=[rho_star])).objective
    assert best - grid["fair"] <= best - evaluate(
        params, ch, ResourceAllocation(powers=[[1.0]], split_ratios=[rho_star + 1 / 200])).objective + 1e-12
    assert grid["fair"] <= best + 1e-12
    alloc = grid["fair_allocation"]
    assert dc_output(params, eh_power_siso(params, ch, alloc))[0] >= 0.5 - 1e-9


def test_grid_infeasible_and_refinement():
    ch = generate_channels(2, 2, 1, 1, seed=23)
    out = grid_search_siso(SystemParams(n_subcarriers=2, n_receivers=2, dc_requirements=50.0), ch, 5)
    assert not out["feasible"] and out["fair"] is None and out["sum"] is None
    params = SystemParams(n_subcarriers=2, n_receivers=2, dc_requirements=0.1)
    coarse, fine = grid_search_siso(params, ch, 6), grid_search_siso(params, ch, 11)
    assert fine["fair"] >= coarse["fair"] and fine["sum"] >= coarse["sum"]
    with pytest.raises(ConfigError):
        grid_search_siso(SystemParams(n_subcarriers=3), generate_channels(3, 1, seed=0))


def test_miso_grid_limits():
    ch = generate_channels(1, 2, 2, 1, seed=24)
    out = grid_search_miso(SystemParams(n_subcarriers=1, n_receivers=2, n_antennas=2), ch, resolution=5)
    assert out["sum"] >= out["fair"] * 2 - 1e-12
    with pytest.raises(ConfigError):
        grid_search_miso(SystemParams(n_subcarriers=2, n_antennas=2), generate_channels(2, 1, 2, seed=0))
