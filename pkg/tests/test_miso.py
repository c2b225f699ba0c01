import numpy as np
import pytest

from idet import miso, siso
from idet.channels import ChannelSet, generate_channels
from idet.model import (
    ResourceAllocation,
    SystemParams,
    beam_products,
    dc_output,
    eh_power_bound_miso,
    eh_thresholds,
    throughput_miso,
)
from idet.oracle import grid_search_miso
from idet.report import INFEASIBLE
from idet.transform import SurrogateState, p_hat_eh_miso, psi_eh_star_full, psi_id_star, r_hat_miso


def p_fair(params, ch, w):
    alloc = ResourceAllocation(beamformers=w, split_ratios=np.ones(params.n_receivers))
    return float(np.min(eh_power_bound_miso(params, ch, alloc)))


def test_init_with_vacuous_requirements_returns_budget_feasible_beams(instance):
    params, ch, _ = instance(n=2, j=2, m=2, length=1)
    w, psi, trace = miso.init_feasible_miso(params, ch)
    assert w is not None and psi is not None
    assert np.sum(np.abs(w) ** 2) <= params.power_budget * (1 + 1e-9)


def test_init_dominates_random_beams():
    params = SystemParams(n_subcarriers=1, n_antennas=2, dc_requirements=0.05)
    ch = generate_channels(1, 1, 2, 1, seed=11)
    w, _, trace = miso.init_feasible_miso(params, ch)
    assert np.all(np.diff(trace) >= -1e-8)
    best = p_fair(params, ch, w)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        r = rng.standard_normal(w.shape) + 1j * rng.standard_normal(w.shape)
        r *= np.sqrt(params.power_budget / np.sum(np.abs(r) ** 2))
        assert p_fair(params, ch, r) <= best * (1 + 1e-9)


def test_contradictory_instance_is_infeasible():
    params = SystemParams(n_subcarriers=2, n_receivers=2, n_antennas=2, tx_power=0.01)
    ch = generate_channels(2, 2, 2, 1, seed=4)
    reach = p_fair(params, ch, miso.matched_filter_beams(params, ch))
    current = float(dc_output(params, 10 * reach + 1.0))
    params = params.replace(dc_requirements=(current, current))
    assert np.all(eh_thresholds(params) > reach)
    w, psi, _ = miso.init_feasible_miso(params, ch)
    assert w is None and psi is None
    assert miso.solve_fair_miso(params, ch).status == INFEASIBLE


def test_single_stream_uses_matched_filter():
    params = SystemParams(n_subcarriers=1, n_antennas=2)
    ch = generate_channels(1, 1, 2, 1, seed=5)
    rep = miso.solve_fair_miso(params, ch)
    w = rep.beamformers
    h = ch.miso_vectors()
    gain = np.abs(beam_products(ch, w)[0, 0, 0]) ** 2
    assert gain >= 0.999 * np.sum(np.abs(h) ** 2) * np.sum(np.abs(w) ** 2)


def test_symmetric_users_get_equal_rates():
    params = SystemParams(n_subcarriers=1, n_receivers=2, n_antennas=2, dc_requirements=0.05)
    taps = np.array([[[1.0], [0.0]], [[0.0], [1.0]]], dtype=complex)
    rep = miso.solve_fair_miso(params, ChannelSet(taps=taps, n_subcarriers=1))
    assert rep.rates[0] == pytest.approx(rep.rates[1], rel=1e-4)


@pytest.mark.parametrize("kind", ["fair", "sum"])
def test_single_antenna_matches_siso(instance, kind):
    for _ in range(3):
        params, ch, _ = instance(n=4, j=2, m=1, length=2, dc=0.1)
        a = getattr(siso, f"solve_{kind}_siso")(params, ch)
        b = getattr(miso, f"solve_{kind}_miso")(params, ch)
        assert a.status == b.status
        if a.status != INFEASIBLE:
            assert b.objective == pytest.approx(a.objective, rel=1e-3)


def test_report_invariants(instance):
    params, ch, _ = instance(n=3, j=2, m=2, length=2, dc=0.1)
    fair = miso.solve_fair_miso(params, ch)
    total = miso.solve_sum_miso(params, ch)
    for rep in (fair, total):
        assert rep.status != INFEASIBLE
        tr = np.asarray(rep.objective_trace)
        assert np.all(np.diff(tr) >= -1e-8 * np.maximum(1, np.abs(tr[:-1])))
        w = rep.beamformers
        assert np.sum(np.abs(w) ** 2) <= params.power_budget * (1 + 1e-9)
        np.testing.assert_allclose(np.sum(np.abs(w) ** 2, axis=-1), rep.allocation.powers, atol=1e-9)
        assert np.all(dc_output(params, eh_power_bound_miso(params, ch, rep.allocation))
                      >= np.asarray(params.dc_requirements) - 1e-6)
        assert rep.stationarity_residual <= 1e-5 or rep.iterations < miso.MAX_OUTER
        a = rep.allocation
        state = SurrogateState(psi_id=psi_id_star(params, ch, a), psi_eh=psi_eh_star_full(ch, a))
        np.testing.assert_allclose(r_hat_miso(params, ch, a, state), throughput_miso(params, ch, a), rtol=1e-8)
        np.testing.assert_allclose(p_hat_eh_miso(params, ch, a, state),
                                   eh_power_bound_miso(params, ch, a), rtol=1e-8)
    assert total.objective >= params.n_receivers * fair.objective - 1e-6


def test_sum_matches_grid_oracle():
    rng = np.random.default_rng(3)
    for _ in range(2):
        params = SystemParams(n_subcarriers=1, n_receivers=2, n_antennas=2, dc_requirements=0.05)
        ch = generate_channels(1, 2, 2, 1, seed=int(rng.integers(2**32)))
        grid = grid_search_miso(params, ch, resolution=9)
        rep = miso.solve_sum_miso(params, ch)
        assert rep.objective >= grid["sum"] - 5e-2


def test_report_json_has_complex_pairs(instance):
    params, ch, _ = instance(n=2, j=1, m=2, length=1)
    d = miso.solve_sum_miso(params, ch).to_dict(include_timing=False)
    assert np.asarray(d["psi_id"]).shape == (1, 2, 2)
    assert "wall_time" not in d
