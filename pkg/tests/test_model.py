import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idet.channels import ChannelSet, exponential_pdp, fft_channel, generate_channels
from idet.exceptions import ConfigError, InvalidChannelError, UnsupportedDiodeError
from idet.model import (
    ResourceAllocation,
    SystemParams,
    cp_energy_siso,
    dc_output,
    dsw_power_scaling,
    eh_power_bound_miso,
    eh_power_siso,
    eh_power_threshold,
    evaluate,
    feasibility_residuals,
    ofdm_energy_siso,
    parseval_check,
    sinr_miso,
    sinr_siso,
    throughput_miso,
    throughput_siso,
)


def flat(n, gain, j=1):
    """Single-tap channels with |H_k|^2 = gain on every subcarrier."""
    return ChannelSet(taps=np.full((j, 1), math.sqrt(gain * n), dtype=complex), n_subcarriers=n)


def alloc(p, rho):
    return ResourceAllocation(powers=np.atleast_2d(p), split_ratios=np.atleast_1d(rho))


# --- fft_channel -------------------------------------------------------------

def test_fft_single_tap_is_flat():
    np.testing.assert_allclose(fft_channel([1.0], 4), np.full(4, 0.5))


def test_fft_two_taps():
    np.testing.assert_allclose(fft_channel([1, 1], 2), [math.sqrt(2), 0], atol=1e-15)
    np.testing.assert_allclose(fft_channel([0, 1], 2), [1 / math.sqrt(2), -1 / math.sqrt(2)], atol=1e-15)


def test_fft_is_deterministic_and_energy_consistent(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 17))
        taps = rng.standard_normal(int(rng.integers(1, n + 1))) * (1 + 1j)
        h = fft_channel(taps, n)
        assert np.array_equal(h, fft_channel(taps, n))
        assert abs(np.sum(np.abs(h) ** 2) - np.sum(np.abs(taps) ** 2)) < 1e-10 * max(1, np.sum(np.abs(taps) ** 2))


def test_taps_are_zero_padded():
    ch = ChannelSet(taps=np.array([[1.0, 0.5, 0.0], [1.0, 0.0, 0.0]]), n_subcarriers=4, lengths=[2, 1])
    assert ch.taps.shape == (2, 1, 3)
    with pytest.raises(InvalidChannelError):
        ChannelSet(taps=np.array([[1.0, 0.5, 0.3]]), n_subcarriers=4, lengths=[2])
    with pytest.raises(InvalidChannelError):
        ChannelSet(taps=np.ones((1, 5)), n_subcarriers=4)


# --- SINR and throughput -----------------------------------------------------

def test_sinr_direct_value():
    p = SystemParams(n_subcarriers=2, antenna_noise=0.5, conversion_noise=0.5)
    assert sinr_siso(p, flat(2, 1.0), alloc([[1.0, 1.0]], 0.0), 0, 0) == pytest.approx(2.0, rel=1e-12)


def test_sinr_vanishes_at_full_split_or_zero_power():
    p = SystemParams(n_subcarriers=2)
    assert sinr_siso(p, flat(2, 1.0), alloc([[1.0, 1.0]], 1.0), 0, 0) == 0.0
    assert sinr_siso(p, flat(2, 1.0), alloc([[0.0, 2.0]], 0.3), 0, 0) == 0.0


def test_throughput_examples():
    ch = flat(2, 1.0)
    # sigma chosen so that every gamma equals 1
    p = SystemParams(n_subcarriers=2, bandwidth=2.0, antenna_noise=1.0, conversion_noise=1.0)
    a = alloc([[1.0, 1.0]], 0.0)
    np.testing.assert_allclose(sinr_siso(p, ch, a), 1.0)
    assert throughput_siso(p, ch, a, 0) == pytest.approx(2.0)
    ch2 = ChannelSet(taps=np.array([[math.sqrt(2), 0.0]]), n_subcarriers=2)
    p2 = p.replace(bandwidth=3.0)
    np.testing.assert_allclose(sinr_siso(p2, ch2, a), 1.0)
    assert throughput_siso(p2, ch2, a, 0) == pytest.approx(2.0)
    assert throughput_siso(p, ch, alloc([[0.0, 0.0]], 0.0), 0) == 0.0


def test_sinr_convention_as_written_uses_interferer_channel():
    ch = ChannelSet(taps=np.array([[1.0], [2.0]]), n_subcarriers=1)
    a = alloc([[1.0], [1.0]], [0.0, 0.0])
    own = SystemParams(n_subcarriers=1, n_receivers=2)
    lit = own.replace(sinr_convention="as-written")
    assert sinr_siso(own, ch, a, 0, 0) == pytest.approx(1.0 / (1.0 + 0.2))
    assert sinr_siso(lit, ch, a, 0, 0) == pytest.approx(1.0 / (4.0 + 0.2))


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 3.0))
def test_sinr_decreases_with_interference(seed, extra):
    rng = np.random.default_rng(seed)
    p = SystemParams(n_subcarriers=3, n_receivers=2)
    ch = generate_channels(3, 2, 1, 2, 0.3, seed)
    powers = rng.uniform(0.1, 1.0, (2, 3))
    base = sinr_siso(p, ch, alloc(powers, [0.2, 0.4]))
    bumped = powers.copy()
    bumped[1, 0] += extra
    after = sinr_siso(p, ch, alloc(bumped, [0.2, 0.4]))
    assert after[0, 0] < base[0, 0]
    assert np.all(after >= 0)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_throughput_nondecreasing_in_own_power(seed, extra):
    rng = np.random.default_rng(seed)
    p = SystemParams(n_subcarriers=3, n_receivers=2)
    ch = generate_channels(3, 2, 1, 2, 0.3, seed)
    powers = rng.uniform(0.0, 1.0, (2, 3))
    more = powers.copy()
    more[0, 1] += extra
    a, b = (throughput_siso(p, ch, alloc(x, [0.1, 0.5]), 0) for x in (powers, more))
    assert b >= a - 1e-15


# --- energies and harvested power ---------------------------------------------

def test_cp_energy_examples():
    assert cp_energy_siso(SystemParams(n_subcarriers=4), flat(4, 1.0), 0) == 0.0
    ch = ChannelSet(taps=np.array([[math.sqrt(0.5), math.sqrt(0.5)]]), n_subcarriers=4)
    assert cp_energy_siso(SystemParams(n_subcarriers=4, antenna_noise=0.0), ch, 0) == pytest.approx(1.0)
    ch3 = ChannelSet(taps=np.array([[0.5, 0.5, 0.0]]), n_subcarriers=4, lengths=[3])
    p = SystemParams(n_subcarriers=4, tx_power=2.0, antenna_noise=1.0)
    assert cp_energy_siso(p, ch3, 0) == pytest.approx(4.0)


def test_ofdm_energy_examples():
    p = SystemParams(n_subcarriers=2, antenna_noise=0.0)
    assert ofdm_energy_siso(p, flat(2, 0.5), alloc([[1.0, 1.0]], 0.0), 0) == pytest.approx(2.0)
    q = SystemParams(n_subcarriers=2, antenna_noise=1.0)
    assert ofdm_energy_siso(q, flat(2, 0.7), alloc([[0.0, 0.0]], 0.0), 0) == pytest.approx(2.0)
    assert ofdm_energy_siso(q, flat(2, 0.0), alloc([[1.0, 1.0]], 0.0), 0) == pytest.approx(2.0)


def test_eh_power_examples():
    p = SystemParams(n_subcarriers=2, antenna_noise=0.0)
    ch = ChannelSet(taps=np.array([[math.sqrt(0.5), math.sqrt(0.5)]]), n_subcarriers=2)
    a = alloc([[1.0, 1.0]], 1.0)
    assert cp_energy_siso(p, ch, 0) == pytest.approx(1.0)
    assert ofdm_energy_siso(p, ch, a, 0) == pytest.approx(2.0)
    assert eh_power_siso(p, ch, a, 0) == pytest.approx(1.0)
    assert eh_power_siso(p, ch, alloc([[1.0, 1.0]], 0.0), 0) == 0.0
    q = SystemParams(n_subcarriers=3, antenna_noise=0.0)
    ch3 = ChannelSet(taps=np.array([[math.sqrt(4 / 3)]]), n_subcarriers=3)
    assert eh_power_siso(q, ch3, alloc([[1.0, 1.0, 1.0]], 0.5), 0) == pytest.approx(2 / 3)


# --- diode model -----------------------------------------------------------------

@pytest.mark.parametrize("k2,power,expected", [(1.0, 2.0, 6.0), (0.5, 2.0, 4.0)])
def test_dc_output_examples(k2, power, expected):
    p = SystemParams(n_subcarriers=1, diode_k0=0.0, diode_k1=1.0, diode_k2=k2)
    assert dc_output(p, power) == pytest.approx(expected)
    assert dc_output(p.replace(diode_k0=0.03), 0.0) == pytest.approx(0.03)


@pytest.mark.parametrize("k1,current,expected", [(1.0, 2.0, 1.0), (0.0, 4.0, 2.0), (1.0, 0.0, 0.0)])
def test_threshold_examples(k1, current, expected):
    p = SystemParams(n_subcarriers=1, diode_k0=0.0, diode_k1=k1, diode_k2=1.0)
    assert eh_power_threshold(p, current) == pytest.approx(expected)


@given(st.floats(0.0, 5.0), st.floats(1e-3, 10.0), st.floats(1e-6, 100.0), st.floats(0.0, 0.1))
def test_threshold_inverts_dc_output(k1, k2, excess, k0):
    p = SystemParams(n_subcarriers=1, diode_k0=k0, diode_k1=k1, diode_k2=k2)
    current = k0 + excess
    assert dc_output(p, eh_power_threshold(p, current)) == pytest.approx(current, rel=1e-9)


def test_threshold_below_k0_is_vacuous():
    p = SystemParams(n_subcarriers=1, diode_k0=0.2)
    assert eh_power_threshold(p, 0.1) == 0.0


def test_zero_k2_rejected():
    with pytest.raises(UnsupportedDiodeError):
        SystemParams(n_subcarriers=1, diode_k2=0.0)


# --- MISO model -------------------------------------------------------------------

def test_sinr_miso_direct_value():
    p = SystemParams(n_subcarriers=2, n_antennas=2, antenna_noise=0.5, conversion_noise=0.5)
    ch = ChannelSet(taps=np.array([[[1.0], [0.0]]]), n_subcarriers=2)
    w = np.zeros((1, 2, 2), dtype=complex)
    w[0, :, 0] = 1.0
    a = ResourceAllocation(beamformers=w, split_ratios=[0.0])
    np.testing.assert_allclose(sinr_miso(p, ch, a), 1.0)


def test_sinr_miso_nulled_beam():
    p = SystemParams(n_subcarriers=1, n_antennas=2)
    ch = ChannelSet(taps=np.array([[[1.0], [1.0]]]), n_subcarriers=1)
    w = np.array([[[1.0, -1.0]]], dtype=complex)
    assert sinr_miso(p, ch, ResourceAllocation(beamformers=w, split_ratios=[0.2]), 0, 0) == 0.0


def test_miso_matches_siso_at_one_antenna(instance):
    for _ in range(50):
        params, ch, a = instance(n=5, j=3, length=3)
        beams = ResourceAllocation(beamformers=np.sqrt(a.powers)[..., None] * np.exp(0.3j),
                                   split_ratios=a.split_ratios)
        np.testing.assert_allclose(sinr_miso(params, ch, beams), sinr_siso(params, ch, a), rtol=1e-12)
        np.testing.assert_allclose(throughput_miso(params, ch, beams), throughput_siso(params, ch, a),
                                   rtol=1e-12)


def test_eh_bound_limits():
    p = SystemParams(n_subcarriers=2, n_receivers=1, n_antennas=2, antenna_noise=0.3)
    ch = ChannelSet(taps=np.array([[[1.0], [0.5]]]), n_subcarriers=2)
    zero = ResourceAllocation(beamformers=np.zeros((1, 2, 2)), split_ratios=[0.6])
    assert eh_power_bound_miso(p, ch, zero, 0) == pytest.approx(0.6 * 0.3)
    w = np.ones((1, 2, 2), dtype=complex)
    assert eh_power_bound_miso(p, ch, ResourceAllocation(beamformers=w, split_ratios=[0.0]), 0) == 0.0


def test_eh_bound_reduces_to_siso_at_one_antenna_and_tap(instance):
    for _ in range(20):
        params, ch, a = instance(n=4, j=2, length=1)
        beams = ResourceAllocation(beamformers=np.sqrt(a.powers)[..., None], split_ratios=a.split_ratios)
        np.testing.assert_allclose(eh_power_bound_miso(params, ch, beams), eh_power_siso(params, ch, a),
                                   rtol=1e-12)


# --- misc ---------------------------------------------------------------------------

@pytest.mark.parametrize("d,p,expected", [(1, 0.7, 0.7), (4, 1.0, 4.0), (8, 0.5, 4.0)])
def test_dsw_scaling(d, p, expected):
    assert dsw_power_scaling(SystemParams(n_subcarriers=1, tx_power=p, sampling_factor=d)) == expected


def test_parseval_examples(rng):
    ones = np.ones(8)
    assert parseval_check(ones, np.fft.ifft(ones) * np.sqrt(8))[0]
    assert parseval_check(np.zeros(4), np.zeros(4)) == (True, 0.0)
    s = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    ok, res = parseval_check(s, np.fft.ifft(s, norm="ortho"))
    assert ok and res < 1e-10
    assert not parseval_check(s, 2 * np.fft.ifft(s, norm="ortho"))[0]


def test_params_validation():
    with pytest.raises(ConfigError):
        SystemParams(n_subcarriers=0)
    with pytest.raises(ConfigError):
        SystemParams(n_subcarriers=2, n_receivers=2, dc_requirements=[0.1, 0.2, 0.3])
    with pytest.raises(ConfigError):
        SystemParams(n_subcarriers=2, sinr_convention="other")
    with pytest.raises(ConfigError):
        SystemParams.from_dict({"n_subcarriers": 2, "bogus": 1})
    p = SystemParams(n_subcarriers=2, n_receivers=3, dc_requirements=0.2)
    assert p.dc_requirements == (0.2, 0.2, 0.2)
    assert SystemParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p


def test_channel_json_round_trip_is_exact(tmp_path):
    ch = generate_channels(6, 3, 2, 4, 0.7, 11)
    path = tmp_path / "ch.json"
    ch.to_json(path)
    assert ChannelSet.from_json(path) == ch
    doc = json.loads(path.read_text())
    assert set(doc) >= {"N", "J", "M", "L", "taps"}


def test_generated_channel_statistics():
    ch = generate_channels(4, 20000, 1, 1, 0.0, 5)
    h = ch.taps[:, 0, 0]
    # Rayleigh: E|h|^2 = 1, E|h|^4 = 2
    assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 4 * 1.0 / np.sqrt(20000)
    assert abs(np.mean(np.abs(h) ** 4) - 2.0) < 4 * np.sqrt(20.0) / np.sqrt(20000)
    np.testing.assert_allclose(exponential_pdp(4, 0.0), np.full(4, 0.25))
    assert generate_channels(4, 2, 1, 3, 0.5, 9) == generate_channels(4, 2, 1, 3, 0.5, 9)


def test_feasibility_residuals_and_evaluate(instance):
    params, ch, a = instance(dc=0.05)
    res = feasibility_residuals(params, ch, a)
    assert res["budget"] == pytest.approx(0.0, abs=1e-9)
    point = evaluate(params, ch, a, "sum")
    assert point.objective == pytest.approx(point.throughput_per_user.sum())
    with pytest.raises(ValueError):
        evaluate(params, ch, a, "median")
