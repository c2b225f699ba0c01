"""Physical-layer model of the OFDM downlink with power-splitting receivers.

All functions are pure.  Most take an optional receiver index ``j`` (and
subcarrier index ``k``); without it they return the full array over
receivers (and subcarriers).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError, InvalidChannelError, UnsupportedDiodeError

SINR_CONVENTIONS = ("own-channel", "as-written")


@dataclass(frozen=True)
class SystemParams:
    """Scalar constants of one IDET downlink.

    Powers are in watts, bandwidth in hertz, DC requirements in amperes.
    ``n_antennas = 1`` selects the SISO model.
    """

    n_subcarriers: int
    n_receivers: int = 1
    n_antennas: int = 1
    bandwidth: float = 1.0
    antenna_noise: float = 0.1
    conversion_noise: float = 0.1
    tx_power: float = 1.0
    diode_k0: float = 0.0
    diode_k1: float = 1.0
    diode_k2: float = 0.5
    sampling_factor: int = 1
    dc_requirements: tuple = field(default=None)
    tolerance: float = 1e-5
    sinr_convention: str = "own-channel"

    def __post_init__(self):
        if self.dc_requirements is None:
            dc = (0.0,) * int(self.n_receivers)
        else:
            dc = tuple(float(v) for v in np.atleast_1d(self.dc_requirements))
            if len(dc) == 1 and self.n_receivers > 1:
                dc = dc * int(self.n_receivers)
        object.__setattr__(self, "dc_requirements", dc)
        self._validate()

    def _validate(self):
        if int(self.n_subcarriers) != self.n_subcarriers or self.n_subcarriers < 1:
            raise ConfigError(f"n_subcarriers must be a positive integer, got {self.n_subcarriers}")
        if int(self.n_receivers) != self.n_receivers or self.n_receivers < 1:
            raise ConfigError(f"n_receivers must be a positive integer, got {self.n_receivers}")
        if int(self.n_antennas) != self.n_antennas or self.n_antennas < 1:
            raise ConfigError(f"n_antennas must be a positive integer, got {self.n_antennas}")
        if int(self.sampling_factor) != self.sampling_factor or self.sampling_factor < 1:
            raise ConfigError("sampling_factor must be an integer >= 1")
        if not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        if self.antenna_noise < 0 or self.conversion_noise < 0:
            raise ConfigError("noise powers must be non-negative")
        if not self.tx_power > 0:
            raise ConfigError("tx_power must be positive")
        if self.diode_k1 < 0:
            raise ConfigError("diode_k1 must be non-negative")
        if not self.diode_k2 > 0:
            raise UnsupportedDiodeError(
                f"diode_k2 must be strictly positive, got {self.diode_k2}"
            )
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")
        if len(self.dc_requirements) != self.n_receivers:
            raise ConfigError(
                f"expected {self.n_receivers} DC requirements, got {len(self.dc_requirements)}"
            )
        if not all(np.isfinite(self.dc_requirements)):
            raise ConfigError("DC requirements must be finite")
        if self.sinr_convention not in SINR_CONVENTIONS:
            raise ConfigError(
                f"sinr_convention must be one of {SINR_CONVENTIONS}, got {self.sinr_convention!r}"
            )
        values = (self.bandwidth, self.antenna_noise, self.conversion_noise, self.tx_power,
                  self.diode_k0, self.diode_k1, self.diode_k2, self.tolerance)
        if not all(np.isfinite(values)):
            raise ConfigError("all scalar parameters must be finite")

    @property
    def is_siso(self):
        return self.n_antennas == 1

    @property
    def power_budget(self):
        """Total power over all subcarriers, ``N * P_tx``."""
        return self.n_subcarriers * self.tx_power

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["dc_requirements"] = list(self.dc_requirements)
        return out

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown system parameters: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ResourceAllocation:
    """Per-user, per-subcarrier powers, splitting ratios and (MISO) beamformers.

    ``powers`` has shape (J, N), ``split_ratios`` shape (J,) and
    ``beamformers`` shape (J, N, M) or ``None`` for SISO.  For MISO the
    powers are the envelope ``|W[j, k]|**2`` unless given explicitly.
    """

    powers: np.ndarray = None
    split_ratios: np.ndarray = None
    beamformers: Optional[np.ndarray] = None

    def __post_init__(self):
        w = self.beamformers
        if w is not None:
            w = np.array(w, dtype=complex)
            if w.ndim != 3:
                raise ValueError(f"beamformers must have shape (J, N, M), got {w.shape}")
            w.setflags(write=False)
            object.__setattr__(self, "beamformers", w)
        if self.powers is None:
            if w is None:
                raise ValueError("either powers or beamformers must be given")
            powers = np.sum(np.abs(w) ** 2, axis=-1)
        else:
            powers = np.array(self.powers, dtype=float)
        if powers.ndim != 2:
            raise ValueError(f"powers must have shape (J, N), got {powers.shape}")
        if self.split_ratios is None:
            rho = np.zeros(powers.shape[0])
        else:
            rho = np.array(self.split_ratios, dtype=float).reshape(-1)
        if rho.shape[0] != powers.shape[0]:
            raise ValueError("split_ratios must have one entry per receiver")
        if w is not None and w.shape[:2] != powers.shape:
            raise ValueError("beamformers and powers disagree on (J, N)")
        powers.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "split_ratios", rho)

    @property
    def n_receivers(self):
        return self.powers.shape[0]

    @property
    def n_subcarriers(self):
        return self.powers.shape[1]

    def with_(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = {
            "powers": self.powers.tolist(),
            "split_ratios": self.split_ratios.tolist(),
        }
        if self.beamformers is not None:
            w = self.beamformers
            out["beamformers"] = np.stack([w.real, w.imag], axis=-1).tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        w = data.get("beamformers")
        if w is not None:
            w = np.asarray(w, dtype=float)
            w = w[..., 0] + 1j * w[..., 1]
        return cls(powers=data["powers"], split_ratios=data["split_ratios"], beamformers=w)


@dataclass(frozen=True)
class RateEnergyPoint:
    throughput_per_user: np.ndarray
    eh_power_per_user: np.ndarray
    dc_per_user: np.ndarray
    objective: float
    objective_kind: str


def _check_index(value, size, name):
    if value is None:
        return
    if not -size <= value < size:
        raise IndexError(f"{name} index {value} out of range for size {size}")


def _select(arr, j=None, k=None):
    _check_index(j, arr.shape[0], "receiver")
    if arr.ndim > 1:
        _check_index(k, arr.shape[1], "subcarrier")
    if j is None:
        return arr
    if k is None or arr.ndim == 1:
        return arr[j]
    return float(arr[j, k])


def _overhead(params, channels):
    """Number of samples per OFDM block including the cyclic prefix."""
    return params.n_subcarriers + channels.max_length - 1


def interference_gains(params, channels):
    """Gain ``G[j, jp, k]`` of user ``jp``'s stream as seen by receiver ``j``.

    Under ``own-channel`` every stream reaches receiver j through its own
    channel ``|H[j, k]|**2``; ``as-written`` uses the interferer's channel
    ``|H[jp, k]|**2``.
    """
    gains = channels.siso_gains()
    n_rx = gains.shape[0]
    if params.sinr_convention == "own-channel":
        return np.broadcast_to(gains[:, None, :], (n_rx, n_rx, gains.shape[1]))
    return np.broadcast_to(gains[None, :, :], (n_rx, n_rx, gains.shape[1]))


def _check_dims(params, channels, alloc):
    if channels.n_subcarriers != params.n_subcarriers:
        raise InvalidChannelError("channel set and parameters disagree on N")
    if channels.n_receivers != params.n_receivers:
        raise InvalidChannelError("channel set and parameters disagree on J")
    if alloc is not None and alloc.powers.shape != (params.n_receivers, params.n_subcarriers):
        raise ValueError(
            f"allocation has shape {alloc.powers.shape}, expected "
            f"{(params.n_receivers, params.n_subcarriers)}"
        )


def siso_interference(params, channels, powers):
    """``sum_{jp != j} G[j, jp, k] p[jp, k]``, shape (J, N)."""
    gains = interference_gains(params, channels)
    total = np.einsum("abk,bk->ak", gains, powers)
    own = np.einsum("aak,ak->ak", gains, powers)
    return np.maximum(total - own, 0.0)


def sinr_siso(params, channels, alloc, j=None, k=None):
    """Post-FFT SINR of receiver j on subcarrier k."""
    _check_dims(params, channels, alloc)
    n = params.n_subcarriers
    gains = channels.siso_gains()
    share = (1.0 - alloc.split_ratios)[:, None]
    signal = share * n * gains * alloc.powers
    interference = share * n * siso_interference(params, channels, alloc.powers)
    denom = interference + share * params.antenna_noise + params.conversion_noise
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(signal > 0, signal / denom, 0.0)
    return _select(sinr, j, k)


def _rate_from_sinr(params, channels, sinr):
    return params.bandwidth / _overhead(params, channels) * np.sum(np.log2(1.0 + sinr), axis=-1)


def throughput_siso(params, channels, alloc, j=None):
    """Throughput in bit/s, ``B/(N+L-1) * sum_k log2(1 + sinr)``."""
    sinr = sinr_siso(params, channels, alloc)
    return _select(_rate_from_sinr(params, channels, sinr), j)


def cp_energy_siso(params, channels, j=None):
    """Expected energy of the received cyclic prefix at full transmit power.

    ``(L-1) * P_tx * sum_l |h[j, l]|**2 + (L-1) * sigma0**2``.
    """
    cp_len = channels.max_length - 1
    energy = cp_len * params.tx_power * channels.tap_energy + cp_len * params.antenna_noise
    return _select(np.asarray(energy), j)


def ofdm_energy_siso(params, channels, alloc, j=None):
    """Expected energy of the N received data samples of one block."""
    _check_dims(params, channels, alloc)
    n = params.n_subcarriers
    gains = interference_gains(params, channels)
    received = np.einsum("abk,bk->a", gains, alloc.powers)
    energy = n * received + n * params.antenna_noise
    return _select(energy, j)


def eh_power_siso(params, channels, alloc, j=None):
    """RF power delivered to the energy harvester, ``rho/(N+L-1) * (E_CP + E_OS)``."""
    total = cp_energy_siso(params, channels) + ofdm_energy_siso(params, channels, alloc)
    power = alloc.split_ratios / _overhead(params, channels) * total
    return _select(power, j)


def dc_output(params, eh_power):
    """Rectifier output current ``k0 + k1*P + k2*P**2``."""
    p = np.asarray(eh_power, dtype=float)
    out = params.diode_k0 + params.diode_k1 * p + params.diode_k2 * p * p
    return float(out) if out.ndim == 0 else out


def eh_power_threshold(params, current):
    """Smallest harvested power whose DC output reaches ``current``.

    Returns 0 where the requirement is at or below ``k0`` (the constraint is
    then vacuous).
    """
    k0, k1, k2 = params.diode_k0, params.diode_k1, params.diode_k2
    if not k2 > 0:
        raise UnsupportedDiodeError(f"diode_k2 must be strictly positive, got {k2}")
    cur = np.asarray(current, dtype=float)
    excess = np.maximum(cur - k0, 0.0)
    # 2*excess / (k1 + sqrt(k1^2 + 4*k2*excess)) is the cancellation-free root
    root = 2.0 * excess / (k1 + np.sqrt(k1 * k1 + 4.0 * k2 * excess) + (excess == 0))
    root = np.where(excess > 0, root, 0.0)
    return float(root) if root.ndim == 0 else root


def eh_thresholds(params):
    """Per-receiver harvested-power thresholds for the DC requirements."""
    return eh_power_threshold(params, np.asarray(params.dc_requirements, dtype=float))


def beam_products(channels, beamformers):
    """``a[j, jp, k] = H[j, k, :] . W[jp, k, :]`` (no conjugation), shape (J, J, N)."""
    h = channels.miso_vectors()
    return np.einsum("akm,bkm->abk", h, beamformers)


def _require_beams(alloc):
    if alloc.beamformers is None:
        raise ValueError("MISO quantities need an allocation with beamformers")
    return alloc.beamformers


def sinr_miso(params, channels, alloc, j=None, k=None):
    """Average SINR of receiver j on subcarrier k under linear beamforming."""
    _check_dims(params, channels, alloc)
    w = _require_beams(alloc)
    n = params.n_subcarriers
    power = np.abs(beam_products(channels, w)) ** 2
    own = np.einsum("aak->ak", power)
    interference = power.sum(axis=1) - own
    share = (1.0 - alloc.split_ratios)[:, None]
    signal = n * share * own
    denom = n * share * np.maximum(interference, 0.0) + share * params.antenna_noise
    denom = denom + params.conversion_noise
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(signal > 0, signal / denom, 0.0)
    return _select(sinr, j, k)


def throughput_miso(params, channels, alloc, j=None):
    sinr = sinr_miso(params, channels, alloc)
    return _select(_rate_from_sinr(params, channels, sinr), j)


def miso_cp_term(params, channels):
    """CP energy bound ``M**2 (L-1) P_tx sum_{m,i} |h[j,m,i]|**2`` per receiver."""
    m = channels.n_antennas
    return m * m * (channels.max_length - 1) * params.tx_power * channels.tap_energy


def eh_power_bound_miso(params, channels, alloc, j=None):
    """Upper bound on the harvested RF power of receiver j under beamforming."""
    _check_dims(params, channels, alloc)
    w = _require_beams(alloc)
    n = params.n_subcarriers
    received = np.sum(np.abs(beam_products(channels, w)) ** 2, axis=(1, 2))
    rho = alloc.split_ratios
    bound = rho / _overhead(params, channels) * (miso_cp_term(params, channels) + n * received)
    bound = bound + rho * params.antenna_noise
    return _select(bound, j)


def dsw_power_scaling(params):
    """Per-symbol power of the equivalent up-sampled wideband waveform, ``D * P_tx``."""
    return params.sampling_factor * params.tx_power


def parseval_check(freq_symbols, time_symbols, rtol=1e-10):
    """Check ``mean |S_k|**2 == mean |s_n|**2``; returns ``(ok, relative residual)``."""
    freq_symbols = np.asarray(freq_symbols, dtype=complex)
    time_symbols = np.asarray(time_symbols, dtype=complex)
    lhs = np.mean(np.abs(freq_symbols) ** 2)
    rhs = np.mean(np.abs(time_symbols) ** 2)
    scale = max(lhs, rhs)
    residual = 0.0 if scale == 0 else abs(lhs - rhs) / scale
    return residual <= rtol, residual


def evaluate(params, channels, alloc, objective="fair"):
    """Rates, harvested powers and DC currents of an allocation."""
    if params.is_siso and alloc.beamformers is None:
        rates = throughput_siso(params, channels, alloc)
        eh = eh_power_siso(params, channels, alloc)
    else:
        rates = throughput_miso(params, channels, alloc)
        eh = eh_power_bound_miso(params, channels, alloc)
    if objective == "fair":
        value = float(np.min(rates))
    elif objective == "sum":
        value = float(np.sum(rates))
    else:
        raise ValueError(f"objective must be 'fair' or 'sum', got {objective!r}")
    return RateEnergyPoint(
        throughput_per_user=np.asarray(rates),
        eh_power_per_user=np.asarray(eh),
        dc_per_user=np.asarray(dc_output(params, eh)),
        objective=value,
        objective_kind=objective,
    )


def feasibility_residuals(params, channels, alloc, atol=0.0):
    """Constraint slacks (negative means violated) keyed by constraint name."""
    budget = params.power_budget - float(alloc.powers.sum())
    rho = alloc.split_ratios
    point = evaluate(params, channels, alloc)
    out = {
        "budget": budget,
        "split_lower": float(rho.min()),
        "split_upper": float(1.0 - rho.max()),
        "dc": (point.dc_per_user - np.asarray(params.dc_requirements)).tolist(),
    }
    if alloc.beamformers is not None:
        env = alloc.powers - np.sum(np.abs(alloc.beamformers) ** 2, axis=-1)
        out["envelope"] = float(env.min())
    return out
