"""Multipath channel container, scaled DFT and JSON persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import InvalidChannelError


def fft_channel(taps, n_subcarriers):
    """Frequency response of a tap vector with the 1/sqrt(N) scaling.

    ``H_k = N**-0.5 * sum_n h_n exp(-2j*pi*n*k/N)``.  The factor N that
    appears in the SINR and energy formulas compensates for this scaling.
    """
    taps = np.asarray(taps, dtype=complex)
    if taps.ndim != 1:
        raise InvalidChannelError(f"taps must be one-dimensional, got shape {taps.shape}")
    n_taps = taps.shape[0]
    if n_taps == 0 or n_taps > n_subcarriers:
        raise InvalidChannelError(
            f"channel length {n_taps} must lie in [1, N={n_subcarriers}]"
        )
    return np.fft.fft(taps, n=n_subcarriers) / np.sqrt(n_subcarriers)


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Time-domain taps ``h[j, m, l]`` for J receivers and M transmit antennas.

    ``taps`` has shape (J, M, L) where L is the maximum channel length over
    all links; shorter links are zero padded.  ``freq`` gives the derived
    frequency responses with shape (J, M, N).
    """

    taps: np.ndarray
    n_subcarriers: int
    lengths: np.ndarray = field(default=None)

    def __post_init__(self):
        taps = np.array(self.taps, dtype=complex)
        if taps.ndim == 2:
            taps = taps[:, None, :]
        if taps.ndim != 3:
            raise InvalidChannelError(
                f"taps must have shape (J, M, L), got {taps.shape}"
            )
        n_rx, n_ant, max_len = taps.shape
        if n_rx < 1 or n_ant < 1:
            raise InvalidChannelError("need at least one receiver and one antenna")
        if max_len < 1 or max_len > self.n_subcarriers:
            raise InvalidChannelError(
                f"channel length {max_len} must lie in [1, N={self.n_subcarriers}]"
            )
        if not np.all(np.isfinite(taps)):
            raise InvalidChannelError("channel taps must be finite")
        if self.lengths is None:
            lengths = np.full((n_rx, n_ant), max_len, dtype=int)
        else:
            lengths = np.array(self.lengths, dtype=int).reshape(n_rx, n_ant)
            if np.any(lengths < 1) or np.any(lengths > max_len):
                raise InvalidChannelError("per-link lengths must lie in [1, L]")
            tail = np.arange(max_len)[None, None, :] >= lengths[:, :, None]
            if np.any(taps[tail] != 0):
                raise InvalidChannelError("taps beyond a link's length must be zero")
        taps.setflags(write=False)
        lengths.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "n_subcarriers", int(self.n_subcarriers))

    @property
    def n_receivers(self):
        return self.taps.shape[0]

    @property
    def n_antennas(self):
        return self.taps.shape[1]

    @property
    def max_length(self):
        return self.taps.shape[2]

    @cached_property
    def freq(self):
        n = self.n_subcarriers
        freq = np.fft.fft(self.taps, n=n, axis=-1) / np.sqrt(n)
        freq.setflags(write=False)
        return freq

    @cached_property
    def tap_energy(self):
        """``sum_{m, l} |h[j, m, l]|**2`` per receiver, shape (J,)."""
        return np.sum(np.abs(self.taps) ** 2, axis=(1, 2))

    def siso_gains(self):
        """``|H[j, k]|**2`` of the single-antenna links, shape (J, N)."""
        if self.n_antennas != 1:
            raise InvalidChannelError(
                f"SISO quantities need M = 1, channel set has M = {self.n_antennas}"
            )
        return np.abs(self.freq[:, 0, :]) ** 2

    def miso_vectors(self):
        """Channel row vectors ``H[j, k, :]``, shape (J, N, M)."""
        return np.transpose(self.freq, (0, 2, 1))

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return (
            self.n_subcarriers == other.n_subcarriers
            and self.taps.shape == other.taps.shape
            and np.array_equal(self.taps, other.taps)
            and np.array_equal(self.lengths, other.lengths)
        )

    __hash__ = None

    def to_dict(self):
        n_rx, n_ant, max_len = self.taps.shape
        links = self.taps.reshape(n_rx * n_ant, max_len)
        return {
            "N": self.n_subcarriers,
            "J": n_rx,
            "M": n_ant,
            "L": max_len,
            "lengths": self.lengths.reshape(-1).tolist(),
            "taps": [[[float(h.real), float(h.imag)] for h in link] for link in links],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            n, n_rx, n_ant, max_len = (int(data[key]) for key in ("N", "J", "M", "L"))
            raw = np.asarray(data["taps"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidChannelError(f"malformed channel document: {exc}") from exc
        if raw.shape != (n_rx * n_ant, max_len, 2):
            raise InvalidChannelError(
                f"taps array has shape {raw.shape}, expected {(n_rx * n_ant, max_len, 2)}"
            )
        taps = (raw[..., 0] + 1j * raw[..., 1]).reshape(n_rx, n_ant, max_len)
        lengths = data.get("lengths")
        if lengths is not None:
            lengths = np.asarray(lengths, dtype=int).reshape(n_rx, n_ant)
        return cls(taps=taps, n_subcarriers=n, lengths=lengths)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source):
        """Load from a JSON string or a path to a JSON file."""
        if isinstance(source, Path) or (
            isinstance(source, str) and not source.lstrip().startswith("{")
        ):
            source = Path(source).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(source))


def exponential_pdp(max_length, decay):
    """Tap powers ``exp(-decay * l)`` normalized to unit total power."""
    powers = np.exp(-float(decay) * np.arange(max_length))
    return powers / powers.sum()


def generate_channels(
    n_subcarriers, n_receivers, n_antennas=1, max_length=1, pdp_decay=0.0, seed=None
):
    """Draw i.i.d. Rayleigh multipath taps with an exponential power-delay profile.

    Each link has expected energy ``sum_l E|h_l|**2 = 1``.
    """
    if max_length < 1 or max_length > n_subcarriers:
        raise InvalidChannelError(
            f"channel length {max_length} must lie in [1, N={n_subcarriers}]"
        )
    rng = np.random.Generator(np.random.Philox(seed))
    shape = (n_receivers, n_antennas, max_length)
    gauss = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    scale = np.sqrt(exponential_pdp(max_length, pdp_decay) / 2.0)
    return ChannelSet(taps=gauss * scale, n_subcarriers=n_subcarriers)
