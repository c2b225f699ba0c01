"""Quadratic-transform surrogates for the SINR ratios and the harvested power.

The quadratic transform replaces a ratio ``A**2 / D`` by ``2*psi*A - psi**2*D``,
which is concave in ``A`` for ``psi >= 0``, linear in ``D``, and equal to
the ratio at ``psi* = A / D``.  For MISO the same identity is used
with complex ``psi`` and ``2*Re(conj(psi)*a) - |psi|**2 * D``; the
harvested power uses ``|x|**2 >= 2*Re(conj(psi)*x) - |psi|**2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SurrogateDomainError
from .model import (
    _check_dims,
    _overhead,
    _require_beams,
    _select,
    beam_products,
    miso_cp_term,
    siso_interference,
)


@dataclass(frozen=True, eq=False)
class SurrogateState:
    """Auxiliary variables of the quadratic transform.

    ``psi_siso`` is real with shape (J, N).  ``psi_id`` is complex with
    shape (J, N); ``psi_eh`` is complex with shape (J, N, J), one entry per
    (receiver, subcarrier, stream).
    """

    psi_siso: np.ndarray = None
    psi_id: np.ndarray = None
    psi_eh: np.ndarray = None

    @classmethod
    def ones(cls, n_receivers, n_subcarriers):
        shape = (n_receivers, n_subcarriers)
        return cls(
            psi_siso=np.ones(shape),
            psi_id=np.ones(shape, dtype=complex),
            psi_eh=np.ones(shape + (n_receivers,), dtype=complex),
        )

    def with_(self, **changes):
        values = {"psi_siso": self.psi_siso, "psi_id": self.psi_id, "psi_eh": self.psi_eh}
        values.update(changes)
        return SurrogateState(**values)

    def to_dict(self):
        def pairs(z):
            return None if z is None else np.stack([z.real, z.imag], axis=-1).tolist()

        return {
            "psi_siso": None if self.psi_siso is None else np.asarray(self.psi_siso).tolist(),
            "psi_id": pairs(self.psi_id),
            "psi_eh": pairs(self.psi_eh),
        }


def _log2_rate(params, channels, values):
    values = np.asarray(values)
    if np.any(values <= -1.0):
        raise SurrogateDomainError(
            "surrogate SINR <= -1 on some subcarrier; psi is far from the feasible region"
        )
    return params.bandwidth / _overhead(params, channels) * np.sum(np.log2(1.0 + values), axis=-1)


def siso_denominator(params, channels, alloc):
    """Interference-plus-noise term of the SISO SINR, shape (J, N)."""
    share = (1.0 - alloc.split_ratios)[:, None]
    interference = siso_interference(params, channels, alloc.powers)
    n = params.n_subcarriers
    return share * n * interference + share * params.antenna_noise + params.conversion_noise


def siso_amplitude(params, channels, alloc):
    """``|H[j, k]| * sqrt((1 - rho_j) N p[j, k])``, shape (J, N)."""
    share = np.maximum(1.0 - alloc.split_ratios, 0.0)[:, None]
    gains = channels.siso_gains()
    return np.sqrt(gains * share * params.n_subcarriers * np.maximum(alloc.powers, 0.0))


def gamma_tilde_siso(params, channels, alloc, state, j=None, k=None):
    """Quadratic-transform surrogate of the SISO SINR; negative for poor psi."""
    _check_dims(params, channels, alloc)
    psi = np.asarray(state.psi_siso, dtype=float)
    amp = siso_amplitude(params, channels, alloc)
    value = 2.0 * psi * amp - psi**2 * siso_denominator(params, channels, alloc)
    return _select(value, j, k)


def r_tilde_siso(params, channels, alloc, state, j=None):
    gamma = gamma_tilde_siso(params, channels, alloc, state)
    return _select(_log2_rate(params, channels, gamma), j)


def psi_star_siso(params, channels, alloc, j=None, k=None):
    """Closed-form maximizer of the SISO surrogate in psi."""
    _check_dims(params, channels, alloc)
    psi = siso_amplitude(params, channels, alloc) / siso_denominator(params, channels, alloc)
    return _select(psi, j, k)


def _miso_terms(params, channels, alloc):
    w = _require_beams(alloc)
    prods = beam_products(channels, w)
    own = np.einsum("aak->ak", prods)
    power = np.abs(prods) ** 2
    interference = np.maximum(power.sum(axis=1) - np.abs(own) ** 2, 0.0)
    share = (1.0 - alloc.split_ratios)[:, None]
    n = params.n_subcarriers
    denom = n * share * interference + share * params.antenna_noise + params.conversion_noise
    return prods, own, denom


def gamma_hat_miso(params, channels, alloc, state, j=None, k=None):
    """Surrogate SINR inside the MISO rate, shape (J, N)."""
    _check_dims(params, channels, alloc)
    _, own, denom = _miso_terms(params, channels, alloc)
    share = np.maximum(1.0 - alloc.split_ratios, 0.0)[:, None]
    psi = np.asarray(state.psi_id, dtype=complex)
    lin = 2.0 * np.sqrt(params.n_subcarriers * share) * np.real(np.conj(psi) * own)
    value = lin - np.abs(psi) ** 2 * denom
    return _select(value, j, k)


def r_hat_miso(params, channels, alloc, state, j=None):
    gamma = gamma_hat_miso(params, channels, alloc, state)
    return _select(_log2_rate(params, channels, gamma), j)


def psi_id_star(params, channels, alloc, j=None, k=None):
    _check_dims(params, channels, alloc)
    _, own, denom = _miso_terms(params, channels, alloc)
    share = np.maximum(1.0 - alloc.split_ratios, 0.0)[:, None]
    psi = np.sqrt(params.n_subcarriers * share) * own / denom
    return _select(psi, j, k)


def psi_eh_star_full(channels, alloc):
    """Per-stream maximizers ``psi[j, k, jp] = H[j, k] . W[jp, k]``, shape (J, N, J)."""
    prods = beam_products(channels, _require_beams(alloc))
    return np.transpose(prods, (0, 2, 1))


def psi_eh_star(channels, alloc, j=None, k=None):
    """Closed-form EH auxiliary ``H[j, k] . W[j, k]`` (the own-stream entry)."""
    own = np.einsum("aak->ak", beam_products(channels, _require_beams(alloc)))
    if j is None:
        return own
    _check_index_pair(own, j, k)
    return own[j] if k is None else complex(own[j, k])


def _check_index_pair(arr, j, k):
    if not -arr.shape[0] <= j < arr.shape[0]:
        raise IndexError(f"receiver index {j} out of range")
    if k is not None and not -arr.shape[1] <= k < arr.shape[1]:
        raise IndexError(f"subcarrier index {k} out of range")


def p_hat_eh_miso(params, channels, alloc, state, j=None):
    """Surrogate of the harvested-power bound, linear in the beamformers."""
    _check_dims(params, channels, alloc)
    prods = beam_products(channels, _require_beams(alloc))
    psi = np.transpose(np.asarray(state.psi_eh, dtype=complex), (0, 2, 1))
    quad = np.sum(2.0 * np.real(np.conj(psi) * prods) - np.abs(psi) ** 2, axis=(1, 2))
    rho = alloc.split_ratios
    n = params.n_subcarriers
    value = rho / _overhead(params, channels) * (miso_cp_term(params, channels) + n * quad)
    value = value + rho * params.antenna_noise
    return _select(value, j)
