"""Estimator-style wrappers around the optimizers.

``fit`` takes a channel realization and solves the allocation problem;
``predict`` evaluates the fitted allocation (per-user throughput) on the
same or another realization of equal shape; ``score`` returns the
objective.  Hyperparameters follow the scikit-learn conventions so the
estimators work with ``get_params``/``set_params``/``clone``.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import miso, siso
from .exceptions import ConfigError
from .model import evaluate
from .report import INFEASIBLE
from .validation import check_channels, check_nonneg_float, check_positive_int, params_for

OBJECTIVES = ("fair", "sum")


class IDETAllocator(BaseEstimator):
    """Power, splitting-ratio and beamformer allocation for one downlink.

    The SISO or MISO solver is chosen from the number of transmit antennas
    in the channels passed to :meth:`fit`.

    Parameters
    ----------
    objective : {"fair", "sum"}
        Maximize the minimum user throughput or the total throughput.
    n_subcarriers : int or None
        Needed only when ``fit`` receives a raw tap array.
    dc_requirements : float or sequence
        Output DC current demanded by each receiver.
    strategy : {"joint", "blockwise"}
        Update scheme of the SISO power/splitting step.
    n_starts : int
        Number of initial power patterns tried; the best end point is kept.
    random_state : int or None
        Recorded in the solve report for reproducibility.
    """

    def __init__(self, objective="fair", n_subcarriers=None, bandwidth=1.0, antenna_noise=0.1,
                 conversion_noise=0.1, tx_power=1.0, diode_k0=0.0, diode_k1=1.0, diode_k2=0.5,
                 dc_requirements=0.0, tolerance=1e-5, sinr_convention="own-channel",
                 max_outer=200, strategy="joint", n_starts=2, random_state=None):
        self.objective = objective
        self.n_subcarriers = n_subcarriers
        self.bandwidth = bandwidth
        self.antenna_noise = antenna_noise
        self.conversion_noise = conversion_noise
        self.tx_power = tx_power
        self.diode_k0 = diode_k0
        self.diode_k1 = diode_k1
        self.diode_k2 = diode_k2
        self.dc_requirements = dc_requirements
        self.tolerance = tolerance
        self.sinr_convention = sinr_convention
        self.max_outer = max_outer
        self.strategy = strategy
        self.n_starts = n_starts
        self.random_state = random_state

    def _system(self, channels):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        check_positive_int(self.max_outer, "max_outer")
        check_positive_int(self.n_starts, "n_starts")
        for name in ("antenna_noise", "conversion_noise"):
            check_nonneg_float(getattr(self, name), name)
        return params_for(
            channels,
            bandwidth=self.bandwidth, antenna_noise=self.antenna_noise,
            conversion_noise=self.conversion_noise, tx_power=self.tx_power,
            diode_k0=self.diode_k0, diode_k1=self.diode_k1, diode_k2=self.diode_k2,
            dc_requirements=self.dc_requirements, tolerance=self.tolerance,
            sinr_convention=self.sinr_convention,
        )

    def fit(self, X, y=None):
        channels = check_channels(X, self.n_subcarriers)
        params = self._system(channels)
        if params.is_siso:
            solver = siso.solve_fair_siso if self.objective == "fair" else siso.solve_sum_siso
            report = solver(params, channels, max_outer=self.max_outer, seed=self.random_state,
                            strategy=self.strategy, n_starts=self.n_starts)
        else:
            solver = miso.solve_fair_miso if self.objective == "fair" else miso.solve_sum_miso
            report = solver(params, channels, max_outer=self.max_outer, seed=self.random_state,
                            n_starts=self.n_starts)
        self.params_ = params
        self.channels_ = channels
        self.report_ = report
        self.allocation_ = report.allocation
        self.objective_ = report.objective
        self.status_ = report.status
        self.n_iter_ = report.iterations
        return self

    @property
    def feasible_(self):
        check_is_fitted(self, "report_")
        return self.report_.status != INFEASIBLE

    def _point(self, X):
        check_is_fitted(self, "report_")
        if self.allocation_ is None:
            raise ConfigError("the fitted problem was infeasible; no allocation to evaluate")
        channels = self.channels_ if X is None else check_channels(X, self.params_.n_subcarriers)
        if channels.taps.shape[:2] != self.channels_.taps.shape[:2]:
            raise ConfigError("channels must have the same receivers and antennas as in fit")
        return evaluate(self.params_, channels, self.allocation_, self.objective)

    def predict(self, X=None):
        """Per-user throughput of the fitted allocation, shape (J,)."""
        return self._point(X).throughput_per_user

    def predict_dc(self, X=None):
        """Per-user output DC of the fitted allocation, shape (J,)."""
        return self._point(X).dc_per_user

    def score(self, X=None, y=None):
        """Objective (min or sum throughput) of the fitted allocation."""
        return self._point(X).objective

    def fit_predict(self, X, y=None):
        return self.fit(X).predict()
