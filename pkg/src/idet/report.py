"""Result records returned by the alternating optimizers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ResourceAllocation

CONVERGED = "converged"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass
class SolveReport:
    allocation: Optional[ResourceAllocation]
    objective: float
    objective_kind: str
    objective_trace: list = field(default_factory=list)
    feasibility_residuals: dict = field(default_factory=dict)
    iterations: int = 0
    status: str = CONVERGED
    seed: Optional[int] = None
    wall_time: float = 0.0
    rates: Optional[np.ndarray] = None
    dc: Optional[np.ndarray] = None
    message: str = ""

    @property
    def converged(self):
        return self.status == CONVERGED

    def to_dict(self, include_timing=True):
        out = {
            "objective": self.objective,
            "objective_kind": self.objective_kind,
            "status": self.status,
            "iterations": self.iterations,
            "seed": self.seed,
            "objective_trace": list(self.objective_trace),
            "feasibility_residuals": self.feasibility_residuals,
            "rates": self.rates,
            "dc": self.dc,
            "message": self.message,
            "allocation": None if self.allocation is None else self.allocation.to_dict(),
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return _plain(out)

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing), indent=2)


@dataclass
class MisoSolveReport(SolveReport):
    stationarity_residual: float = float("nan")
    psi_eh: Optional[np.ndarray] = None
    psi_id: Optional[np.ndarray] = None

    @property
    def beamformers(self):
        return None if self.allocation is None else self.allocation.beamformers

    def to_dict(self, include_timing=True):
        out = super().to_dict(include_timing)
        out["stationarity_residual"] = self.stationarity_residual
        for name in ("psi_eh", "psi_id"):
            z = getattr(self, name)
            out[name] = None if z is None else np.stack([z.real, z.imag], axis=-1).tolist()
        return out
