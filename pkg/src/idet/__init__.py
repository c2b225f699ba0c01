"""Resource allocation for OFDM integrated data and energy transfer (IDET).

Power splitting receivers, a nonlinear diode harvesting model, SISO power
allocation and MISO beamforming solved by quadratic-transform alternation.
"""

from .channels import ChannelSet, fft_channel, generate_channels
from .estimators import IDETAllocator
from .exceptions import (
    ConfigError,
    IDETError,
    InfeasibleError,
    InvalidChannelError,
    NumericError,
    SurrogateDomainError,
    UnsupportedDiodeError,
)
from .miso import init_feasible_miso, solve_fair_miso, solve_sum_miso
from .model import (
    RateEnergyPoint,
    ResourceAllocation,
    SystemParams,
    dc_output,
    eh_power_bound_miso,
    eh_power_siso,
    eh_power_threshold,
    evaluate,
    sinr_miso,
    sinr_siso,
    throughput_miso,
    throughput_siso,
)
from .report import MisoSolveReport, SolveReport
from .siso import solve_fair_siso, solve_sum_siso

__version__ = "0.1.0"

__all__ = [
    "ChannelSet", "ConfigError", "IDETAllocator", "IDETError", "InfeasibleError",
    "InvalidChannelError", "MisoSolveReport", "NumericError", "RateEnergyPoint",
    "ResourceAllocation", "SolveReport", "SurrogateDomainError", "SystemParams",
    "UnsupportedDiodeError", "dc_output", "eh_power_bound_miso", "eh_power_siso",
    "eh_power_threshold", "evaluate", "fft_channel", "generate_channels",
    "init_feasible_miso", "sinr_miso", "sinr_siso", "solve_fair_miso", "solve_fair_siso",
    "solve_sum_miso", "solve_sum_siso", "throughput_miso", "throughput_siso",
]
