"""tepool: decentralized transactive-energy trading simulator.

A neighborhood of prosumer agents, each with private HVAC, flexible and
inflexible loads plus renewable generation, clears an energy-trading
pool by exchanging only price and mismatch estimates with its
communication neighbors -- no central coordinator and no sharing of
private usage data.
"""

from .model import (
    FlexLoadParams,
    Horizon,
    HvacParams,
    ProsumerSpec,
    Schedule,
    TariffModel,
    Violation,
    flex_discomfort,
    grid_cost,
    hvac_discomfort,
    operating_cost,
    thermal_response,
    thermal_step,
    trading_cost,
    unroll_temperature,
    validate_schedule,
)
from .qp import QpProblem, QpSolution, SolverConfig, kkt_residual, solve_qp

__all__ = [
    "FlexLoadParams",
    "Horizon",
    "HvacParams",
    "ProsumerSpec",
    "QpProblem",
    "QpSolution",
    "Schedule",
    "SolverConfig",
    "TariffModel",
    "Violation",
    "flex_discomfort",
    "grid_cost",
    "hvac_discomfort",
    "kkt_residual",
    "operating_cost",
    "solve_qp",
    "thermal_response",
    "thermal_step",
    "trading_cost",
    "unroll_temperature",
    "validate_schedule",
]

__version__ = "0.1.0"
