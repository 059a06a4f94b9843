"""Prosumer device models, cost functions and feasibility checks.

All quantities are per operating slot. The slot length defaults to one
hour so kW and kWh coincide numerically; power in kW, prices in $/kWh,
temperatures in degrees C.

Supply side: grid draw p_g bounded by the connection capacity, renewable
use p_re bounded by the available generation (curtailment is allowed).
The grid applies a linearized tiered tariff, unit price a_g * p_g + b_g,
so a slot's bill is a_g * p_g^2 + b_g * p_g.

Demand side: an HVAC unit with first-order thermal dynamics

    t_in[k] = t_in[k-1] - (t_in[k-1] - t_out[k] + eta * phi_r * p_ac[k])
              / (phi_c * phi_r)

(eta > 0 cools, eta < 0 heats), a shiftable-but-not-curtailable flexible
load whose slot total must match the preferred schedule, and a fixed
inflexible load. Comfort deviations are charged quadratically.

Trading: p_et > 0 buys from the neighborhood pool, p_et < 0 sells.
Selling is capped by the slot's renewable availability so nobody resells
grid power.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Feasibility slack for balance and bound checks, in kW. Well above QP
# solver tolerance, well below any meaningful amount of power.
TOL_FEAS = 1e-6

# Trade purchases are boxed at this multiple of the grid connection when
# no explicit cap is configured; generous enough to never bind.
DEFAULT_TRADE_CAP_FACTOR = 10.0


def _series(x, h: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(h, float(arr))
    if arr.shape != (h,):
        raise ValueError(f"{name} must have length {h}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass
class Horizon:
    """Operating window: number of slots and slot length in hours."""

    slots: int
    slot_hours: float = 1.0

    def __post_init__(self):
        if self.slots < 1:
            raise ValueError("horizon needs at least one slot")
        if self.slot_hours <= 0:
            raise ValueError("slot_hours must be positive")


@dataclass
class TariffModel:
    """Linearized tiered tariff: unit price a_g * p_g + b_g ($/kWh)."""

    a_g: float = 0.01
    b_g: float = 0.03

    def __post_init__(self):
        if self.a_g < 0 or self.b_g < 0:
            raise ValueError("tariff coefficients must be nonnegative")


@dataclass
class HvacParams:
    """HVAC unit parameters.

    phi_c and phi_r are the thermal capacitance/resistance parameters of
    the first-order recursion; eta is the working mode (+ cooling,
    - heating). beta_ac is the discomfort sensitivity in $/degC^2.
    t_init is the indoor temperature entering slot 0 and defaults to the
    setpoint t_ref.
    """

    phi_c: float = 3.3
    phi_r: float = 1.35
    eta: float = 1.0
    t_ref: float = 24.0
    t_min: float = 18.0
    t_max: float = 28.0
    beta_ac: float = 0.0
    t_init: float | None = None

    def __post_init__(self):
        if self.phi_c <= 0 or self.phi_r <= 0:
            raise ValueError("phi_c and phi_r must be positive")
        if self.eta == 0:
            raise ValueError("eta must be nonzero")
        if not self.t_min <= self.t_ref <= self.t_max:
            raise ValueError("need t_min <= t_ref <= t_max")
        if self.beta_ac < 0:
            raise ValueError("beta_ac must be nonnegative")
        if self.t_init is None:
            self.t_init = self.t_ref


@dataclass
class FlexLoadParams:
    """Shiftable load: per-slot bounds, preferred schedule, sensitivity."""

    p_min: np.ndarray
    p_max: np.ndarray
    p_ref: np.ndarray
    beta_f: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.p_ref).size
        self.p_min = _series(self.p_min, h, "flex.p_min")
        self.p_max = _series(self.p_max, h, "flex.p_max")
        self.p_ref = _series(self.p_ref, h, "flex.p_ref")
        if np.any(self.p_min < 0):
            raise ValueError("flex.p_min must be nonnegative")
        if np.any(self.p_min > self.p_max):
            raise ValueError("need flex.p_min <= flex.p_max in every slot")
        if np.any(self.p_ref < self.p_min - TOL_FEAS) or np.any(
            self.p_ref > self.p_max + TOL_FEAS
        ):
            raise ValueError("preferred flex schedule must lie within its bounds")
        if self.beta_f < 0:
            raise ValueError("beta_f must be nonnegative")

    @staticmethod
    def zero(h: int) -> "FlexLoadParams":
        z = np.zeros(h)
        return FlexLoadParams(p_min=z, p_max=z.copy(), p_ref=z.copy(), beta_f=0.0)


@dataclass
class ProsumerSpec:
    """One agent's private parameters and exogenous series."""

    id: str
    grid_cap: float
    renewable_avail: np.ndarray
    inflexible: np.ndarray
    outdoor_temp: np.ndarray
    hvac: HvacParams
    flex: FlexLoadParams
    tariff: TariffModel
    trade_cap: float | None = None  # None -> DEFAULT_TRADE_CAP_FACTOR * grid_cap

    def __post_init__(self):
        h = np.asarray(self.renewable_avail).size
        self.renewable_avail = _series(self.renewable_avail, h, "renewable_avail")
        self.inflexible = _series(self.inflexible, h, "inflexible")
        self.outdoor_temp = _series(self.outdoor_temp, h, "outdoor_temp")
        if self.grid_cap <= 0:
            raise ValueError(f"agent {self.id}: grid_cap must be positive")
        if np.any(self.renewable_avail < 0):
            raise ValueError(f"agent {self.id}: renewable_avail must be nonnegative")
        if np.any(self.inflexible < 0):
            raise ValueError(f"agent {self.id}: inflexible load must be nonnegative")
        if self.flex.p_ref.size != h:
            raise ValueError(f"agent {self.id}: flex series length != horizon")
        if self.trade_cap is not None and self.trade_cap < 0:
            raise ValueError(f"agent {self.id}: trade_cap must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.renewable_avail.size

    @property
    def effective_trade_cap(self) -> float:
        if self.trade_cap is not None:
            return self.trade_cap
        return DEFAULT_TRADE_CAP_FACTOR * self.grid_cap


@dataclass
class Schedule:
    """One agent's decision vector over the horizon.

    All power series are in kW; p_et may be negative (selling). t_in is
    derived from p_ac via the thermal recursion and kept for reporting.
    """

    p_re: np.ndarray
    p_g: np.ndarray
    p_ac: np.ndarray
    p_f: np.ndarray
    p_et: np.ndarray
    t_in: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.p_re).size
        self.p_re = _series(self.p_re, h, "p_re")
        self.p_g = _series(self.p_g, h, "p_g")
        self.p_ac = _series(self.p_ac, h, "p_ac")
        self.p_f = _series(self.p_f, h, "p_f")
        self.p_et = _series(self.p_et, h, "p_et")
        self.t_in = _series(self.t_in, h, "t_in")

    @staticmethod
    def zero(h: int) -> "Schedule":
        z = np.zeros(h)
        return Schedule(z, z.copy(), z.copy(), z.copy(), z.copy(), z.copy())


# ---------------------------------------------------------------------------
# Thermal dynamics
# ---------------------------------------------------------------------------

def thermal_step(t_prev: float, t_out: float, p_ac: float, hvac: HvacParams) -> float:
    """Advance the indoor temperature by one slot."""
    return t_prev - (t_prev - t_out + hvac.eta * hvac.phi_r * p_ac) / (
        hvac.phi_c * hvac.phi_r
    )


def unroll_temperature(hvac: HvacParams, t_out, p_ac) -> np.ndarray:
    """Indoor temperature series implied by an HVAC power series."""
    t_out = np.asarray(t_out, dtype=float)
    p_ac = np.asarray(p_ac, dtype=float)
    if t_out.shape != p_ac.shape or t_out.ndim != 1:
        raise ValueError("t_out and p_ac must be 1-d series of equal length")
    t_in = np.empty_like(t_out)
    t = hvac.t_init
    for k in range(t_out.size):
        t = thermal_step(t, t_out[k], p_ac[k], hvac)
        t_in[k] = t
    return t_in


def thermal_response(hvac: HvacParams, t_out) -> tuple[np.ndarray, np.ndarray]:
    """Affine form of the unrolled dynamics: t_in = A @ p_ac + d.

    A is lower triangular with A[k, j] = -(eta / phi_c) * alpha^(k - j)
    where alpha = 1 - 1 / (phi_c * phi_r); d is the free response from
    t_init and the outdoor series. Used by the optimizers to eliminate
    the temperature state.
    """
    t_out = np.asarray(t_out, dtype=float)
    h = t_out.size
    alpha = 1.0 - 1.0 / (hvac.phi_c * hvac.phi_r)
    gain = -hvac.eta / hvac.phi_c
    powers = alpha ** np.arange(h)
    a = np.zeros((h, h))
    for k in range(h):
        a[k, : k + 1] = gain * powers[k::-1]
    d = np.empty(h)
    t = hvac.t_init
    for k in range(h):
        t = thermal_step(t, t_out[k], 0.0, hvac)
        d[k] = t
    return a, d


# ---------------------------------------------------------------------------
# Cost functions
# ---------------------------------------------------------------------------

def grid_cost(p_g, tariff: TariffModel) -> float:
    """Electricity bill for a grid-draw series under the linear tariff."""
    p_g = np.asarray(p_g, dtype=float)
    if np.any(p_g < 0):
        raise ValueError("grid draw must be nonnegative")
    return float(np.sum(tariff.a_g * p_g**2 + tariff.b_g * p_g))


def hvac_discomfort(t_in, hvac: HvacParams) -> float:
    """Quadratic discomfort for setpoint deviations."""
    t_in = np.asarray(t_in, dtype=float)
    return float(hvac.beta_ac * np.sum((t_in - hvac.t_ref) ** 2))


def flex_discomfort(p_f, flex: FlexLoadParams) -> float:
    """Quadratic discomfort for shifting away from the preferred schedule."""
    p_f = np.asarray(p_f, dtype=float)
    if p_f.shape != flex.p_ref.shape:
        raise ValueError("flex series length mismatch")
    return float(flex.beta_f * np.sum((p_f - flex.p_ref) ** 2))


def operating_cost(spec: ProsumerSpec, schedule: Schedule) -> float:
    """Total operating cost: grid bill + HVAC discomfort + flex discomfort."""
    t_in = unroll_temperature(spec.hvac, spec.outdoor_temp, schedule.p_ac)
    return (
        grid_cost(schedule.p_g, spec.tariff)
        + hvac_discomfort(t_in, spec.hvac)
        + flex_discomfort(schedule.p_f, spec.flex)
    )


def trading_cost(p_et, prices) -> float:
    """Net trading payment; negative when sales revenue dominates."""
    p_et = np.asarray(p_et, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if p_et.shape != prices.shape:
        raise ValueError("trade and price series length mismatch")
    return float(np.dot(prices, p_et))


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------

# Constraint identifiers reported in violations (and in infeasibility
# diagnostics from the optimizers).
GRID_LIMITS = "grid_limits"
RENEWABLE_LIMITS = "renewable_limits"
TEMPERATURE_LIMITS = "temperature_limits"
HVAC_NONNEG = "hvac_nonneg"
FLEX_LIMITS = "flex_limits"
FLEX_TOTAL = "flex_total"
OVERSELL = "oversell"
BALANCE = "balance"
NO_TRADE = "no_trade"

STANDALONE = "standalone"
COORDINATED = "coordinated"


@dataclass
class Violation:
    constraint: str
    slot: int | None
    magnitude: float

    def __str__(self):
        where = f" slot {self.slot}" if self.slot is not None else ""
        return f"{self.constraint}{where}: off by {self.magnitude:.6g}"


def validate_schedule(
    spec: ProsumerSpec,
    schedule: Schedule,
    mode: str = STANDALONE,
    tol: float = TOL_FEAS,
) -> list[Violation]:
    """Check a schedule against every device and market constraint.

    Returns one entry per violated constraint (violations are data, not
    errors); an empty list means the schedule is feasible to within tol.
    In standalone mode the balance excludes trading and p_et must be
    zero; in coordinated mode trades enter the balance and the oversell
    bound applies.
    """
    if mode not in (STANDALONE, COORDINATED):
        raise ValueError(f"unknown mode {mode!r}")
    out: list[Violation] = []
    h = spec.horizon

    def check_series(name, excess):
        for t in np.nonzero(excess > tol)[0]:
            out.append(Violation(name, int(t), float(excess[t])))

    check_series(GRID_LIMITS, np.maximum(-schedule.p_g, schedule.p_g - spec.grid_cap))
    check_series(
        RENEWABLE_LIMITS,
        np.maximum(-schedule.p_re, schedule.p_re - spec.renewable_avail),
    )
    check_series(
        FLEX_LIMITS,
        np.maximum(spec.flex.p_min - schedule.p_f, schedule.p_f - spec.flex.p_max),
    )

    flex_gap = abs(float(np.sum(schedule.p_f) - np.sum(spec.flex.p_ref)))
    if flex_gap > tol * max(1, h):
        out.append(Violation(FLEX_TOTAL, None, flex_gap))

    t_in = unroll_temperature(spec.hvac, spec.outdoor_temp, schedule.p_ac)
    check_series(
        TEMPERATURE_LIMITS,
        np.maximum(spec.hvac.t_min - t_in, t_in - spec.hvac.t_max),
    )
    check_series(HVAC_NONNEG, -schedule.p_ac)

    demand = schedule.p_ac + schedule.p_f + spec.inflexible
    if mode == STANDALONE:
        check_series(NO_TRADE, np.abs(schedule.p_et))
        residual = np.abs(schedule.p_re + schedule.p_g - demand)
    else:
        check_series(OVERSELL, -(schedule.p_et + spec.renewable_avail))
        residual = np.abs(schedule.p_re + schedule.p_g + schedule.p_et - demand)
    check_series(BALANCE, residual)

    return out
