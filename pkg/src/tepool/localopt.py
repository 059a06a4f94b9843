"""Per-agent schedule optimization and the centralized pool oracle.

Each agent's decision vector stacks five per-slot blocks:

    [p_re | p_g | p_ac | p_f | p_et]   (p_et only in trading problems)

The thermal state is eliminated through the affine response
t_in = A p_ac + d, so the comfort band becomes linear rows in p_ac and
the problem stays a dense box/equality/inequality QP.

Three problems share the builders:

* standalone: no trading, balance p_re + p_g = demand; the per-agent
  benchmark cost.
* trading: given a price vector, adds p_et to the balance and the
  linear trading payment to the objective; solved once per consensus
  round by every agent.
* centralized: all agents stacked into one QP plus the pool-clearing
  rows sum_i p_et_i,t = 0; its clearing-row duals are the equilibrium
  prices. Used as a test oracle only -- agents never see it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .model import ProsumerSpec, Schedule
from .qp import INFEASIBLE, OPTIMAL, QpProblem, SolverConfig, feasibility_gap, solve_qp

# variable blocks, in stacking order
_BLOCKS = ("p_re", "p_g", "p_ac", "p_f", "p_et")


class InfeasibleError(Exception):
    """An agent's constraint set admits no schedule."""

    def __init__(self, agent_id, constraint, gap):
        self.agent_id = agent_id
        self.constraint = constraint
        self.gap = gap
        super().__init__(
            f"agent {agent_id}: no feasible schedule "
            f"(worst constraint {constraint}, relaxation {gap:.4g} kW)"
        )


class SolverFailure(Exception):
    """The QP backend could not certify optimality."""


def _agent_blocks(spec: ProsumerSpec, config: SolverConfig, with_trade: bool):
    """Q, c, bounds, equality rows and comfort rows for one agent."""
    h = spec.horizon
    nb = 5 if with_trade else 4
    n = nb * h
    sl = {name: slice(k * h, (k + 1) * h) for k, name in enumerate(_BLOCKS[:nb])}
    tariff, hvac, flex = spec.tariff, spec.hvac, spec.flex

    a_resp, d_free = model.thermal_response(hvac, spec.outdoor_temp)

    q = np.zeros((n, n))
    c = np.zeros(n)
    reg = config.reg_floor
    q[sl["p_re"], sl["p_re"]] = reg * np.eye(h)
    q[sl["p_g"], sl["p_g"]] = (2.0 * tariff.a_g + reg) * np.eye(h)
    q[sl["p_ac"], sl["p_ac"]] = 2.0 * hvac.beta_ac * (a_resp.T @ a_resp)
    q[sl["p_f"], sl["p_f"]] = 2.0 * flex.beta_f * np.eye(h)
    c[sl["p_g"]] = tariff.b_g
    c[sl["p_ac"]] = 2.0 * hvac.beta_ac * (a_resp.T @ (d_free - hvac.t_ref))
    c[sl["p_f"]] = -2.0 * flex.beta_f * flex.p_ref

    # balance rows, then the flex energy total
    n_eq = h + 1
    e_rows = np.zeros((n_eq, n))
    f_rhs = np.zeros(n_eq)
    for t in range(h):
        e_rows[t, sl["p_re"].start + t] = 1.0
        e_rows[t, sl["p_g"].start + t] = 1.0
        e_rows[t, sl["p_ac"].start + t] = -1.0
        e_rows[t, sl["p_f"].start + t] = -1.0
        if with_trade:
            e_rows[t, sl["p_et"].start + t] = 1.0
        f_rhs[t] = spec.inflexible[t]
    e_rows[h, sl["p_f"]] = 1.0
    f_rhs[h] = float(np.sum(flex.p_ref))
    eq_labels = [(model.BALANCE, t) for t in range(h)] + [(model.FLEX_TOTAL, None)]

    # comfort band as rows in p_ac
    g_rows = np.zeros((2 * h, n))
    g_rows[:h, sl["p_ac"]] = a_resp
    g_rows[h:, sl["p_ac"]] = -a_resp
    g_rhs = np.concatenate([hvac.t_max - d_free, d_free - hvac.t_min])
    ineq_labels = [(model.TEMPERATURE_LIMITS, t) for t in range(h)] * 2

    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    upper[sl["p_re"]] = spec.renewable_avail
    upper[sl["p_g"]] = spec.grid_cap
    lower[sl["p_f"]] = flex.p_min
    upper[sl["p_f"]] = flex.p_max
    bound_labels = (
        [(model.RENEWABLE_LIMITS, t) for t in range(h)]
        + [(model.GRID_LIMITS, t) for t in range(h)]
        + [(model.HVAC_NONNEG, t) for t in range(h)]
        + [(model.FLEX_LIMITS, t) for t in range(h)]
    )
    if with_trade:
        lower[sl["p_et"]] = -spec.renewable_avail
        upper[sl["p_et"]] = spec.effective_trade_cap
        bound_labels += [(model.OVERSELL, t) for t in range(h)]

    return q, c, e_rows, f_rhs, lower, upper, g_rows, g_rhs, eq_labels, ineq_labels, bound_labels, sl


def price_response_slope(spec: ProsumerSpec, config: SolverConfig | None = None) -> float:
    """Upper bound on |d p_et / d price| for one agent, in kW per $/kWh.

    The trade response aggregates every device's elasticity: the grid
    substitution slope 1/(2 a_g), the flexible-load slope 1/(2 beta_f)
    when the band has width, and the HVAC slope bounded through the
    smallest curvature of its comfort cost. Devices with zero
    sensitivity are feasibility-driven and price-insensitive, so they
    contribute nothing. Used to pick a stable consensus learning rate.
    """
    slope = 0.0
    if spec.tariff.a_g > 0:
        slope += 1.0 / (2.0 * spec.tariff.a_g)
    flex = spec.flex
    if flex.beta_f > 0 and np.any(flex.p_max > flex.p_min):
        slope += 1.0 / (2.0 * flex.beta_f)
    hvac = spec.hvac
    if hvac.beta_ac > 0:
        a_resp, _ = model.thermal_response(hvac, spec.outdoor_temp)
        lam_min = float(np.min(np.linalg.eigvalsh(a_resp.T @ a_resp)))
        if lam_min > 0:
            slope += 1.0 / (2.0 * hvac.beta_ac * lam_min)
    return slope


def build_standalone(spec: ProsumerSpec, config: SolverConfig | None = None) -> QpProblem:
    """QP for the no-trading benchmark problem."""
    cfg = config or SolverConfig()
    q, c, e, f, lo, up, g, h_rhs, el, il, bl, _ = _agent_blocks(spec, cfg, False)
    return QpProblem(
        Q=q, c=c, E=e, f=f, lower=lo, upper=up, G=g, h=h_rhs,
        eq_labels=el, ineq_labels=il, bound_labels=bl,
    )


def build_trading(spec: ProsumerSpec, prices, config: SolverConfig | None = None) -> QpProblem:
    """QP for one agent's problem at a fixed trading price vector."""
    cfg = config or SolverConfig()
    prices = np.asarray(prices, dtype=float)
    if prices.shape != (spec.horizon,):
        raise ValueError("price vector length must match the horizon")
    q, c, e, f, lo, up, g, h_rhs, el, il, bl, sl = _agent_blocks(spec, cfg, True)
    c[sl["p_et"]] = prices
    return QpProblem(
        Q=q, c=c, E=e, f=f, lower=lo, upper=up, G=g, h=h_rhs,
        eq_labels=el, ineq_labels=il, bound_labels=bl,
    )


def _renewable_first(spec: ProsumerSpec, p_re, p_g):
    """Deterministic tie-break: source supply from renewables before the
    grid. A no-op whenever grid power has positive marginal cost."""
    supply = p_re + p_g
    re = np.minimum(spec.renewable_avail, supply)
    return re, np.maximum(supply - re, 0.0)


def _extract_schedule(spec: ProsumerSpec, x, sl, with_trade: bool) -> Schedule:
    h = spec.horizon
    p_re = np.clip(x[sl["p_re"]], 0.0, spec.renewable_avail)
    p_g = np.clip(x[sl["p_g"]], 0.0, spec.grid_cap)
    p_re, p_g = _renewable_first(spec, p_re, p_g)
    p_ac = np.maximum(x[sl["p_ac"]], 0.0)
    p_f = np.clip(x[sl["p_f"]], spec.flex.p_min, spec.flex.p_max)
    p_et = x[sl["p_et"]].copy() if with_trade else np.zeros(h)
    t_in = model.unroll_temperature(spec.hvac, spec.outdoor_temp, p_ac)
    return Schedule(p_re=p_re, p_g=p_g, p_ac=p_ac, p_f=p_f, p_et=p_et, t_in=t_in)


def _solve_or_raise(problem, cfg, agent_id, warm_active=None):
    sol = solve_qp(problem, cfg, warm_active=warm_active)
    if sol.status == OPTIMAL:
        return sol
    if warm_active is not None:
        sol = solve_qp(problem, cfg)
        if sol.status == OPTIMAL:
            return sol
    if sol.status == INFEASIBLE:
        gap, label = feasibility_gap(problem)
        raise InfeasibleError(agent_id, label, gap)
    gap, label = feasibility_gap(problem)
    if gap > 10 * model.TOL_FEAS:
        raise InfeasibleError(agent_id, label, gap)
    raise SolverFailure(
        f"agent {agent_id}: QP not certified (residual {sol.kkt_residual:.3g})"
    )


def solve_standalone(
    spec: ProsumerSpec, config: SolverConfig | None = None
) -> tuple[Schedule, float]:
    """Benchmark schedule and cost with trading disabled."""
    cfg = config or SolverConfig()
    problem = build_standalone(spec, cfg)
    sol = _solve_or_raise(problem, cfg, spec.id)
    h = spec.horizon
    sl = {name: slice(k * h, (k + 1) * h) for k, name in enumerate(_BLOCKS[:4])}
    schedule = _extract_schedule(spec, sol.x, sl, with_trade=False)
    return schedule, model.operating_cost(spec, schedule)


class TradingSolver:
    """Re-solves one agent's trading problem round after round.

    The QP structure is fixed; only the price term changes, so the
    problem object is built once and each solve warm-starts from the
    previous round's active set.
    """

    def __init__(self, spec: ProsumerSpec, config: SolverConfig | None = None):
        self.spec = spec
        self.cfg = config or SolverConfig()
        self.problem = build_trading(spec, np.zeros(spec.horizon), self.cfg)
        h = spec.horizon
        self.slices = {
            name: slice(k * h, (k + 1) * h) for k, name in enumerate(_BLOCKS)
        }
        self._warm = None

    def solve(self, prices) -> tuple[Schedule, float]:
        """Schedule and total cost (operating + trading) at these prices."""
        prices = np.asarray(prices, dtype=float)
        self.problem.c[self.slices["p_et"]] = prices
        sol = _solve_or_raise(self.problem, self.cfg, self.spec.id, self._warm)
        self._warm = sol.active_set
        schedule = _extract_schedule(self.spec, sol.x, self.slices, with_trade=True)
        cost = model.operating_cost(self.spec, schedule) + model.trading_cost(
            schedule.p_et, prices
        )
        return schedule, cost


def solve_trading(
    spec: ProsumerSpec, prices, config: SolverConfig | None = None
) -> tuple[Schedule, float]:
    """One-shot trading solve at a fixed price vector."""
    return TradingSolver(spec, config).solve(prices)


def solve_centralized(
    specs: list[ProsumerSpec], config: SolverConfig | None = None
) -> tuple[list[Schedule], np.ndarray, float]:
    """Joint pool optimum with full information; the testing oracle.

    Stacks every agent into one QP coupled by the clearing rows
    sum_i p_et_i,t = 0 and returns (schedules, prices, total_cost)
    where prices are the clearing-row duals, i.e. the equilibrium
    trading prices the decentralized run must agree with.
    """
    cfg = config or SolverConfig()
    if len(specs) < 2:
        raise ValueError("the pool needs at least two agents")
    h = specs[0].horizon
    if any(s.horizon != h for s in specs):
        raise ValueError("all agents must share one horizon")

    parts = [_agent_blocks(s, cfg, True) for s in specs]
    n_agent = 5 * h
    n = n_agent * len(specs)
    big_q = np.zeros((n, n))
    big_c = np.zeros(n)
    e_blocks, g_blocks = [], []
    f_all, h_all = [], []
    lower = np.empty(n)
    upper = np.empty(n)
    eq_labels, ineq_labels, bound_labels = [], [], []
    for i, (q, c, e, f, lo, up, g, h_rhs, el, il, bl, _) in enumerate(parts):
        base = i * n_agent
        big_q[base : base + n_agent, base : base + n_agent] = q
        big_c[base : base + n_agent] = c
        pad_e = np.zeros((e.shape[0], n))
        pad_e[:, base : base + n_agent] = e
        e_blocks.append(pad_e)
        f_all.append(f)
        pad_g = np.zeros((g.shape[0], n))
        pad_g[:, base : base + n_agent] = g
        g_blocks.append(pad_g)
        h_all.append(h_rhs)
        lower[base : base + n_agent] = lo
        upper[base : base + n_agent] = up
        sid = specs[i].id
        eq_labels += [(sid,) + lab for lab in el]
        ineq_labels += [(sid,) + lab for lab in il]
        bound_labels += [(sid,) + lab for lab in bl]

    # pool clearing rows, one per slot, appended last
    clearing = np.zeros((h, n))
    for i in range(len(specs)):
        et0 = i * n_agent + 4 * h
        clearing[np.arange(h), et0 + np.arange(h)] = 1.0
    e_blocks.append(clearing)
    f_all.append(np.zeros(h))
    eq_labels += [("pool", "clearing", t) for t in range(h)]

    problem = QpProblem(
        Q=big_q,
        c=big_c,
        E=np.vstack(e_blocks),
        f=np.concatenate(f_all),
        lower=lower,
        upper=upper,
        G=np.vstack(g_blocks),
        h=np.concatenate(h_all),
        eq_labels=eq_labels,
        ineq_labels=ineq_labels,
        bound_labels=bound_labels,
    )
    sol = _solve_or_raise(problem, cfg, "pool")
    prices = sol.eq_duals[-h:].copy()

    schedules = []
    total = 0.0
    for i, spec in enumerate(specs):
        base = i * n_agent
        sl = {
            name: slice(base + k * h, base + (k + 1) * h)
            for k, name in enumerate(_BLOCKS)
        }
        sched = _extract_schedule(spec, sol.x, sl, with_trade=True)
        schedules.append(sched)
        total += model.operating_cost(spec, sched)
    return schedules, prices, total
