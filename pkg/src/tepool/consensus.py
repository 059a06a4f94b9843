"""Decentralized market clearing by price consensus with mismatch tracking.

Every round r each agent i runs three synchronous phases, reading only
its neighbors' round r-1 values:

    price:     lam_i[r] = sum_j w[i][j] * lam_j[r-1] + eps * e_i[r-1]
    schedule:  solve its own trading problem at lam_i[r]  -> p_et_i[r]
    mismatch:  e_i[r]  = sum_j w[i][j] * e_j[r-1] + p_et_i[r] - p_et_i[r-1]

Excess pool demand pushes the price estimates up, excess supply pushes
them down. With a doubly stochastic W and e[0] = p_et[0] = 0, the sums
satisfy sum_i e_i[r][t] = sum_i p_et_i[r][t] at every round (the
tracking property), so driving every ||e_i|| to zero is the same as
clearing the market. The loop stops when consecutive price estimates
and all mismatch estimates are inside tolerance and the actual pool
imbalance is below clearing_tol in every slot.

Only prices and mismatch estimates ever cross the message board; device
parameters and usage stay inside each agent's solver.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .localopt import TradingSolver, price_response_slope
from .model import ProsumerSpec, Schedule
from .qp import SolverConfig
from .topology import Topology, WeightMatrix, metropolis_weights

AUTO_EPSILON = "auto"

# tracking conservation must hold to float accuracy at every round
TRACKING_TOL = 1e-9


@dataclass
class ConsensusConfig:
    """Engine knobs.

    epsilon is the price correction per kW of estimated mismatch;
    "auto" backs it off the neighborhood's steepest price response,
    which stays stable for every tested size and topology. lambda_init
    = None starts every agent at its own base grid price (any start
    converges; this one is just quick).
    """

    epsilon: float | str = 0.005
    tol_lambda: float = 1e-4
    tol_e: float = 1e-3
    clearing_tol: float = 1e-3
    max_rounds: int = 5000
    lambda_init: float | None = None
    debug_tracking: bool = False

    def __post_init__(self):
        if self.epsilon != AUTO_EPSILON and float(self.epsilon) <= 0:
            raise ValueError("epsilon must be positive")
        if min(self.tol_lambda, self.tol_e, self.clearing_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")


@dataclass
class AgentState:
    lam: np.ndarray
    e: np.ndarray
    p_et_prev: np.ndarray
    schedule: Schedule | None = None
    round: int = 0


@dataclass
class RunTrace:
    """Per-round record of the whole run, for analysis and reporting."""

    agent_ids: list[str]
    epsilon: float
    lambdas: list = field(default_factory=list)  # (N, H) per round
    e_norms: list = field(default_factory=list)  # (N,) per round
    clearing: list = field(default_factory=list)  # (H,) sum of trades
    sum_e: list = field(default_factory=list)  # (H,) sum of estimates
    objectives: list = field(default_factory=list)  # (N,) per round
    converged: bool = False
    rounds: int = 0
    wall_time_s: float = 0.0


@dataclass
class RunResult:
    trace: RunTrace
    schedules: list[Schedule]
    prices: np.ndarray  # (N, H) final per-agent price estimates

    @property
    def consensus_prices(self) -> np.ndarray:
        """Pool price per slot: agents agree at termination, report the mean."""
        return self.prices.mean(axis=0)


def resolve_epsilon(config: ConsensusConfig, specs: list[ProsumerSpec]) -> float:
    """Learning rate; "auto" backs off the steepest price response.

    A price correction of eps per kW of mismatch is stable when eps
    times the aggregate trade elasticity stays under 2; half of the
    worst single-agent bound keeps a wide margin on every topology.
    """
    if config.epsilon == AUTO_EPSILON:
        worst = max(price_response_slope(s) for s in specs)
        return 0.7 / worst if worst > 0 else 0.005
    return float(config.epsilon)


def init_states(
    specs: list[ProsumerSpec], config: ConsensusConfig
) -> list[AgentState]:
    """Round-0 states: arbitrary price start, zero mismatch and trades."""
    if not specs:
        raise ValueError("need at least one agent")
    h = specs[0].horizon
    if any(s.horizon != h for s in specs):
        raise ValueError("all agents must share one horizon")
    states = []
    for spec in specs:
        lam0 = config.lambda_init
        lam = np.full(h, spec.tariff.b_g if lam0 is None else float(lam0))
        states.append(
            AgentState(lam=lam, e=np.zeros(h), p_et_prev=np.zeros(h))
        )
    return states


def price_update(
    states: list[AgentState], w: WeightMatrix, epsilon: float
) -> np.ndarray:
    """New price estimates: neighbor average plus mismatch correction."""
    lam = np.array([s.lam for s in states])
    e = np.array([s.e for s in states])
    return w.w @ lam + epsilon * e


def mismatch_update(
    states: list[AgentState], w: WeightMatrix, new_trades: np.ndarray
) -> np.ndarray:
    """New mismatch estimates: neighbor average plus own trade change."""
    e = np.array([s.e for s in states])
    prev = np.array([s.p_et_prev for s in states])
    return w.w @ e + (new_trades - prev)


def check_convergence(
    states: list[AgentState], prev_lambda: np.ndarray, config: ConsensusConfig
) -> bool:
    """Terminate when EVERY agent's price stopped moving and its
    mismatch estimate is negligible (2-norms over the horizon)."""
    for i, s in enumerate(states):
        if np.linalg.norm(s.lam - prev_lambda[i]) > config.tol_lambda:
            return False
        if np.linalg.norm(s.e) > config.tol_e:
            return False
    return True


def run(
    specs: list[ProsumerSpec],
    topology: Topology | WeightMatrix,
    config: ConsensusConfig | None = None,
    solver_config: SolverConfig | None = None,
    threads: int = 1,
) -> RunResult:
    """Run synchronous consensus rounds until the pool clears.

    Args:
        specs: the neighborhood; one private spec per agent.
        topology: communication graph (Metropolis weights are derived)
            or an explicit, validated weight matrix.
        config: engine tolerances and learning rate.
        solver_config: per-agent QP settings.
        threads: worker cap for the per-agent solve phase; any value
            yields bit-identical results.

    Returns a RunResult whose trace records every round. Exhausting
    max_rounds reports converged=False rather than raising; an
    infeasible agent raises InfeasibleError carrying the agent id.
    """
    cfg = config or ConsensusConfig()
    if isinstance(topology, Topology):
        if topology.n != len(specs):
            raise ValueError("topology size must match the number of agents")
        weights = metropolis_weights(topology)
    else:
        weights = topology
        if weights.n != len(specs):
            raise ValueError("weight matrix size must match the number of agents")
        weights.validate()

    eps = resolve_epsilon(cfg, specs)
    states = init_states(specs, cfg)
    solvers = [TradingSolver(s, solver_config) for s in specs]
    trace = RunTrace(agent_ids=[s.id for s in specs], epsilon=eps)

    start = time.perf_counter()
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for r in range(1, cfg.max_rounds + 1):
            prev_lambda = np.array([s.lam for s in states])
            lam_new = price_update(states, weights, eps)

            if pool is not None:
                results = list(
                    pool.map(lambda iv: iv[0].solve(iv[1]), zip(solvers, lam_new))
                )
            else:
                results = [sv.solve(lam) for sv, lam in zip(solvers, lam_new)]
            trades = np.array([sched.p_et for sched, _ in results])
            costs = np.array([cost for _, cost in results])

            for i, s in enumerate(states):
                s.lam = lam_new[i]
            e_new = mismatch_update(states, weights, trades)
            for i, s in enumerate(states):
                s.e = e_new[i]
                s.p_et_prev = trades[i]
                s.schedule = results[i][0]
                s.round = r

            slot_clearing = trades.sum(axis=0)
            slot_sum_e = e_new.sum(axis=0)
            if cfg.debug_tracking:
                drift = float(np.max(np.abs(slot_sum_e - slot_clearing)))
                if drift > TRACKING_TOL:
                    raise AssertionError(
                        f"tracking conservation violated at round {r}: {drift:.3e}"
                    )

            trace.lambdas.append(lam_new)
            trace.e_norms.append(np.linalg.norm(e_new, axis=1))
            trace.clearing.append(slot_clearing)
            trace.sum_e.append(slot_sum_e)
            trace.objectives.append(costs)
            trace.rounds = r

            if check_convergence(states, prev_lambda, cfg) and (
                float(np.max(np.abs(slot_clearing))) <= cfg.clearing_tol
            ):
                trace.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    trace.wall_time_s = time.perf_counter() - start

    return RunResult(
        trace=trace,
        schedules=[s.schedule for s in states],
        prices=np.array([s.lam for s in states]),
    )
