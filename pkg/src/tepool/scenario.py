"""Scenario files: one YAML document wiring a whole simulation together.

Sections (all keys have working defaults except agents[].id):

    format_version: 1
    seed: 7
    horizon:   {slots: 24, slot_hours: 1.0}
    profiles:  profiles.csv            # path relative to the scenario file
    tariff:    {a_g: 0.01, b_g: 0.03}  # $/kWh per kW, $/kWh; per-agent override allowed
    topology:  {kind: complete}        # or {kind: star, hub: 0}
                                       # or {kind: ring, k: 2}
                                       # or {kind: explicit, weights: [[...], ...]}
    consensus: {epsilon: auto, tol_lambda: 1.0e-4, tol_e: 1.0e-3,
                clearing_tol: 1.0e-3, max_rounds: 5000, lambda_init: null}
    solver:    {qp_tol: 1.0e-8, max_qp_iter: 20000, reg_floor: 1.0e-9}
    agents:
      - id: home00                     # must match an agent in the profile CSV
        grid_cap: 12.0                 # kW
        trade_cap: null                # kW; null = 10 x grid_cap
        tariff: {a_g: 0.01, b_g: 0.03}
        hvac: {phi_c: 3.3, phi_r: 1.35, eta: 1.0, t_ref: 24.0,
               t_min: 18.0, t_max: 28.0, beta_ac: 0.08, t_init: null}
        flex: {p_min: 0.0, p_max: 1.0, p_ref: [...], beta_f: 0.05}

flex.p_min / p_max / p_ref accept a scalar (broadcast to every slot) or
a list of length horizon. Exogenous series stay in the profile CSV.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .consensus import ConsensusConfig
from .model import FlexLoadParams, Horizon, HvacParams, ProsumerSpec, TariffModel
from .profiles import ArchetypeMix, ProfileTable, load_profiles, synth_profiles, write_profiles
from .qp import SolverConfig
from .topology import Topology, WeightMatrix, complete, metropolis_weights, nearest_k_ring, star

SCENARIO_FORMAT_VERSION = 1

TOPOLOGY_KINDS = ("complete", "star", "ring", "explicit")


class ScenarioError(Exception):
    """Scenario file failed schema validation; message names the key."""


@dataclass
class TopologySpec:
    kind: str = "complete"
    hub: int = 0
    k: int = 2
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in TOPOLOGY_KINDS:
            raise ScenarioError(
                f"topology.kind must be one of {TOPOLOGY_KINDS}, got {self.kind!r}"
            )
        if self.kind == "explicit" and self.weights is None:
            raise ScenarioError("topology.kind explicit requires weight rows")

    def build(self, n: int) -> WeightMatrix:
        if self.kind == "complete":
            return metropolis_weights(complete(n))
        if self.kind == "star":
            return metropolis_weights(star(n, self.hub))
        if self.kind == "ring":
            return metropolis_weights(nearest_k_ring(n, self.k))
        w = WeightMatrix(w=np.asarray(self.weights, dtype=float))
        if w.n != n:
            raise ScenarioError(
                f"explicit weight matrix is {w.n}x{w.n}, scenario has {n} agents"
            )
        w.validate()
        return w

    def graph(self, n: int) -> Topology | None:
        if self.kind == "complete":
            return complete(n)
        if self.kind == "star":
            return star(n, self.hub)
        if self.kind == "ring":
            return nearest_k_ring(n, self.k)
        return None


@dataclass
class ScenarioBundle:
    seed: int
    horizon: Horizon
    specs: list[ProsumerSpec]
    topology: TopologySpec
    consensus: ConsensusConfig
    solver: SolverConfig
    profiles: ProfileTable | None = None

    @property
    def n_agents(self) -> int:
        return len(self.specs)

    def weights(self) -> WeightMatrix:
        return self.topology.build(self.n_agents)


def _expect_map(node, key):
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ScenarioError(f"{key}: expected a mapping, got {type(node).__name__}")
    return node


def _number(node, key, default=None):
    if node is None:
        if default is None:
            raise ScenarioError(f"{key}: required number missing")
        return default
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ScenarioError(f"{key}: expected a number, got {node!r}")
    return float(node)


def _int(node, key, default=None):
    v = _number(node, key, default)
    if v != int(v):
        raise ScenarioError(f"{key}: expected an integer, got {v}")
    return int(v)


def _series_or_scalar(node, key, h):
    if node is None:
        raise ScenarioError(f"{key}: required value missing")
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return np.full(h, float(node))
    if isinstance(node, list):
        if len(node) != h:
            raise ScenarioError(f"{key}: expected {h} values, got {len(node)}")
        return np.array([_number(v, f"{key}[{i}]") for i, v in enumerate(node)])
    raise ScenarioError(f"{key}: expected a number or list, got {node!r}")


def _parse_tariff(node, key, fallback: TariffModel) -> TariffModel:
    if node is None:
        return fallback
    m = _expect_map(node, key)
    try:
        return TariffModel(
            a_g=_number(m.get("a_g"), f"{key}.a_g", fallback.a_g),
            b_g=_number(m.get("b_g"), f"{key}.b_g", fallback.b_g),
        )
    except ValueError as exc:
        raise ScenarioError(f"{key}: {exc}") from None


def _parse_hvac(node, key) -> HvacParams:
    m = _expect_map(node, key)
    t_init = m.get("t_init")
    try:
        return HvacParams(
            phi_c=_number(m.get("phi_c"), f"{key}.phi_c", 3.3),
            phi_r=_number(m.get("phi_r"), f"{key}.phi_r", 1.35),
            eta=_number(m.get("eta"), f"{key}.eta", 1.0),
            t_ref=_number(m.get("t_ref"), f"{key}.t_ref", 24.0),
            t_min=_number(m.get("t_min"), f"{key}.t_min", 18.0),
            t_max=_number(m.get("t_max"), f"{key}.t_max", 28.0),
            beta_ac=_number(m.get("beta_ac"), f"{key}.beta_ac", 0.0),
            t_init=None if t_init is None else _number(t_init, f"{key}.t_init"),
        )
    except ValueError as exc:
        raise ScenarioError(f"{key}: {exc}") from None


def _parse_flex(node, key, h) -> FlexLoadParams:
    if node is None:
        return FlexLoadParams.zero(h)
    m = _expect_map(node, key)
    try:
        return FlexLoadParams(
            p_min=_series_or_scalar(m.get("p_min", 0.0), f"{key}.p_min", h),
            p_max=_series_or_scalar(m.get("p_max", 0.0), f"{key}.p_max", h),
            p_ref=_series_or_scalar(m.get("p_ref", 0.0), f"{key}.p_ref", h),
            beta_f=_number(m.get("beta_f"), f"{key}.beta_f", 0.0),
        )
    except ValueError as exc:
        raise ScenarioError(f"{key}: {exc}") from None


def _parse_consensus(node) -> ConsensusConfig:
    m = _expect_map(node, "consensus")
    eps = m.get("epsilon", 0.005)
    if eps != "auto":
        eps = _number(eps, "consensus.epsilon")
    lam0 = m.get("lambda_init")
    try:
        return ConsensusConfig(
            epsilon=eps,
            tol_lambda=_number(m.get("tol_lambda"), "consensus.tol_lambda", 1e-4),
            tol_e=_number(m.get("tol_e"), "consensus.tol_e", 1e-3),
            clearing_tol=_number(m.get("clearing_tol"), "consensus.clearing_tol", 1e-3),
            max_rounds=_int(m.get("max_rounds"), "consensus.max_rounds", 5000),
            lambda_init=None if lam0 is None else _number(lam0, "consensus.lambda_init"),
        )
    except ValueError as exc:
        raise ScenarioError(f"consensus: {exc}") from None


def _parse_solver(node) -> SolverConfig:
    m = _expect_map(node, "solver")
    try:
        return SolverConfig(
            qp_tol=_number(m.get("qp_tol"), "solver.qp_tol", 1e-8),
            max_qp_iter=_int(m.get("max_qp_iter"), "solver.max_qp_iter", 20000),
            reg_floor=_number(m.get("reg_floor"), "solver.reg_floor", 1e-9),
        )
    except ValueError as exc:
        raise ScenarioError(f"solver: {exc}") from None


def _parse_topology(node) -> TopologySpec:
    m = _expect_map(node, "topology")
    kind = m.get("kind", "complete")
    weights = m.get("weights")
    return TopologySpec(
        kind=kind,
        hub=_int(m.get("hub"), "topology.hub", 0),
        k=_int(m.get("k"), "topology.k", 2),
        weights=None if weights is None else np.asarray(weights, dtype=float),
    )


def load_scenario(path) -> ScenarioBundle:
    """Load and validate a scenario document plus its profile CSV."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")
    version = doc.get("format_version", SCENARIO_FORMAT_VERSION)
    if version != SCENARIO_FORMAT_VERSION:
        raise ScenarioError(
            f"{path}: format_version {version} not supported "
            f"(this build reads {SCENARIO_FORMAT_VERSION})"
        )

    hz = _expect_map(doc.get("horizon"), "horizon")
    horizon = Horizon(
        slots=_int(hz.get("slots"), "horizon.slots", 24),
        slot_hours=_number(hz.get("slot_hours"), "horizon.slot_hours", 1.0),
    )
    h = horizon.slots

    profiles_ref = doc.get("profiles")
    if not profiles_ref:
        raise ScenarioError("profiles: path to the profile CSV is required")
    table = load_profiles(path.parent / profiles_ref, h)

    default_tariff = _parse_tariff(doc.get("tariff"), "tariff", TariffModel())

    agents_node = doc.get("agents")
    if not isinstance(agents_node, list) or not agents_node:
        raise ScenarioError("agents: expected a non-empty list")
    specs = []
    for i, node in enumerate(agents_node):
        key = f"agents[{i}]"
        m = _expect_map(node, key)
        agent_id = m.get("id")
        if not agent_id or not isinstance(agent_id, str):
            raise ScenarioError(f"{key}.id: required string missing")
        row = table.index_of(agent_id)
        trade_cap = m.get("trade_cap")
        try:
            spec = ProsumerSpec(
                id=agent_id,
                grid_cap=_number(m.get("grid_cap"), f"{key}.grid_cap", 12.0),
                renewable_avail=table.renewable_kw[row],
                inflexible=table.load_kw[row],
                outdoor_temp=table.outdoor_temp_c[row],
                hvac=_parse_hvac(m.get("hvac"), f"{key}.hvac"),
                flex=_parse_flex(m.get("flex"), f"{key}.flex", h),
                tariff=_parse_tariff(m.get("tariff"), f"{key}.tariff", default_tariff),
                trade_cap=None if trade_cap is None else _number(trade_cap, f"{key}.trade_cap"),
            )
        except ValueError as exc:
            raise ScenarioError(f"{key}: {exc}") from None
        specs.append(spec)
    if len({s.id for s in specs}) != len(specs):
        raise ScenarioError("agents: ids must be unique")

    bundle = ScenarioBundle(
        seed=_int(doc.get("seed"), "seed", 0),
        horizon=horizon,
        specs=specs,
        topology=_parse_topology(doc.get("topology")),
        consensus=_parse_consensus(doc.get("consensus")),
        solver=_parse_solver(doc.get("solver")),
        profiles=table,
    )
    bundle.weights()  # fail fast on a bad topology/agent-count pairing
    return bundle


def scenario_document(bundle: ScenarioBundle, profiles_filename: str) -> dict:
    """The YAML-serializable form of a bundle (profiles stored separately)."""
    topo: dict = {"kind": bundle.topology.kind}
    if bundle.topology.kind == "star":
        topo["hub"] = bundle.topology.hub
    elif bundle.topology.kind == "ring":
        topo["k"] = bundle.topology.k
    elif bundle.topology.kind == "explicit":
        topo["weights"] = [list(map(float, row)) for row in bundle.topology.weights]
    agents = []
    for s in bundle.specs:
        agents.append(
            {
                "id": s.id,
                "grid_cap": float(s.grid_cap),
                "trade_cap": None if s.trade_cap is None else float(s.trade_cap),
                "tariff": {"a_g": s.tariff.a_g, "b_g": s.tariff.b_g},
                "hvac": {
                    "phi_c": s.hvac.phi_c,
                    "phi_r": s.hvac.phi_r,
                    "eta": s.hvac.eta,
                    "t_ref": s.hvac.t_ref,
                    "t_min": s.hvac.t_min,
                    "t_max": s.hvac.t_max,
                    "beta_ac": s.hvac.beta_ac,
                    "t_init": s.hvac.t_init,
                },
                "flex": {
                    "p_min": [float(v) for v in s.flex.p_min],
                    "p_max": [float(v) for v in s.flex.p_max],
                    "p_ref": [float(v) for v in s.flex.p_ref],
                    "beta_f": s.flex.beta_f,
                },
            }
        )
    return {
        "format_version": SCENARIO_FORMAT_VERSION,
        "seed": bundle.seed,
        "horizon": {
            "slots": bundle.horizon.slots,
            "slot_hours": bundle.horizon.slot_hours,
        },
        "profiles": profiles_filename,
        "topology": topo,
        "consensus": {
            "epsilon": bundle.consensus.epsilon,
            "tol_lambda": bundle.consensus.tol_lambda,
            "tol_e": bundle.consensus.tol_e,
            "clearing_tol": bundle.consensus.clearing_tol,
            "max_rounds": bundle.consensus.max_rounds,
            "lambda_init": bundle.consensus.lambda_init,
        },
        "solver": {
            "qp_tol": bundle.solver.qp_tol,
            "max_qp_iter": bundle.solver.max_qp_iter,
            "reg_floor": bundle.solver.reg_floor,
        },
        "agents": agents,
    }


def save_scenario(bundle: ScenarioBundle, directory, name="scenario.yaml") -> Path:
    """Write scenario.yaml plus its profile CSV into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if bundle.profiles is None:
        raise ScenarioError("bundle carries no profile table to save")
    profiles_filename = "profiles.csv"
    write_profiles(bundle.profiles, directory / profiles_filename)
    doc = scenario_document(bundle, profiles_filename)
    out = directory / name
    out.write_text(
        yaml.safe_dump(doc, sort_keys=False, default_flow_style=None),
        encoding="utf-8",
    )
    return out


def synth_scenario(
    seed: int,
    n: int,
    horizon: int = 24,
    archetype_mix: ArchetypeMix | None = None,
    topology: TopologySpec | None = None,
) -> ScenarioBundle:
    """Generate a full synthetic scenario: profiles plus device params.

    Deterministic in the seed. HVAC comfort sensitivities, flexible-load
    shapes and bounds are drawn per agent around typical household
    values; the tariff is shared.
    """
    table = synth_profiles(seed, n, horizon, archetype_mix)
    rng = np.random.default_rng(seed + 1)
    hours = np.arange(horizon, dtype=float) % 24.0
    tariff = TariffModel(a_g=0.01, b_g=0.03)
    specs = []
    for i, agent_id in enumerate(table.agent_ids):
        amp = rng.uniform(0.2, 0.6)
        p_ref = amp * np.exp(-0.5 * ((hours - 20.0) / 1.5) ** 2)
        p_ref[p_ref < 1e-3] = 0.0
        flex = FlexLoadParams(
            p_min=np.zeros(horizon),
            p_max=np.full(horizon, float(p_ref.max() + 0.5)),
            p_ref=p_ref,
            beta_f=float(rng.uniform(0.15, 0.35)),
        )
        hvac = HvacParams(
            beta_ac=float(rng.uniform(0.3, 0.6)),
            t_ref=24.0,
            t_min=18.0,
            t_max=28.0,
        )
        specs.append(
            ProsumerSpec(
                id=agent_id,
                grid_cap=12.0,
                renewable_avail=table.renewable_kw[i],
                inflexible=table.load_kw[i],
                outdoor_temp=table.outdoor_temp_c[i],
                hvac=hvac,
                flex=flex,
                tariff=tariff,
            )
        )
    return ScenarioBundle(
        seed=seed,
        horizon=Horizon(slots=horizon),
        specs=specs,
        topology=topology or TopologySpec(kind="complete"),
        consensus=ConsensusConfig(epsilon="auto"),
        solver=SolverConfig(),
        profiles=table,
    )
