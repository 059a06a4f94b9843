"""Exogenous per-agent time series: ingestion and synthesis.

A profile table carries, for every (agent, slot), the inflexible load,
the available renewable generation and the outdoor temperature. On disk
it is a UTF-8 CSV with header

    agent_id,slot,load_kw,renewable_kw,outdoor_temp_c

one row per (agent, slot), '.' decimals, no thousands separators.
Device parameters live in the scenario file, not here.

The synthetic generator stands in for proprietary home-energy datasets:
loads follow morning/evening peaks, renewables a daylight bell, outdoor
temperature a sinusoidal daily cycle, with per-agent randomness that is
fully determined by the seed. Archetypes control how much renewable
capacity an agent gets relative to its daily load: net sellers generate
more than they use, net buyers much less, mixed agents roughly break
even.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROFILE_COLUMNS = ("agent_id", "slot", "load_kw", "renewable_kw", "outdoor_temp_c")

# synthetic-day shape constants; fixed so published scenarios reproduce
SUNRISE_HOUR = 6.0
SUNSET_HOUR = 18.0
MORNING_PEAK_HOUR = 7.5
MORNING_PEAK_WIDTH = 1.2
EVENING_PEAK_HOUR = 19.5
EVENING_PEAK_WIDTH = 1.8
TEMP_PEAK_HOUR = 15.0
LOAD_NOISE = 0.08
WEATHER_NOISE = 0.10
MIN_OUTDOOR_C = 20.0


class ProfileError(Exception):
    """A profile file failed parsing or schema validation."""


@dataclass
class ProfileTable:
    agent_ids: list[str]
    load_kw: np.ndarray  # (N, H)
    renewable_kw: np.ndarray  # (N, H)
    outdoor_temp_c: np.ndarray  # (N, H)

    def __post_init__(self):
        n = len(self.agent_ids)
        self.load_kw = np.asarray(self.load_kw, dtype=float)
        self.renewable_kw = np.asarray(self.renewable_kw, dtype=float)
        self.outdoor_temp_c = np.asarray(self.outdoor_temp_c, dtype=float)
        shape = self.load_kw.shape
        if len(set(self.agent_ids)) != n:
            raise ProfileError("agent ids must be unique")
        for name, arr in (
            ("load_kw", self.load_kw),
            ("renewable_kw", self.renewable_kw),
            ("outdoor_temp_c", self.outdoor_temp_c),
        ):
            if arr.shape != shape or arr.ndim != 2 or arr.shape[0] != n:
                raise ProfileError(f"{name} must be shaped (agents, slots)")
            if not np.all(np.isfinite(arr)):
                raise ProfileError(f"{name} contains non-finite values")
        if np.any(self.load_kw < 0) or np.any(self.renewable_kw < 0):
            raise ProfileError("power columns must be nonnegative")

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def horizon(self) -> int:
        return self.load_kw.shape[1]

    def index_of(self, agent_id: str) -> int:
        try:
            return self.agent_ids.index(agent_id)
        except ValueError:
            raise ProfileError(f"no profile rows for agent {agent_id!r}") from None


def load_profiles(path, horizon: int) -> ProfileTable:
    """Read and validate a profile CSV for a given horizon.

    Rejects NaN and negative power, missing or duplicate slots, and any
    agent not covering slots 0..horizon-1; errors carry the offending
    line number and column.
    """
    path = Path(path)
    per_agent: dict[str, dict[int, tuple]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != PROFILE_COLUMNS:
            raise ProfileError(
                f"{path}: header must be {','.join(PROFILE_COLUMNS)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            line = reader.line_num
            agent = (row["agent_id"] or "").strip()
            if not agent:
                raise ProfileError(f"{path}:{line}: empty agent_id")
            try:
                slot = int(row["slot"])
            except (TypeError, ValueError):
                raise ProfileError(
                    f"{path}:{line}: slot {row['slot']!r} is not an integer"
                ) from None
            values = []
            for col in PROFILE_COLUMNS[2:]:
                try:
                    v = float(row[col])
                except (TypeError, ValueError):
                    raise ProfileError(
                        f"{path}:{line}: column {col} value {row[col]!r} "
                        "is not a number"
                    ) from None
                if not np.isfinite(v):
                    raise ProfileError(f"{path}:{line}: column {col} is not finite")
                if col in ("load_kw", "renewable_kw") and v < 0:
                    raise ProfileError(
                        f"{path}:{line}: column {col} is negative for "
                        f"agent {agent} slot {slot}"
                    )
                values.append(v)
            slots = per_agent.setdefault(agent, {})
            if slot in slots:
                raise ProfileError(
                    f"{path}:{line}: duplicate slot {slot} for agent {agent}"
                )
            slots[slot] = tuple(values)

    if not per_agent:
        raise ProfileError(f"{path}: no data rows")
    agents = list(per_agent)
    load = np.zeros((len(agents), horizon))
    renew = np.zeros((len(agents), horizon))
    temp = np.zeros((len(agents), horizon))
    for i, agent in enumerate(agents):
        slots = per_agent[agent]
        missing = sorted(set(range(horizon)) - set(slots))
        if missing:
            raise ProfileError(
                f"{path}: agent {agent} missing slot {missing[0]} "
                f"(expected contiguous 0..{horizon - 1})"
            )
        extra = sorted(set(slots) - set(range(horizon)))
        if extra:
            raise ProfileError(
                f"{path}: agent {agent} has slot {extra[0]} outside "
                f"horizon {horizon}"
            )
        for t in range(horizon):
            load[i, t], renew[i, t], temp[i, t] = slots[t]
    return ProfileTable(agents, load, renew, temp)


def write_profiles(table: ProfileTable, path) -> None:
    """Write a profile CSV; floats keep full round-trip precision."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROFILE_COLUMNS)
        for i, agent in enumerate(table.agent_ids):
            for t in range(table.horizon):
                writer.writerow(
                    [
                        agent,
                        t,
                        repr(float(table.load_kw[i, t])),
                        repr(float(table.renewable_kw[i, t])),
                        repr(float(table.outdoor_temp_c[i, t])),
                    ]
                )


@dataclass
class ArchetypeMix:
    """Fractions of net sellers / net buyers / mixed agents."""

    seller: float = 0.3
    buyer: float = 0.4
    mixed: float = 0.3

    def __post_init__(self):
        total = self.seller + self.buyer + self.mixed
        if total <= 0 or min(self.seller, self.buyer, self.mixed) < 0:
            raise ValueError("archetype fractions must be nonnegative, sum > 0")
        self.seller /= total
        self.buyer /= total
        self.mixed /= total

    def counts(self, n: int) -> dict[str, int]:
        """Largest-remainder rounding of the fractions onto n agents."""
        raw = {"seller": self.seller * n, "buyer": self.buyer * n, "mixed": self.mixed * n}
        out = {k: int(v) for k, v in raw.items()}
        rem = n - sum(out.values())
        order = sorted(raw, key=lambda k: (raw[k] - out[k], k), reverse=True)
        for k in order[:rem]:
            out[k] += 1
        return out


# daily renewable energy as a multiple of daily load, per archetype
_ARCHETYPE_KAPPA = {
    "seller": (1.2, 1.8),
    "buyer": (0.0, 0.3),
    "mixed": (0.7, 1.1),
}


def daylight_bell(hour: np.ndarray) -> np.ndarray:
    """Solar availability shape: zero outside daylight, peaked at noon."""
    span = SUNSET_HOUR - SUNRISE_HOUR
    x = (hour - SUNRISE_HOUR) / span
    bell = np.sin(np.pi * np.clip(x, 0.0, 1.0)) ** 2
    bell[(hour < SUNRISE_HOUR) | (hour > SUNSET_HOUR)] = 0.0
    return bell


def synth_profiles(
    seed: int,
    n: int,
    horizon: int = 24,
    archetype_mix: ArchetypeMix | None = None,
) -> ProfileTable:
    """Generate a deterministic synthetic neighborhood.

    Same seed, same table. Slots map onto hours of day via slot % 24 so
    multi-day horizons repeat the daily shapes with fresh noise.
    """
    if n < 1:
        raise ValueError("need at least one agent")
    mix = archetype_mix or ArchetypeMix()
    rng = np.random.default_rng(seed)
    counts = mix.counts(n)
    roles = (
        ["seller"] * counts["seller"]
        + ["buyer"] * counts["buyer"]
        + ["mixed"] * counts["mixed"]
    )
    roles = [roles[i] for i in rng.permutation(n)]

    hours = np.arange(horizon, dtype=float) % 24.0
    bell = daylight_bell(hours)
    agent_ids = [f"home{i:02d}" for i in range(n)]
    load = np.zeros((n, horizon))
    renew = np.zeros((n, horizon))
    temp = np.zeros((n, horizon))
    for i in range(n):
        base = rng.uniform(0.15, 0.45)
        amp_m = rng.uniform(0.3, 0.9)
        amp_e = rng.uniform(0.8, 1.8)
        shape = (
            base
            + amp_m * np.exp(-0.5 * ((hours - MORNING_PEAK_HOUR) / MORNING_PEAK_WIDTH) ** 2)
            + amp_e * np.exp(-0.5 * ((hours - EVENING_PEAK_HOUR) / EVENING_PEAK_WIDTH) ** 2)
        )
        noise = 1.0 + LOAD_NOISE * rng.standard_normal(horizon)
        load[i] = np.maximum(shape * noise, 0.05)

        kappa = rng.uniform(*_ARCHETYPE_KAPPA[roles[i]])
        weather = np.clip(
            1.0 + WEATHER_NOISE * rng.standard_normal(horizon), 0.5, 1.5
        )
        raw = bell * weather
        total_raw = raw.sum()
        if total_raw > 0:
            # exact daily energy target keeps the archetype property sharp
            renew[i] = raw * (kappa * load[i].sum() / total_raw)

        mean_c = rng.uniform(26.0, 29.0)
        amp_c = rng.uniform(3.0, 5.0)
        cycle = mean_c + amp_c * np.cos(2 * np.pi * (hours - TEMP_PEAK_HOUR) / 24.0)
        temp[i] = np.maximum(
            cycle + 0.3 * rng.standard_normal(horizon), MIN_OUTDOOR_C
        )
    return ProfileTable(agent_ids, load, renew, temp)
