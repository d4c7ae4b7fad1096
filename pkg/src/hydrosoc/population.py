"""Consumer agents: demographics, drinking schedules and daily movement.

The population is stored as parallel numpy arrays (:class:`Population`);
:class:`Agent` is a read-only view of one row for inspection and tests.

Random numbers come from one stream per agent and concern, keyed by the
agent id, so an agent's draws do not depend on how many other agents exist
or in which order they are stored.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InfeasibleProfile, InputError, InvariantViolation, UnknownNode
from .inp import Network

DAY = 86400.0
EXPECTED_DAILY_VOLUME = 0.93          # L
FIXED_TIMES = (7.0 * 3600, 9.5 * 3600, 12.0 * 3600, 15.0 * 3600, 18.0 * 3600)
WORK_HOURS = 8.0

# stream keys
DEMOGRAPHY, WEIGHT, VOLUME, MEALS, RF = range(5)
SLOTS, CLUSTERS = 101, 102


def agent_rng(seed: int, agent_id: int, concern: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(agent_id), concern)))


def population_rng(seed: int, concern: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(concern,)))


def sample_exponential(mean, p):
    """Inverse-CDF draw ``-mean * ln(1 - p)`` from an exponential law."""
    p = np.asarray(p, dtype=float)
    if np.any(np.asarray(mean) <= 0):
        raise ValueError("mean must be positive")
    if np.any((p < 0) | (p >= 1)):
        raise ValueError("p must lie in [0, 1); resample p = 1")
    out = -np.asarray(mean, dtype=float) * np.log1p(-p)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# configuration tables
# ---------------------------------------------------------------------------

def _data_path(name: str) -> Path:
    return Path(str(resources.files("hydrosoc") / "data" / name))


def _read_csv(path) -> list[dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


@dataclass(frozen=True)
class DemographicTable:
    """Per age group and gender: share of the population and group means."""
    age_group: tuple[str, ...]
    gender: tuple[str, ...]
    fraction: np.ndarray
    mean_age: np.ndarray
    mean_weight: np.ndarray           # kg
    mean_volume: np.ndarray           # L/day
    employment: np.ndarray

    COLUMNS = ("age_group", "gender", "population_fraction", "mean_age", "mean_weight_kg",
               "mean_daily_volume_l", "employment_fraction")

    def __post_init__(self):
        groups = sorted(set(self.age_group))
        if len(groups) != 11:
            raise InvariantViolation(f"demographic table needs 11 age groups, found {len(groups)}")
        if len(set(zip(self.age_group, self.gender))) != len(self.age_group):
            raise InvariantViolation("demographic table repeats an (age group, gender) row")
        for name in ("fraction", "employment"):
            arr = getattr(self, name)
            if np.any((arr < 0) | (arr > 1)):
                raise InvariantViolation(f"{name} values must lie in [0, 1]")
        for name in ("mean_age", "mean_weight", "mean_volume"):
            if np.any(getattr(self, name) <= 0):
                raise InvariantViolation(f"{name} values must be positive")
        total = self.fraction.sum()
        if abs(total - 1.0) > 1e-2:
            raise InvariantViolation(f"population fractions sum to {total:.4f}, expected 1")
        object.__setattr__(self, "fraction", self.fraction / total)
        mean = self.weighted_mean_volume()
        if abs(mean - EXPECTED_DAILY_VOLUME) > 0.05 * EXPECTED_DAILY_VOLUME:
            raise InvariantViolation(f"population-weighted mean volume {mean:.3f} L is not within 5% of 0.93 L")

    @property
    def n_rows(self) -> int:
        return len(self.age_group)

    def weighted_mean_volume(self) -> float:
        return float(np.dot(self.fraction, self.mean_volume))

    @classmethod
    def from_rows(cls, rows: list[dict[str, str]]) -> "DemographicTable":
        try:
            return cls(
                age_group=tuple(r["age_group"] for r in rows),
                gender=tuple(r["gender"] for r in rows),
                fraction=np.array([float(r["population_fraction"]) for r in rows]),
                mean_age=np.array([float(r["mean_age"]) for r in rows]),
                mean_weight=np.array([float(r["mean_weight_kg"]) for r in rows]),
                mean_volume=np.array([float(r["mean_daily_volume_l"]) for r in rows]),
                employment=np.array([float(r["employment_fraction"]) for r in rows]),
            )
        except KeyError as exc:
            raise InvariantViolation(f"demographic table lacks column {exc.args[0]!r}") from None
        except ValueError as exc:
            raise InvariantViolation(f"demographic table: {exc}") from None

    @classmethod
    def from_csv(cls, path) -> "DemographicTable":
        return cls.from_rows(_read_csv(path))

    @classmethod
    def default(cls) -> "DemographicTable":
        return cls.from_csv(_data_path("demographics.csv"))


@dataclass(frozen=True)
class CdfTable:
    """Piecewise-linear CDF over hours."""
    hours: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        if len(self.hours) < 2 or np.any(np.diff(self.hours) <= 0):
            raise InvariantViolation("CDF hours must be strictly increasing")
        if np.any(np.diff(self.cdf) < 0) or self.cdf[0] != 0.0 or self.cdf[-1] != 1.0:
            raise InvariantViolation("CDF values must rise from 0 to 1")

    def __call__(self, h):
        return np.interp(h, self.hours, self.cdf)

    def ppf(self, u):
        """Inverse CDF (hours) for ``u`` in [0, 1]."""
        # flat stretches of the CDF carry no mass; interpolate on the rising part
        keep = np.concatenate([[True], np.diff(self.cdf) > 0])
        return np.interp(u, self.cdf[keep], self.hours[keep])

    @classmethod
    def from_csv(cls, path) -> "CdfTable":
        rows = _read_csv(path)
        try:
            return cls(np.array([float(r["hour"]) for r in rows]), np.array([float(r["cdf"]) for r in rows]))
        except (KeyError, ValueError) as exc:
            raise InvariantViolation(f"CDF table {path}: {exc}") from None


@dataclass(frozen=True)
class MealTiming:
    first: CdfTable       # clock time of the first major meal
    gap12: CdfTable       # hours between first and second major meal
    gap23: CdfTable       # hours between second and third major meal

    @classmethod
    def load(cls, m1=None, gap12=None, gap23=None) -> "MealTiming":
        return cls(CdfTable.from_csv(m1 or _data_path("meal_m1.csv")),
                   CdfTable.from_csv(gap12 or _data_path("meal_gap12.csv")),
                   CdfTable.from_csv(gap23 or _data_path("meal_gap23.csv")))

    def meal_hours(self, u: np.ndarray) -> np.ndarray:
        """Five ingestion clock times (hours) from uniforms ``u[..., 3]``."""
        u = np.asarray(u, dtype=float)
        m1 = self.first.ppf(u[..., 0])
        m2 = m1 + self.gap12.ppf(u[..., 1])
        # the third meal is drawn from the gap law truncated to end the day before midnight
        cap = self.gap23(24.0 - m2)
        m3 = m2 + self.gap23.ppf(u[..., 2] * cap)
        m3 = np.minimum(m3, np.nextafter(24.0, 0.0))
        return np.stack([m1, (m1 + m2) / 2, m2, (m2 + m3) / 2, m3], axis=-1)


# ---------------------------------------------------------------------------
# occupancy profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodePopulationProfile:
    """Expected occupants per node for each step of a day."""
    step: float
    nodes: tuple[str, ...]
    counts: np.ndarray                # (n_nodes, steps per day), int
    max_population: tuple[int, ...]
    residential: tuple[bool, ...]
    total_population: int
    coordinates: tuple[Optional[tuple[float, float]], ...] = ()

    def __post_init__(self):
        if np.any(self.counts < 0):
            raise InvariantViolation("occupancy counts must be non-negative")

    @property
    def steps_per_day(self) -> int:
        return self.counts.shape[1]

    def at(self, node_id: str, t: float) -> int:
        try:
            i = self.nodes.index(node_id)
        except ValueError:
            raise UnknownNode(node_id) from None
        return int(self.counts[i, int(t // self.step) % self.steps_per_day])

    @classmethod
    def from_counts(cls, counts: dict[str, list[int]], step: float, residential: set,
                    total_population: int, coordinates: Optional[dict] = None) -> "NodePopulationProfile":
        """Profile from explicit per-step counts."""
        nodes = tuple(counts)
        arr = np.array([counts[n] for n in nodes], dtype=np.int64)
        coords = tuple((coordinates or {}).get(n) for n in nodes)
        return cls(step, nodes, arr, tuple(int(r.max()) for r in arr),
                   tuple(n in residential for n in nodes), total_population, coords)


def _steps_per_day(step: float) -> int:
    s = DAY / step
    if abs(s - round(s)) > 1e-9:
        raise InvariantViolation(f"step {step} s does not divide a day")
    return int(round(s))


def build_profiles(network: Network, total_population: int, step: float = 3600.0,
                   residential_patterns=("RES",)) -> NodePopulationProfile:
    """Occupancy targets from the network's demand patterns.

    A node's maximum population is its share of the summed peak demands
    times the total population; its profile is the normalized pattern
    times that maximum.  Junctions whose pattern is residential (or that
    have no pattern) hold homes.
    """
    spd = _steps_per_day(step)
    times = np.arange(spd) * step
    nodes, peaks, mults, res, coords = [], [], [], [], []
    for jid, j in network.junctions.items():
        if j.base_demand <= 0:
            continue
        pid = network.junction_pattern(jid)
        m = np.array([network.pattern_multiplier(pid, t) for t in times])
        nodes.append(jid)
        mults.append(m)
        peaks.append(j.base_demand * m.max())
        res.append(pid is None or pid in residential_patterns)
        coords.append(j.coordinates)
    if not nodes:
        raise InfeasibleProfile("network has no junction with demand to hold consumers")
    if not any(res):
        res = [True] * len(nodes)
    peaks = np.array(peaks)
    share = peaks / peaks.sum()
    max_pop = np.rint(share * total_population).astype(np.int64)
    counts = np.zeros((len(nodes), spd), dtype=np.int64)
    for i, m in enumerate(mults):
        top = m.max()
        if top > 0:
            counts[i] = np.rint(m / top * max_pop[i]).astype(np.int64)
    return NodePopulationProfile(step, tuple(nodes), counts, tuple(int(x) for x in max_pop),
                                 tuple(res), int(total_population), tuple(coords))


def decompose_profile(counts: np.ndarray, max_len: int) -> list[tuple[int, int]]:
    """Split a cyclic occupancy series into stays ``(arrive, leave)`` in steps.

    First in, first out; no stay exceeds ``max_len`` steps.  ``leave`` may run
    past the end of the day.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n = len(counts)
    k0 = int(np.argmin(counts))
    present: list[int] = [k0] * int(counts[k0])
    head = 0
    stays = []
    prev = int(counts[k0])
    for k in range(k0 + 1, k0 + n):
        cur = int(counts[k % n])
        for _ in range(prev - cur):
            stays.append((present[head], k))
            head += 1
        # chop stays that reached the limit; the slot is refilled at once
        while head < len(present) and k - present[head] >= max_len:
            stays.append((present[head], k))
            head += 1
            present.append(k)
        if cur > prev:
            present.extend([k] * (cur - prev))
        prev = cur
    stays.extend((a, k0 + n) for a in present[head:])
    return stays


# ---------------------------------------------------------------------------
# agents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Agent:
    id: int
    age_group: str
    gender: str
    weight: float
    daily_volume: float
    employed: bool
    home: str
    work: Optional[str]
    departure: Optional[float]        # s after midnight
    return_time: Optional[float]      # leaves the work node
    travel: float                     # s, each way


@dataclass
class Population:
    """Struct-of-arrays agent population."""
    ids: np.ndarray
    group: np.ndarray                 # row of the demographic table
    weight: np.ndarray
    daily_volume: np.ndarray
    employed: np.ndarray
    home: np.ndarray                  # index into node_ids
    work: np.ndarray                  # index into node_ids, -1 = no trip
    start: np.ndarray                 # arrival at work, s after midnight
    end: np.ndarray                   # departure from work, may exceed a day
    travel: np.ndarray
    node_ids: tuple[str, ...]
    table: DemographicTable
    seed: int

    def __len__(self) -> int:
        return len(self.ids)

    def agent(self, i: int) -> Agent:
        w = int(self.work[i])
        trip = w >= 0
        return Agent(
            id=int(self.ids[i]), age_group=self.table.age_group[self.group[i]],
            gender=self.table.gender[self.group[i]], weight=float(self.weight[i]),
            daily_volume=float(self.daily_volume[i]), employed=bool(self.employed[i]),
            home=self.node_ids[self.home[i]], work=self.node_ids[w] if trip else None,
            departure=float((self.start[i] - self.travel[i]) % DAY) if trip else None,
            return_time=float(self.end[i] % DAY) if trip else None,
            travel=float(self.travel[i]),
        )

    def __iter__(self):
        return (self.agent(i) for i in range(len(self)))

    def permuted(self, order: np.ndarray) -> "Population":
        """Same agents stored in another order."""
        arrays = {k: getattr(self, k)[order] for k in
                  ("ids", "group", "weight", "daily_volume", "employed", "home", "work", "start", "end", "travel")}
        return Population(**arrays, node_ids=self.node_ids, table=self.table, seed=self.seed)

    def node_index(self, node_id: str) -> int:
        try:
            return self.node_ids.index(node_id)
        except ValueError:
            raise UnknownNode(node_id) from None


def init_population(network: Network, table: DemographicTable, profiles: NodePopulationProfile,
                    seed: int, walking_speed: float = 1.4, weight_model: str = "fixed",
                    fixed_weight_kg: float = 70.0) -> Population:
    """Draw agents and give them homes and daily itineraries."""
    n = profiles.total_population
    ids = np.arange(n, dtype=np.int64)
    cum = np.cumsum(table.fraction)
    cum[-1] = 1.0
    group = np.empty(n, dtype=np.int64)
    employed = np.empty(n, dtype=bool)
    weight = np.empty(n)
    volume = np.empty(n)
    for i in ids:
        u = agent_rng(seed, i, DEMOGRAPHY).random(2)
        g = int(np.searchsorted(cum, u[0], side="right"))
        group[i] = g
        employed[i] = u[1] < table.employment[g]
        volume[i] = sample_exponential(table.mean_volume[g], agent_rng(seed, i, VOLUME).random())
        if weight_model == "sampled":
            weight[i] = sample_exponential(table.mean_weight[g], agent_rng(seed, i, WEIGHT).random())
        else:
            weight[i] = fixed_weight_kg

    node_ids = profiles.nodes
    res_idx = [k for k, r in enumerate(profiles.residential) if r]
    home = _assign_homes(ids, res_idx, profiles)

    work = np.full(n, -1, dtype=np.int64)
    start = np.zeros(n)
    end = np.zeros(n)
    travel = np.zeros(n)
    step = profiles.step
    max_len = max(1, int(WORK_HOURS * 3600 // step))
    long_slots, short_slots = [], []
    for k, resid in enumerate(profiles.residential):
        if resid:
            continue
        for a, b in decompose_profile(profiles.counts[k], max_len):
            (long_slots if b - a == max_len else short_slots).append((k, a, b))
    if len(long_slots) + len(short_slots) > n:
        raise InfeasibleProfile(
            f"profiles need {len(long_slots) + len(short_slots)} daily stays but only {n} agents exist")
    rng = population_rng(seed, SLOTS)
    emp = ids[employed]
    unemp = ids[~employed]
    emp = emp[rng.permutation(len(emp))]
    unemp = unemp[rng.permutation(len(unemp))]
    long_slots = [long_slots[i] for i in rng.permutation(len(long_slots))]
    short_slots = [short_slots[i] for i in rng.permutation(len(short_slots))]
    pool_long = list(emp) + list(unemp)
    taken = pool_long[:len(long_slots)]
    used = set(taken)
    pool_short = [a for a in list(unemp) + list(emp) if a not in used]
    pairs = list(zip(taken, long_slots)) + list(zip(pool_short, short_slots))
    coords = profiles.coordinates or (None,) * len(node_ids)
    for agent, (k, a, b) in pairs:
        work[agent] = k
        start[agent] = (a % profiles.steps_per_day) * step
        end[agent] = start[agent] + (b - a) * step
        travel[agent] = _distance(coords[home[agent]], coords[k]) / walking_speed
    return Population(ids, group, weight, volume, employed, home, work, start, end, travel,
                      tuple(node_ids), table, seed)


def _distance(p, q) -> float:
    if p is None or q is None:
        return 0.0
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _assign_homes(ids: np.ndarray, res_idx: list[int], profiles: NodePopulationProfile) -> np.ndarray:
    """Spread agents over residential nodes in proportion to their peak population.

    Homes are filled in id order, so they do not depend on the seed; every
    per-agent draw is already independent of the id.
    """
    n = len(ids)
    weights = np.array([profiles.max_population[k] for k in res_idx], dtype=float)
    if weights.sum() <= 0:
        weights = np.ones(len(res_idx))
    quota = weights / weights.sum() * n
    alloc = np.floor(quota).astype(np.int64)
    short = n - int(alloc.sum())
    order = np.argsort(-(quota - alloc), kind="stable")
    alloc[order[:short]] += 1
    slots = np.repeat(np.array(res_idx, dtype=np.int64), alloc)
    home = np.empty(n, dtype=np.int64)
    home[np.sort(ids)] = slots
    return home


# ---------------------------------------------------------------------------
# location and drinking
# ---------------------------------------------------------------------------

IN_TRANSIT = -1


def locate_many(pop: Population, t: float, mobility: bool = True) -> np.ndarray:
    """Node index of every agent at time ``t``; ``IN_TRANSIT`` while travelling."""
    if not mobility:
        return pop.home.copy()
    loc = pop.home.copy()
    trip = pop.work >= 0
    tr = pop.travel
    stay = pop.end - pop.start
    rel = np.mod(t - (pop.start - tr), DAY)
    at_work = trip & (rel >= tr) & (rel < tr + stay)
    moving = trip & ((rel < tr) | ((rel >= tr + stay) & (rel < 2 * tr + stay)))
    loc[at_work] = pop.work[at_work]
    loc[moving] = IN_TRANSIT
    return loc


def locate(pop: Population, agent_id: int, t: float, mobility: bool = True) -> Optional[str]:
    """Node id where the agent is at ``t``, or None while travelling."""
    idx = np.flatnonzero(pop.ids == agent_id)
    if len(idx) == 0:
        raise KeyError(agent_id)
    i = int(idx[0])
    sub = pop.permuted(np.array([i]))
    k = int(locate_many(sub, t, mobility)[0])
    return None if k == IN_TRANSIT else pop.node_ids[k]


def occupancy(pop: Population, t: float, mobility: bool = True) -> np.ndarray:
    """Agents per profile node at ``t`` (travellers excluded)."""
    loc = locate_many(pop, t, mobility)
    return np.bincount(loc[loc >= 0], minlength=len(pop.node_ids))


def schedule_ingestions(agent: Agent, day: int, model_level: int, rng: Optional[np.random.Generator] = None,
                        meals: Optional[MealTiming] = None) -> list[tuple[float, float]]:
    """Five (absolute time s, volume L) drinks for one agent-day."""
    if model_level <= 1:
        vols = split_volume(EXPECTED_DAILY_VOLUME)
        return [(day * DAY + t, v) for t, v in zip(FIXED_TIMES, vols)]
    meals = meals or MealTiming.load()
    hours = meals.meal_hours(rng.random(3))
    vols = split_volume(agent.daily_volume)
    return [(day * DAY + float(h) * 3600.0, float(v)) for h, v in zip(hours, vols)]


def split_volume(daily):
    """Five equal drinks; the last absorbs rounding so they add up exactly."""
    daily = np.asarray(daily, dtype=float)
    part = daily / 5.0
    out = np.repeat(part[..., None], 5, axis=-1)
    out[..., 4] = daily - 4.0 * part
    return out


@dataclass(frozen=True)
class DrinkEvents:
    """Every scheduled drink of a trial, in the layout the engine consumes."""
    agent: np.ndarray                 # row index into the population arrays
    time: np.ndarray                  # absolute s, after any deferral to arrival
    node: np.ndarray
    volume: np.ndarray


def drink_events(pop: Population, days: int, probabilistic: bool, mobility: bool,
                 meals: Optional[MealTiming] = None, horizon: Optional[float] = None) -> DrinkEvents:
    """Drinks for ``days`` days, moved to the arrival time when they fall in transit."""
    n = len(pop)
    if probabilistic:
        meals = meals or MealTiming.load()
        u = np.empty((n, days, 3))
        for i in range(n):
            u[i] = agent_rng(pop.seed, pop.ids[i], MEALS).random((days, 3))
        clock = meals.meal_hours(u) * 3600.0
        vol = np.tile(split_volume(pop.daily_volume), (1, days))
    else:
        clock = np.broadcast_to(np.array(FIXED_TIMES), (n, days, 5))
        vol = np.tile(split_volume(np.full(n, EXPECTED_DAILY_VOLUME)), (1, days))
    t = (clock + (np.arange(days) * DAY)[None, :, None]).reshape(n, days * 5)
    agent = np.repeat(np.arange(n, dtype=np.int64), days * 5)
    t = t.ravel().copy()
    vol = vol.ravel()
    node = pop.home[agent].copy()
    if mobility:
        trip = pop.work[agent] >= 0
        tr = pop.travel[agent]
        stay = (pop.end - pop.start)[agent]
        rel = np.mod(t - (pop.start[agent] - tr), DAY)
        going = trip & (rel < tr)
        at_work = trip & (rel >= tr) & (rel < tr + stay)
        back = trip & (rel >= tr + stay) & (rel < 2 * tr + stay)
        t[going] += tr[going] - rel[going]
        t[back] += 2 * tr[back] + stay[back] - rel[back]
        node[going | at_work] = pop.work[agent][going | at_work]
    if horizon is not None:
        keep = t < horizon
        agent, t, node, vol = agent[keep], t[keep], node[keep], vol[keep]
    order = np.lexsort((agent, t))
    return DrinkEvents(agent[order], t[order], node[order], vol[order])
