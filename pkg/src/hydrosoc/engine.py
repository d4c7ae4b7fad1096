"""The coupled consumer / network simulation loop.

Each hydraulic step runs, in order:

1. nodal demands from pattern, seasonal multiplier and occupants' reductions
2. hydraulic solve (tank levels integrated from the previous step)
3. quality sub-steps with source injection
4. drinking at the located node, dose accumulation and exposure
5. word-of-mouth delivery
6. newly informed agents start their reduction after the reaction latency
"""
from __future__ import annotations

import logging
import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .behavior import (
    DoseModel,
    SuspensionTable,
    build_clusters,
    node_reduction_factor,
    propagate_warnings,
)
from .errors import NonConvergence
from .hydraulics import HydraulicModel, HydraulicSnapshot
from .inp import Network
from .population import (
    CLUSTERS,
    DAY,
    RF,
    DemographicTable,
    MealTiming,
    Population,
    agent_rng,
    build_profiles,
    drink_events,
    init_population,
    locate_many,
    population_rng,
)
from .quality import CONC_EPS, QualityState, SourceInjection, advect, inject
from .scenario import ScenarioConfig

logger = logging.getLogger(__name__)

NEVER = np.iinfo(np.int64).max


@dataclass(frozen=True)
class ModelLevel:
    level: int
    probabilistic_ingestion: bool
    mobility: bool
    adaptation: bool
    word_of_mouth: bool

    @classmethod
    def from_level(cls, level: int) -> "ModelLevel":
        if level not in (1, 2, 3, 4, 5):
            raise ValueError(f"model level must be 1..5, got {level}")
        return cls(level, level >= 2, level >= 3, level >= 4, level >= 5)


@dataclass
class SimulationResults:
    model_level: int
    seed: int
    step: float
    exposed: np.ndarray               # per step, cumulative
    warned: np.ndarray
    demand_changed: np.ndarray
    cpp: np.ndarray
    mass_in_network: np.ndarray       # after the step's quality sub-steps
    max_continuity: np.ndarray        # worst junction imbalance, L/s
    agent_ids: np.ndarray
    exposure_time: np.ndarray         # s, NaN if never exposed
    exposure_node: list
    dose: np.ndarray
    warned_agents: np.ndarray
    mass_unit: str = "mg"
    injected: float = 0.0
    withdrawn: float = 0.0
    exited: float = 0.0
    balance_error: float = 0.0
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def n_steps(self) -> int:
        return len(self.exposed)

    @property
    def population(self) -> int:
        return len(self.agent_ids)

    @property
    def total_exposed(self) -> int:
        return int(self.exposed[-1]) if self.n_steps else 0

    @property
    def total_warned(self) -> int:
        return int(self.warned[-1]) if self.n_steps else 0

    def exposure_steps(self) -> np.ndarray:
        t = self.exposure_time[~np.isnan(self.exposure_time)]
        return np.floor(t / self.step).astype(np.int64)


@dataclass
class TrialInputs:
    """Everything about a trial that does not depend on the model level."""
    population: Population
    rf: np.ndarray
    critical: np.ndarray
    meals: Optional[MealTiming]
    events: dict = field(default_factory=dict)


def _steps(scenario: ScenarioConfig, network: Network) -> tuple[float, int, float, int]:
    dt = scenario.hydraulic_step or network.times.hydraulic_step
    dq = scenario.quality_step or network.times.quality_step or dt / 12.0
    n_sub = int(round(dt / dq))
    if n_sub < 1 or abs(n_sub * dq - dt) > 1e-9 * dt:
        raise ValueError(f"quality step {dq} s must divide the hydraulic step {dt} s")
    n_steps = int(math.ceil(scenario.duration / dt - 1e-9))
    return dt, n_steps, dt / n_sub, n_sub


def prepare_trial(network: Network, scenario: ScenarioConfig, seed: int,
                  table: Optional[DemographicTable] = None, meals: Optional[MealTiming] = None) -> TrialInputs:
    dt = _steps(scenario, network)[0]
    table = table or (DemographicTable.from_csv(scenario.demographics_file) if scenario.demographics_file
                      else DemographicTable.default())
    if meals is None:
        meals = MealTiming.load(scenario.meal_m1_file, scenario.meal_gap12_file, scenario.meal_gap23_file)
    profiles = build_profiles(network, scenario.total_population, dt, scenario.residential_patterns)
    pop = init_population(network, table, profiles, seed, scenario.walking_speed,
                          scenario.weight_model, scenario.fixed_weight_kg)
    susp = SuspensionTable.from_probabilities(scenario.suspension_probability)
    u = np.array([agent_rng(seed, i, RF).random(4) for i in pop.ids]).reshape(len(pop), 4)
    rf = np.asarray(susp.reduction(u), dtype=float).reshape(len(pop))
    critical = np.asarray(DoseModel.from_scenario(scenario).critical_dose(pop.weight), dtype=float)
    return TrialInputs(pop, rf, critical, meals)


def run_trial(network: Network, scenario: ScenarioConfig, model_level: Optional[int] = None,
              seed: Optional[int] = None, *, model: Optional[HydraulicModel] = None,
              inputs: Optional[TrialInputs] = None, contaminate: bool = True,
              on_hydraulics: Optional[Callable[[int, HydraulicSnapshot], None]] = None,
              on_quality: Optional[Callable[[int, QualityState], None]] = None,
              kernel_cls=None) -> SimulationResults:
    """Simulate one trial; same inputs and seed give bit-identical results."""
    t_wall = _time.perf_counter()
    level = ModelLevel.from_level(scenario.model_level if model_level is None else model_level)
    seed = scenario.seed if seed is None else seed
    dt, n_steps, dq, n_sub = _steps(scenario, network)
    if model is None:
        model = HydraulicModel(network)
    model.reset()
    if inputs is None:
        inputs = prepare_trial(network, scenario, seed)
    pop = inputs.population
    n = len(pop)
    days = int(math.ceil(scenario.duration / DAY))
    key = (level.probabilistic_ingestion, level.mobility)
    if key not in inputs.events:
        inputs.events[key] = drink_events(pop, days, level.probabilistic_ingestion, level.mobility,
                                          inputs.meals, horizon=n_steps * dt)
    ev = inputs.events[key]
    ev_bounds = np.searchsorted(np.floor(ev.time / dt), np.arange(n_steps + 1), side="left")

    # profile node -> model node
    prof_to_model = np.array([model.node_index[nid] for nid in pop.node_ids], dtype=np.intp)
    ev_node = prof_to_model[ev.node]
    spd = int(round(DAY / dt))
    loc_day = [locate_many(pop, k * dt + dt / 2, level.mobility) for k in range(spd)]
    n_prof = len(pop.node_ids)

    state = QualityState(model, kernel_cls=kernel_cls)
    source = SourceInjection.from_scenario(scenario) if contaminate else None

    graph = None
    if level.word_of_mouth:
        graph = build_clusters(pop.ids, scenario.cluster_size, scenario.cluster_isolates,
                               scenario.cluster_intermediates, population_rng(seed, CLUSTERS),
                               scenario.cluster_direct_fraction)
    row_of = np.empty(n, dtype=np.int64)
    row_of[pop.ids] = np.arange(n)

    latency = scenario.reaction_latency_steps
    dose = np.zeros(n)
    exposed = np.zeros(n, dtype=bool)
    exp_time = np.full(n, np.nan)
    exp_node = np.full(n, -1, dtype=np.int64)
    effect_step = np.full(n, NEVER, dtype=np.int64)    # reduction and abstention start here
    stop_drinking = np.full(n, NEVER, dtype=np.int64)

    series = {k: np.zeros(n_steps, dtype=np.int64) for k in ("exposed", "warned", "changed")}
    cpp = np.zeros(n_steps)
    mass = np.zeros(n_steps)
    cont = np.zeros(n_steps)
    snap: Optional[HydraulicSnapshot] = None
    active_rf = np.zeros(n)

    for s in range(n_steps):
        t = s * dt
        loc = loc_day[s % spd]
        demands = model.pattern_demands(t, scenario.demand_multiplier)
        if level.adaptation:
            np.copyto(active_rf, np.where(effect_step <= s, inputs.rf, 0.0))
            if active_rf.any():
                factor = node_reduction_factor(loc, active_rf, n_prof)
                demands[prof_to_model] *= factor
            series["changed"][s] = int(np.count_nonzero(active_rf))
        try:
            snap = model.solve(demands) if snap is None else model.step(snap, demands, dt)
        except NonConvergence:
            logger.error("trial seed=%d model=%d: hydraulic solve failed at t=%gs", seed, level.level, t)
            raise
        if snap.events:
            state.sync_tanks(snap.tank_levels)
        cont[s] = float(np.max(np.abs(model.continuity_residual(snap)))) if model.n_junctions else 0.0
        if on_hydraulics is not None:
            on_hydraulics(s, snap)
        for _ in range(n_sub):
            if source is not None:
                inject(state, source, snap, dq)
            advect(state, snap, dq)
        if on_quality is not None:
            on_quality(s, state)
        conc = state.node_conc

        # drinking
        lo, hi = ev_bounds[s], ev_bounds[s + 1]
        fresh = ()
        if hi > lo:
            a = ev.agent[lo:hi]
            c = conc[ev_node[lo:hi]]
            keep = (c > 0.0) & (stop_drinking[a] > s)
            if keep.any():
                fresh = _drink(a[keep], c[keep] * ev.volume[lo:hi][keep], ev.time[lo:hi][keep],
                               ev.node[lo:hi][keep], dose, exposed, exp_time, exp_node, inputs.critical)
        if len(fresh):
            effect_step[fresh] = np.minimum(effect_step[fresh], s + latency)
            stop_drinking[fresh] = np.minimum(stop_drinking[fresh], s + latency)
            if graph is not None:
                graph.mark_informed(pop.ids[fresh], s)
        if graph is not None:
            warned_ids = propagate_warnings(graph, s)
            if len(warned_ids):
                rows = row_of[warned_ids]
                effect_step[rows] = np.minimum(effect_step[rows], s + latency)
                if scenario.warned_stop_drinking:
                    stop_drinking[rows] = np.minimum(stop_drinking[rows], s + latency)
            series["warned"][s] = int(graph.warned.sum())
        series["exposed"][s] = int(exposed.sum())
        hot = conc[prof_to_model] > CONC_EPS
        cpp[s] = np.count_nonzero(hot[loc[loc >= 0]]) / n
        mass[s] = state.mass_in_system()

    if not level.adaptation:
        series["changed"][:] = 0
    warned_agents = graph.warned[pop.ids] if graph is not None else np.zeros(n, dtype=bool)
    return SimulationResults(
        model_level=level.level, seed=seed, step=dt,
        exposed=series["exposed"], warned=series["warned"], demand_changed=series["changed"],
        cpp=cpp, mass_in_network=mass, max_continuity=cont,
        agent_ids=pop.ids.copy(), exposure_time=exp_time,
        exposure_node=[pop.node_ids[k] if k >= 0 else "" for k in exp_node],
        dose=dose, warned_agents=warned_agents, mass_unit=scenario.mass_unit,
        injected=state.injected, withdrawn=state.withdrawn, exited=state.exited,
        balance_error=state.balance_error(), warnings=list(state.warnings),
        wall_time=_time.perf_counter() - t_wall,
    )


def _drink(agent, intake, when, node, dose, exposed, exp_time, exp_node, critical) -> np.ndarray:
    """Add drinks to doses in time order, one round per repeat of an agent.

    Returns the rows that crossed their critical dose.
    """
    order = np.lexsort((when, agent))
    agent, intake, when, node = agent[order], intake[order], when[order], node[order]
    first = np.ones(len(agent), dtype=bool)
    first[1:] = agent[1:] != agent[:-1]
    start = np.flatnonzero(first)
    rank = np.arange(len(agent)) - np.repeat(start, np.diff(np.append(start, len(agent))))
    newly = []
    for r in range(int(rank.max()) + 1):
        sel = rank == r
        a = agent[sel]
        dose[a] += intake[sel]
        cross = ~exposed[a] & (dose[a] >= critical[a])
        if cross.any():
            hit = a[cross]
            exposed[hit] = True
            exp_time[hit] = when[sel][cross]
            exp_node[hit] = node[sel][cross]
            newly.append(hit)
    return np.concatenate(newly) if newly else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class LevelSummary:
    model_level: int
    totals: list
    mean: float
    min: int
    max: int


@dataclass
class ExperimentResult:
    seeds: list
    trials: dict                      # (level, trial index) -> SimulationResults
    summaries: dict                   # level -> LevelSummary

    def rows(self):
        for (level, i), res in sorted(self.trials.items()):
            yield level, i, self.seeds[i], res


def summarize(level: int, totals: Iterable[int]) -> LevelSummary:
    totals = [int(x) for x in totals]
    return LevelSummary(level, totals, float(np.mean(totals)), min(totals), max(totals))


def run_seed(args) -> list:
    """All requested levels for one seed, sharing the seed's population."""
    network, scenario, levels, seed = args
    inputs = prepare_trial(network, scenario, seed)
    model = HydraulicModel(network)
    return [run_trial(network, scenario, lvl, seed, model=model, inputs=inputs) for lvl in levels]


def run_experiment(network: Network, scenario: ScenarioConfig, model_levels: Iterable[int],
                   trials: Optional[int] = None, base_seed: Optional[int] = None,
                   jobs: int = 1) -> ExperimentResult:
    """Run every model level for ``trials`` trials; trial i uses seed base + i for all levels."""
    levels = list(model_levels)
    trials = scenario.trials if trials is None else trials
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base = scenario.seed if base_seed is None else base_seed
    seeds = [base + i for i in range(trials)]
    jobs_args = [(network, scenario, levels, sd) for sd in seeds]
    if jobs > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outputs = list(ex.map(run_seed, jobs_args))
    else:
        outputs = [run_seed(a) for a in jobs_args]
    results = {}
    for i, per_level in enumerate(outputs):
        for lvl, res in zip(levels, per_level):
            results[(lvl, i)] = res
    summaries = {lvl: summarize(lvl, (results[(lvl, i)].total_exposed for i in range(trials)))
                 for lvl in levels}
    return ExperimentResult(seeds, results, summaries)
