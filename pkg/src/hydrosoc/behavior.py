"""Exposure, protective demand reduction and word-of-mouth warnings."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvariantViolation

ACTIVITIES = ("washing_clothes", "shower", "faucet", "misc_indoor")
END_USE_FRACTIONS = (0.154, 0.116, 0.112, 0.035)
MAX_REDUCTION = 0.417

ISOLATE, SOURCE, INTERMEDIATE, ULTIMATE = 0, 1, 2, 3


@dataclass(frozen=True)
class DoseModel:
    """Critical dose: a fixed count, or a coefficient (kg/kg) times body weight."""
    kind: str = "weight_proportional"
    coefficient: float = 5.0e-8
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.kind == "fixed":
            if self.threshold is None or not self.threshold > 0:
                raise InvariantViolation("fixed critical dose must be > 0")
        elif self.kind == "weight_proportional":
            if not self.coefficient > 0:
                raise InvariantViolation("critical dose coefficient must be > 0")
        else:
            raise InvariantViolation(f"unknown dose model {self.kind!r}")

    @classmethod
    def from_scenario(cls, cfg) -> "DoseModel":
        if cfg.critical_dose_kind == "fixed":
            return cls("fixed", threshold=cfg.critical_dose_count)
        return cls("weight_proportional", coefficient=cfg.critical_dose_coefficient)

    def critical_dose(self, weight):
        """Critical dose in transport units: mg for chemicals, organisms otherwise."""
        if self.kind == "fixed":
            return np.full_like(np.asarray(weight, dtype=float), self.threshold) \
                if np.ndim(weight) else float(self.threshold)
        out = self.coefficient * np.asarray(weight, dtype=float) * 1e6
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SuspensionTable:
    fractions: tuple[float, ...] = END_USE_FRACTIONS
    probabilities: tuple[float, ...] = (0.8, 0.7, 0.9, 0.8)
    activities: tuple[str, ...] = ACTIVITIES

    def __post_init__(self):
        if len(self.fractions) != len(self.activities) or len(self.probabilities) != len(self.activities):
            raise InvariantViolation("suspension table needs one fraction and probability per activity")
        if abs(sum(self.fractions) - MAX_REDUCTION) > 1e-12:
            raise InvariantViolation(f"end-use fractions must sum to {MAX_REDUCTION}")
        if any(not 0 <= p <= 1 for p in self.probabilities):
            raise InvariantViolation("suspension probabilities must lie in [0, 1]")

    @classmethod
    def from_probabilities(cls, probs: dict) -> "SuspensionTable":
        return cls(probabilities=tuple(float(probs[a]) for a in ACTIVITIES))

    def reduction(self, u: np.ndarray):
        """RF for uniforms ``u[..., 4]``: activity k is suspended when u_k < p_k."""
        u = np.asarray(u, dtype=float)
        rf = np.zeros(u.shape[:-1])
        for k, (f, p) in enumerate(zip(self.fractions, self.probabilities)):
            rf = rf + np.where(u[..., k] < p, f, 0.0)
        return float(rf) if rf.ndim == 0 else rf


@dataclass
class AgentExposure:
    """Behavioral state of one agent."""
    weight: float
    dose: float = 0.0
    exposed: bool = False
    exposure_time: Optional[float] = None
    warned: bool = False
    warning_time: Optional[float] = None
    rf: Optional[float] = None


def accumulate_dose(agent: AgentExposure, concentration: float, volume: float, dose_model: DoseModel,
                    time: Optional[float] = None) -> AgentExposure:
    """Add one drink to the agent's dose and flag the first crossing of the critical dose."""
    if volume < 0 or concentration < 0:
        raise ValueError("volume and concentration must be non-negative")
    agent.dose += concentration * volume
    if not agent.exposed and concentration > 0 and agent.dose >= dose_model.critical_dose(agent.weight):
        agent.exposed = True
        agent.exposure_time = time
    return agent


def decide_reduction(agent: AgentExposure, table: SuspensionTable, rng: np.random.Generator) -> float:
    """Draw the agent's demand-reduction factor once and keep it."""
    if agent.rf is None:
        agent.rf = table.reduction(rng.random(len(table.activities)))
    return agent.rf


def update_node_demand(base: float, rfs: Sequence[float]) -> float:
    """Nodal demand after the occupants' reductions; unchanged when nobody is there."""
    k = len(rfs)
    if k == 0:
        return base
    return base * sum(1.0 - r for r in rfs) / k


def node_reduction_factor(loc: np.ndarray, rf: np.ndarray, n_nodes: int) -> np.ndarray:
    """Per node, the mean of (1 - RF) over its occupants; 1 where it has none."""
    here = loc >= 0
    at, kept = loc[here], 1.0 - rf[here]
    # fixed summation order, so storage order of agents cannot change the rounding
    order = np.lexsort((kept, at))
    count = np.bincount(at, minlength=n_nodes)
    keep = np.bincount(at[order], weights=kept[order], minlength=n_nodes)
    out = np.ones(n_nodes)
    occ = count > 0
    out[occ] = keep[occ] / count[occ]
    return out


# ---------------------------------------------------------------------------
# word of mouth
# ---------------------------------------------------------------------------

@dataclass
class ClusterGraph:
    """Message-passing clusters over agents ``0..n-1``."""
    cluster: np.ndarray               # cluster index per agent
    role: np.ndarray                  # ISOLATE / SOURCE / INTERMEDIATE / ULTIMATE
    members: list                     # agent ids per cluster
    out_ptr: np.ndarray
    out_idx: np.ndarray
    informed_step: np.ndarray = field(init=False)
    warned: np.ndarray = field(init=False)
    warning_step: np.ndarray = field(init=False)
    emitted: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.role)
        self.informed_step = np.full(n, -1, dtype=np.int64)
        self.warned = np.zeros(n, dtype=bool)
        self.warning_step = np.full(n, -1, dtype=np.int64)
        self.emitted = np.zeros(n, dtype=bool)

    @property
    def n_agents(self) -> int:
        return len(self.role)

    def out_edges(self, agent: int) -> np.ndarray:
        return self.out_idx[self.out_ptr[agent]:self.out_ptr[agent + 1]]

    def edges(self) -> list[tuple[int, int]]:
        return [(a, int(b)) for a in range(self.n_agents) for b in self.out_edges(a)]

    def reachable(self, agent: int) -> set[int]:
        seen, todo = set(), [agent]
        while todo:
            for b in self.out_edges(todo.pop()):
                b = int(b)
                if b not in seen:
                    seen.add(b)
                    todo.append(b)
        return seen

    def mark_informed(self, agents: np.ndarray, step: int) -> None:
        """Agents that learnt of the event by themselves (exposure) at ``step``."""
        agents = np.asarray(agents, dtype=np.int64)
        fresh = agents[self.informed_step[agents] < 0]
        self.informed_step[fresh] = step

    def reset(self) -> None:
        self.__post_init__()


def cluster_roles(size: int, isolates: int, intermediates: int, n: int) -> tuple[int, int, int, int]:
    """Role counts for a cluster of ``n`` members, proportional to a full one."""
    if n == size:
        return isolates, 1, intermediates, size - isolates - 1 - intermediates
    iso = min(int(math.floor(isolates * n / size + 0.5)), max(n - 1, 0))
    mid = min(int(math.floor(intermediates * n / size + 0.5)), max(n - 1 - iso, 0))
    return iso, 1, mid, n - iso - 1 - mid


def build_clusters(ids: np.ndarray, size: int, isolates: int, intermediates: int,
                   rng: np.random.Generator, direct_fraction: float = 0.5) -> ClusterGraph:
    """Partition agents into clusters and wire each one as source -> intermediates -> ultimates."""
    ids = np.sort(np.asarray(ids, dtype=np.int64))
    n = len(ids)
    if n < 1:
        raise ValueError("empty population")
    shuffled = ids[rng.permutation(n)]
    n_full, rem = divmod(n, size)
    bounds = [(c * size, (c + 1) * size) for c in range(n_full)]
    if rem:
        bounds.append((n_full * size, n))
    cluster = np.empty(n, dtype=np.int64)
    role = np.empty(n, dtype=np.int8)
    members = []
    out: list[list[int]] = [[] for _ in range(n)]
    for c, (a, b) in enumerate(bounds):
        m = shuffled[a:b]
        members.append(np.sort(m))
        cluster[m] = c
        iso, _, mid, ult = cluster_roles(size, isolates, intermediates, b - a)
        src = m[iso]
        mids = m[iso + 1:iso + 1 + mid]
        ults = m[iso + 1 + mid:]
        role[m[:iso]] = ISOLATE
        role[src] = SOURCE
        role[mids] = INTERMEDIATE
        role[ults] = ULTIMATE
        n_direct = len(ults) if len(mids) == 0 else int(math.ceil(len(ults) * direct_fraction))
        out[src].extend(int(x) for x in mids)
        out[src].extend(int(x) for x in ults[:n_direct])
        for k, u in enumerate(ults[n_direct:]):
            out[mids[k % len(mids)]].append(int(u))
    out_ptr = np.zeros(n + 1, dtype=np.int64)
    out_ptr[1:] = np.cumsum([len(o) for o in out])
    out_idx = np.array([x for o in out for x in o], dtype=np.int64)
    return ClusterGraph(cluster, role, members, out_ptr, out_idx)


def propagate_warnings(graph: ClusterGraph, step: int) -> np.ndarray:
    """Deliver this step's messages; returns the ids warned for the first time.

    Every informed non-isolate speaks once, one step after it was informed.
    Senders are collected before any delivery, so the outcome does not depend
    on the order agents are visited.
    """
    ready = (graph.informed_step >= 0) & (graph.informed_step <= step - 1) & ~graph.emitted \
        & (graph.role != ISOLATE)
    senders = np.flatnonzero(ready)
    graph.emitted[senders] = True
    if len(senders) == 0:
        return senders
    starts = graph.out_ptr[senders]
    stops = graph.out_ptr[senders + 1]
    targets = np.concatenate([graph.out_idx[a:b] for a, b in zip(starts, stops)]) \
        if len(senders) else np.zeros(0, dtype=np.int64)
    targets = np.unique(targets)
    targets = targets[(graph.role[targets] != ISOLATE) & ~graph.warned[targets]]
    graph.warned[targets] = True
    graph.warning_step[targets] = step
    fresh = targets[graph.informed_step[targets] < 0]
    graph.informed_step[fresh] = step
    return targets
