"""Advective transport of a conservative contaminant.

Water in each link is tracked as a chain of plug-flow segments.  Every
quality step the segments move with the link flow, inflows mix completely at
junctions and in tanks, and mass injected at a source node leaves with the
water flowing out of that node.

Concentrations are in mass units per litre, where the mass unit is mg for
chemicals and organisms for pathogens.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import SegmentKernel
from .errors import UnknownNode
from .hydraulics import JUNCTION, TANK, HydraulicModel, HydraulicSnapshot

logger = logging.getLogger(__name__)

CONC_EPS = 1e-9       # concentrations at or below this count as clean
MERGE_TOL = 1e-6


@dataclass(frozen=True)
class SourceInjection:
    node: str
    rate: float            # mass units per second
    start: float
    end: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("injection rate must be positive")
        if not self.start < self.end:
            raise ValueError("injection window must have start < end")

    @classmethod
    def from_scenario(cls, cfg) -> "SourceInjection":
        return cls(cfg.injection_node, cfg.injection_rate, cfg.injection_start, cfg.injection_end)

    def rate_at(self, t: float) -> float:
        return self.rate if self.start <= t < self.end else 0.0

    def mass_between(self, t0: float, t1: float) -> float:
        """Mass injected over [t0, t1)."""
        overlap = min(t1, self.end) - max(t0, self.start)
        return self.rate * overlap if overlap > 0 else 0.0


class QualityState:
    """Contaminant distribution over a network.

    Mutated in place by :func:`inject` and :func:`advect`.
    """

    def __init__(self, model: HydraulicModel, tank_levels: Optional[np.ndarray] = None,
                 kernel_cls=None, merge_tol: float = MERGE_TOL):
        self.model = model
        cls = SegmentKernel if kernel_cls is None else kernel_cls
        self.kernel = cls(model.link_volume, merge_tol)
        n = model.n_nodes
        self.node_kind = model.node_kind.astype(np.intp)
        self.link_from = model.link_from.astype(np.intp)
        self.link_to = model.link_to.astype(np.intp)
        incident = [[] for _ in range(n)]
        for l in range(model.n_links):
            incident[self.link_from[l]].append(l)
            incident[self.link_to[l]].append(l)
        self.adj_ptr = np.zeros(n + 1, dtype=np.intp)
        self.adj_ptr[1:] = np.cumsum([len(x) for x in incident])
        self.adj_link = np.array([l for x in incident for l in x], dtype=np.intp)
        self._incident = incident
        self.src_nodes = np.concatenate([model.reservoir_nodes, model.tank_nodes]).astype(np.intp)
        self.tank_mass = np.zeros(n)
        self.tank_vol = np.zeros(n)
        levels = model.initial_tank_levels() if tank_levels is None else tank_levels
        self.sync_tanks(levels)
        self.node_conc = np.zeros(n)
        self.pending = np.zeros(n)
        self.injected = 0.0
        self.withdrawn = 0.0
        self.exited = 0.0
        self.time = 0.0
        self.warnings: list[str] = []
        self._holding = False
        self._order_key = None
        self._order = np.zeros(0, dtype=np.intp)

    # -- bookkeeping ---------------------------------------------------------
    def sync_tanks(self, levels: np.ndarray) -> None:
        """Reset tank water volumes to the hydraulic levels, keeping mass."""
        m = self.model
        self.tank_vol[m.tank_nodes] = m.tank_area * np.asarray(levels) * 1000.0

    def mass_in_pipes(self) -> float:
        return self.kernel.total_mass()

    def mass_in_tanks(self) -> float:
        return float(self.tank_mass.sum())

    def mass_in_system(self) -> float:
        """Mass still inside the network, including mass held at a source."""
        return self.mass_in_pipes() + self.mass_in_tanks() + float(self.pending.sum())

    def balance_error(self) -> float:
        """Relative mismatch between injected mass and where it ended up."""
        if self.injected == 0.0:
            return 0.0
        accounted = self.mass_in_system() + self.withdrawn + self.exited
        return abs(self.injected - accounted) / self.injected

    def link_segments(self, link_id: str) -> list[tuple[float, float]]:
        return self.kernel.segments(self.model.link_index[link_id])

    def concentrations(self) -> dict[str, float]:
        return {nid: float(self.node_conc[i]) for i, nid in enumerate(self.model.node_ids)}

    # -- flow ordering -------------------------------------------------------
    def _junction_order(self, flows: np.ndarray) -> np.ndarray:
        key = flows.tobytes()
        if key == self._order_key:
            return self._order
        m = self.model
        nj = m.n_junctions
        indeg = [0] * nj
        down = [[] for _ in range(nj)]
        for l in np.flatnonzero(flows != 0.0):
            a, b = (self.link_from[l], self.link_to[l]) if flows[l] > 0 else (self.link_to[l], self.link_from[l])
            if a < nj and b < nj:
                down[a].append(b)
                indeg[b] += 1
        ready = [i for i in range(nj) if indeg[i] == 0]
        order = []
        while ready:
            n = ready.pop()
            order.append(n)
            for b in down[n]:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
        if len(order) < nj:
            # circulating flow (booster pumps); fall back to falling head
            logger.warning("flow graph has a cycle; using head order for %d junctions", nj - len(order))
            rest = [i for i in range(nj) if indeg[i] > 0]
            order.extend(rest)
        self._order_key = key
        self._order = np.array(order, dtype=np.intp)
        return self._order

    def outflow_at(self, node: int, hyd: HydraulicSnapshot) -> float:
        """Water (L/s) leaving ``node`` through links and demand."""
        out = float(hyd.demands[node])
        for l in self._incident[node]:
            q = hyd.flows[l]
            if (q > 0 and self.link_from[l] == node) or (q < 0 and self.link_to[l] == node):
                out += abs(q)
        return out


def inject(state: QualityState, source: SourceInjection, hyd: HydraulicSnapshot, dt: float) -> QualityState:
    """Stage the mass released by ``source`` over [state.time, state.time + dt)."""
    try:
        node = state.model.node_index[source.node]
    except KeyError:
        raise UnknownNode(source.node) from None
    mass = source.mass_between(state.time, state.time + dt)
    if mass <= 0.0:
        return state
    if state.outflow_at(node, hyd) <= 0.0:
        if not state._holding:
            msg = f"t={state.time:g}s: no outflow at source {source.node}; mass held until flow resumes"
            state.warnings.append(msg)
            logger.warning(msg)
        state._holding = True
    else:
        state._holding = False
    state.pending[node] += mass
    state.injected += mass
    return state


def advect(state: QualityState, hyd: HydraulicSnapshot, dt: float) -> QualityState:
    """Move the contaminant with the flows of ``hyd`` for one quality step."""
    qv = hyd.flows * dt
    order = state._junction_order(hyd.flows)
    demand_vol = hyd.demands * dt
    demand_vol[state.node_kind != JUNCTION] = 0.0
    withdrawn, exited = state.kernel.advance(
        qv, order, state.src_nodes, state.link_from, state.link_to, state.adj_ptr, state.adj_link,
        state.node_kind, demand_vol, state.pending, state.tank_mass, state.tank_vol, state.node_conc,
    )
    state.withdrawn += withdrawn
    state.exited += exited
    state.time += dt
    return state


def node_concentration(state: QualityState, node_id: str) -> float:
    try:
        idx = state.model.node_index[node_id]
    except KeyError:
        raise UnknownNode(node_id) from None
    return float(state.node_conc[idx])


def contaminated_mask(state: QualityState) -> np.ndarray:
    return state.node_conc > CONC_EPS


__all__ = [
    "CONC_EPS", "QualityState", "SourceInjection", "advect", "inject", "node_concentration",
    "contaminated_mask", "TANK",
]
