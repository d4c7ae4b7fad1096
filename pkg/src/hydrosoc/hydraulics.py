"""Demand-driven hydraulic solver and extended-period stepping.

Heads are found with the global gradient algorithm: Newton iteration on the
unknown nodal heads with link flows updated from the linearised energy
equations.  Pipes use Hazen-Williams losses, pumps a single-point curve
expanded to ``h = h0 * (1 - (q / qmax)**2)``.

Flows are reported in L/s and heads in metres.  Internally the solver works
in m3/s.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .errors import DisconnectedDemand, NonConvergence
from .inp import Network, Pipe

logger = logging.getLogger(__name__)

HW_EXPONENT = 1.852
HW_COEFF = 10.667
Q_REG = 1e-4 / 1000.0           # 1e-4 L/s, in m3/s
HEAD_TOL = 1e-4                 # relative
FLOW_TOL = 1e-8                 # relative change in total flow
FLOW_ABS_TOL = 1e-9             # m3/s; summed flow change counted as converged
MAX_ITER = 200
MAX_STATUS_PASSES = 10
DENSE_LIMIT = 400

JUNCTION, RESERVOIR, TANK = 0, 1, 2

DemandVector = Union[Mapping[str, float], np.ndarray]


def hw_resistance(length: float, diameter_mm: float, roughness: float) -> float:
    d = diameter_mm / 1000.0
    return HW_COEFF * roughness ** -HW_EXPONENT * d ** -4.871 * length


def headloss(pipe: Pipe, flow: float) -> float:
    """Hazen-Williams head loss (m) along ``pipe`` for a flow in L/s.

    Positive flow runs from ``pipe.start`` to ``pipe.end``; the loss has the
    sign of the flow.
    """
    q = flow / 1000.0
    if q == 0.0:
        return 0.0
    r = hw_resistance(pipe.length, pipe.diameter, pipe.roughness)
    return math.copysign(r * abs(q) ** HW_EXPONENT, q)


@dataclass
class HydraulicSnapshot:
    time: float
    heads: np.ndarray           # m, per node in model order
    flows: np.ndarray           # L/s, per link in model order
    tank_levels: np.ndarray     # m, per tank in model order
    demands: np.ndarray         # L/s, per node (zero for non-junctions)
    iterations: int = 0
    pump_open: Optional[np.ndarray] = None
    events: list = field(default_factory=list)
    model: "HydraulicModel" = field(default=None, repr=False, compare=False)

    def head(self, node_id: str) -> float:
        return float(self.heads[self.model.node_index[node_id]])

    def flow(self, link_id: str) -> float:
        return float(self.flows[self.model.link_index[link_id]])

    def tank_level(self, tank_id: str) -> float:
        return float(self.tank_levels[self.model.tank_ids.index(tank_id)])

    def demand(self, node_id: str) -> float:
        return float(self.demands[self.model.node_index[node_id]])


class HydraulicModel:
    """Array form of a :class:`Network` plus the solver state that persists
    between extended-period steps (warm-start flows, pump status)."""

    def __init__(self, network: Network):
        self.network = network
        self.node_ids = network.node_ids
        self.node_index = {n: i for i, n in enumerate(self.node_ids)}
        nj, nr, nt = len(network.junctions), len(network.reservoirs), len(network.tanks)
        self.n_nodes = nj + nr + nt
        self.n_junctions = nj
        self.node_kind = np.array([JUNCTION] * nj + [RESERVOIR] * nr + [TANK] * nt, dtype=np.intp)
        self.junction_ids = list(network.junctions)
        self.tank_ids = list(network.tanks)
        self.tank_nodes = np.arange(nj + nr, nj + nr + nt, dtype=np.intp)
        self.reservoir_nodes = np.arange(nj, nj + nr, dtype=np.intp)

        self.elevation = np.zeros(self.n_nodes)
        for i, j in enumerate(network.junctions.values()):
            self.elevation[i] = j.elevation
        self.reservoir_head = np.array([r.head for r in network.reservoirs.values()], dtype=float)
        tanks = list(network.tanks.values())
        self.tank_elev = np.array([t.elevation for t in tanks], dtype=float)
        self.tank_min = np.array([t.min_level for t in tanks], dtype=float)
        self.tank_max = np.array([t.max_level for t in tanks], dtype=float)
        self.tank_init = np.array([t.init_level for t in tanks], dtype=float)
        self.tank_area = np.array([t.area for t in tanks], dtype=float)
        for k, t in enumerate(tanks):
            self.elevation[self.tank_nodes[k]] = t.elevation
        for k, r in enumerate(network.reservoirs.values()):
            self.elevation[self.reservoir_nodes[k]] = r.head

        self.link_ids = network.link_ids
        self.link_index = {l: i for i, l in enumerate(self.link_ids)}
        pipes = list(network.pipes.values())
        pumps = list(network.pumps.values())
        self.n_links = len(pipes) + len(pumps)
        self.n_pipes = len(pipes)
        ends = [(self.node_index[l.start], self.node_index[l.end]) for l in (*pipes, *pumps)]
        self.link_from = np.array([a for a, _ in ends], dtype=np.intp)
        self.link_to = np.array([b for _, b in ends], dtype=np.intp)
        self.is_pump = np.zeros(self.n_links, dtype=bool)
        self.is_pump[self.n_pipes:] = True
        self.resistance = np.zeros(self.n_links)
        self.resistance[: self.n_pipes] = [hw_resistance(p.length, p.diameter, p.roughness) for p in pipes]
        self.pump_h0 = np.zeros(self.n_links)
        self.pump_c = np.zeros(self.n_links)
        for k, p in enumerate(pumps):
            qmax = p.max_flow / 1000.0
            self.pump_h0[self.n_pipes + k] = p.shutoff_head
            self.pump_c[self.n_pipes + k] = p.shutoff_head / qmax ** 2
        self.pipe_open = np.ones(self.n_links, dtype=bool)
        for k, p in enumerate(pipes):
            self.pipe_open[k] = p.status == "OPEN"
        self.link_volume = np.zeros(self.n_links)      # litres; pumps hold no water
        self.link_volume[: self.n_pipes] = [p.volume for p in pipes]
        self.diameter_m = np.zeros(self.n_links)
        self.diameter_m[: self.n_pipes] = [p.diameter / 1000.0 for p in pipes]

        self.base_demand = np.zeros(self.n_nodes)
        self._pattern_of = []
        for i, jid in enumerate(self.junction_ids):
            self.base_demand[i] = network.junctions[jid].base_demand
            self._pattern_of.append(network.junction_pattern(jid))

        self.pump_open = np.ones(self.n_links, dtype=bool)
        self._warm_q: Optional[np.ndarray] = None

    def reset(self) -> None:
        """Forget warm-start flows and pump status from earlier solves."""
        self.pump_open = np.ones(self.n_links, dtype=bool)
        self._warm_q = None

    # -- demands -------------------------------------------------------------
    def pattern_multipliers(self, t: float) -> np.ndarray:
        """Pattern multiplier per junction at time ``t``."""
        cache = {}
        out = np.ones(self.n_junctions)
        for i, pat in enumerate(self._pattern_of):
            if pat not in cache:
                cache[pat] = self.network.pattern_multiplier(pat, t)
            out[i] = cache[pat]
        return out

    def pattern_demands(self, t: float, multiplier: float = 1.0) -> np.ndarray:
        """Per-node demand (L/s) from base demand, pattern and multipliers."""
        d = np.zeros(self.n_nodes)
        d[: self.n_junctions] = (self.base_demand[: self.n_junctions] * self.pattern_multipliers(t)
                                 * multiplier * self.network.options.demand_multiplier)
        return d

    def demand_array(self, demands: DemandVector) -> np.ndarray:
        if isinstance(demands, np.ndarray):
            if demands.shape == (self.n_nodes,):
                return demands.astype(float, copy=True)
            if demands.shape == (self.n_junctions,):
                d = np.zeros(self.n_nodes)
                d[: self.n_junctions] = demands
                return d
            raise ValueError(f"demand array has shape {demands.shape}")
        d = np.zeros(self.n_nodes)
        for nid, val in demands.items():
            idx = self.node_index[nid]
            if idx >= self.n_junctions:
                raise ValueError(f"demand given for non-junction node {nid!r}")
            d[idx] = val
        return d

    def initial_tank_levels(self) -> np.ndarray:
        return self.tank_init.copy()

    # -- solver --------------------------------------------------------------
    def solve(self, demands: DemandVector, tank_levels: Optional[np.ndarray] = None,
              time: float = 0.0, pump_open: Optional[np.ndarray] = None) -> HydraulicSnapshot:
        d_lps = self.demand_array(demands)
        if np.any(d_lps < 0):
            raise ValueError("negative nodal demand")
        levels = self.initial_tank_levels() if tank_levels is None else np.asarray(tank_levels, dtype=float)
        d = d_lps / 1000.0

        fixed_head = np.full(self.n_nodes, np.nan)
        fixed_head[self.reservoir_nodes] = self.reservoir_head
        tank_head = self.tank_elev + levels
        fixed_head[self.tank_nodes] = tank_head

        pumps = self.pump_open.copy() if pump_open is None else np.asarray(pump_open, dtype=bool).copy()
        full = levels >= self.tank_max - 1e-9
        empty = levels <= self.tank_min + 1e-9
        tank_closed = np.zeros(len(self.tank_ids), dtype=bool)
        events: list[str] = []
        total_iter = 0

        for _ in range(MAX_STATUS_PASSES):
            is_fixed = np.zeros(self.n_nodes, dtype=bool)
            is_fixed[self.reservoir_nodes] = True
            is_fixed[self.tank_nodes[~tank_closed]] = True
            active = self.pipe_open & (~self.is_pump | pumps)
            heads, q, iters = self._newton(d, fixed_head, is_fixed, active)
            total_iter += iters

            changed = False
            # pumps cannot run backwards: close, and reopen once the lift drops below shutoff
            for l in np.flatnonzero(self.is_pump):
                lift = heads[self.link_to[l]] - heads[self.link_from[l]]
                if pumps[l] and q[l] < 0:
                    pumps[l] = False
                    changed = True
                elif not pumps[l] and lift < self.pump_h0[l]:
                    pumps[l] = True
                    changed = True
            net_in = self._tank_net_inflow(q)
            for k in range(len(self.tank_ids)):
                node = self.tank_nodes[k]
                if not tank_closed[k]:
                    if (full[k] and net_in[k] > 0) or (empty[k] and net_in[k] < 0):
                        tank_closed[k] = True
                        changed = True
                else:
                    free = heads[node]
                    if (full[k] and free < tank_head[k]) or (empty[k] and free > tank_head[k]):
                        tank_closed[k] = False
                        changed = True
            if not changed:
                break
        for k in np.flatnonzero(tank_closed):
            events.append(f"tank {self.tank_ids[k]} {'full' if full[k] else 'empty'}: isolated")

        self.pump_open = pumps
        self._warm_q = q.copy()
        snap_heads = heads.copy()
        snap_heads[self.tank_nodes[tank_closed]] = tank_head[tank_closed]
        return HydraulicSnapshot(
            time=time, heads=snap_heads, flows=q * 1000.0, tank_levels=levels.copy(),
            demands=d_lps, iterations=total_iter, pump_open=pumps[self.is_pump].copy(),
            events=events, model=self,
        )

    def _tank_net_inflow(self, q: np.ndarray) -> np.ndarray:
        """Net inflow (same units as ``q``) into each tank."""
        node_in = np.bincount(self.link_to, weights=q, minlength=self.n_nodes) \
            - np.bincount(self.link_from, weights=q, minlength=self.n_nodes)
        return node_in[self.tank_nodes]

    def _link_terms(self, q: np.ndarray, active: np.ndarray):
        aq = np.abs(q)
        f = np.zeros_like(q)
        fp = np.ones_like(q)
        pipe = active & ~self.is_pump
        pump = active & self.is_pump
        r = self.resistance
        big = pipe & (aq >= Q_REG)
        small = pipe & (aq < Q_REG)
        pw = aq[big] ** (HW_EXPONENT - 1.0)
        f[big] = r[big] * pw * q[big]
        fp[big] = HW_EXPONENT * r[big] * pw
        lin = r[small] * Q_REG ** (HW_EXPONENT - 1.0)
        f[small] = lin * q[small]
        fp[small] = lin
        c = self.pump_c[pump]
        f[pump] = c * q[pump] * aq[pump] - self.pump_h0[pump]
        fp[pump] = 2.0 * c * np.maximum(aq[pump], Q_REG)
        return f, fp

    def _newton(self, d: np.ndarray, fixed_head: np.ndarray, is_fixed: np.ndarray,
                active: np.ndarray):
        n = self.n_nodes
        a_idx = self.link_from[active]
        b_idx = self.link_to[active]
        act = np.flatnonzero(active)

        # nodes cut off from every fixed head are dropped from the solve
        g = coo_matrix((np.ones(len(act)), (a_idx, b_idx)), shape=(n, n))
        ncomp, labels = connected_components(g, directed=False)
        fed = np.zeros(ncomp, dtype=bool)
        fed[labels[is_fixed]] = True
        orphan = ~fed[labels]
        for i in np.flatnonzero(orphan & (d > 0)):
            raise DisconnectedDemand(self.node_ids[i])
        live = active & ~orphan[self.link_from] & ~orphan[self.link_to]

        unknown = ~is_fixed & ~orphan
        u_nodes = np.flatnonzero(unknown)
        nu = len(u_nodes)
        pos = np.full(n, -1, dtype=np.intp)
        pos[u_nodes] = np.arange(nu)

        heads = np.where(is_fixed, fixed_head, np.nan)
        q = np.zeros(self.n_links)
        if self._warm_q is not None:
            q[live] = self._warm_q[live]
        cold = live & (np.abs(q) < Q_REG)
        # cold start: 0.3 m/s through pipes, design flow through pumps
        q[cold & ~self.is_pump] = 0.3 * np.pi / 4.0 * self.diameter_m[cold & ~self.is_pump] ** 2
        q[cold & self.is_pump] = 0.5 * np.sqrt(self.pump_h0[cold & self.is_pump]
                                               / self.pump_c[cold & self.is_pump])

        if nu == 0:
            # every node fixed: flows follow directly from head differences
            for _ in range(MAX_ITER):
                f, fp = self._link_terms(q, live)
                dh = heads[self.link_from] - heads[self.link_to]
                q_new = np.where(live, q - (f - dh) / fp, 0.0)
                if np.sum(np.abs(q_new - q)) <= FLOW_TOL * max(np.sum(np.abs(q_new)), 1e-12):
                    return heads, q_new, 1
                q = q_new
            raise NonConvergence(MAX_ITER, float(np.max(np.abs(q_new - q))))

        la = np.flatnonzero(live)
        fa, fb = self.link_from[la], self.link_to[la]
        pa, pb = pos[fa], pos[fb]
        ua, ub = pa >= 0, pb >= 0
        both = ua & ub
        d_u = d[u_nodes]
        h_prev = None
        residual = math.inf
        for it in range(1, MAX_ITER + 1):
            f, fp = self._link_terms(q, live)
            p = 1.0 / fp[la]
            qy = q[la] - f[la] * p
            rhs = -d_u.copy()
            # flow term: +inflow at the end node, -outflow at the start node
            np.add.at(rhs, pb[ub], qy[ub])
            np.add.at(rhs, pa[ua], -qy[ua])
            # known heads move to the right-hand side
            np.add.at(rhs, pb[ub & ~ua], p[ub & ~ua] * heads[fa[ub & ~ua]])
            np.add.at(rhs, pa[ua & ~ub], p[ua & ~ub] * heads[fb[ua & ~ub]])
            rows = np.concatenate([pa[ua], pb[ub], pa[both], pb[both]])
            cols = np.concatenate([pa[ua], pb[ub], pb[both], pa[both]])
            vals = np.concatenate([p[ua], p[ub], -p[both], -p[both]])
            if nu <= DENSE_LIMIT:
                mat = np.bincount(rows * nu + cols, weights=vals, minlength=nu * nu).reshape(nu, nu)
                try:
                    h_u = np.linalg.solve(mat, rhs)
                except np.linalg.LinAlgError:
                    raise NonConvergence(it, math.inf) from None
            else:
                mat = coo_matrix((vals, (rows, cols)), shape=(nu, nu)).tocsc()
                h_u = spsolve(mat, rhs)
            if not np.all(np.isfinite(h_u)):
                raise NonConvergence(it, math.inf)
            heads[u_nodes] = h_u
            dh = heads[fa] - heads[fb]
            q_new = np.zeros(self.n_links)
            q_new[la] = qy + p * dh
            dq = np.sum(np.abs(q_new - q))
            residual = dq / max(np.sum(np.abs(q_new)), 1e-12)
            flow_ok = residual <= FLOW_TOL or dq <= FLOW_ABS_TOL
            head_ok = h_prev is not None and np.all(
                np.abs(h_u - h_prev) <= HEAD_TOL * np.maximum(1.0, np.abs(h_u)))
            q = q_new
            if flow_ok and head_ok:
                return heads, q, it
            h_prev = h_u
        raise NonConvergence(MAX_ITER, residual)

    # -- extended period -----------------------------------------------------
    def step(self, prev: HydraulicSnapshot, demands: Optional[DemandVector], dt: float,
             multiplier: float = 1.0) -> HydraulicSnapshot:
        """Advance tank levels over ``dt`` with the flows of ``prev`` and
        re-solve at the new time.

        When ``demands`` is None the pattern demands at the new time are used.
        """
        t_new = prev.time + dt
        net_in = self._tank_net_inflow(prev.flows / 1000.0)
        levels = prev.tank_levels + net_in * dt / self.tank_area
        events = []
        for k in range(len(self.tank_ids)):
            if levels[k] > self.tank_max[k]:
                events.append(f"tank {self.tank_ids[k]} clamped at max level")
                levels[k] = self.tank_max[k]
            elif levels[k] < self.tank_min[k]:
                events.append(f"tank {self.tank_ids[k]} clamped at min level")
                levels[k] = self.tank_min[k]
        if demands is None:
            demands = self.pattern_demands(t_new, multiplier)
        snap = self.solve(demands, levels, time=t_new)
        snap.events[:0] = events
        return snap

    # -- diagnostics ---------------------------------------------------------
    def continuity_residual(self, snap: HydraulicSnapshot) -> np.ndarray:
        """Inflow - outflow - demand (L/s) at every junction."""
        q = snap.flows
        node_in = np.bincount(self.link_to, weights=q, minlength=self.n_nodes) \
            - np.bincount(self.link_from, weights=q, minlength=self.n_nodes)
        return (node_in - snap.demands)[: self.n_junctions]

    def energy_residual(self, snap: HydraulicSnapshot) -> np.ndarray:
        """Head difference minus computed loss (m) for every open pipe."""
        q = snap.flows / 1000.0
        dh = snap.heads[self.link_from] - snap.heads[self.link_to]
        loss = np.sign(q) * self.resistance * np.abs(q) ** HW_EXPONENT
        res = dh - loss
        res[~self.pipe_open | self.is_pump] = 0.0
        return res


def solve_steady(network: Network, demands: DemandVector, tank_levels=None,
                 pump_states=None) -> HydraulicSnapshot:
    """One steady-state solve of ``network``; see :meth:`HydraulicModel.solve`."""
    model = HydraulicModel(network)
    if isinstance(tank_levels, Mapping):
        tank_levels = np.array([tank_levels[t] for t in model.tank_ids], dtype=float)
    if isinstance(pump_states, Mapping):
        arr = np.ones(model.n_links, dtype=bool)
        for pid, state in pump_states.items():
            arr[model.link_index[pid]] = bool(state)
        pump_states = arr
    return model.solve(demands, tank_levels, pump_open=pump_states)


def step_extended_period(prev: HydraulicSnapshot, network: Network, demands: Optional[DemandVector],
                         dt: float) -> HydraulicSnapshot:
    model = prev.model if prev.model is not None and prev.model.network is network else HydraulicModel(network)
    return model.step(prev, demands, dt)
