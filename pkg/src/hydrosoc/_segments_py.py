"""Pure-Python Lagrangian segment kernel.

This is the reference implementation; ``_segments_ext`` (Cython) mirrors it
line for line.  Each link keeps a deque of ``[volume, concentration]``
segments ordered from the link's start node to its end node.
"""
from collections import deque

JUNCTION, RESERVOIR, TANK = 0, 1, 2
_VOL_EPS = 1e-10   # litres; slivers below this are absorbed when pulling


class SegmentKernel:
    def __init__(self, link_volume, merge_tol=1e-6):
        self.merge_tol = float(merge_tol)
        self._segs = []
        for v in link_volume:
            v = float(v)
            self._segs.append(deque([[v, 0.0]]) if v > 0 else deque())

    @property
    def n_links(self):
        return len(self._segs)

    # -- inspection ----------------------------------------------------------
    def segments(self, i):
        return [(s[0], s[1]) for s in self._segs[i]]

    def set_segments(self, i, segs):
        self._segs[i] = deque([float(v), float(c)] for v, c in segs if v > 0)

    def link_mass(self, i):
        return sum(v * c for v, c in self._segs[i])

    def link_volume(self, i):
        return sum(v for v, _ in self._segs[i])

    def total_mass(self):
        return sum(v * c for segs in self._segs for v, c in segs)

    def segment_count(self):
        return sum(len(s) for s in self._segs)

    # -- primitives ----------------------------------------------------------
    def _push(self, segs, at_front, vol, conc):
        if vol <= 0.0:
            return
        if segs:
            end = segs[0] if at_front else segs[-1]
            if abs(end[1] - conc) < self.merge_tol:
                tot = end[0] + vol
                end[1] = (end[0] * end[1] + vol * conc) / tot
                end[0] = tot
                return
        if at_front:
            segs.appendleft([vol, conc])
        else:
            segs.append([vol, conc])

    @staticmethod
    def _pull(segs, from_front, vol):
        mass = 0.0
        got = 0.0
        need = vol
        while need > 0.0 and segs:
            seg = segs[0] if from_front else segs[-1]
            if seg[0] - need <= _VOL_EPS:
                mass += seg[0] * seg[1]
                got += seg[0]
                need -= seg[0]
                if from_front:
                    segs.popleft()
                else:
                    segs.pop()
            else:
                mass += need * seg[1]
                got += need
                seg[0] -= need
                need = 0.0
        return mass, got

    # -- one transport step --------------------------------------------------
    def advance(self, qv, order, src_nodes, link_from, link_to, adj_ptr, adj_link,
                node_kind, demand_vol, src_mass, tank_mass, tank_vol, node_conc):
        """Move water and contaminant through the network for one quality step.

        ``qv`` is the signed volume (L) each link carries over the step.
        ``src_mass`` holds mass injected at each node and not yet released;
        it is consumed in place.  Returns ``(withdrawn, exited)``: mass that
        left through junction demands and mass that flowed into reservoirs.
        """
        out_arrays = (src_mass, tank_mass, tank_vol, node_conc)
        qv, order, src_nodes, link_from, link_to, adj_ptr, adj_link, node_kind, demand_vol = (
            _as_list(a) for a in (qv, order, src_nodes, link_from, link_to, adj_ptr, adj_link,
                                  node_kind, demand_vol))
        src_mass, tank_mass, tank_vol, node_conc = (_as_list(a) for a in out_arrays)
        segs = self._segs
        withdrawn = 0.0
        exited = 0.0

        # reservoirs and tanks release water first, at their current quality
        for n in src_nodes:
            out_vol = 0.0
            for k in range(adj_ptr[n], adj_ptr[n + 1]):
                l = adj_link[k]
                q = qv[l]
                if (q > 0.0 and link_from[l] == n) or (q < 0.0 and link_to[l] == n):
                    out_vol += abs(q)
            if node_kind[n] == TANK:
                tank_mass[n] += src_mass[n]
                src_mass[n] = 0.0
                c = tank_mass[n] / tank_vol[n] if tank_vol[n] > 0.0 else 0.0
            elif out_vol > 0.0:
                c = src_mass[n] / out_vol
                src_mass[n] = 0.0
            else:
                c = 0.0
            node_conc[n] = c
            for k in range(adj_ptr[n], adj_ptr[n + 1]):
                l = adj_link[k]
                q = qv[l]
                if q > 0.0 and link_from[l] == n:
                    self._push(segs[l], True, q, c)
                elif q < 0.0 and link_to[l] == n:
                    self._push(segs[l], False, -q, c)
                else:
                    continue
                if node_kind[n] == TANK:
                    tank_mass[n] -= abs(q) * c
                    tank_vol[n] -= abs(q)

        # junctions in flow order: mix all inflow, then feed outflows and demand
        for n in order:
            mass_in = 0.0
            out_vol = demand_vol[n]
            for k in range(adj_ptr[n], adj_ptr[n + 1]):
                l = adj_link[k]
                q = qv[l]
                if q > 0.0:
                    if link_to[l] == n:
                        mass_in += self._pull(segs[l], False, q)[0]
                    else:
                        out_vol += q
                elif q < 0.0:
                    if link_from[l] == n:
                        mass_in += self._pull(segs[l], True, -q)[0]
                    else:
                        out_vol -= q
            if out_vol <= 0.0:
                src_mass[n] += mass_in
                continue
            c = (mass_in + src_mass[n]) / out_vol
            src_mass[n] = 0.0
            node_conc[n] = c
            withdrawn += c * demand_vol[n]
            for k in range(adj_ptr[n], adj_ptr[n + 1]):
                l = adj_link[k]
                q = qv[l]
                if q > 0.0 and link_from[l] == n:
                    self._push(segs[l], True, q, c)
                elif q < 0.0 and link_to[l] == n:
                    self._push(segs[l], False, -q, c)

        # reservoirs and tanks take in what reached them
        for n in src_nodes:
            for k in range(adj_ptr[n], adj_ptr[n + 1]):
                l = adj_link[k]
                q = qv[l]
                if q > 0.0 and link_to[l] == n:
                    m, v = self._pull(segs[l], False, q)
                elif q < 0.0 and link_from[l] == n:
                    m, v = self._pull(segs[l], True, -q)
                else:
                    continue
                if node_kind[n] == TANK:
                    tank_mass[n] += m
                    tank_vol[n] += v
                else:
                    exited += m
            if node_kind[n] == TANK and tank_vol[n] > 0.0:
                node_conc[n] = tank_mass[n] / tank_vol[n]
        for dst, src in zip(out_arrays, (src_mass, tank_mass, tank_vol, node_conc)):
            dst[:] = src
        return withdrawn, exited


def _as_list(a):
    return a.tolist() if hasattr(a, "tolist") else list(a)
