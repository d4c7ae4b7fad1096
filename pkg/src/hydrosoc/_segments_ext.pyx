# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled Lagrangian segment kernel; same interface as ``_segments_py``."""
from libcpp.deque cimport deque
from libcpp.vector cimport vector
from libc.math cimport fabs

import numpy as np

cdef struct Seg:
    double v
    double c

cdef enum:
    JUNCTION = 0
    RESERVOIR = 1
    TANK = 2

cdef double VOL_EPS = 1e-10


cdef class SegmentKernel:
    cdef vector[deque[Seg]] _segs
    cdef public double merge_tol

    def __init__(self, link_volume, double merge_tol=1e-6):
        cdef Seg s
        cdef deque[Seg] empty
        self.merge_tol = merge_tol
        self._segs.clear()
        for v in link_volume:
            self._segs.push_back(empty)
            if v > 0:
                s.v = v
                s.c = 0.0
                self._segs.back().push_back(s)

    @property
    def n_links(self):
        return self._segs.size()

    def segments(self, Py_ssize_t i):
        return [(s.v, s.c) for s in self._segs[i]]

    def set_segments(self, Py_ssize_t i, segs):
        cdef Seg s
        self._segs[i].clear()
        for v, c in segs:
            if v > 0:
                s.v = v
                s.c = c
                self._segs[i].push_back(s)

    def link_mass(self, Py_ssize_t i):
        cdef double m = 0.0
        for s in self._segs[i]:
            m += s.v * s.c
        return m

    def link_volume(self, Py_ssize_t i):
        cdef double m = 0.0
        for s in self._segs[i]:
            m += s.v
        return m

    def total_mass(self):
        cdef double m = 0.0
        cdef size_t i
        for i in range(self._segs.size()):
            for s in self._segs[i]:
                m += s.v * s.c
        return m

    def segment_count(self):
        cdef size_t n = 0, i
        for i in range(self._segs.size()):
            n += self._segs[i].size()
        return n

    cdef inline void _push(self, Py_ssize_t l, bint at_front, double vol, double conc):
        cdef Seg s
        cdef Seg* end
        cdef double tot
        cdef deque[Seg]* segs = &self._segs[l]
        if vol <= 0.0:
            return
        if not segs.empty():
            if at_front:
                end = &segs.front()
            else:
                end = &segs.back()
            if fabs(end.c - conc) < self.merge_tol:
                tot = end.v + vol
                end.c = (end.v * end.c + vol * conc) / tot
                end.v = tot
                return
        s.v = vol
        s.c = conc
        if at_front:
            segs.push_front(s)
        else:
            segs.push_back(s)

    cdef inline double _pull(self, Py_ssize_t l, bint from_front, double vol, double* got):
        cdef double mass = 0.0, need = vol
        cdef Seg* seg
        cdef deque[Seg]* segs = &self._segs[l]
        got[0] = 0.0
        while need > 0.0 and not segs.empty():
            if from_front:
                seg = &segs.front()
            else:
                seg = &segs.back()
            if seg.v - need <= VOL_EPS:
                mass += seg.v * seg.c
                got[0] += seg.v
                need -= seg.v
                if from_front:
                    segs.pop_front()
                else:
                    segs.pop_back()
            else:
                mass += need * seg.c
                got[0] += need
                seg.v -= need
                need = 0.0
        return mass

    def advance(self, const double[:] qv, const Py_ssize_t[:] order, const Py_ssize_t[:] src_nodes,
                const Py_ssize_t[:] link_from, const Py_ssize_t[:] link_to,
                const Py_ssize_t[:] adj_ptr, const Py_ssize_t[:] adj_link,
                const Py_ssize_t[:] node_kind, const double[:] demand_vol,
                double[:] src_mass, double[:] tank_mass, double[:] tank_vol, double[:] node_conc):
        cdef double withdrawn = 0.0, exited = 0.0
        cdef double out_vol, mass_in, c, q, m, v
        cdef Py_ssize_t i, n, k, l

        for i in range(src_nodes.shape[0]):
            n = src_nodes[i]
            out_vol = 0.0
            for k in range(adj_ptr[n], adj_ptr[n + 1]):
                l = adj_link[k]
                q = qv[l]
                if (q > 0.0 and link_from[l] == n) or (q < 0.0 and link_to[l] == n):
                    out_vol += fabs(q)
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
                    self._push(l, True, q, c)
                elif q < 0.0 and link_to[l] == n:
                    self._push(l, False, -q, c)
                else:
                    continue
                if node_kind[n] == TANK:
                    tank_mass[n] -= fabs(q) * c
                    tank_vol[n] -= fabs(q)

        for i in range(order.shape[0]):
            n = order[i]
            mass_in = 0.0
            out_vol = demand_vol[n]
            for k in range(adj_ptr[n], adj_ptr[n + 1]):
                l = adj_link[k]
                q = qv[l]
                if q > 0.0:
                    if link_to[l] == n:
                        mass_in += self._pull(l, False, q, &v)
                    else:
                        out_vol += q
                elif q < 0.0:
                    if link_from[l] == n:
                        mass_in += self._pull(l, True, -q, &v)
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
                    self._push(l, True, q, c)
                elif q < 0.0 and link_to[l] == n:
                    self._push(l, False, -q, c)

        for i in range(src_nodes.shape[0]):
            n = src_nodes[i]
            for k in range(adj_ptr[n], adj_ptr[n + 1]):
                l = adj_link[k]
                q = qv[l]
                if q > 0.0 and link_to[l] == n:
                    m = self._pull(l, False, q, &v)
                elif q < 0.0 and link_from[l] == n:
                    m = self._pull(l, True, -q, &v)
                else:
                    continue
                if node_kind[n] == TANK:
                    tank_mass[n] += m
                    tank_vol[n] += v
                else:
                    exited += m
            if node_kind[n] == TANK and tank_vol[n] > 0.0:
                node_conc[n] = tank_mass[n] / tank_vol[n]
        return withdrawn, exited
