import math

import numpy as np
import pytest

from oracles import parcel_transport, tank_mix
from hydrosoc.errors import UnknownNode
from hydrosoc.hydraulics import HydraulicModel, HydraulicSnapshot
from hydrosoc.inp import parse_network
from hydrosoc.quality import (CONC_EPS, QualityState, SourceInjection, advect, contaminated_mask, inject,
                              node_concentration)

HEADER = "[OPTIONS]\nUNITS LPS\nHEADLOSS H-W\n"
AREA_100MM = math.pi * 0.1 ** 2 / 4


def single_pipe():
    q = 0.1 * AREA_100MM * 1000.0                     # L/s for 0.1 m/s
    net = parse_network(HEADER + f"[RESERVOIRS]\nR 30\n[JUNCTIONS]\nJ 0 {q!r}\n[PIPES]\nP R J 100 100 120\n")
    model = HydraulicModel(net)
    return model, model.solve(model.pattern_demands(0.0)), q


def run(state, snap, dq, steps, source=None):
    out = []
    for _ in range(steps):
        if source is not None:
            inject(state, source, snap, dq)
        advect(state, snap, dq)
        out.append(state.node_conc.copy())
    return np.array(out)


def test_no_injection_stays_clean(bench):
    model = HydraulicModel(bench)
    snap = model.solve(model.pattern_demands(0.0))
    state = QualityState(model)
    run(state, snap, 300.0, 24)
    assert not state.node_conc.any() and state.mass_in_system() == 0.0


def test_plug_flow_arrival():
    model, snap, q = single_pipe()
    assert snap.flow("P") / 1000.0 / AREA_100MM == pytest.approx(0.1, rel=1e-9)
    dq = 10.0
    state = QualityState(model)
    series = run(state, snap, dq, 200, SourceInjection("R", 5.0, 0.0, 1e9))
    j = model.node_index["J"]
    first = (np.argmax(series[:, j] > CONC_EPS) + 1) * dq     # end of the step that saw it
    assert abs(first - 1000.0) <= dq


def test_source_concentration_is_rate_over_flow():
    model, snap, q = single_pipe()
    state = QualityState(model)
    rate = 7.5
    run(state, snap, 60.0, 5, SourceInjection("R", rate, 0.0, 1e9))
    assert node_concentration(state, "R") == pytest.approx(rate / q, rel=1e-12)
    series = run(state, snap, 60.0, 20, SourceInjection("R", rate, 0.0, 1e9))
    assert series[-1, model.node_index["J"]] == pytest.approx(rate / q, rel=1e-9)


def test_window_elapsed_leaves_state_unchanged():
    model, snap, _ = single_pipe()
    state = QualityState(model)
    state.time = 5000.0
    inject(state, SourceInjection("R", 3.0, 0.0, 1000.0), snap, 60.0)
    assert state.injected == 0.0 and not state.pending.any()


def test_full_load_counter(bench, west):
    model = HydraulicModel(bench)
    snap = model.solve(model.pattern_demands(0.0, 0.6))
    state = QualityState(model)
    src = SourceInjection.from_scenario(west)
    state.time = west.injection_start - 600.0
    dq = 300.0
    while state.time < west.injection_end + 600.0:
        inject(state, src, snap, dq)
        advect(state, snap, dq)
    assert state.injected == pytest.approx(300e6, rel=1e-12)    # mg
    assert state.balance_error() < 1e-9


def test_unknown_node(bench):
    state = QualityState(HydraulicModel(bench))
    with pytest.raises(UnknownNode):
        node_concentration(state, "NOPE")
    assert node_concentration(state, "J33") == 0.0


def _tank_case():
    net = parse_network(HEADER + "[RESERVOIRS]\nR 80\n[TANKS]\nT 10 5 0 20 10\n[JUNCTIONS]\nJ 0 10\n"
                        "[PIPES]\nA R T 1 50 120\nB T J 300 150 120\n")
    model = HydraulicModel(net)
    n = model.n_nodes
    flows = np.array([10.0, 10.0])                 # steady through-flow keeps the volume fixed
    demands = np.zeros(n)
    demands[model.node_index["J"]] = 10.0
    snap = HydraulicSnapshot(0.0, np.zeros(n), flows, np.array([5.0]), demands, model=model)
    return model, snap


def test_tank_complete_mix_curve():
    model, snap = _tank_case()
    state = QualityState(model)
    rate, q = 20.0, 10.0
    v = model.tank_area[0] * 5.0 * 1000.0
    dq = 60.0
    series = run(state, snap, dq, 24 * 60, SourceInjection("R", rate, 0.0, 1e9))
    t = (np.arange(1, len(series) + 1)) * dq
    tank = series[:, model.node_index["T"]]
    expected = tank_mix(rate / q, q, v, t)
    late = t >= 600.0
    assert np.all(np.abs(tank[late] - expected[late]) <= 0.02 * expected[late])


def test_bench_matches_parcel_oracle(bench):
    model = HydraulicModel(bench)
    snaps = []
    snap = model.solve(model.pattern_demands(0.0, 0.6))
    for k in range(24):
        snaps.append(snap)
        snap = model.step(snap, model.pattern_demands((k + 1) * 3600.0, 0.6), 3600.0)
    rate, window, dq = 3e8 / 21600.0, (6 * 3600.0, 12 * 3600.0), 300.0
    state = QualityState(model)
    src = SourceInjection("WTP_W", rate, *window)
    mine = []
    for s in snaps:
        run(state, s, dq, 12, src)
        mine.append(state.node_conc.copy())
    mine = np.array(mine)
    ref = parcel_transport(model, snaps, "WTP_W", rate, window, dq)
    j = slice(0, model.n_junctions)
    # relative L1 distance over every junction series
    err = np.abs(mine[:, j] - ref[:, j]).sum() / ref[:, j].sum()
    assert ref[:, j].max() > 0
    assert err <= 0.03


def test_monotone_dilution_without_injection():
    net = parse_network(HEADER + "[RESERVOIRS]\nR 50\n[JUNCTIONS]\nA 0 3\nB 0 4\nC 0 2\n[PIPES]\n"
                        "P1 R A 200 150 110\nP2 A B 300 100 110\nP3 A C 250 100 110\nP4 B C 150 80 110\n")
    model = HydraulicModel(net)
    snap = model.solve(model.pattern_demands(0.0))
    state = QualityState(model)
    run(state, snap, 60.0, 30, SourceInjection("R", 50.0, 0.0, 600.0))
    def peak():
        segs = [c for lid in model.link_ids for _, c in state.link_segments(lid)]
        return max(max(segs, default=0.0), state.node_conc.max())

    prev = peak()
    for _ in range(120):
        advect(state, snap, 60.0)
        cur = peak()
        assert cur <= prev + 1e-12
        prev = cur


def test_segment_volume_conservation(bench):
    model = HydraulicModel(bench)
    state = QualityState(model)
    src = SourceInjection("WTP_W", 1000.0, 0.0, 1e9)
    snap = model.solve(model.pattern_demands(0.0))
    for k in range(12):
        run(state, snap, 300.0, 12, src)
        for i, lid in enumerate(model.link_ids):
            vol = sum(v for v, _ in state.link_segments(lid))
            assert abs(vol - model.link_volume[i]) <= 1e-6 * max(model.link_volume[i], 1.0)
            assert all(c >= 0 for _, c in state.link_segments(lid))
        snap = model.step(snap, None, 3600.0)
    assert state.balance_error() < 1e-9
    assert contaminated_mask(state).sum() > 0
