"""Time the compiled and pure-Python transport kernels against each other.

    python benchmarks/bench_kernels.py [--steps 96] [--repeat 3] [--trial-days 2]

Two workloads: quality transport alone on a fixed bench50 flow field, and a
full model-5 trial.  Each is timed per backend; the best of ``--repeat`` runs
is reported together with the speed-up of the compiled kernel.
"""
from __future__ import annotations

import argparse
import time
from importlib import resources

import numpy as np

from hydrosoc import _kernels
from hydrosoc.engine import prepare_trial, run_trial
from hydrosoc.hydraulics import HydraulicModel
from hydrosoc.inp import read_network
from hydrosoc.quality import QualityState, SourceInjection, advect, inject
from hydrosoc.scenario import read_scenario


def _data(*parts):
    return resources.files("hydrosoc").joinpath("data", *parts)


def transport(network, kernel_cls, steps: int) -> tuple[float, np.ndarray]:
    model = HydraulicModel(network)
    snap = model.solve(model.pattern_demands(0.0))
    dt = network.times.hydraulic_step
    dq = dt / 12
    state = QualityState(model, kernel_cls=kernel_cls)
    src = SourceInjection("WTP_W", 5.0e4, 0.0, steps * dt / 2)
    t0 = time.perf_counter()
    for s in range(steps):
        snap = model.step(snap, model.pattern_demands(s * dt), dt)
        for _ in range(12):
            inject(state, src, snap, dq)
            advect(state, snap, dq)
    return time.perf_counter() - t0, state.node_conc.copy()


def trial(network, scenario, kernel_cls) -> tuple[float, int]:
    inputs = prepare_trial(network, scenario, 0)
    t0 = time.perf_counter()
    res = run_trial(network, scenario, 5, 0, inputs=inputs, kernel_cls=kernel_cls)
    return time.perf_counter() - t0, res.total_exposed


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=96, help="hydraulic steps in the transport workload")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--trial-days", type=float, default=2.0)
    args = ap.parse_args()

    network = read_network(_data("networks", "bench50.inp"))
    scenario = read_scenario(_data("scenarios", "west_arsenic.scn")).with_overrides(duration_days=args.trial_days)
    backends = _kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernel not built; timing the Python kernel only")

    rows = []
    for label, fn in (("transport", lambda k: transport(network, k, args.steps)),
                      ("model-5 trial", lambda k: trial(network, scenario, k))):
        best, outputs = {}, {}
        for name, cls in backends.items():
            runs = [fn(cls) for _ in range(args.repeat)]
            best[name] = min(r[0] for r in runs)
            outputs[name] = runs[0][1]
        same = len({np.asarray(o).tobytes() for o in outputs.values()}) == 1
        rows.append((label, best, same))

    print(f"{'workload':<16} {'python s':>10} {'compiled s':>11} {'speed-up':>9}  identical")
    for label, best, same in rows:
        py = best["python"]
        comp = best.get("compiled")
        ratio = f"{py / comp:8.1f}x" if comp else "      n/a"
        comp_s = f"{comp:11.3f}" if comp else f"{'n/a':>11}"
        print(f"{label:<16} {py:10.3f} {comp_s} {ratio}  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
