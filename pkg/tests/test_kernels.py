import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrosoc import _kernels
from hydrosoc.engine import prepare_trial, run_trial
from hydrosoc.hydraulics import HydraulicModel
from hydrosoc.quality import QualityState, SourceInjection, advect, inject

BACKENDS = _kernels.available_backends()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")


@needs_compiled
def test_compiled_is_default():
    assert _kernels.BACKEND == "compiled"


def test_forced_fallback():
    code = "import hydrosoc._kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"HYDROSOC_PURE_PYTHON": "1", "PATH": ""},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3), st.floats(1.0, 500.0))
def test_backends_agree_on_random_demands(two_loop, scale, rate):
    model = HydraulicModel(two_loop)
    states = {name: QualityState(model, kernel_cls=cls) for name, cls in BACKENDS.items()}
    src = SourceInjection("R", rate, 0.0, 1800.0)
    snap = model.solve({"J1": 20 * scale[0], "J2": 30 * scale[1], "J3": 25 * scale[2]})
    for _ in range(40):
        for st_ in states.values():
            inject(st_, src, snap, 90.0)
            advect(st_, snap, 90.0)
    a, b = states["python"], states["compiled"]
    assert np.array_equal(a.node_conc, b.node_conc)
    assert a.withdrawn == b.withdrawn and a.mass_in_pipes() == b.mass_in_pipes()
    for lid in model.link_ids:
        assert a.link_segments(lid) == b.link_segments(lid)


@needs_compiled
def test_backends_agree_on_trial(bench, west):
    cfg = west.with_overrides(duration_days=3.0)
    inputs = prepare_trial(bench, cfg, 4)
    runs = [run_trial(bench, cfg, 5, 4, inputs=inputs, kernel_cls=cls) for cls in BACKENDS.values()]
    a, b = runs
    for field in ("exposed", "warned", "demand_changed", "cpp", "mass_in_network"):
        assert np.array_equal(getattr(a, field), getattr(b, field)), field
    assert np.array_equal(a.exposure_time, b.exposure_time, equal_nan=True)
