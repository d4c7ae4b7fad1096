"""Coincident Population Plume index and result files.

Every CSV is UTF-8 with LF line endings and a header row.  Rows carry the
experiment block (``-`` outside sweeps), model level and trial index so that
several runs can share one file.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .quality import CONC_EPS

EXPOSURE_HEADER = ("block", "model", "trial", "step", "exposed", "warned", "demand_changed")
CPP_HEADER = ("block", "model", "trial", "step", "cpp")
SUMMARY_HEADER = ("block", "model", "trial", "seed", "total_exposed")
AGENTS_HEADER = ("block", "model", "trial", "id", "exposure_time_s", "node")
NO_BLOCK = "-"


def cpp(occupancy: Union[Mapping[str, int], Sequence[int]], concentration: Union[Mapping[str, float], Sequence[float]],
        total_population: int) -> float:
    """Share of all consumers located at nodes carrying contaminant.

    ``occupancy`` and ``concentration`` are keyed alike (node ids or
    positions).  Travellers are not in ``occupancy`` but still count in
    ``total_population``.
    """
    if total_population <= 0:
        raise ValueError("total population must be positive")
    if isinstance(occupancy, Mapping):
        pairs = [(occupancy[k], concentration.get(k, 0.0)) for k in occupancy]
    else:
        pairs = list(zip(occupancy, concentration))
    if sum(p for p, _ in pairs) > total_population:
        raise ValueError("more occupants than consumers")
    hit = sum(p for p, c in pairs if c > CONC_EPS)
    return hit / total_population


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    block: str
    trial: int
    seed: int
    result: object                    # SimulationResults


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _open(path: Path):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def _records(results) -> list[RunRecord]:
    if results is None:
        return []
    if isinstance(results, RunRecord):
        return [results]
    if hasattr(results, "exposed"):
        return [RunRecord(NO_BLOCK, 0, results.seed, results)]
    if hasattr(results, "rows"):
        return [RunRecord(NO_BLOCK, i, seed, res) for _, i, seed, res in results.rows()]
    return list(results)


def write_results(results, out_dir) -> list[Path]:
    """Write the four result CSVs; returns their paths.

    ``results`` is one trial, an experiment, or a sequence of
    :class:`RunRecord`; ``None`` or an empty sequence writes headers only.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create {out}: {exc.strerror}") from None
    recs = _records(results)
    paths = [out / n for n in ("exposure_series.csv", "cpp_series.csv", "summary.csv", "agents.csv")]
    fhs = [_open(p) for p in paths]
    try:
        w_exp, w_cpp, w_sum, w_ag = (csv.writer(fh, lineterminator="\n") for fh in fhs)
        w_exp.writerow(EXPOSURE_HEADER)
        w_cpp.writerow(CPP_HEADER)
        w_sum.writerow(SUMMARY_HEADER)
        w_ag.writerow(AGENTS_HEADER)
        for rec in recs:
            r = rec.result
            head = (rec.block, r.model_level, rec.trial)
            for s in range(r.n_steps):
                w_exp.writerow((*head, s, int(r.exposed[s]), int(r.warned[s]), int(r.demand_changed[s])))
                w_cpp.writerow((*head, s, _fmt(r.cpp[s])))
            w_sum.writerow((*head, rec.seed, r.total_exposed))
            order = np.argsort(r.agent_ids, kind="stable")
            for i in order:
                t = r.exposure_time[i]
                if math.isnan(t):
                    continue
                w_ag.writerow((*head, int(r.agent_ids[i]), f"{t:.1f}", r.exposure_node[i]))
    finally:
        for fh in fhs:
            fh.close()
    return paths


@dataclass(frozen=True)
class SummaryStats:
    block: str
    model: int
    trials: int
    mean: float
    min: int
    max: int


def summary_stats(rows: Iterable[Mapping[str, str]]) -> list[SummaryStats]:
    """Mean, min and max of total exposed per (block, model) from summary rows."""
    groups: dict = defaultdict(list)
    for row in rows:
        groups[(row["block"], int(row["model"]))].append(int(row["total_exposed"]))
    return [SummaryStats(b, m, len(v), sum(v) / len(v), min(v), max(v)) for (b, m), v in groups.items()]


def read_summary(path) -> list[SummaryStats]:
    with open(path, newline="", encoding="utf-8") as fh:
        return summary_stats(csv.DictReader(fh))


def format_report(stats: Sequence[SummaryStats], header: Optional[Sequence[str]] = None) -> str:
    lines = list(header or [])
    lines.append(f"{'block':<28} {'model':>5} {'trials':>6} {'mean':>10} {'min':>7} {'max':>7}")
    for s in stats:
        lines.append(f"{s.block:<28} {s.model:>5} {s.trials:>6} {s.mean:>10.1f} {s.min:>7} {s.max:>7}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# per-step dumps
# ---------------------------------------------------------------------------

class HydraulicsDump:
    """Streams node heads/demands and link flows to two CSVs."""

    def __init__(self, model, node_path, link_path):
        self.model = model
        self._nodes = _open(Path(node_path))
        self._links = _open(Path(link_path))
        self._wn = csv.writer(self._nodes, lineterminator="\n")
        self._wl = csv.writer(self._links, lineterminator="\n")
        self._wn.writerow(("time_s", "node", "head_m", "demand_lps"))
        self._wl.writerow(("time_s", "link", "flow_lps"))

    def __call__(self, step, snap) -> None:
        t = f"{snap.time:.1f}"
        for i, nid in enumerate(self.model.node_ids):
            self._wn.writerow((t, nid, _fmt(snap.heads[i]), _fmt(snap.demands[i])))
        for i, lid in enumerate(self.model.link_ids):
            self._wl.writerow((t, lid, _fmt(snap.flows[i])))

    def close(self) -> None:
        self._nodes.close()
        self._links.close()


class QualityDump:
    """Streams nodal concentrations at the end of each hydraulic step."""

    def __init__(self, model, path, step: float):
        self.model = model
        self.step = step
        self._fh = _open(Path(path))
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(("time_s", "node", "concentration"))

    def __call__(self, step, state) -> None:
        t = f"{(step + 1) * self.step:.1f}"
        for i, nid in enumerate(self.model.node_ids):
            self._w.writerow((t, nid, f"{state.node_conc[i]:.9g}"))

    def close(self) -> None:
        self._fh.close()
