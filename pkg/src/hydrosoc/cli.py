"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 bad input, 4 failure while running.
Errors are reported as one line on stderr: ``hydrosoc: error[<kind>]: <text>``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from ._kernels import BACKEND
from .engine import prepare_trial, run_seed, run_trial
from .errors import HydrosocError, InputError, SimulationError
from .hydraulics import HydraulicModel
from .inp import read_network
from .metrics import NO_BLOCK, HydraulicsDump, QualityDump, RunRecord, format_report, read_summary, write_results
from .scenario import ScenarioConfig, parse_number, parse_scenario, read_scenario, scenario_dict, serialize_scenario

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3, 4

SWEEP_ALIASES = {"critical_dose": "critical_dose_mg_per_kg", "intermediates": "cluster_intermediates"}

logger = logging.getLogger("hydrosoc")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydrosoc", description="Coupled consumer / water-network contamination simulator.")
    p.add_argument("--network", help="network file (INP subset)")
    p.add_argument("--scenario", help="scenario file (key = value)")
    p.add_argument("--model", default="5", help="model level 1..5 or 'all' (default 5)")
    p.add_argument("--trials", type=int, default=10, help="trials per model (default 10)")
    p.add_argument("--seed", type=int, default=None, help="base seed; trial i uses seed + i")
    p.add_argument("--out", default="results", help="output directory (default ./results)")
    p.add_argument("--dump-hydraulics", action="store_true", help="write per-step heads, demands and flows")
    p.add_argument("--dump-quality", action="store_true", help="write per-step nodal concentrations")
    p.add_argument("--sweep", help="param=v1,v2,... run one experiment block per value")
    p.add_argument("--jobs", type=int, default=1, help="trials run in parallel (default 1)")
    p.add_argument("--replay", metavar="MANIFEST", help="rerun exactly as recorded in a manifest.json")
    return p


def _fail(kind: str, msg: str, code: int) -> int:
    print(f"hydrosoc: error[{kind}]: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _models(arg: str) -> list[int]:
    if arg == "all":
        return [1, 2, 3, 4, 5]
    try:
        levels = [int(x) for x in arg.split(",")]
    except ValueError:
        raise UsageError(f"--model must be 1..5 or 'all', got {arg!r}") from None
    if any(m not in (1, 2, 3, 4, 5) for m in levels):
        raise UsageError(f"--model must be 1..5 or 'all', got {arg!r}")
    return levels


def _sweep(arg: Optional[str], base: ScenarioConfig) -> list[tuple[str, ScenarioConfig]]:
    if not arg:
        return [(NO_BLOCK, base)]
    if "=" not in arg:
        raise UsageError("--sweep needs param=v1,v2,...")
    name, values = arg.split("=", 1)
    name = SWEEP_ALIASES.get(name.strip(), name.strip())
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise UsageError("--sweep needs at least one value")
    known = set(scenario_dict(base)) | {"critical_dose_mg_per_kg"}
    if name not in known:
        raise UsageError(f"cannot sweep unknown parameter {name!r}")
    blocks = []
    for v in vals:
        current = getattr(base, name, None)
        try:
            value = int(parse_number(v)) if isinstance(current, int) and not isinstance(current, bool) \
                else parse_number(v)
        except ValueError:
            raise UsageError(f"bad sweep value {v!r}") from None
        blocks.append((f"{name}={v}", base.with_overrides(**{name: value})))
    return blocks


def run(args: argparse.Namespace, replay: Optional[dict] = None) -> int:
    out = Path(args.out)
    net_path = Path(args.network)
    network = read_network(net_path)
    if replay is not None:
        if _sha256(net_path) != replay["network"]["sha256"]:
            raise InputError(f"{net_path} differs from the file recorded in the manifest")
        scenario = parse_scenario(replay["scenario"]["resolved_text"])
        scn_path = Path(replay["scenario"]["path"])
    else:
        scn_path = Path(args.scenario)
        scenario = read_scenario(scn_path)
    if scenario.injection_node not in network.node_ids:
        raise InputError(f"injection node {scenario.injection_node!r} is not in {net_path}")
    models = _models(args.model)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    base_seed = scenario.seed if args.seed is None else args.seed
    if base_seed < 0:
        raise UsageError("--seed must be non-negative")
    blocks = _sweep(args.sweep, scenario)
    seeds = [base_seed + i for i in range(args.trials)]
    out.mkdir(parents=True, exist_ok=True)

    records: list[RunRecord] = []
    timings = []
    model_cache = HydraulicModel(network)
    for block, cfg in blocks:
        work = [(i, sd) for i, sd in enumerate(seeds)]
        if args.jobs > 1 and not (args.dump_hydraulics or args.dump_quality):
            per_seed = _parallel(network, cfg, models, work, args.jobs)
        else:
            per_seed = [_serial(network, cfg, models, i, sd, model_cache, args, out, block) for i, sd in work]
        for (i, sd), results in zip(work, per_seed):
            for res in results:
                records.append(RunRecord(block, i, sd, res))
                timings.append({"block": block, "model": res.model_level, "trial": i, "seed": sd,
                                "wall_s": round(res.wall_time, 4)})
    records.sort(key=lambda r: ([b for b, _ in blocks].index(r.block), r.result.model_level, r.trial))
    paths = write_results(records, out)
    stats = read_summary(out / "summary.csv")
    header = [f"hydrosoc {__version__}", f"network: {net_path.name}", f"scenario: {scenario.name}",
              f"models: {','.join(map(str, models))}  trials: {args.trials}  base seed: {base_seed}",
              "total exposed per block and model:"]
    report = format_report(stats, header)
    (out / "report.txt").write_text(report, encoding="utf-8")

    manifest = {
        "tool": "hydrosoc",
        "version": __version__,
        "kernel_backend": BACKEND,
        "network": {"path": str(net_path.resolve()), "sha256": _sha256(net_path)},
        "scenario": {"path": str(scn_path.resolve()) if scn_path.exists() else str(scn_path),
                     "sha256": _sha256(scn_path) if scn_path.exists() else None,
                     "resolved": scenario_dict(scenario),
                     "resolved_text": serialize_scenario(scenario)},
        "args": {"model": args.model, "trials": args.trials, "seed": base_seed, "sweep": args.sweep,
                 "dump_hydraulics": args.dump_hydraulics, "dump_quality": args.dump_quality, "jobs": args.jobs},
        "seeds": seeds,
        "outputs": {p.name: _sha256(p) for p in paths + [out / "report.txt"]},
        "wall_clock": timings,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK


def _serial(network, cfg, models, i, seed, model, args, out: Path, block: str):
    inputs = prepare_trial(network, cfg, seed)
    results = []
    for lvl in models:
        tag = f"{'' if block == NO_BLOCK else block.replace('=', '_') + '_'}model{lvl}_trial{i}"
        hyd = HydraulicsDump(model, out / f"{tag}_nodes.csv", out / f"{tag}_links.csv") \
            if args.dump_hydraulics else None
        qual = QualityDump(model, out / f"{tag}_quality.csv", _step(network, cfg)) \
            if args.dump_quality else None
        try:
            results.append(run_trial(network, cfg, lvl, seed, model=model, inputs=inputs,
                                     on_hydraulics=hyd, on_quality=qual))
        finally:
            for d in (hyd, qual):
                if d is not None:
                    d.close()
    return results


def _step(network, cfg) -> float:
    return cfg.hydraulic_step or network.times.hydraulic_step


def _parallel(network, cfg, models, work, jobs):
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(run_seed, [(network, cfg, models, sd) for _, sd in work]))


def _setup_logging() -> None:
    level = os.environ.get("HYDROSOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = _parser()
    args = parser.parse_args(argv)
    replay = None
    try:
        if args.replay:
            try:
                replay = json.loads(Path(args.replay).read_text(encoding="utf-8"))
                rec = replay["args"]
            except (OSError, ValueError, KeyError) as exc:
                return _fail("input", f"cannot read manifest {args.replay}: {exc}", EXIT_INPUT)
            args.network = args.network or replay["network"]["path"]
            args.model, args.trials, args.seed = rec["model"], rec["trials"], rec["seed"]
            args.sweep, args.jobs = rec["sweep"], rec["jobs"]
            args.dump_hydraulics, args.dump_quality = rec["dump_hydraulics"], rec["dump_quality"]
        elif not args.network or not args.scenario:
            parser.print_usage(sys.stderr)
            return _fail("usage", "--network and --scenario are required", EXIT_USAGE)
        return run(args, replay)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail("usage", exc, EXIT_USAGE)
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        return _fail("input", exc, EXIT_INPUT)
    except (SimulationError, HydrosocError) as exc:
        return _fail("runtime", exc, EXIT_RUNTIME)
    except (OSError, ValueError, RuntimeError) as exc:
        return _fail("runtime", exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
