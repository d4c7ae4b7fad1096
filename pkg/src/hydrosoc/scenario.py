"""Contamination scenario files.

A scenario file is UTF-8 text with one ``key = value`` pair per line and
``#`` comments.  Example::

    name = west_arsenic_300kg
    contaminant = chemical
    injection_node = WTP
    injection_start = day 1 6pm
    injection_end = day 2 12am
    load = 300 kg
    demand_multiplier = 0.60

Times are absolute simulation times; ``day 1 00:00`` is t = 0.
"""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from .errors import InputError, MalformedLine, MissingKey, OutOfRange

DAY = 86400.0

ACTIVITIES = ("washing_clothes", "shower", "faucet", "misc_indoor")
DEFAULT_SUSPENSION = {"washing_clothes": 0.8, "shower": 0.7, "faucet": 0.9, "misc_indoor": 0.8}

REQUIRED_KEYS = ("contaminant", "injection_node", "injection_start", "injection_end", "load")

_MULT_SUFFIX = {"k": 1e3, "K": 1e3, "M": 1e6, "G": 1e9, "B": 1e9}
_MASS_UNITS = {"kg": 1.0, "g": 1e-3, "mg": 1e-6}


@dataclass(frozen=True)
class ScenarioConfig:
    contaminant: str                       # "chemical" | "pathogen"
    injection_node: str
    injection_start: float                 # s
    injection_end: float                   # s
    load: float                            # kg (chemical) or organisms (pathogen)
    name: str = "scenario"
    load_doses: Optional[float] = None     # pathogen load as written, in doses
    demand_multiplier: float = 1.0
    critical_dose_kind: str = "weight_proportional"   # or "fixed"
    critical_dose_coefficient: float = 5.0e-8         # kg contaminant / kg body weight
    critical_dose_count: Optional[float] = None       # organisms
    doses_to_organisms: Optional[float] = None
    model_level: int = 5
    duration_days: Optional[float] = None
    trials: int = 10
    seed: int = 0
    total_population: int = 1000
    cluster_size: int = 15
    cluster_isolates: int = 1
    cluster_sources: int = 1
    cluster_intermediates: int = 2
    cluster_ultimates: int = 11
    cluster_direct_fraction: float = 0.5
    suspension_probability: dict = field(default_factory=lambda: dict(DEFAULT_SUSPENSION))
    walking_speed: float = 1.4
    hydraulic_step: Optional[float] = None
    quality_step: Optional[float] = None
    reaction_latency_steps: int = 1
    warned_stop_drinking: bool = True
    weight_model: str = "fixed"            # "fixed" | "sampled"
    fixed_weight_kg: float = 70.0
    residential_patterns: tuple = ("RES",)
    demographics_file: Optional[str] = None
    meal_m1_file: Optional[str] = None
    meal_gap12_file: Optional[str] = None
    meal_gap23_file: Optional[str] = None

    def __post_init__(self):
        validate_scenario(self)

    # ------------------------------------------------------------------
    @property
    def duration(self) -> float:
        """Simulated duration in seconds."""
        return self.effective_duration_days * DAY

    @property
    def effective_duration_days(self) -> float:
        if self.duration_days is not None:
            return self.duration_days
        return 8.0 if self.contaminant == "chemical" else 10.0

    @property
    def mass_unit(self) -> str:
        return "mg" if self.contaminant == "chemical" else "organisms"

    @property
    def load_in_mass_units(self) -> float:
        """Total load in the transport unit (mg, or organism count)."""
        if self.contaminant == "chemical":
            return self.load * 1e6
        return self.load

    @property
    def injection_rate(self) -> float:
        """Injected mass units per second while the source is active."""
        return self.load_in_mass_units / (self.injection_end - self.injection_start)

    def with_overrides(self, **changes: Any) -> "ScenarioConfig":
        """Copy with some fields replaced; cluster roles are rebalanced."""
        if "critical_dose_mg_per_kg" in changes:
            changes["critical_dose_coefficient"] = float(changes.pop("critical_dose_mg_per_kg")) * 1e-6
            changes.setdefault("critical_dose_kind", "weight_proportional")
        if ("cluster_size" in changes or "cluster_intermediates" in changes
                or "cluster_isolates" in changes or "cluster_sources" in changes) \
                and "cluster_ultimates" not in changes:
            size = int(changes.get("cluster_size", self.cluster_size))
            iso = int(changes.get("cluster_isolates", self.cluster_isolates))
            src = int(changes.get("cluster_sources", self.cluster_sources))
            mid = int(changes.get("cluster_intermediates", self.cluster_intermediates))
            changes["cluster_ultimates"] = size - iso - src - mid
        return replace(self, **changes)


def validate_scenario(cfg: ScenarioConfig) -> None:
    if cfg.contaminant not in ("chemical", "pathogen"):
        raise OutOfRange("contaminant", "must be 'chemical' or 'pathogen'")
    if not 0 <= cfg.injection_start < cfg.injection_end:
        raise OutOfRange("injection_start", "need 0 <= start < end")
    if cfg.injection_end > cfg.duration:
        raise OutOfRange("injection_end", "injection must end within the simulated duration")
    if not cfg.load > 0:
        raise OutOfRange("load", "must be > 0")
    if not cfg.demand_multiplier > 0:
        raise OutOfRange("demand_multiplier", "must be > 0")
    if cfg.model_level not in (1, 2, 3, 4, 5):
        raise OutOfRange("model_level", "must be 1..5")
    if cfg.critical_dose_kind not in ("weight_proportional", "fixed"):
        raise OutOfRange("critical_dose_kind", "must be 'weight_proportional' or 'fixed'")
    if cfg.critical_dose_kind == "fixed":
        if cfg.critical_dose_count is None:
            raise MissingKey("critical_dose_count")
        if not cfg.critical_dose_count > 0:
            raise OutOfRange("critical_dose_count", "must be > 0")
    elif not cfg.critical_dose_coefficient > 0:
        raise OutOfRange("critical_dose_coefficient", "must be > 0")
    if cfg.doses_to_organisms is not None and not cfg.doses_to_organisms > 0:
        raise OutOfRange("doses_to_organisms", "must be > 0")
    if cfg.duration_days is not None and not cfg.duration_days > 0:
        raise OutOfRange("duration_days", "must be > 0")
    if cfg.trials < 1:
        raise OutOfRange("trials", "must be >= 1")
    if cfg.seed < 0:
        raise OutOfRange("seed", "must be >= 0")
    if cfg.total_population < 1:
        raise OutOfRange("total_population", "must be >= 1")
    roles = (cfg.cluster_isolates, cfg.cluster_sources, cfg.cluster_intermediates, cfg.cluster_ultimates)
    if min(roles) < 0:
        raise OutOfRange("cluster_ultimates", "role counts must be non-negative")
    if cfg.cluster_sources != 1:
        raise OutOfRange("cluster_sources", "each cluster has exactly one original source")
    if cfg.cluster_size < 2:
        raise OutOfRange("cluster_size", "must be >= 2")
    if sum(roles) != cfg.cluster_size:
        raise OutOfRange("cluster_size", f"role counts {roles} do not sum to {cfg.cluster_size}")
    if not 0 <= cfg.cluster_direct_fraction <= 1:
        raise OutOfRange("cluster_direct_fraction", "must be in [0, 1]")
    if set(cfg.suspension_probability) != set(ACTIVITIES):
        raise OutOfRange("suspension_probability", f"needs exactly {ACTIVITIES}")
    for act, p in cfg.suspension_probability.items():
        if not 0 <= p <= 1:
            raise OutOfRange(f"suspension_probability.{act}", "must be in [0, 1]")
    if not cfg.walking_speed > 0:
        raise OutOfRange("walking_speed", "must be > 0")
    for key in ("hydraulic_step", "quality_step"):
        val = getattr(cfg, key)
        if val is not None and not val > 0:
            raise OutOfRange(key, "must be > 0")
    if cfg.reaction_latency_steps < 1:
        # the solve of a step precedes its agent phase, so one step is the shortest delay
        raise OutOfRange("reaction_latency_steps", "must be >= 1")
    if cfg.weight_model not in ("fixed", "sampled"):
        raise OutOfRange("weight_model", "must be 'fixed' or 'sampled'")
    if not cfg.fixed_weight_kg > 0:
        raise OutOfRange("fixed_weight_kg", "must be > 0")


# ---------------------------------------------------------------------------
# value parsers
# ---------------------------------------------------------------------------

def parse_number(text: str) -> float:
    """Parse ``36M``, ``2.5k`` or a plain float."""
    text = text.strip()
    if text and text[-1] in _MULT_SUFFIX:
        return float(text[:-1]) * _MULT_SUFFIX[text[-1]]
    return float(text)


_CLOCK_RE = re.compile(r"^(\d{1,2})(?::(\d{2}))?(?::(\d{2}))?\s*(am|pm)?$", re.IGNORECASE)


def parse_clock(text: str) -> float:
    """Seconds after midnight for ``18:00``, ``6pm``, ``12am``, ``7:30pm``."""
    m = _CLOCK_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad clock time {text!r}")
    hour = int(m.group(1))
    minute = int(m.group(2) or 0)
    sec = int(m.group(3) or 0)
    ampm = m.group(4)
    if ampm:
        if not 1 <= hour <= 12:
            raise ValueError(f"bad 12-hour clock {text!r}")
        hour = hour % 12 + (12 if ampm.lower() == "pm" else 0)
    if hour > 24 or minute > 59 or sec > 59 or (hour == 24 and (minute or sec)):
        raise ValueError(f"bad clock time {text!r}")
    return hour * 3600.0 + minute * 60.0 + sec


def parse_sim_time(text: str) -> float:
    """Absolute simulation time: ``day 2 12am``, ``day 1 18:00`` or seconds."""
    t = text.strip()
    m = re.match(r"^day\s+(\d+)\s*,?\s*(.+)$", t, re.IGNORECASE)
    if m:
        day = int(m.group(1))
        if day < 1:
            raise ValueError("days are numbered from 1")
        return (day - 1) * DAY + parse_clock(m.group(2))
    return float(t)


def format_sim_time(seconds: float) -> str:
    day = int(seconds // DAY)
    rem = seconds - day * DAY
    if rem != int(rem):
        return repr(float(seconds))
    rem = int(rem)
    out = f"day {day + 1} {rem // 3600:02d}:{(rem % 3600) // 60:02d}"
    if rem % 60:
        out += f":{rem % 60:02d}"
    return out


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


_INT_KEYS = {"model_level", "trials", "seed", "total_population", "cluster_size", "cluster_isolates",
             "cluster_sources", "cluster_intermediates", "cluster_ultimates", "reaction_latency_steps"}
_FLOAT_KEYS = {"demand_multiplier", "critical_dose_coefficient", "critical_dose_count",
               "doses_to_organisms", "duration_days", "cluster_direct_fraction", "walking_speed",
               "hydraulic_step", "quality_step", "fixed_weight_kg"}
_STR_KEYS = {"name", "contaminant", "injection_node", "critical_dose_kind", "weight_model"}
_PATH_KEYS = {"demographics_file", "meal_m1_file", "meal_gap12_file", "meal_gap23_file"}


def _read_pairs(text: str) -> dict[str, tuple[int, str]]:
    pairs: dict[str, tuple[int, str]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise MalformedLine(line_no, "expected 'key = value'")
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            raise MalformedLine(line_no, "empty key")
        if key in pairs:
            raise MalformedLine(line_no, f"key {key!r} given twice")
        pairs[key] = (line_no, value)
    return pairs


def parse_scenario(text: str, base_dir: Optional[Path] = None) -> ScenarioConfig:
    """Parse and validate a scenario document.

    Relative table paths are resolved against ``base_dir`` when given.
    """
    pairs = _read_pairs(text)
    for key in REQUIRED_KEYS:
        if key not in pairs:
            raise MissingKey(key)

    kwargs: dict[str, Any] = {}
    suspension = dict(DEFAULT_SUSPENSION)
    for key, (line_no, value) in pairs.items():
        try:
            if key in _INT_KEYS:
                num = parse_number(value)
                if num != int(num):
                    raise ValueError("expected an integer")
                kwargs[key] = int(num)
            elif key in _FLOAT_KEYS:
                kwargs[key] = parse_number(value)
            elif key in _STR_KEYS:
                kwargs[key] = value
            elif key in _PATH_KEYS:
                path = Path(value)
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                kwargs[key] = str(path)
            elif key in ("injection_start", "injection_end"):
                kwargs[key] = parse_sim_time(value)
            elif key == "load":
                kwargs.update(_parse_load(value))
            elif key == "warned_stop_drinking":
                kwargs[key] = _parse_bool(value)
            elif key == "residential_patterns":
                kwargs[key] = tuple(v.strip() for v in value.split(",") if v.strip())
            elif key.startswith("suspension_probability."):
                act = key.split(".", 1)[1]
                if act not in ACTIVITIES:
                    raise MalformedLine(line_no, f"unknown activity {act!r}")
                suspension[act] = float(value)
            else:
                raise MalformedLine(line_no, f"unknown key {key!r}")
        except InputError:
            raise
        except ValueError as exc:
            raise OutOfRange(key, str(exc)) from None
    kwargs["suspension_probability"] = suspension

    if "load_doses" in kwargs:
        factor = kwargs.get("doses_to_organisms") or kwargs.get("critical_dose_count")
        if factor is None:
            raise MissingKey("doses_to_organisms")
        kwargs["load"] = kwargs["load_doses"] * factor
    if kwargs["contaminant"] == "pathogen":
        kwargs.setdefault("critical_dose_kind", "fixed")
    if "cluster_ultimates" not in kwargs:
        size = kwargs.get("cluster_size", 15)
        others = sum(kwargs.get(k, d) for k, d in
                     (("cluster_isolates", 1), ("cluster_sources", 1), ("cluster_intermediates", 2)))
        kwargs["cluster_ultimates"] = size - others
    return ScenarioConfig(**kwargs)


def _parse_load(value: str) -> dict[str, float]:
    parts = value.split()
    if len(parts) != 2:
        raise ValueError("load needs a number and a unit, e.g. '300 kg' or '36M doses'")
    num = parse_number(parts[0])
    unit = parts[1].lower()
    if unit in _MASS_UNITS:
        return {"load": num * _MASS_UNITS[unit]}
    if unit in ("organisms", "count", "cells"):
        return {"load": num}
    if unit == "doses":
        return {"load_doses": num, "load": 1.0}
    raise ValueError(f"unknown load unit {parts[1]!r}")


def read_scenario(path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), base_dir=path.parent)


def serialize_scenario(cfg: ScenarioConfig) -> str:
    """Render every field, defaults included, so the file fully determines a run."""
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.name == "suspension_probability":
            for act in ACTIVITIES:
                lines.append(f"suspension_probability.{act} = {val[act]!r}")
            continue
        if f.name in ("load", "load_doses"):
            continue
        if val is None:
            continue
        if f.name in ("injection_start", "injection_end"):
            lines.append(f"{f.name} = {format_sim_time(val)}")
        elif f.name == "residential_patterns":
            lines.append(f"{f.name} = {','.join(val)}")
        elif isinstance(val, bool):
            lines.append(f"{f.name} = {'true' if val else 'false'}")
        elif isinstance(val, float):
            lines.append(f"{f.name} = {val!r}")
        else:
            lines.append(f"{f.name} = {val}")
        if f.name == "injection_end":
            if cfg.load_doses is not None:
                lines.append(f"load = {cfg.load_doses!r} doses")
                if cfg.doses_to_organisms is None:
                    lines.append(f"doses_to_organisms = {cfg.load / cfg.load_doses!r}")
            elif cfg.contaminant == "chemical":
                lines.append(f"load = {cfg.load!r} kg")
            else:
                lines.append(f"load = {cfg.load!r} organisms")
    return "\n".join(lines) + "\n"


def scenario_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    d = asdict(cfg)
    d["residential_patterns"] = list(cfg.residential_patterns)
    d["duration_s"] = cfg.duration
    return d

