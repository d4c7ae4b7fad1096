"""Reader and writer for the supported subset of the EPANET INP format.

Only the elements the coupled simulation needs are accepted: junctions,
reservoirs, tanks, Hazen-Williams pipes, single-point-curve pumps, demand
patterns, times, options and coordinates.  Sections outside that set are
skipped and reported through ``Network.warnings``; unknown tokens inside a
supported section are errors.

Units are fixed: metres, millimetres for pipe diameters, litres per second
for flows.  The ``[OPTIONS]`` block must say ``UNITS LPS``.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import (
    DanglingReference,
    DuplicateId,
    InvariantViolation,
    MalformedLine,
    MissingSection,
)

logger = logging.getLogger(__name__)

SUPPORTED_SECTIONS = (
    "TITLE", "JUNCTIONS", "RESERVOIRS", "TANKS", "PIPES", "PUMPS", "CURVES",
    "PATTERNS", "TIMES", "OPTIONS", "COORDINATES",
)
REQUIRED_SECTIONS = ("OPTIONS", "JUNCTIONS", "PIPES")

# OPTIONS / TIMES keys that real files carry but which have no effect here.
_IGNORED_OPTIONS = {
    "SPECIFIC GRAVITY", "VISCOSITY", "TRIALS", "ACCURACY", "UNBALANCED",
    "QUALITY", "DIFFUSIVITY", "TOLERANCE", "EMITTER EXPONENT", "CHECKFREQ",
    "MAXCHECK", "DAMPLIMIT", "HYDRAULICS", "MAP", "DEMAND MODEL",
    "MINIMUM PRESSURE", "REQUIRED PRESSURE", "PRESSURE EXPONENT",
}
_IGNORED_TIMES = {
    "REPORT TIMESTEP", "REPORT START", "START CLOCKTIME", "STATISTIC",
    "RULE TIMESTEP", "PATTERN START",
}


@dataclass(frozen=True)
class Junction:
    id: str
    elevation: float
    base_demand: float = 0.0          # L/s
    pattern: Optional[str] = None
    coordinates: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class Reservoir:
    id: str
    head: float
    coordinates: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class Tank:
    id: str
    elevation: float
    init_level: float
    min_level: float
    max_level: float
    diameter: float                   # m
    coordinates: Optional[tuple[float, float]] = None

    @property
    def area(self) -> float:
        return math.pi * self.diameter ** 2 / 4.0


@dataclass(frozen=True)
class Pipe:
    id: str
    start: str
    end: str
    length: float                     # m
    diameter: float                   # mm
    roughness: float                  # Hazen-Williams C
    status: str = "OPEN"

    @property
    def volume(self) -> float:
        """Internal volume in litres."""
        d = self.diameter / 1000.0
        return math.pi * d * d / 4.0 * self.length * 1000.0


@dataclass(frozen=True)
class Pump:
    id: str
    start: str
    end: str
    curve: str
    design_head: float                # m
    design_flow: float                # L/s

    @property
    def shutoff_head(self) -> float:
        return 4.0 / 3.0 * self.design_head

    @property
    def max_flow(self) -> float:
        return 2.0 * self.design_flow


@dataclass(frozen=True)
class Pattern:
    id: str
    multipliers: tuple[float, ...]


@dataclass(frozen=True)
class Times:
    duration: float = 0.0
    hydraulic_step: float = 3600.0
    quality_step: Optional[float] = None
    pattern_step: float = 3600.0

    @property
    def effective_quality_step(self) -> float:
        if self.quality_step is not None:
            return self.quality_step
        return self.hydraulic_step / 12.0


@dataclass(frozen=True)
class Options:
    units: str = "LPS"
    headloss: str = "H-W"
    default_pattern: Optional[str] = None
    demand_multiplier: float = 1.0


@dataclass
class Network:
    title: str = ""
    junctions: dict[str, Junction] = field(default_factory=dict)
    reservoirs: dict[str, Reservoir] = field(default_factory=dict)
    tanks: dict[str, Tank] = field(default_factory=dict)
    pipes: dict[str, Pipe] = field(default_factory=dict)
    pumps: dict[str, Pump] = field(default_factory=dict)
    patterns: dict[str, Pattern] = field(default_factory=dict)
    times: Times = field(default_factory=Times)
    options: Options = field(default_factory=Options)
    warnings: list[str] = field(default_factory=list, compare=False)

    # -- node/link views ---------------------------------------------------
    @property
    def node_ids(self) -> list[str]:
        return [*self.junctions, *self.reservoirs, *self.tanks]

    @property
    def link_ids(self) -> list[str]:
        return [*self.pipes, *self.pumps]

    @property
    def n_nodes(self) -> int:
        return len(self.junctions) + len(self.reservoirs) + len(self.tanks)

    @property
    def n_links(self) -> int:
        return len(self.pipes) + len(self.pumps)

    def node(self, node_id: str):
        for table in (self.junctions, self.reservoirs, self.tanks):
            if node_id in table:
                return table[node_id]
        raise KeyError(node_id)

    def link(self, link_id: str):
        if link_id in self.pipes:
            return self.pipes[link_id]
        return self.pumps[link_id]

    def coordinates(self, node_id: str) -> Optional[tuple[float, float]]:
        return self.node(node_id).coordinates

    def junction_pattern(self, junction_id: str) -> Optional[str]:
        """Pattern id that drives a junction, after applying the defaults."""
        pat = self.junctions[junction_id].pattern
        if pat is not None:
            return pat
        if self.options.default_pattern is not None:
            return self.options.default_pattern
        if "1" in self.patterns:
            return "1"
        return None

    def pattern_multiplier(self, pattern_id: Optional[str], t: float) -> float:
        if pattern_id is None:
            return 1.0
        mult = self.patterns[pattern_id].multipliers
        k = int(t // self.times.pattern_step) % len(mult)
        return mult[k]


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def _strip_comment(line: str) -> str:
    return line.split(";", 1)[0].strip()


def _float(tok: str, line_no: int, what: str) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise MalformedLine(line_no, f"expected number for {what}, got {tok!r}") from None
    if not math.isfinite(val):
        raise MalformedLine(line_no, f"non-finite {what}: {tok!r}")
    return val


_TIME_UNITS = {
    "SEC": 1.0, "SECONDS": 1.0, "SECOND": 1.0,
    "MIN": 60.0, "MINUTE": 60.0, "MINUTES": 60.0,
    "HOUR": 3600.0, "HOURS": 3600.0,
    "DAY": 86400.0, "DAYS": 86400.0,
}


def parse_duration(tokens: list[str], line_no: int = 0) -> float:
    """Convert an INP time value (``1:30``, ``24``, ``5 MIN``) to seconds."""
    if not tokens or len(tokens) > 2:
        raise MalformedLine(line_no, f"bad time value {' '.join(tokens)!r}")
    value = tokens[0]
    if ":" in value:
        if len(tokens) != 1:
            raise MalformedLine(line_no, f"bad time value {' '.join(tokens)!r}")
        parts = value.split(":")
        if len(parts) > 3:
            raise MalformedLine(line_no, f"bad clock time {value!r}")
        secs = 0.0
        for part, scale in zip(parts, (3600.0, 60.0, 1.0)):
            secs += _float(part, line_no, "time") * scale
        return secs
    num = _float(value, line_no, "time")
    if len(tokens) == 1:
        return num * 3600.0
    unit = tokens[1].upper()
    if unit not in _TIME_UNITS:
        raise MalformedLine(line_no, f"unknown time unit {tokens[1]!r}")
    return num * _TIME_UNITS[unit]


def _format_clock(seconds: float) -> str:
    s = int(round(seconds))
    if abs(s - seconds) > 1e-9:
        return f"{seconds!r} SEC"
    return f"{s // 3600}:{(s % 3600) // 60:02d}:{s % 60:02d}"


def _match_key(tokens: list[str], keys: Iterable[str]) -> Optional[tuple[str, list[str]]]:
    upper = [t.upper() for t in tokens]
    best = None
    for key in keys:
        words = key.split()
        if upper[: len(words)] == words and (best is None or len(words) > len(best[0].split())):
            best = (key, tokens[len(words):])
    return best


_OPTION_KEYS = {"UNITS", "HEADLOSS", "PATTERN", "DEMAND MULTIPLIER"} | _IGNORED_OPTIONS
_TIME_KEYS = {"DURATION", "HYDRAULIC TIMESTEP", "QUALITY TIMESTEP", "PATTERN TIMESTEP"} | _IGNORED_TIMES


# ---------------------------------------------------------------------------
# parse_network
# ---------------------------------------------------------------------------

def parse_network(text: str) -> Network:
    """Parse an INP-subset document into a validated :class:`Network`.

    Raises one of the :mod:`hydrosoc.errors` input errors on any problem;
    a partially built network never escapes.
    """
    sections: dict[str, list[tuple[int, list[str]]]] = {}
    title_lines: list[str] = []
    warnings: list[str] = []
    current: Optional[str] = None
    skipping = False

    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("["):
            m = re.match(r"^\[([A-Za-z_ ]+)\]\s*(;.*)?$", stripped)
            if not m:
                raise MalformedLine(line_no, f"bad section header {stripped!r}")
            name = m.group(1).strip().upper()
            if name == "END":
                break
            if name in SUPPORTED_SECTIONS:
                current, skipping = name, False
                sections.setdefault(name, [])
            else:
                current, skipping = None, True
                msg = f"line {line_no}: unsupported section [{name}] skipped"
                warnings.append(msg)
                logger.warning(msg)
            continue
        if skipping:
            continue
        if current == "TITLE":
            if stripped and not stripped.startswith(";"):
                title_lines.append(stripped)
            continue
        body = _strip_comment(raw)
        if not body:
            continue
        if current is None:
            raise MalformedLine(line_no, "data outside of any section")
        sections[current].append((line_no, body.split()))

    for name in REQUIRED_SECTIONS:
        if name not in sections:
            raise MissingSection(name)

    options = _parse_options(sections.get("OPTIONS", []))
    times = _parse_times(sections.get("TIMES", []))

    seen_nodes: set[str] = set()

    def claim_node(ident: str) -> None:
        if ident in seen_nodes:
            raise DuplicateId(ident)
        seen_nodes.add(ident)

    junctions: dict[str, Junction] = {}
    for line_no, toks in sections.get("JUNCTIONS", []):
        if not 2 <= len(toks) <= 4:
            raise MalformedLine(line_no, "JUNCTIONS expects: id elevation [demand] [pattern]")
        claim_node(toks[0])
        demand = _float(toks[2], line_no, "demand") if len(toks) > 2 else 0.0
        pattern = toks[3] if len(toks) > 3 else None
        junctions[toks[0]] = Junction(toks[0], _float(toks[1], line_no, "elevation"), demand, pattern)

    reservoirs: dict[str, Reservoir] = {}
    for line_no, toks in sections.get("RESERVOIRS", []):
        if len(toks) != 2:
            raise MalformedLine(line_no, "RESERVOIRS expects: id head (head patterns unsupported)")
        claim_node(toks[0])
        reservoirs[toks[0]] = Reservoir(toks[0], _float(toks[1], line_no, "head"))

    tanks: dict[str, Tank] = {}
    for line_no, toks in sections.get("TANKS", []):
        if not 6 <= len(toks) <= 7:
            raise MalformedLine(line_no, "TANKS expects: id elev init min max diameter [minvol=0]")
        if len(toks) == 7 and _float(toks[6], line_no, "minimum volume") != 0.0:
            raise MalformedLine(line_no, "nonzero tank minimum volume is unsupported")
        claim_node(toks[0])
        vals = [_float(t, line_no, "tank field") for t in toks[1:6]]
        tanks[toks[0]] = Tank(toks[0], *vals)

    seen_links: set[str] = set()

    def claim_link(ident: str) -> None:
        if ident in seen_links:
            raise DuplicateId(ident)
        seen_links.add(ident)

    pipes: dict[str, Pipe] = {}
    for line_no, toks in sections.get("PIPES", []):
        if not 6 <= len(toks) <= 8:
            raise MalformedLine(line_no, "PIPES expects: id n1 n2 length diameter roughness [minorloss=0] [status]")
        claim_link(toks[0])
        status = "OPEN"
        if len(toks) >= 7 and _float(toks[6], line_no, "minor loss") != 0.0:
            raise MalformedLine(line_no, "minor losses are unsupported")
        if len(toks) == 8:
            status = toks[7].upper()
            if status not in ("OPEN", "CLOSED"):
                raise MalformedLine(line_no, f"unsupported pipe status {toks[7]!r}")
        pipes[toks[0]] = Pipe(
            toks[0], toks[1], toks[2],
            _float(toks[3], line_no, "length"),
            _float(toks[4], line_no, "diameter"),
            _float(toks[5], line_no, "roughness"),
            status,
        )

    curves: dict[str, list[tuple[float, float]]] = {}
    for line_no, toks in sections.get("CURVES", []):
        if len(toks) != 3:
            raise MalformedLine(line_no, "CURVES expects: id x y")
        curves.setdefault(toks[0], []).append(
            (_float(toks[1], line_no, "curve flow"), _float(toks[2], line_no, "curve head"))
        )

    pumps: dict[str, Pump] = {}
    for line_no, toks in sections.get("PUMPS", []):
        if len(toks) != 5 or toks[3].upper() != "HEAD":
            raise MalformedLine(line_no, "PUMPS expects: id n1 n2 HEAD curve-id")
        claim_link(toks[0])
        curve_id = toks[4]
        if curve_id not in curves:
            raise DanglingReference(curve_id, f"pump {toks[0]} curve")
        pts = curves[curve_id]
        if len(pts) != 1:
            raise InvariantViolation(f"pump curve {curve_id!r} must be a single design point")
        q, h = pts[0]
        pumps[toks[0]] = Pump(toks[0], toks[1], toks[2], curve_id, h, q)

    patterns: dict[str, list[float]] = {}
    for line_no, toks in sections.get("PATTERNS", []):
        if len(toks) < 2:
            raise MalformedLine(line_no, "PATTERNS expects: id multiplier...")
        patterns.setdefault(toks[0], []).extend(_float(t, line_no, "multiplier") for t in toks[1:])

    coords: dict[str, tuple[float, float]] = {}
    for line_no, toks in sections.get("COORDINATES", []):
        if len(toks) != 3:
            raise MalformedLine(line_no, "COORDINATES expects: id x y")
        if toks[0] not in seen_nodes:
            raise DanglingReference(toks[0], "coordinates")
        if toks[0] in coords:
            raise DuplicateId(toks[0])
        coords[toks[0]] = (_float(toks[1], line_no, "x"), _float(toks[2], line_no, "y"))

    if coords:
        junctions = {k: _with_coords(v, coords) for k, v in junctions.items()}
        reservoirs = {k: _with_coords(v, coords) for k, v in reservoirs.items()}
        tanks = {k: _with_coords(v, coords) for k, v in tanks.items()}

    net = Network(
        title="\n".join(title_lines),
        junctions=junctions,
        reservoirs=reservoirs,
        tanks=tanks,
        pipes=pipes,
        pumps=pumps,
        patterns={k: Pattern(k, tuple(v)) for k, v in patterns.items()},
        times=times,
        options=options,
        warnings=warnings,
    )
    validate_network(net)
    return net


def _with_coords(node, coords):
    from dataclasses import replace

    if node.id in coords:
        return replace(node, coordinates=coords[node.id])
    return node


def _parse_options(rows) -> Options:
    units = None
    headloss = "H-W"
    default_pattern = None
    multiplier = 1.0
    for line_no, toks in rows:
        hit = _match_key(toks, _OPTION_KEYS)
        if hit is None:
            raise MalformedLine(line_no, f"unknown option {' '.join(toks)!r}")
        key, rest = hit
        if key in _IGNORED_OPTIONS:
            continue
        if len(rest) != 1:
            raise MalformedLine(line_no, f"option {key} expects one value")
        if key == "UNITS":
            units = rest[0].upper()
        elif key == "HEADLOSS":
            headloss = rest[0].upper()
        elif key == "PATTERN":
            default_pattern = rest[0]
        elif key == "DEMAND MULTIPLIER":
            multiplier = _float(rest[0], line_no, "demand multiplier")
    if units is None:
        raise InvariantViolation("OPTIONS must declare UNITS LPS")
    if units != "LPS":
        raise InvariantViolation(f"unsupported UNITS {units!r}; only LPS (metric) is accepted")
    if headloss != "H-W":
        raise InvariantViolation(f"unsupported HEADLOSS {headloss!r}; only H-W is accepted")
    if multiplier <= 0:
        raise InvariantViolation("DEMAND MULTIPLIER must be positive")
    return Options(units=units, headloss=headloss, default_pattern=default_pattern,
                   demand_multiplier=multiplier)


def _parse_times(rows) -> Times:
    values: dict[str, float] = {}
    for line_no, toks in rows:
        hit = _match_key(toks, _TIME_KEYS)
        if hit is None:
            raise MalformedLine(line_no, f"unknown TIMES entry {' '.join(toks)!r}")
        key, rest = hit
        if key in _IGNORED_TIMES:
            continue
        values[key] = parse_duration(rest, line_no)
    times = Times(
        duration=values.get("DURATION", 0.0),
        hydraulic_step=values.get("HYDRAULIC TIMESTEP", 3600.0),
        quality_step=values.get("QUALITY TIMESTEP"),
        pattern_step=values.get("PATTERN TIMESTEP", 3600.0),
    )
    if times.hydraulic_step <= 0 or times.pattern_step <= 0:
        raise InvariantViolation("time steps must be positive")
    if times.quality_step is not None and not 0 < times.quality_step <= times.hydraulic_step:
        raise InvariantViolation("quality step must be positive and not exceed the hydraulic step")
    if times.duration < 0:
        raise InvariantViolation("duration must be non-negative")
    return times


def validate_network(net: Network) -> None:
    """Check every structural invariant; raise on the first violation."""
    nodes = set(net.node_ids)
    for link in [*net.pipes.values(), *net.pumps.values()]:
        for end in (link.start, link.end):
            if end not in nodes:
                raise DanglingReference(end, f"link {link.id}")
        if link.start == link.end:
            raise InvariantViolation(f"link {link.id} connects node {link.start} to itself")
    for p in net.pipes.values():
        if p.length <= 0 or p.diameter <= 0 or p.roughness <= 0:
            raise InvariantViolation(f"pipe {p.id}: length, diameter and roughness must be > 0")
    for p in net.pumps.values():
        if p.design_head <= 0 or p.design_flow <= 0:
            raise InvariantViolation(f"pump {p.id}: design head and flow must be > 0")
    for t in net.tanks.values():
        if t.diameter <= 0:
            raise InvariantViolation(f"tank {t.id}: diameter must be > 0")
        if not t.min_level <= t.init_level <= t.max_level:
            raise InvariantViolation(f"tank {t.id}: need min <= init <= max level")
        if t.min_level < 0:
            raise InvariantViolation(f"tank {t.id}: negative minimum level")
    for pat in net.patterns.values():
        if not pat.multipliers:
            raise InvariantViolation(f"pattern {pat.id} is empty")
        if any(m < 0 for m in pat.multipliers):
            raise InvariantViolation(f"pattern {pat.id} has a negative multiplier")
    if net.options.default_pattern is not None and net.options.default_pattern not in net.patterns:
        raise DanglingReference(net.options.default_pattern, "OPTIONS PATTERN")
    for j in net.junctions.values():
        if j.pattern is not None and j.pattern not in net.patterns:
            raise DanglingReference(j.pattern, f"junction {j.id} pattern")
        if j.base_demand < 0:
            raise InvariantViolation(f"junction {j.id}: negative base demand")
    if not net.reservoirs and not net.tanks:
        raise InvariantViolation("network needs at least one reservoir or tank")


# ---------------------------------------------------------------------------
# serialize_network
# ---------------------------------------------------------------------------

def _num(x: float) -> str:
    return repr(float(x))


def serialize_network(net: Network) -> str:
    """Write a network back out in the same INP subset ``parse_network`` reads."""
    out: list[str] = []
    if net.title:
        out.append("[TITLE]")
        out.extend(net.title.splitlines())
        out.append("")
    out.append("[JUNCTIONS]")
    out.append(";ID  Elev  Demand  Pattern")
    for j in net.junctions.values():
        row = [j.id, _num(j.elevation), _num(j.base_demand)]
        if j.pattern is not None:
            row.append(j.pattern)
        out.append(" ".join(row))
    out.append("")
    out.append("[RESERVOIRS]")
    for r in net.reservoirs.values():
        out.append(f"{r.id} {_num(r.head)}")
    out.append("")
    out.append("[TANKS]")
    for t in net.tanks.values():
        out.append(" ".join([t.id, *(_num(v) for v in (t.elevation, t.init_level, t.min_level,
                                                        t.max_level, t.diameter))]))
    out.append("")
    out.append("[PIPES]")
    for p in net.pipes.values():
        out.append(" ".join([p.id, p.start, p.end, _num(p.length), _num(p.diameter),
                             _num(p.roughness), "0", p.status]))
    out.append("")
    out.append("[PUMPS]")
    for p in net.pumps.values():
        out.append(f"{p.id} {p.start} {p.end} HEAD {p.curve}")
    out.append("")
    out.append("[CURVES]")
    for p in net.pumps.values():
        out.append(f"{p.curve} {_num(p.design_flow)} {_num(p.design_head)}")
    out.append("")
    out.append("[PATTERNS]")
    for pat in net.patterns.values():
        out.append(" ".join([pat.id, *(_num(m) for m in pat.multipliers)]))
    out.append("")
    out.append("[TIMES]")
    out.append(f"DURATION {_format_clock(net.times.duration)}")
    out.append(f"HYDRAULIC TIMESTEP {_format_clock(net.times.hydraulic_step)}")
    if net.times.quality_step is not None:
        out.append(f"QUALITY TIMESTEP {_format_clock(net.times.quality_step)}")
    out.append(f"PATTERN TIMESTEP {_format_clock(net.times.pattern_step)}")
    out.append("")
    out.append("[OPTIONS]")
    out.append(f"UNITS {net.options.units}")
    out.append(f"HEADLOSS {net.options.headloss}")
    if net.options.default_pattern is not None:
        out.append(f"PATTERN {net.options.default_pattern}")
    if net.options.demand_multiplier != 1.0:
        out.append(f"DEMAND MULTIPLIER {_num(net.options.demand_multiplier)}")
    out.append("")
    out.append("[COORDINATES]")
    for node_id in net.node_ids:
        c = net.node(node_id).coordinates
        if c is not None:
            out.append(f"{node_id} {_num(c[0])} {_num(c[1])}")
    out.append("")
    out.append("[END]")
    return "\n".join(out) + "\n"


def read_network(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())
