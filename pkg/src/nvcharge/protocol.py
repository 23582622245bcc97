"""A small line-oriented language for laser/microwave measurement sequences.

Grammar (one statement per line, ``#`` starts a comment)::

    protocol  = { line } ;
    line      = [ statement ] [ "#" comment ] newline ;
    statement = "mw" ( "on" | "off" )
              | "pulse" duration { laser_arg } [ "record" ]
              | "sweep" laser freq freq sweep_opt { laser_arg } [ "record" ]
              | "repeat" integer "{"
              | "}" ;
    sweep_opt = "n=" integer "dwell=" duration "power=" power ;   (any order)
    laser_arg = laser "=" power [ "@" freq ] ;
    laser     = "red" | "yellow" | "green" ;

Quantities carry units: durations ``s ms us ns``, powers ``W mW uW nW pW``,
frequencies ``Hz kHz MHz GHz THz``.  Frequencies are offsets from the ZPL
of the laser's target charge state (red: NV-, yellow: NV0); green is
off-resonant and takes no offset.  ``mw`` sets the microwave state for the
statements that follow it in the text.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Union

from ._units import UnitError, format_quantity, parse_quantity
from .optics import LaserField, LaserTarget

__all__ = [
    "ProtocolSyntaxError",
    "LaserSetting",
    "Sweep",
    "Step",
    "Repeat",
    "Protocol",
    "Window",
    "parse_protocol",
    "print_protocol",
    "schedule",
    "iter_schedule",
    "total_duration",
    "count_windows",
    "builtin_protocols",
]

LASERS = ("red", "yellow", "green")


class ProtocolSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


@dataclass(frozen=True)
class LaserSetting:
    laser: str
    power: float
    offset: float = 0.0


@dataclass(frozen=True)
class Sweep:
    laser: str
    start: float
    stop: float
    n_points: int
    dwell: float
    power: float

    @property
    def duration(self) -> float:
        return float(self.n_points * Fraction(self.dwell))

    def offsets(self) -> list[float]:
        n = self.n_points
        return [self.start + (self.stop - self.start) * i / (n - 1) for i in range(n)]

    @property
    def spacing(self) -> float:
        return abs(self.stop - self.start) / (self.n_points - 1)


@dataclass(frozen=True)
class Step:
    duration: float | None = None
    sweep: Sweep | None = None
    lasers: tuple[LaserSetting, ...] = ()
    mw_on: bool = False
    record: bool = False

    def __post_init__(self):
        if (self.duration is None) == (self.sweep is None):
            raise ValueError("a step is either a timed pulse or a sweep")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("step duration must be > 0")
        if self.sweep is not None and (self.sweep.n_points < 2 or not self.sweep.dwell > 0):
            raise ValueError("sweeps need n_points >= 2 and dwell > 0")

    @property
    def total(self) -> Fraction:
        if self.sweep is not None:
            return self.sweep.n_points * Fraction(self.sweep.dwell)
        return Fraction(self.duration)


@dataclass(frozen=True)
class Repeat:
    count: int
    body: tuple["Node", ...]

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("repeat count must be >= 1")


Node = Union[Step, Repeat]


@dataclass(frozen=True)
class Protocol:
    """Parsed sequence: ``steps`` executed ``repeat`` times.

    A protocol whose whole body is a single repeat block is normalised so
    the block's count becomes ``repeat``.
    """

    steps: tuple[Node, ...] = ()
    repeat: int = 1

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")
        while self.repeat == 1 and len(self.steps) == 1 and isinstance(self.steps[0], Repeat):
            block = self.steps[0]
            object.__setattr__(self, "steps", block.body)
            object.__setattr__(self, "repeat", block.count)

    def __len__(self) -> int:
        return len(self.steps)


# ---------------------------------------------------------------- parsing

def _tokens(line: str):
    col = 0
    n = len(line)
    while col < n:
        while col < n and line[col] in " \t\r\f\v":
            col += 1
        if col >= n:
            break
        start = col
        while col < n and line[col] not in " \t\r\f\v":
            col += 1
        yield line[start:col], start + 1


def _quantity(tok: str, kind: str, lineno: int, col: int) -> float:
    try:
        return parse_quantity(tok, kind)
    except UnitError as exc:
        raise ProtocolSyntaxError(str(exc), lineno, col) from None


def _positive_int(tok: str, lineno: int, col: int, what: str) -> int:
    if not tok.isdigit() or not tok.isascii():
        raise ProtocolSyntaxError(f"{what} must be a positive integer, got {tok!r}", lineno, col)
    value = int(tok)
    if value < 1:
        raise ProtocolSyntaxError(f"{what} must be >= 1", lineno, col)
    return value


def _laser_arg(tok: str, lineno: int, col: int) -> LaserSetting:
    name, _, rest = tok.partition("=")
    if name not in LASERS:
        raise ProtocolSyntaxError(f"unknown laser {name!r}", lineno, col)
    if not rest:
        raise ProtocolSyntaxError(f"laser {name} needs a power", lineno, col)
    power_txt, at, freq_txt = rest.partition("@")
    power = _quantity(power_txt, "power", lineno, col + len(name) + 1)
    if power < 0:
        raise ProtocolSyntaxError("laser power must be >= 0", lineno, col)
    offset = 0.0
    if at:
        if name == "green":
            raise ProtocolSyntaxError("green is off-resonant and takes no frequency offset", lineno, col)
        offset = _quantity(freq_txt, "freq", lineno, col + len(name) + 2 + len(power_txt))
    return LaserSetting(name, power, offset)


def _finish_lasers(settings, lineno, exclude=None):
    seen = set()
    if exclude:
        seen.add(exclude)
    for s, col in settings:
        if s.laser in seen:
            raise ProtocolSyntaxError(f"laser {s.laser} given twice", lineno, col)
        seen.add(s.laser)
    return tuple(sorted((s for s, _ in settings), key=lambda s: s.laser))


def parse_protocol(text) -> Protocol:
    """Parse protocol source text (``str`` or UTF-8 ``bytes``)."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            lineno = bytes(text)[: exc.start].count(b"\n") + 1
            raise ProtocolSyntaxError("input is not valid UTF-8", lineno, 1) from None
    stack: list[tuple[list, int, int]] = []  # (items, count, opening line)
    items: list = []
    mw = False
    lineno = 0
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0]
        toks = list(_tokens(line))
        if not toks:
            continue
        head, hcol = toks[0]
        args = toks[1:]
        if head == "mw":
            if len(args) != 1 or args[0][0] not in ("on", "off"):
                raise ProtocolSyntaxError("expected 'mw on' or 'mw off'", lineno, hcol)
            mw = args[0][0] == "on"
        elif head == "repeat":
            if len(args) != 2 or args[1][0] != "{":
                raise ProtocolSyntaxError("expected 'repeat N {'", lineno, hcol)
            count = _positive_int(args[0][0], lineno, args[0][1], "repeat count")
            stack.append((items, count, lineno))
            items = []
        elif head == "}":
            if args:
                raise ProtocolSyntaxError("unexpected text after '}'", lineno, args[0][1])
            if not stack:
                raise ProtocolSyntaxError("'}' without an open repeat block", lineno, hcol)
            outer, count, _ = stack.pop()
            outer.append(Repeat(count, tuple(items)))
            items = outer
        elif head == "pulse":
            if not args:
                raise ProtocolSyntaxError("pulse needs a duration", lineno, hcol)
            duration = _quantity(args[0][0], "time", lineno, args[0][1])
            if not duration > 0:
                raise ProtocolSyntaxError("duration must be > 0", lineno, args[0][1])
            record = False
            settings = []
            for tok, col in args[1:]:
                if tok == "record":
                    if record:
                        raise ProtocolSyntaxError("'record' given twice", lineno, col)
                    record = True
                elif "=" in tok:
                    settings.append((_laser_arg(tok, lineno, col), col))
                else:
                    raise ProtocolSyntaxError(f"unexpected token {tok!r}", lineno, col)
            items.append(Step(duration=duration, lasers=_finish_lasers(settings, lineno),
                              mw_on=mw, record=record))
        elif head == "sweep":
            if len(args) < 3:
                raise ProtocolSyntaxError("sweep needs a laser and start/stop frequencies", lineno, hcol)
            laser, lcol = args[0]
            if laser not in LASERS:
                raise ProtocolSyntaxError(f"unknown laser {laser!r}", lineno, lcol)
            if laser == "green":
                raise ProtocolSyntaxError("green is off-resonant and cannot be swept", lineno, lcol)
            start = _quantity(args[1][0], "freq", lineno, args[1][1])
            stop = _quantity(args[2][0], "freq", lineno, args[2][1])
            opts: dict[str, object] = {}
            record = False
            settings = []
            for tok, col in args[3:]:
                key, eq, val = tok.partition("=")
                if tok == "record":
                    if record:
                        raise ProtocolSyntaxError("'record' given twice", lineno, col)
                    record = True
                elif eq and key in ("n", "dwell", "power"):
                    if key in opts:
                        raise ProtocolSyntaxError(f"sweep option {key} given twice", lineno, col)
                    if key == "n":
                        opts[key] = _positive_int(val, lineno, col + 2, "n")
                    elif key == "dwell":
                        opts[key] = _quantity(val, "time", lineno, col + 6)
                        if not opts[key] > 0:
                            raise ProtocolSyntaxError("dwell must be > 0", lineno, col)
                    else:
                        opts[key] = _quantity(val, "power", lineno, col + 6)
                        if opts[key] < 0:
                            raise ProtocolSyntaxError("power must be >= 0", lineno, col)
                elif eq:
                    settings.append((_laser_arg(tok, lineno, col), col))
                else:
                    raise ProtocolSyntaxError(f"unexpected token {tok!r}", lineno, col)
            for key in ("n", "dwell", "power"):
                if key not in opts:
                    raise ProtocolSyntaxError(f"sweep is missing {key}=", lineno, hcol)
            if opts["n"] < 2:
                raise ProtocolSyntaxError("sweeps need n >= 2", lineno, hcol)
            sweep = Sweep(laser, start, stop, opts["n"], opts["dwell"], opts["power"])
            items.append(Step(sweep=sweep, lasers=_finish_lasers(settings, lineno, exclude=laser),
                              mw_on=mw, record=record))
        else:
            raise ProtocolSyntaxError(f"unknown directive {head!r}", lineno, hcol)
    if stack:
        _, count, opened = stack[-1]
        raise ProtocolSyntaxError(
            f"unexpected end of input: 'repeat {count} {{' opened on line {opened} is never closed",
            max(lineno, 1), 1,
        )
    return Protocol(tuple(items))


# --------------------------------------------------------------- printing

def _laser_text(s: LaserSetting) -> str:
    txt = f"{s.laser}={format_quantity(s.power, 'power')}"
    if s.laser != "green":
        txt += f"@{format_quantity(s.offset, 'freq')}"
    return txt


def print_protocol(p: Protocol) -> str:
    """Canonical source text; ``parse_protocol(print_protocol(p)) == p``."""
    out: list[str] = []
    mw = [False]

    def emit(nodes, depth):
        pad = "  " * depth
        for node in nodes:
            if isinstance(node, Repeat):
                out.append(f"{pad}repeat {node.count} {{")
                emit(node.body, depth + 1)
                out.append(f"{pad}}}")
                continue
            if node.mw_on != mw[0]:
                out.append(f"{pad}mw {'on' if node.mw_on else 'off'}")
                mw[0] = node.mw_on
            parts = []
            if node.sweep is not None:
                sw = node.sweep
                parts += ["sweep", sw.laser, format_quantity(sw.start, "freq"), format_quantity(sw.stop, "freq"),
                          f"n={sw.n_points}", f"dwell={format_quantity(sw.dwell, 'time')}",
                          f"power={format_quantity(sw.power, 'power')}"]
            else:
                parts += ["pulse", format_quantity(node.duration, "time")]
            parts += [_laser_text(s) for s in node.lasers]
            if node.record:
                parts.append("record")
            out.append(pad + " ".join(parts))

    if p.repeat > 1:
        emit([Repeat(p.repeat, p.steps)], 0)
    else:
        emit(p.steps, 0)
    return "\n".join(out) + ("\n" if out else "")


# ------------------------------------------------------------- scheduling

@dataclass(frozen=True)
class Window:
    """A time interval with constant laser and microwave settings."""

    start: float
    stop: float
    lasers: tuple[LaserField, ...]
    mw_on: bool
    record: bool
    step_id: int
    point: int | None = None
    step_start: bool = True
    sweep_start: bool = False
    iteration: int = 0
    offset: float | None = None

    @property
    def duration(self) -> float:
        return self.stop - self.start

    @property
    def green_on(self) -> bool:
        return any(l.target is LaserTarget.GREEN_OFF_RESONANT and l.power > 0 for l in self.lasers)


def _fields(settings, extra=None) -> tuple[LaserField, ...]:
    lasers = [LaserField(LaserTarget(s.laser), s.power, s.offset) for s in settings]
    if extra is not None:
        lasers.append(extra)
    return tuple(sorted(lasers, key=lambda l: l.id))


def _number_steps(nodes, counter=None):
    counter = counter if counter is not None else [0]
    ids = {}
    for node in nodes:
        if isinstance(node, Repeat):
            ids.update(_number_steps(node.body, counter))
        else:
            ids[id(node)] = counter[0]
            counter[0] += 1
    return ids


def iter_schedule(p: Protocol) -> Iterator[Window]:
    """Yield gap-free windows covering the protocol in time order."""
    step_ids = _number_steps(p.steps)
    t = Fraction(0)
    iteration = [0]

    def walk(nodes):
        nonlocal t
        for node in nodes:
            if isinstance(node, Repeat):
                for _ in range(node.count):
                    yield from walk(node.body)
                continue
            sid = step_ids[id(node)]
            if node.sweep is None:
                stop = t + Fraction(node.duration)
                yield Window(float(t), float(stop), _fields(node.lasers), node.mw_on, node.record, sid,
                             iteration=iteration[0])
                t = stop
                continue
            sw = node.sweep
            dwell = Fraction(sw.dwell)
            span = sw.spacing
            for i, off in enumerate(sw.offsets()):
                swept = LaserField(LaserTarget(sw.laser), sw.power, off, span=span)
                stop = t + dwell
                yield Window(float(t), float(stop), _fields(node.lasers, swept), node.mw_on, node.record, sid,
                             point=i, step_start=(i == 0), sweep_start=(i == 0), iteration=iteration[0],
                             offset=off)
                t = stop

    for rep in range(p.repeat):
        iteration[0] = rep
        yield from walk(p.steps)


def schedule(p: Protocol) -> list[Window]:
    return list(iter_schedule(p))


def total_duration(p: Protocol) -> float:
    def dur(nodes) -> Fraction:
        total = Fraction(0)
        for node in nodes:
            total += node.count * dur(node.body) if isinstance(node, Repeat) else node.total
        return total

    return float(p.repeat * dur(p.steps))


def count_windows(p: Protocol) -> int:
    def cnt(nodes) -> int:
        return sum(node.count * cnt(node.body) if isinstance(node, Repeat)
                   else (node.sweep.n_points if node.sweep else 1) for node in nodes)

    return p.repeat * cnt(p.steps)


# --------------------------------------------------------------- builtins

def ionize_then_nv0_ple(*, repetitions=1000, ionizing_power=100e-6, red_offset=0.0, pulse=1e-3,
                        yellow_power=2e-9, span=1.5e9, n_points=301, dwell=1e-3) -> Protocol:
    text = f"""\
# ionizing red pulse on an NV- line, then a yellow PLE sweep over the NV0 ZPL
mw on
repeat {repetitions} {{
  pulse {format_quantity(pulse, 'time')} red={format_quantity(ionizing_power, 'power')}@{format_quantity(red_offset, 'freq')}
  sweep yellow {format_quantity(-span, 'freq')} {format_quantity(span, 'freq')} n={n_points} dwell={format_quantity(dwell, 'time')} power={format_quantity(yellow_power, 'power')} record
}}
"""
    return parse_protocol(text)


def nvm_sweep_then_nv0_sweep(*, repetitions=1000, red_power=10e-6, red_span=5e9, red_points=1001,
                             red_dwell=1e-3, yellow_power=100e-9, yellow_start=-1.5e9, yellow_stop=1.5e9,
                             yellow_points=301, yellow_dwell=1e-3) -> Protocol:
    text = f"""\
# red sweep over all NV- lines (ionizes), then a yellow sweep over the NV0 ZPL (recovers)
mw on
repeat {repetitions} {{
  sweep red {format_quantity(-red_span, 'freq')} {format_quantity(red_span, 'freq')} n={red_points} dwell={format_quantity(red_dwell, 'time')} power={format_quantity(red_power, 'power')} record
  sweep yellow {format_quantity(yellow_start, 'freq')} {format_quantity(yellow_stop, 'freq')} n={yellow_points} dwell={format_quantity(yellow_dwell, 'time')} power={format_quantity(yellow_power, 'power')}
}}
"""
    return parse_protocol(text)


def green_repump_ple(*, repetitions=100, green_power=1e-3, green_pulse=100e-6, red_power=2e-6,
                     red_span=2e9, red_points=801, red_dwell=0.5e-3) -> Protocol:
    text = f"""\
# green repump pulse before every red PLE sweep
mw on
repeat {repetitions} {{
  pulse {format_quantity(green_pulse, 'time')} green={format_quantity(green_power, 'power')}
  sweep red {format_quantity(-red_span, 'freq')} {format_quantity(red_span, 'freq')} n={red_points} dwell={format_quantity(red_dwell, 'time')} power={format_quantity(red_power, 'power')} record
}}
"""
    return parse_protocol(text)


def yellow_repump_ple(*, repetitions=100, yellow_power=100e-9, yellow_span=1e9, yellow_points=201,
                      yellow_dwell=1e-3, red_power=2e-6, red_span=2e9, red_points=801,
                      red_dwell=0.5e-3) -> Protocol:
    text = f"""\
# resonant repump: yellow sweep over the NV0 ZPL before every red PLE sweep
mw on
repeat {repetitions} {{
  sweep yellow {format_quantity(-yellow_span, 'freq')} {format_quantity(yellow_span, 'freq')} n={yellow_points} dwell={format_quantity(yellow_dwell, 'time')} power={format_quantity(yellow_power, 'power')}
  sweep red {format_quantity(-red_span, 'freq')} {format_quantity(red_span, 'freq')} n={red_points} dwell={format_quantity(red_dwell, 'time')} power={format_quantity(red_power, 'power')} record
}}
"""
    return parse_protocol(text)


def power_series_switching(*, red_power=10e-6, scans=6, sweeps=1000, span=1e6, n_points=10,
                           dwell=3e-3, green_power=10e-6) -> Protocol:
    text = f"""\
# line-locked red sweeps with a weak continuous green repump; switching
# events are read from the recorded fluorescence trace
mw on
repeat {scans} {{
  repeat {sweeps} {{
    sweep red {format_quantity(-span, 'freq')} {format_quantity(span, 'freq')} n={n_points} dwell={format_quantity(dwell, 'time')} power={format_quantity(red_power, 'power')} green={format_quantity(green_power, 'power')} record
  }}
}}
"""
    return parse_protocol(text)


def builtin_protocols() -> dict[str, Protocol]:
    return {
        "IONIZE_THEN_NV0_PLE": ionize_then_nv0_ple(),
        "NVM_SWEEP_THEN_NV0_SWEEP": nvm_sweep_then_nv0_sweep(),
        "GREEN_REPUMP_PLE": green_repump_ple(),
        "YELLOW_REPUMP_PLE": yellow_repump_ple(),
        "POWER_SERIES_SWITCHING": power_series_switching(),
    }


__all__ += [
    "ionize_then_nv0_ple",
    "nvm_sweep_then_nv0_sweep",
    "green_repump_ple",
    "yellow_repump_ple",
    "power_series_switching",
]
