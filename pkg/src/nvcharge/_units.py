"""Parsing and exact formatting of quantities with SI unit suffixes.

Unit prefixes are applied as decimal exponent shifts, so ``"10uW"`` parses
to the double nearest 1e-5 and every formatted quantity parses back to the
same double.
"""
from __future__ import annotations

import math
import re
from decimal import Decimal, InvalidOperation

# unit -> power of ten
TIME_UNITS = {"s": 0, "ms": -3, "us": -6, "µs": -6, "ns": -9}
POWER_UNITS = {"W": 0, "mW": -3, "uW": -6, "µW": -6, "nW": -9, "pW": -12}
FREQ_UNITS = {"Hz": 0, "kHz": 3, "MHz": 6, "GHz": 9, "THz": 12}

# preferred units for printing, in order of preference
_PRINT_ORDER = {
    "time": ("ms", "us", "s", "ns"),
    "power": ("uW", "nW", "mW", "W", "pW"),
    "freq": ("MHz", "GHz", "kHz", "Hz", "THz"),
}
_TABLES = {"time": TIME_UNITS, "power": POWER_UNITS, "freq": FREQ_UNITS}

_NUM = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)([A-Za-zµ]*)$")


class UnitError(ValueError):
    pass


def parse_quantity(text: str, kind: str, *, default_unit: str | None = None) -> float:
    """Parse ``"10uW"``, ``"-1.5GHz"``, ``"1e-3s"`` ... into a float in SI units."""
    m = _NUM.match(text.strip())
    if not m:
        raise UnitError(f"malformed number {text!r}")
    number, unit = m.groups()
    table = _TABLES[kind]
    if not unit:
        if default_unit is None:
            raise UnitError(f"missing unit in {text!r} (expected one of {', '.join(table)})")
        unit = default_unit
    if unit not in table:
        raise UnitError(f"unknown {kind} unit {unit!r} in {text!r}")
    try:
        value = float(Decimal(number).scaleb(table[unit]))
    except (InvalidOperation, OverflowError):
        raise UnitError(f"unrepresentable value {text!r}") from None
    if not math.isfinite(value):
        raise UnitError(f"non-finite value {text!r}")
    return value


def _mantissa(value: float, exp: int) -> str:
    d = Decimal(repr(value)).scaleb(-exp).normalize()
    s = format(d, "f") if -12 <= d.adjusted() <= 15 else format(d, "e")
    return s if s not in ("-0",) else "0"


def format_quantity(value: float, kind: str) -> str:
    """Shortest unit form that parses back to exactly ``value``."""
    if not math.isfinite(value):
        raise UnitError("cannot format a non-finite quantity")
    table = _TABLES[kind]
    if value == 0:
        return "0" + _PRINT_ORDER[kind][0]
    best = None
    for unit in _PRINT_ORDER[kind]:
        mant = abs(value) * 10.0 ** -table[unit]
        if 1e-3 <= mant < 1e6:
            s = _mantissa(value, table[unit]) + unit
            if best is None or len(s) < len(best):
                best = s
    if best is None:
        base = next(u for u, e in table.items() if e == 0)
        best = _mantissa(value, 0) + base
    return best
