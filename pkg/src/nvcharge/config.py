"""Run configuration: an INI file with unit-suffixed values.

Sections mirror the model objects::

    [levels]       ground_splitting, ey_line_offset, emix_line_offset
    [rates]        RateParams fields
    [jumps]        JumpModel fields
    [detection]    DetectionModel fields
    [energetics]   EnergeticsConstants fields
    [run]          seed, solver, workers, bin_width, protocol
    [scenario]     per-scenario sizes (sweeps, powers, ...)

Quantities take an SI suffix (``10uW``, ``1.5GHz``, ``40us``); rates in Hz
and coefficients in Hz/W are plain numbers.  Every default carries a
provenance tag: ``paper`` (a value stated in the source measurement),
``calibration`` (chosen to reproduce an observed behaviour) or
``placeholder`` (a generic value that no result depends on).
"""
from __future__ import annotations

import configparser
import difflib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from ._units import UnitError, format_quantity, parse_quantity
from .diffusion import JumpModel
from .engine import DetectionModel
from .levels import GROUND_SPLITTING, build_default_graph
from .optics import EnergeticsConstants, RateParams

__all__ = [
    "Spec",
    "SCHEMA",
    "Diagnostic",
    "RunConfig",
    "ConfigError",
    "default_config_text",
    "load_config",
    "parse_config",
    "validate_config",
]


@dataclass(frozen=True)
class Spec:
    default: object
    kind: str  # freq | power | time | rate | coeff | float | int | bool | str | optional_freq
    provenance: str
    help: str = ""
    minimum: float | None = 0.0
    strict: bool = False  # minimum excluded


_P, _C, _X = "paper", "calibration", "placeholder"

SCHEMA: dict[str, dict[str, Spec]] = {
    "levels": {
        "ground_splitting": Spec(GROUND_SPLITTING, "freq", _P, "NV- ground-state zero-field splitting"),
        "ey_line_offset": Spec(4e9, "freq", _X, "E_y line relative to E_x", None),
        "emix_line_offset": Spec(-3e9, "freq", _X, "spin-mixed line relative to the ms=+-1 ground level", None),
    },
    "rates": {
        "red_peak_rate": Spec(1.6e7, "rate", _C, "red excitation rate on resonance at the reference power"),
        "red_reference_power": Spec(10e-6, "power", _P, "red sweep power", strict=True),
        "yellow_peak_rate": Spec(5e6, "rate", _C, "yellow excitation rate on resonance at the reference power"),
        "yellow_reference_power": Spec(100e-9, "power", _P, "yellow sweep power", strict=True),
        "nvm_spontaneous_rate": Spec(1 / 12e-9, "rate", _C, "NV- excited-state decay rate"),
        "nvm_homogeneous_fwhm": Spec(None, "optional_freq", _C, "NV- homogeneous linewidth (empty: lifetime limit)"),
        "nv0_spontaneous_rate": Spec(1 / 20e-9, "rate", _C, "NV0 excited-state decay rate"),
        "nv0_homogeneous_fwhm": Spec(50e6, "freq", _C, "NV0 homogeneous linewidth", strict=True),
        "cycling_isc_rate": Spec(1e4, "rate", _C, "intersystem crossing from the cycling levels"),
        "mixing_isc_rate": Spec(5e7, "rate", _C, "intersystem crossing from the spin-mixed level"),
        "nvm_shelving_decay": Spec(3.3e6, "rate", _C, "singlet decay to ms=0"),
        "nv0_isc_rate": Spec(5e5, "rate", _C, "NV0 excited level to quartet"),
        "nv0_shelving_decay": Spec(1e5, "rate", _C, "NV0 quartet decay"),
        "mw_mixing_rate": Spec(1e6, "rate", _C, "ground sublevel mixing with microwaves on"),
        "ionization_coeff": Spec(7.2e8, "coeff", _C, "ionizing step from NV- excited levels, Hz/W of red"),
        "recombination_coeff": Spec(1.6e13, "coeff", _C, "capturing step from the NV0 excited level, Hz/W of yellow"),
        "green_recovery_rate": Spec(1e8, "coeff", _C, "off-resonant NV0 -> NV- rate, Hz/W of green"),
        "ionize_from_mixed": Spec(True, "bool", _X, "ionization also from the spin-mixed excited level"),
    },
    "jumps": {
        "sigma_green": Spec(40e6, "freq", _C, "NV- line scatter set by each green pulse"),
        "sigma_yellow": Spec(2e6, "freq", _C, "NV- jump per yellow recombination"),
        "sigma_ionization": Spec(0.0, "freq", _X, "NV- jump per ionization"),
        "nv0_jitter_sigma": Spec(120e6, "freq", _C, "NV0 line scatter per sweep"),
        "green_redraw": Spec(True, "bool", _C, "green pulses re-draw the NV- line instead of adding a jump"),
    },
    "detection": {
        "efficiency_nvm": Spec(0.3, "float", _X, "detected fraction of NV- emission"),
        "efficiency_nv0": Spec(0.05, "float", _X, "detected fraction of NV0 emission (sideband tail in band)"),
        "dark_count_rate": Spec(0.0, "rate", _X, "detector dark counts, Hz"),
    },
    "energetics": {
        "two_photon_ionization_threshold": Spec(3.5, "float", _P, "eV"),
        "auger_excess_min": Spec(1.4, "float", _P, "eV"),
        "nvm_zpl_energy": Spec(1.945, "float", _P, "eV (637 nm)"),
        "nv0_zpl_energy": Spec(EnergeticsConstants().nv0_zpl_energy, "float", _P, "eV (575.015 nm)"),
        "band_gap_calc": Spec(5.38, "float", _P, "eV"),
        "band_gap_exp": Spec(5.48, "float", _P, "eV"),
    },
    "run": {
        "seed": Spec(42, "int", _X, "master seed of all random streams"),
        "solver": Spec("kmc", "str", _X, "kmc or ode"),
        "workers": Spec(1, "int", _X, "parallel worker processes", 1),
        "bin_width": Spec(1e-3, "time", _X, "trace bin width", strict=True),
        "protocol": Spec("", "str", _X, "builtin protocol name or protocol file (custom scenario)"),
    },
    "scenario": {
        "fig1c_min_power": Spec(1e-6, "power", _C, "lowest red power", strict=True),
        "fig1c_max_power": Spec(10e-6, "power", _C, "highest red power", strict=True),
        "fig1c_n_powers": Spec(6, "int", _P, "number of powers", 3),
        "fig1c_sweeps": Spec(200, "int", _X, "line-locked sweeps per power", 1),
        "fig1c_green_power": Spec(10e-6, "power", _C, "continuous weak green repump"),
        "fig1c_bin_width": Spec(40e-6, "time", _C, "trace bin width", strict=True),
        "fig1c_off_run_length": Spec(5, "int", _X, "dark bins that make a switching event", 1),
        "fig2a_repetitions": Spec(200, "int", _X, "ionize-then-probe cycles", 1),
        "fig2a_ionizing_power": Spec(100e-6, "power", _C, "red pulse power (10 uW sweep power x 10)"),
        "fig2a_yellow_power": Spec(2e-9, "power", _C, "yellow probe power"),
        "fig2a_detuning_linewidths": Spec(100.0, "float", _X, "control run: red detuning in NV- linewidths"),
        "fig2d_scan_width_nm": Spec(2.0, "float", _P, "total yellow scan range around 575 nm", strict=True),
        "fig2d_n_bands": Spec(3, "int", _P, "number of bands", 1),
        "fig2d_points_per_band": Spec(1000, "int", _X, "sweep points per band", 1),
        "fig2d_repetitions": Spec(5, "int", _X, "yellow/red cycles per band", 1),
        "fig3_sweeps": Spec(100, "int", _X, "PLE sweeps per repump method", 1),
    },
}


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics if d.severity == "error"))


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # error | warning | notice
    message: str
    section: str = ""
    key: str = ""
    line: int | None = None

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        name = f"[{self.section}] {self.key}: " if self.key else (f"[{self.section}]: " if self.section else "")
        return f"{self.severity}: {where}{name}{self.message}"


def _format_default(spec: Spec) -> str:
    v = spec.default
    if v is None:
        return ""
    if spec.kind in ("freq", "optional_freq"):
        return format_quantity(v, "freq")
    if spec.kind == "power":
        return format_quantity(v, "power")
    if spec.kind == "time":
        return format_quantity(v, "time")
    if spec.kind == "bool":
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def default_config_text() -> str:
    """The shipped configuration, every key at its default with its provenance."""
    out = ["# nvcharge run configuration", "# provenance tags: paper | calibration | placeholder", ""]
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, spec in keys.items():
            out.append(f"# {spec.provenance}: {spec.help}")
            out.append(f"{key} = {_format_default(spec)}")
        out.append("")
    return "\n".join(out)


_KINDS = {"freq": "freq", "optional_freq": "freq", "power": "power", "time": "time"}


def _convert(text: str, spec: Spec):
    text = text.strip()
    k = spec.kind
    if k == "optional_freq" and text == "":
        return None
    if k in _KINDS:
        value = parse_quantity(text, _KINDS[k], default_unit={"freq": "Hz", "power": "W", "time": "s"}[_KINDS[k]])
    elif k in ("rate", "coeff", "float"):
        text = re.sub(r"\s*(Hz/W|Hz|eV)$", "", text)
        try:
            value = float(text)
        except ValueError:
            raise UnitError(f"not a number: {text!r}") from None
        if not math.isfinite(value):
            raise UnitError(f"non-finite value {text!r}")
    elif k == "int":
        try:
            value = int(text)
        except ValueError:
            raise UnitError(f"not an integer: {text!r}") from None
    elif k == "bool":
        low = text.lower()
        if low not in configparser.ConfigParser.BOOLEAN_STATES:
            raise UnitError(f"not a boolean: {text!r}")
        return configparser.ConfigParser.BOOLEAN_STATES[low]
    else:
        return text
    if spec.minimum is not None:
        if value < spec.minimum or (spec.strict and value == spec.minimum):
            op = ">" if spec.strict else ">="
            raise UnitError(f"must be {op} {spec.minimum:g}, got {text}")
    return value


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines, section = {}, ""
    for n, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, ""), n)
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m:
            lines.setdefault((section, m.group(1).strip().lower()), n)
    return lines


@dataclass
class RunConfig:
    """Everything a run needs; built from a config file plus CLI overrides."""

    values: dict = field(default_factory=lambda: {s: {k: v.default for k, v in keys.items()}
                                                  for s, keys in SCHEMA.items()})
    source: str = ""
    text: str = ""

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value):
        if key not in SCHEMA.get(section, {}):
            raise KeyError(f"[{section}] {key}")
        self.values[section][key] = value

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def solver(self) -> str:
        return self.values["run"]["solver"]

    @property
    def workers(self) -> int:
        return self.values["run"]["workers"]

    def rate_params(self) -> RateParams:
        return RateParams(**self.values["rates"])

    def jump_model(self) -> JumpModel:
        return JumpModel(**self.values["jumps"])

    def detection(self) -> DetectionModel:
        return DetectionModel(**self.values["detection"])

    def energetics(self) -> EnergeticsConstants:
        return EnergeticsConstants(**self.values["energetics"])

    def graph(self):
        return build_default_graph(**self.values["levels"])

    def canonical(self) -> dict:
        """JSON-ready values, used for hashing and provenance headers."""
        return {s: {k: v for k, v in sorted(kv.items())} for s, kv in sorted(self.values.items())}

    def model_objects(self) -> dict:
        return dict(graph=self.graph(), params=self.rate_params(), jumps=self.jump_model(),
                    detection=self.detection())


def _lint(text: str, source: str = "") -> tuple[RunConfig, list[Diagnostic]]:
    diags: list[Diagnostic] = []
    cfg = RunConfig(source=source, text=text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        msg = getattr(e, "message", str(e)).splitlines()[0]
        diags.append(Diagnostic("error", msg, line=line))
        return cfg, diags
    lines = _key_lines(text)
    seen = set()
    for section in cp.sections():
        if section not in SCHEMA:
            close = difflib.get_close_matches(section, list(SCHEMA), n=1)
            hint = f" (did you mean [{close[0]}]?)" if close else ""
            diags.append(Diagnostic("warning", f"unknown section{hint}", section, line=lines.get((section, ""))))
            continue
        for key, raw in cp.items(section):
            line = lines.get((section, key))
            spec = SCHEMA[section].get(key)
            if spec is None:
                close = difflib.get_close_matches(key, list(SCHEMA[section]), n=1)
                hint = f" (did you mean {close[0]!r}?)" if close else ""
                diags.append(Diagnostic("warning", f"unknown key{hint}", section, key, line))
                continue
            try:
                cfg.values[section][key] = _convert(raw, spec)
                seen.add((section, key))
            except UnitError as e:
                diags.append(Diagnostic("error", str(e), section, key, line))
    if cfg.values["run"]["solver"] not in ("kmc", "ode"):
        diags.append(Diagnostic("error", "solver must be 'kmc' or 'ode'", "run", "solver",
                                lines.get(("run", "solver"))))
    # cross-field checks run through the model constructors
    for section, build in (("rates", cfg.rate_params), ("jumps", cfg.jump_model), ("detection", cfg.detection),
                           ("energetics", cfg.energetics), ("levels", cfg.graph)):
        if any(d.severity == "error" and d.section == section for d in diags):
            continue
        try:
            build()
        except ValueError as e:
            diags.append(Diagnostic("error", str(e), section, line=lines.get((section, ""))))
    for section, keys in SCHEMA.items():
        for key, spec in keys.items():
            if spec.provenance == _C and cfg.values[section][key] == spec.default:
                diags.append(Diagnostic("notice", f"calibration default {_format_default(spec) or 'None'} "
                                                  f"({spec.help})", section, key))
    return cfg, diags


def parse_config(text: str, source: str = "") -> RunConfig:
    """Build a RunConfig; raises :class:`ConfigError` listing every error."""
    cfg, diags = _lint(text, source)
    if any(d.severity == "error" for d in diags):
        raise ConfigError(diags)
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config(default_config_text(), "<defaults>")
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def validate_config(path) -> list[Diagnostic]:
    """Lint a config file without running anything.

    Lists errors, warnings (unknown names, with the nearest valid one) and a
    notice for every value that is still at a calibration default.
    """
    text = Path(path).read_text(encoding="utf-8")
    return _lint(text, str(path))[1]
