"""Laser fields, rate constants and the generator of the rate process.

Every constant the dynamics needs lives in :class:`RateParams`.  None of
them are measured values; the defaults are a calibration (see
``PARAMETER_PROVENANCE``) chosen so the simulated phenomenology lands in
the experimentally observed regime.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import Enum, IntEnum

import numpy as np
from scipy.special import voigt_profile

from .levels import (
    SPEED_OF_LIGHT,
    ChargeState,
    LevelGraph,
    Role,
    TransitionKind,
    TransitionTemplate,
    validate_graph,
    GraphError,
)

__all__ = [
    "LaserTarget",
    "LaserField",
    "RateParams",
    "EnergeticsConstants",
    "ChannelCode",
    "RateMatrix",
    "PLANCK_EV",
    "photon_energy_ev",
    "lorentzian_excitation_rate",
    "window_averaged_lorentzian",
    "excitation_rate",
    "ionization_rate_from_excited",
    "recombination_rate_from_excited",
    "green_repump_rate",
    "ionization_energetically_allowed",
    "build_rate_matrix",
    "ChannelTemplate",
    "channel_template",
]

PLANCK_EV = 4.135667696e-15  # eV s


class LaserTarget(str, Enum):
    RED_NVM = "red"
    YELLOW_NV0 = "yellow"
    GREEN_OFF_RESONANT = "green"

    @property
    def charge(self) -> ChargeState | None:
        if self is LaserTarget.RED_NVM:
            return ChargeState.NEGATIVE
        if self is LaserTarget.YELLOW_NV0:
            return ChargeState.NEUTRAL
        return None


@dataclass(frozen=True)
class LaserField:
    """A laser that is on during one schedule window.

    ``span`` is the frequency interval (Hz) swept during the window; a
    non-zero span makes the excitation rate the average of the lineshape
    over ``[offset - span/2, offset + span/2]``.
    """

    target: LaserTarget
    power: float
    frequency_offset: float = 0.0
    linewidth: float = 0.0
    span: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "target", LaserTarget(self.target))
        for name in ("power", "frequency_offset", "linewidth", "span"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"laser {name} must be finite")
        if self.power < 0:
            raise ValueError("laser power must be >= 0")
        if self.linewidth < 0 or self.span < 0:
            raise ValueError("laser linewidth and span must be >= 0")

    @property
    def id(self) -> str:
        return self.target.value


@dataclass(frozen=True)
class RateParams:
    """Rate constants of the model, all in SI units (Hz, W, Hz/W)."""

    red_peak_rate: float = 1.6e7
    red_reference_power: float = 10e-6
    yellow_peak_rate: float = 5e6
    yellow_reference_power: float = 100e-9
    nvm_spontaneous_rate: float = 1 / 12e-9
    nvm_homogeneous_fwhm: float | None = None
    nv0_spontaneous_rate: float = 1 / 20e-9
    nv0_homogeneous_fwhm: float = 50e6
    cycling_isc_rate: float = 1e4
    mixing_isc_rate: float = 5e7
    nvm_shelving_decay: float = 3.3e6
    nv0_isc_rate: float = 5e5
    nv0_shelving_decay: float = 1e5
    mw_mixing_rate: float = 1e6
    ionization_coeff: float = 7.2e8
    recombination_coeff: float = 1.6e13
    green_recovery_rate: float = 1e8
    ionize_from_mixed: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or v is None:
                continue
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be finite and >= 0, got {v!r}")
        for name in ("red_reference_power", "yellow_reference_power", "nv0_homogeneous_fwhm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.nvm_homogeneous_fwhm is not None and self.nvm_homogeneous_fwhm <= 0:
            raise ValueError("nvm_homogeneous_fwhm must be > 0")

    @property
    def nvm_fwhm(self) -> float:
        """NV- homogeneous linewidth; lifetime limited unless overridden."""
        if self.nvm_homogeneous_fwhm is not None:
            return self.nvm_homogeneous_fwhm
        return self.nvm_spontaneous_rate / (2 * math.pi)

    def fwhm(self, charge: ChargeState) -> float:
        return self.nvm_fwhm if charge == ChargeState.NEGATIVE else self.nv0_homogeneous_fwhm

    def peak_rate(self, target: LaserTarget) -> tuple[float, float]:
        if target is LaserTarget.RED_NVM:
            return self.red_peak_rate, self.red_reference_power
        if target is LaserTarget.YELLOW_NV0:
            return self.yellow_peak_rate, self.yellow_reference_power
        raise ValueError("green light has no resonant excitation rate")


@dataclass(frozen=True)
class EnergeticsConstants:
    two_photon_ionization_threshold: float = 3.5
    auger_excess_min: float = 1.4
    nvm_zpl_energy: float = 1.945
    nv0_zpl_energy: float = PLANCK_EV * SPEED_OF_LIGHT / 575.015e-9
    band_gap_calc: float = 5.38
    band_gap_exp: float = 5.48

    def __post_init__(self):
        if 2 * self.nvm_zpl_energy < self.two_photon_ionization_threshold:
            raise ValueError("two NV- ZPL photons must reach the ionization threshold")

    @property
    def two_photon_excess(self) -> float:
        """Energy (eV) by which two NV- ZPL photons exceed the ionization threshold."""
        return 2 * self.nvm_zpl_energy - self.two_photon_ionization_threshold


def photon_energy_ev(wavelength: float) -> float:
    return PLANCK_EV * SPEED_OF_LIGHT / wavelength


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input {v!r}")


def lorentzian_excitation_rate(detuning: float, fwhm: float, peak_rate: float) -> float:
    """Peak-normalised Lorentzian: ``peak_rate * (fwhm/2)**2 / (detuning**2 + (fwhm/2)**2)``."""
    _check_finite(detuning, fwhm, peak_rate)
    if fwhm <= 0:
        raise ValueError("fwhm must be > 0")
    if peak_rate < 0:
        raise ValueError("peak_rate must be >= 0")
    hw2 = (0.5 * fwhm) ** 2
    return peak_rate * hw2 / (detuning * detuning + hw2)


def window_averaged_lorentzian(detuning: float, span: float, fwhm: float, peak_rate: float) -> float:
    """Mean of the Lorentzian over ``[detuning - span/2, detuning + span/2]``."""
    if span <= 0:
        return lorentzian_excitation_rate(detuning, fwhm, peak_rate)
    _check_finite(detuning, span, fwhm, peak_rate)
    g = 0.5 * fwhm
    hi = math.atan((detuning + 0.5 * span) / g)
    lo = math.atan((detuning - 0.5 * span) / g)
    return peak_rate * g * (hi - lo) / span


def excitation_rate(
    laser: LaserField,
    transition: TransitionTemplate,
    graph: LevelGraph,
    spectral,
    params: RateParams,
) -> float:
    """Excitation rate (Hz) a laser induces on one optical transition.

    The detuning is taken between the laser offset and the transition line
    centre shifted by the current spectral offset of its charge state, so
    only their difference matters.  Rates are linear in power.
    """
    if transition.kind != TransitionKind.OPTICAL_EXCITATION:
        raise ValueError(f"{transition.name} is not an optical excitation")
    charge = graph.level(transition.source).charge
    if laser.target.charge != charge or transition.parameter != laser.target.value:
        raise ValueError(f"laser {laser.id} does not drive {transition.name}")
    peak, ref_power = params.peak_rate(laser.target)
    if laser.power == 0:
        return 0.0
    shift = spectral.offset(charge) if spectral is not None else 0.0
    detuning = laser.frequency_offset - (graph.line_center(transition) + shift)
    fwhm = params.fwhm(charge)
    scale = peak * (laser.power / ref_power)
    if laser.linewidth > 0:
        # Gaussian laser lineshape (FWHM = linewidth) convolved with the
        # homogeneous line, normalised to the bare Lorentzian peak.
        sigma = laser.linewidth / (2 * math.sqrt(2 * math.log(2)))
        gamma = 0.5 * fwhm
        return scale * math.pi * gamma * float(voigt_profile(detuning, sigma, gamma))
    return window_averaged_lorentzian(detuning, laser.span, fwhm, scale)


def ionization_rate_from_excited(power_red: float, params: RateParams) -> float:
    """Rate of the second (ionizing) photon absorbed from an NV- excited level."""
    _check_finite(power_red)
    if power_red < 0:
        raise ValueError("power must be >= 0")
    return params.ionization_coeff * power_red


def recombination_rate_from_excited(power_yellow: float, params: RateParams) -> float:
    """Rate of the second (electron-capturing) photon from the NV0 excited level."""
    _check_finite(power_yellow)
    if power_yellow < 0:
        raise ValueError("power must be >= 0")
    return params.recombination_coeff * power_yellow


def green_repump_rate(power_green: float, params: RateParams) -> float:
    """Off-resonant NV0 -> NV- restoring rate; acts on every NV0 level."""
    _check_finite(power_green)
    if power_green < 0:
        raise ValueError("power must be >= 0")
    return params.green_recovery_rate * power_green


def ionization_energetically_allowed(photon_energy: float, consts: EnergeticsConstants | None = None) -> bool:
    """True iff two photons of this energy reach the two-photon ionization threshold."""
    consts = consts or EnergeticsConstants()
    if not photon_energy > 0:
        raise ValueError("photon energy must be > 0")
    # round away binary noise so the boundary case 2 * 1.75 == 3.5 is inclusive
    return round(2 * photon_energy - consts.two_photon_ionization_threshold, 12) >= 0


class ChannelCode(IntEnum):
    """What happens when a KMC channel fires."""

    SILENT = 0
    EMISSION = 1
    IONIZATION = 2
    RECOMBINATION = 3
    GREEN_REPUMP = 4


@dataclass(frozen=True)
class RateMatrix:
    """Generator ``G`` of ``dp/dt = G p`` plus the channel list it was summed from.

    ``G[j, i]`` is the rate from level ``i`` to level ``j``; columns sum to zero.
    Channels keep individual edges apart so the sampler can tell e.g. a
    yellow recombination from a green repump into the same sublevel.
    """

    generator: np.ndarray
    level_ids: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    rate: np.ndarray
    code: np.ndarray
    charge_neg: np.ndarray  # True where the channel's source level is NV-

    @property
    def index(self) -> dict[str, int]:
        return {lv: i for i, lv in enumerate(self.level_ids)}

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.generator)

    def rate_between(self, source: str, target: str) -> float:
        idx = self.index
        return float(self.generator[idx[target], idx[source]])


_graph_ok_cache: dict[int, LevelGraph] = {}


def _ensure_valid(g: LevelGraph):
    key = id(g)
    if _graph_ok_cache.get(key) is g:
        return
    problems = validate_graph(g)
    if problems:
        raise GraphError("invalid level graph: " + "; ".join(problems))
    _graph_ok_cache[key] = g


class ChannelTemplate:
    """Every channel a graph can open, in a fixed order.

    Built once per graph and parameter set; :meth:`rates` then only fills in
    the laser- and offset-dependent numbers, which is what the sampler needs
    at every schedule window.  Closed channels get rate 0.
    """

    def __init__(self, g: LevelGraph, params: RateParams):
        _ensure_valid(g)
        self.graph = g
        self.params = params
        K = TransitionKind
        idx = {lv.id: i for i, lv in enumerate(g.levels)}
        src, dst, code, static = [], [], [], []
        self._optical = []  # (channel, transition, target, weight, centre, charge, fwhm)
        self._mw, self._ion, self._rec, self._green = [], [], [], []

        def add(s, d, c, r=0.0):
            src.append(idx[s])
            dst.append(idx[d])
            code.append(int(c))
            static.append(r)
            return len(src) - 1

        for tr in g.transitions:
            w = tr.weight
            if tr.kind == K.OPTICAL_EXCITATION:
                k = add(tr.source, tr.target, ChannelCode.SILENT)
                charge = g.level(tr.source).charge
                self._optical.append((k, tr, LaserTarget(tr.parameter), w, g.line_center(tr), charge,
                                      params.fwhm(charge)))
            elif tr.kind == K.SPONTANEOUS_EMISSION:
                add(tr.source, tr.target, ChannelCode.EMISSION, w * getattr(params, tr.parameter))
            elif tr.kind == K.ISC:
                add(tr.source, tr.target, ChannelCode.SILENT, w * getattr(params, tr.parameter))
            elif tr.kind == K.MICROWAVE_MIXING:
                self._mw.append((add(tr.source, tr.target, ChannelCode.SILENT), w * getattr(params, tr.parameter)))
            elif tr.kind == K.IONIZATION:
                if g.level(tr.source).label == "E_mix" and not params.ionize_from_mixed:
                    continue
                self._ion.append((add(tr.source, tr.target, ChannelCode.IONIZATION), w))
            elif tr.kind == K.RECOMBINATION:
                self._rec.append((add(tr.source, tr.target, ChannelCode.RECOMBINATION), w))

        nvm_ground = [lv.id for lv in g.levels_of(ChargeState.NEGATIVE) if lv.role == Role.GROUND]
        for lv in g.levels_of(ChargeState.NEUTRAL):
            for gid in nvm_ground:
                self._green.append((add(lv.id, gid, ChannelCode.GREEN_REPUMP), 1.0 / len(nvm_ground)))

        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.code = np.asarray(code, dtype=np.int64)
        self._static = np.asarray(static, dtype=np.float64)
        neg = np.array([lv.charge == ChargeState.NEGATIVE for lv in g.levels])
        self.charge_neg = neg[self.src] if self.src.size else np.zeros(0, dtype=bool)

    @property
    def n_channels(self) -> int:
        return self.src.size

    def rates(self, lasers, spectral, mw_on: bool) -> np.ndarray:
        """Rate of every channel (Hz) for fixed lasers and spectral offsets."""
        p = self.params
        r = self._static.copy()
        power = {t: 0.0 for t in LaserTarget}
        for las in lasers:
            power[las.target] += las.power
        for k, tr, target, w, centre, charge, fwhm in self._optical:
            total = 0.0
            for las in lasers:
                if las.target is not target or las.power == 0:
                    continue
                if las.linewidth > 0:
                    total += excitation_rate(las, tr, self.graph, spectral, p)
                    continue
                peak, ref_power = p.peak_rate(target)
                shift = spectral.offset(charge) if spectral is not None else 0.0
                total += window_averaged_lorentzian(las.frequency_offset - (centre + shift), las.span, fwhm,
                                                    peak * (las.power / ref_power))
            r[k] = w * total
        if mw_on:
            for k, v in self._mw:
                r[k] = v
        k_ion = ionization_rate_from_excited(power[LaserTarget.RED_NVM], p)
        for k, w in self._ion:
            r[k] = w * k_ion
        k_rec = recombination_rate_from_excited(power[LaserTarget.YELLOW_NV0], p)
        for k, w in self._rec:
            r[k] = w * k_rec
        k_green = green_repump_rate(power[LaserTarget.GREEN_OFF_RESONANT], p)
        for k, w in self._green:
            r[k] = w * k_green
        return r


_template_cache: dict = {}


def channel_template(g: LevelGraph, params: RateParams) -> ChannelTemplate:
    key = (id(g), params)
    t = _template_cache.get(key)
    if t is None or t.graph is not g:
        if len(_template_cache) > 64:
            _template_cache.clear()
        t = _template_cache[key] = ChannelTemplate(g, params)
    return t


def build_rate_matrix(
    g: LevelGraph,
    lasers,
    spectral,
    mw_on: bool,
    params: RateParams,
) -> RateMatrix:
    """Assemble the generator for fixed laser settings and spectral offsets."""
    t = channel_template(g, params)
    rate = t.rates(lasers, spectral, mw_on)
    open_ = rate > 0
    src, dst, rate = t.src[open_], t.dst[open_], rate[open_]
    n = g.n_levels
    G = np.zeros((n, n))
    np.add.at(G, (dst, src), rate)
    G[np.diag_indices(n)] = 0.0
    G[np.diag_indices(n)] = -G.sum(axis=0)
    return RateMatrix(
        generator=G,
        level_ids=tuple(lv.id for lv in g.levels),
        src=src,
        dst=dst,
        rate=rate,
        code=t.code[open_],
        charge_neg=t.charge_neg[open_],
    )


def wavelength_to_offset(wavelength: float, reference_wavelength: float) -> float:
    """Optical frequency offset (Hz) of ``wavelength`` from ``reference_wavelength``."""
    return SPEED_OF_LIGHT / wavelength - SPEED_OF_LIGHT / reference_wavelength


def wavelength_span_to_offsets(lo_nm: float, hi_nm: float, reference_nm: float) -> tuple[float, float]:
    """Convert a wavelength scan ``[lo_nm, hi_nm]`` to (start, stop) frequency offsets, ascending."""
    a = wavelength_to_offset(hi_nm * 1e-9, reference_nm * 1e-9)
    b = wavelength_to_offset(lo_nm * 1e-9, reference_nm * 1e-9)
    return (min(a, b), max(a, b))


__all__ += ["wavelength_to_offset", "wavelength_span_to_offsets"]
