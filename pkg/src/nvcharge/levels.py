"""Electronic level structure of the NV centre in both charge states.

The graph is static: levels carry energies relative to the ground level of
their own charge state, and transitions carry the *name* of the rate
parameter that drives them.  Actual numbers are supplied later by
:mod:`nvcharge.optics`.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

__all__ = [
    "ChargeState",
    "Role",
    "TransitionKind",
    "RateLaw",
    "Level",
    "TransitionTemplate",
    "LevelGraph",
    "GraphError",
    "SPEED_OF_LIGHT",
    "NVM_ZPL_WAVELENGTH",
    "NV0_ZPL_WAVELENGTH",
    "GROUND_SPLITTING",
    "build_default_graph",
    "validate_graph",
    "graph_to_json",
    "graph_from_json",
]

SPEED_OF_LIGHT = 299_792_458.0
NVM_ZPL_WAVELENGTH = 637e-9
NV0_ZPL_WAVELENGTH = 575.015e-9
GROUND_SPLITTING = 2.87e9

GRAPH_SCHEMA = "nvcharge.levelgraph/1"


class GraphError(ValueError):
    """Raised when a level graph fails validation where a valid one is required."""


class ChargeState(str, Enum):
    NEGATIVE = "NV-"
    NEUTRAL = "NV0"


class Role(str, Enum):
    GROUND = "ground"
    OPTICAL_EXCITED = "optical_excited"
    SHELVING = "shelving"


class TransitionKind(str, Enum):
    OPTICAL_EXCITATION = "optical_excitation"
    SPONTANEOUS_EMISSION = "spontaneous_emission"
    ISC = "isc"
    MICROWAVE_MIXING = "microwave_mixing"
    IONIZATION = "ionization"
    RECOMBINATION = "recombination"


class RateLaw(str, Enum):
    CONSTANT = "constant"
    LASER_LORENTZIAN = "laser_lorentzian"
    POWER_LAW = "power_law"


@dataclass(frozen=True)
class Level:
    id: str
    charge: ChargeState
    label: str
    energy_offset: float
    role: Role


@dataclass(frozen=True)
class TransitionTemplate:
    """One directed edge of the level graph.

    ``parameter`` names the attribute of :class:`nvcharge.optics.RateParams`
    holding the rate constant (for ``LASER_LORENTZIAN`` edges it is the laser
    colour driving the transition).  ``weight`` splits one parameter over
    several edges, e.g. recombination into the two ground sublevels.
    """

    source: str
    target: str
    kind: TransitionKind
    rate_law: RateLaw
    parameter: str
    weight: float = 1.0

    @property
    def name(self) -> str:
        return f"{self.kind.value}:{self.source}->{self.target}"


@dataclass(frozen=True)
class LevelGraph:
    levels: tuple[Level, ...]
    transitions: tuple[TransitionTemplate, ...]
    references: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {lv.id: lv for lv in self.levels})
        object.__setattr__(self, "_index", {lv.id: i for i, lv in enumerate(self.levels)})

    def __hash__(self):
        return hash((self.levels, self.transitions))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level(self, level_id: str) -> Level:
        try:
            return self._by_id[level_id]
        except KeyError:
            raise KeyError(f"unknown level {level_id!r}") from None

    def index(self, level_id: str) -> int:
        return self._index[level_id]

    def levels_of(self, charge: ChargeState) -> list[Level]:
        return [lv for lv in self.levels if lv.charge == charge]

    def reference(self, charge: ChargeState) -> float:
        """Optical frequency (Hz) that laser offsets for this charge state are measured from."""
        return self.references[ChargeState(charge)]

    def line_center(self, transition: TransitionTemplate) -> float:
        """Centre of an optical transition relative to its charge state's ZPL reference."""
        src, dst = self.level(transition.source), self.level(transition.target)
        return (dst.energy_offset - src.energy_offset) - self.reference(src.charge)

    def adjacency(self) -> dict[str, list[tuple[str, str]]]:
        adj: dict[str, list[tuple[str, str]]] = defaultdict(list)
        for tr in self.transitions:
            adj[tr.source].append((tr.target, tr.kind.value))
        return {k: sorted(v) for k, v in sorted(adj.items())}


def build_default_graph(
    *,
    ground_splitting: float = GROUND_SPLITTING,
    ey_line_offset: float = 4e9,
    emix_line_offset: float = -3e9,
    nvm_singlet_energy: float = 96.7e12,
    nv0_quartet_energy: float = 241.8e12,
) -> LevelGraph:
    """Canonical two-charge-state graph: six NV- levels and three NV0 levels.

    Parameters
    ----------
    ground_splitting : float
        Zero-field splitting of the NV- ground triplet (Hz).
    ey_line_offset, emix_line_offset : float
        Line positions (Hz) of the Ey and aggregated spin-mixing transitions
        relative to the Ex line, which sits exactly on the NV- ZPL reference.
        The mixing line is driven from the ms=+-1 sublevel.
    nvm_singlet_energy, nv0_quartet_energy : float
        Placement of the shelving levels above their ground level (Hz).  Only
        their ordering matters for the dynamics.
    """
    nvm_ref = SPEED_OF_LIGHT / NVM_ZPL_WAVELENGTH
    nv0_ref = SPEED_OF_LIGHT / NV0_ZPL_WAVELENGTH
    neg, neu = ChargeState.NEGATIVE, ChargeState.NEUTRAL
    levels = (
        Level("g0", neg, "g0", 0.0, Role.GROUND),
        Level("g1", neg, "g±1", ground_splitting, Role.GROUND),
        Level("ex", neg, "Ex", nvm_ref, Role.OPTICAL_EXCITED),
        Level("ey", neg, "Ey", nvm_ref + ey_line_offset, Role.OPTICAL_EXCITED),
        Level("emix", neg, "E_mix", nvm_ref + ground_splitting + emix_line_offset, Role.OPTICAL_EXCITED),
        Level("s", neg, "S", nvm_singlet_energy, Role.SHELVING),
        Level("g0p", neu, "g0'", 0.0, Role.GROUND),
        Level("ep", neu, "e'", nv0_ref, Role.OPTICAL_EXCITED),
        Level("qp", neu, "q'", nv0_quartet_energy, Role.SHELVING),
    )
    K, L = TransitionKind, RateLaw
    T = TransitionTemplate
    transitions = (
        # NV- optical cycle
        T("g0", "ex", K.OPTICAL_EXCITATION, L.LASER_LORENTZIAN, "red"),
        T("g0", "ey", K.OPTICAL_EXCITATION, L.LASER_LORENTZIAN, "red"),
        T("g1", "emix", K.OPTICAL_EXCITATION, L.LASER_LORENTZIAN, "red"),
        T("ex", "g0", K.SPONTANEOUS_EMISSION, L.CONSTANT, "nvm_spontaneous_rate"),
        T("ey", "g0", K.SPONTANEOUS_EMISSION, L.CONSTANT, "nvm_spontaneous_rate"),
        T("emix", "g1", K.SPONTANEOUS_EMISSION, L.CONSTANT, "nvm_spontaneous_rate"),
        T("ex", "s", K.ISC, L.CONSTANT, "cycling_isc_rate"),
        T("ey", "s", K.ISC, L.CONSTANT, "cycling_isc_rate"),
        T("emix", "s", K.ISC, L.CONSTANT, "mixing_isc_rate"),
        T("s", "g0", K.ISC, L.CONSTANT, "nvm_shelving_decay"),
        T("g0", "g1", K.MICROWAVE_MIXING, L.CONSTANT, "mw_mixing_rate"),
        T("g1", "g0", K.MICROWAVE_MIXING, L.CONSTANT, "mw_mixing_rate"),
        # charge conversion, sequential two-photon steps
        T("ex", "g0p", K.IONIZATION, L.POWER_LAW, "ionization_coeff"),
        T("ey", "g0p", K.IONIZATION, L.POWER_LAW, "ionization_coeff"),
        T("emix", "g0p", K.IONIZATION, L.POWER_LAW, "ionization_coeff"),
        T("ep", "g0", K.RECOMBINATION, L.POWER_LAW, "recombination_coeff", 0.5),
        T("ep", "g1", K.RECOMBINATION, L.POWER_LAW, "recombination_coeff", 0.5),
        # NV0 optical cycle
        T("g0p", "ep", K.OPTICAL_EXCITATION, L.LASER_LORENTZIAN, "yellow"),
        T("ep", "g0p", K.SPONTANEOUS_EMISSION, L.CONSTANT, "nv0_spontaneous_rate"),
        T("ep", "qp", K.ISC, L.CONSTANT, "nv0_isc_rate"),
        T("qp", "g0p", K.ISC, L.CONSTANT, "nv0_shelving_decay"),
    )
    return LevelGraph(levels, transitions, {neg: nvm_ref, neu: nv0_ref})


def validate_graph(g: LevelGraph) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    violations: list[str] = []
    ids = [lv.id for lv in g.levels]
    seen = set()
    for lv_id in ids:
        if lv_id in seen:
            violations.append(f"level {lv_id}: duplicate id")
        seen.add(lv_id)

    for lv in g.levels:
        if not math.isfinite(lv.energy_offset) or lv.energy_offset < 0:
            violations.append(f"level {lv.id}: energy offset {lv.energy_offset!r} must be finite and >= 0")

    for charge in ChargeState:
        members = g.levels_of(charge)
        zeros = [lv.id for lv in members if lv.energy_offset == 0.0]
        if len(zeros) != 1:
            violations.append(
                f"charge {charge.value}: expected exactly one zero-offset ground level, found {zeros}"
            )
        elif g.level(zeros[0]).role != Role.GROUND:
            violations.append(f"level {zeros[0]}: zero-offset level must have ground role")
        if charge not in g.references:
            violations.append(f"charge {charge.value}: missing ZPL reference frequency")

    by_id = {lv.id: lv for lv in g.levels}
    K = TransitionKind
    for tr in g.transitions:
        src, dst = by_id.get(tr.source), by_id.get(tr.target)
        if src is None or dst is None:
            violations.append(f"transition {tr.name}: references unknown level")
            continue
        if not (math.isfinite(tr.weight) and tr.weight >= 0):
            violations.append(f"transition {tr.name}: weight must be finite and >= 0")
        cross = src.charge != dst.charge
        if tr.kind == K.IONIZATION:
            if not (src.charge == ChargeState.NEGATIVE and src.role == Role.OPTICAL_EXCITED):
                violations.append(f"transition {tr.name}: ionization must originate from an NV- optical excited level")
            elif not (dst.charge == ChargeState.NEUTRAL and dst.role == Role.GROUND):
                violations.append(f"transition {tr.name}: ionization must end in the NV0 ground level")
        elif tr.kind == K.RECOMBINATION:
            if not (src.charge == ChargeState.NEUTRAL and src.role == Role.OPTICAL_EXCITED):
                violations.append(f"transition {tr.name}: recombination must originate from the NV0 optical excited level")
            elif not (dst.charge == ChargeState.NEGATIVE and dst.role == Role.GROUND):
                violations.append(f"transition {tr.name}: recombination must end in an NV- ground level")
        elif cross:
            violations.append(f"transition {tr.name}: only ionization/recombination may cross charge states")
        elif tr.kind == K.OPTICAL_EXCITATION and tr.rate_law != RateLaw.LASER_LORENTZIAN:
            violations.append(f"transition {tr.name}: optical excitation must use a laser rate law")

    # connectivity within each charge state, ignoring charge-conversion edges
    if not violations:
        for charge in ChargeState:
            members = {lv.id for lv in g.levels_of(charge)}
            if not members:
                continue
            nbrs: dict[str, set[str]] = {m: set() for m in members}
            for tr in g.transitions:
                if tr.kind in (K.IONIZATION, K.RECOMBINATION):
                    continue
                if tr.source in members and tr.target in members:
                    nbrs[tr.source].add(tr.target)
                    nbrs[tr.target].add(tr.source)
            start = next(iter(sorted(members)))
            stack, reached = [start], {start}
            while stack:
                for nb in nbrs[stack.pop()]:
                    if nb not in reached:
                        reached.add(nb)
                        stack.append(nb)
            if reached != members:
                violations.append(
                    f"charge {charge.value}: levels {sorted(members - reached)} disconnected from {start}"
                )
    return violations


def graph_to_json(g: LevelGraph) -> str:
    """Serialise a graph to the documented JSON schema ``nvcharge.levelgraph/1``."""
    doc = {
        "schema": GRAPH_SCHEMA,
        "references": {c.value: f for c, f in sorted(g.references.items(), key=lambda kv: kv[0].value)},
        "levels": [
            {
                "id": lv.id,
                "charge": lv.charge.value,
                "label": lv.label,
                "energy_offset": lv.energy_offset,
                "role": lv.role.value,
            }
            for lv in g.levels
        ],
        "transitions": [
            {
                "from": tr.source,
                "to": tr.target,
                "kind": tr.kind.value,
                "rate_law": tr.rate_law.value,
                "parameter": tr.parameter,
                "weight": tr.weight,
            }
            for tr in g.transitions
        ],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False)


def graph_from_json(text: str) -> LevelGraph:
    doc = json.loads(text)
    if doc.get("schema") != GRAPH_SCHEMA:
        raise GraphError(f"unsupported graph schema {doc.get('schema')!r}")
    try:
        levels = tuple(
            Level(d["id"], ChargeState(d["charge"]), d["label"], float(d["energy_offset"]), Role(d["role"]))
            for d in doc["levels"]
        )
        transitions = tuple(
            TransitionTemplate(
                d["from"], d["to"], TransitionKind(d["kind"]), RateLaw(d["rate_law"]),
                d["parameter"], float(d.get("weight", 1.0)),
            )
            for d in doc["transitions"]
        )
        refs = {ChargeState(k): float(v) for k, v in doc["references"].items()}
    except (KeyError, ValueError, TypeError) as exc:
        raise GraphError(f"malformed graph document: {exc}") from exc
    return LevelGraph(levels, transitions, refs)
