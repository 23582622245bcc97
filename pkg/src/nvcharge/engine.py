"""Solvers for the time-dependent rate process.

Two interchangeable routes over the same generator: an exact event-by-event
sampler (Gillespie, with rates frozen inside each schedule window) and a
deterministic master-equation integrator.  Both produce a :class:`Trace`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from ._kernel import kmc_advance
from .diffusion import JumpModel, SpectralEvent, SpectralState, apply_event
from .levels import LevelGraph, build_default_graph
from .optics import ChannelCode, ChannelTemplate, LaserField, RateMatrix, RateParams, build_rate_matrix, channel_template
from .protocol import Protocol, Window, count_windows, iter_schedule, total_duration

__all__ = [
    "DetectionModel",
    "EventKind",
    "Event",
    "Trace",
    "OdeSolution",
    "check_generator",
    "ode_solve",
    "steady_state",
    "expected_count_rate",
    "kmc_run",
    "simulate",
    "MAX_BINS",
]

MAX_BINS = 50_000_000


@dataclass(frozen=True)
class DetectionModel:
    """Fraction of emitted photons that end up as counts, per charge state."""

    efficiency_nvm: float = 0.3
    efficiency_nv0: float = 0.05
    dark_count_rate: float = 0.0

    def __post_init__(self):
        for name in ("efficiency_nvm", "efficiency_nv0"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if not (math.isfinite(self.dark_count_rate) and self.dark_count_rate >= 0):
            raise ValueError("dark_count_rate must be finite and >= 0")

    def channel_efficiency(self, rm: RateMatrix) -> np.ndarray:
        emit = rm.code == ChannelCode.EMISSION
        return np.where(emit, np.where(rm.charge_neg, self.efficiency_nvm, self.efficiency_nv0), 0.0)


class EventKind(str, Enum):
    IONIZATION = "Ionization"
    RECOMBINATION = "Recombination"
    GREEN_PULSE = "GreenPulse"
    GREEN_REPUMP = "GreenRepump"
    SWEEP_START = "SweepStart"
    SPECTRAL_JUMP = "SpectralJump"


@dataclass(frozen=True)
class Event:
    time: float
    kind: EventKind
    payload: dict = field(default_factory=dict, compare=True, hash=False)


@dataclass
class Trace:
    """Binned detector counts and event log of one run.

    ``window_counts[i]`` holds the counts detected during schedule window
    ``i``; ``occupancy`` (master-equation runs only) holds level
    probabilities at the end of every bin.
    """

    bin_width: float
    counts: np.ndarray
    window_counts: np.ndarray
    windows: list
    events: list
    level_ids: tuple
    level_time: np.ndarray | None = None
    occupancy: np.ndarray | None = None
    final_level: str | None = None
    final_spectral: SpectralState | None = None
    solver: str = "kmc"

    @property
    def duration(self) -> float:
        return self.windows[-1].stop if self.windows else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.counts.size) * self.bin_width

    def events_of(self, kind) -> list[Event]:
        kind = EventKind(kind)
        return [e for e in self.events if e.kind is kind]

    def record_windows(self) -> list[int]:
        return [i for i, w in enumerate(self.windows) if w.record]


# ------------------------------------------------------------------ ODE

def check_generator(G, *, rtol: float = 1e-12) -> np.ndarray:
    """Return ``G`` as an array after checking the generator property."""
    if isinstance(G, RateMatrix):
        G = G.generator
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError("generator must be a square matrix")
    if not np.all(np.isfinite(G)):
        raise ValueError("generator has non-finite entries")
    off = G - np.diag(np.diag(G))
    if np.any(off < 0):
        raise ValueError("generator has negative off-diagonal rates")
    scale = max(np.abs(G).max(), 1.0)
    if np.any(np.abs(G.sum(axis=0)) > rtol * scale * G.shape[0]):
        raise ValueError("generator columns do not sum to zero")
    return G


@dataclass(frozen=True)
class OdeSolution:
    t: np.ndarray
    p: np.ndarray  # shape (len(t), n_levels)

    @property
    def final(self) -> np.ndarray:
        return self.p[-1]


def _check_prob(p0, n):
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (n,):
        raise ValueError(f"initial vector must have shape ({n},)")
    if np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-9:
        raise ValueError("initial vector must be a probability distribution")
    return p0


def ode_solve(generator, p0, duration: float, tol: float = 1e-10, t_eval=None) -> OdeSolution:
    """Integrate ``dp/dt = G p`` over ``[0, duration]`` with adaptive step control.

    Uses an implicit BDF scheme (the rates span many decades) with the exact
    Jacobian ``G``.
    """
    G = check_generator(generator)
    p0 = _check_prob(p0, G.shape[0])
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if t_eval is None:
        t_eval = np.linspace(0.0, duration, 101) if duration > 0 else np.array([0.0])
    t_eval = np.asarray(t_eval, dtype=float)
    if duration == 0 or not np.any(G):
        return OdeSolution(t_eval, np.tile(p0, (t_eval.size, 1)))
    sol = solve_ivp(lambda t, p: G @ p, (0.0, duration), p0, method="BDF", jac=G,
                    t_eval=t_eval, rtol=tol, atol=tol * 1e-2)
    if not sol.success:
        raise RuntimeError(f"master equation integration failed: {sol.message}")
    return OdeSolution(sol.t, sol.y.T.copy())


def steady_state(generator, p0=None, *, horizon: float | None = None) -> np.ndarray:
    """Stationary distribution of ``G``.

    Without ``p0`` the null space is solved directly (requires a unique
    stationary state).  With ``p0`` the chain is propagated to ``horizon``
    (default: 50 times the slowest relaxation time), which selects the
    stationary state reached from ``p0`` when several exist.
    """
    G = check_generator(generator)
    n = G.shape[0]
    if p0 is None:
        A = np.vstack([G, np.ones((1, n))])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        p, *_ = np.linalg.lstsq(A, b, rcond=None)
        p = np.clip(p, 0.0, None)
        return p / p.sum()
    p0 = _check_prob(p0, n)
    if horizon is None:
        ev = np.linalg.eigvals(G).real
        slow = np.abs(ev[np.abs(ev) > 1e-12 * max(np.abs(ev).max(), 1.0)])
        horizon = 50.0 / slow.min() if slow.size else 0.0
    p = expm(G * horizon) @ p0
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def expected_count_rate(occupancy, rate_matrix: RateMatrix, detection: DetectionModel) -> float:
    """Mean detected count rate (Hz) for a given level occupancy."""
    p = np.asarray(occupancy, dtype=float)
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("occupancy must be a probability vector")
    eff = detection.channel_efficiency(rate_matrix)
    return float(np.sum(rate_matrix.rate * eff * p[rate_matrix.src]) + detection.dark_count_rate)


# ------------------------------------------------------------------ KMC

class _Layout:
    """Channel arrays of a template, grouped by source level for the sampler.

    Dark counts are a self-loop on every level (memoryless, hence exact)
    detected with certainty.
    """

    def __init__(self, template: ChannelTemplate, detection: DetectionModel, n: int):
        self.template = template
        src, dst, code = template.src, template.dst, template.code
        emit = code == ChannelCode.EMISSION
        eff = np.where(emit, np.where(template.charge_neg, detection.efficiency_nvm, detection.efficiency_nv0), 0.0)
        self.dark = detection.dark_count_rate
        if self.dark > 0:
            loops = np.arange(n)
            src = np.concatenate([src, loops])
            dst = np.concatenate([dst, loops])
            code = np.concatenate([code, np.full(n, int(ChannelCode.EMISSION))])
            eff = np.concatenate([eff, np.ones(n)])
        self.order = np.argsort(src, kind="stable")
        self.src = src[self.order]
        self.dst = np.ascontiguousarray(dst[self.order], dtype=np.int64)
        self.code = np.ascontiguousarray(code[self.order], dtype=np.int64)
        self.eff = np.ascontiguousarray(eff[self.order], dtype=np.float64)
        self.ptr = np.concatenate([[0], np.cumsum(np.bincount(self.src, minlength=n))]).astype(np.int64)
        self.n = n

    def rates(self, lasers, spectral, mw_on):
        r = self.template.rates(lasers, spectral, mw_on)
        if self.dark > 0:
            r = np.concatenate([r, np.full(self.n, self.dark)])
        r = np.ascontiguousarray(r[self.order])
        return r, np.bincount(self.src, weights=r, minlength=self.n)


_CHARGE_EVENTS = {
    int(ChannelCode.IONIZATION): EventKind.IONIZATION,
    int(ChannelCode.RECOMBINATION): EventKind.RECOMBINATION,
    int(ChannelCode.GREEN_REPUMP): EventKind.GREEN_REPUMP,
}
_SPECTRAL_TRIGGER = {
    EventKind.IONIZATION: SpectralEvent.IONIZATION,
    EventKind.RECOMBINATION: SpectralEvent.RECOMBINATION,
}


class _Runner:
    """Carries one trajectory across schedule windows."""

    def __init__(self, graph, params, detection, jumps, spectral, rng, bin_width, n_bins, initial_level):
        self.graph = graph
        self.params = params
        self.detection = detection
        self.jumps = jumps
        self.spectral = spectral
        self.rng = rng
        self.bin_width = bin_width
        self.counts = np.zeros(max(n_bins, 1), dtype=np.int64)
        self.occ = np.zeros(graph.n_levels)
        self.state = graph.index(initial_level)
        self.events: list[Event] = []
        self.layout = _Layout(channel_template(graph, params), detection, graph.n_levels)
        self._cache: dict = {}

    def _rates(self, lasers, mw_on):
        s = self.spectral
        key = (lasers, mw_on, s.nvm_zpl_offset, s.nv0_zpl_offset)
        c = self._cache.get(key)
        if c is None:
            if len(self._cache) > 4096:
                self._cache.clear()
            c = self._cache[key] = self.layout.rates(lasers, s, mw_on)
        return c

    def _spectral_event(self, t, ev: SpectralEvent):
        before = self.spectral
        self.spectral = apply_event(before, ev, self.jumps)
        if (self.spectral.nvm_zpl_offset, self.spectral.nv0_zpl_offset) != (before.nvm_zpl_offset,
                                                                             before.nv0_zpl_offset):
            self.events.append(Event(t, EventKind.SPECTRAL_JUMP, {
                "cause": ev.value,
                "nvm_zpl_offset": self.spectral.nvm_zpl_offset,
                "nv0_zpl_offset": self.spectral.nv0_zpl_offset,
            }))

    def run_window(self, lasers, mw_on, t0, t1, *, sweep_start=False, green_pulse=False) -> int:
        if sweep_start:
            self.events.append(Event(t0, EventKind.SWEEP_START, {}))
            self._spectral_event(t0, SpectralEvent.SWEEP_START)
        if green_pulse:
            self.events.append(Event(t0, EventKind.GREEN_PULSE, {}))
            self._spectral_event(t0, SpectralEvent.GREEN_PULSE)
        t = t0
        photons = 0
        ids = self.graph.levels
        lay = self.layout
        while True:
            rate, exit_rate = self._rates(lasers, mw_on)
            self.state, t, k, ph = kmc_advance(self.rng, self.state, t, t1, lay.ptr, lay.dst, rate, lay.code, lay.eff,
                                               exit_rate, self.counts, self.bin_width, self.occ)
            photons += ph
            if k < 0:
                return photons
            kind = _CHARGE_EVENTS[int(lay.code[k])]
            self.events.append(Event(t, kind, {"to": ids[self.state].id}))
            trig = _SPECTRAL_TRIGGER.get(kind)
            if trig is not None:
                self._spectral_event(t, trig)


def _n_bins(duration, bin_width):
    if not (bin_width > 0 and math.isfinite(bin_width)):
        raise ValueError("bin_width must be > 0")
    n = int(math.ceil(duration / bin_width - 1e-9)) if duration > 0 else 0
    if n > MAX_BINS:
        raise ValueError(f"{n} bins exceed the limit of {MAX_BINS}; use a wider bin_width")
    return n


def _defaults(graph, params, detection, jumps):
    return (graph or build_default_graph(), params or RateParams(), detection or DetectionModel(),
            jumps or JumpModel())


def kmc_run(
    graph: LevelGraph | None,
    lasers: Sequence[LaserField],
    duration: float,
    initial_level: str,
    spectral: SpectralState | None,
    params: RateParams | None,
    detection: DetectionModel | None,
    seed,
    *,
    mw_on: bool = False,
    jumps: JumpModel | None = None,
    bin_width: float | None = None,
) -> Trace:
    """Exact stochastic run of a single step with constant laser settings."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    graph, params, detection, jumps = _defaults(graph, params, detection, jumps)
    bin_width = bin_width or (duration if duration > 0 else 1.0)
    lasers = tuple(sorted(lasers, key=lambda l: l.id))
    rng = np.random.default_rng(seed)
    spectral = spectral or SpectralState(seed=int(np.random.SeedSequence(seed).generate_state(1)[0]))
    runner = _Runner(graph, params, detection, jumps, spectral, rng, bin_width, _n_bins(duration, bin_width),
                     initial_level)
    win = Window(0.0, float(duration), lasers, mw_on, True, 0)
    photons = runner.run_window(lasers, mw_on, 0.0, float(duration)) if duration > 0 else 0
    counts = runner.counts[:_n_bins(duration, bin_width)]
    return Trace(bin_width, counts, np.array([photons]), [win], runner.events, tuple(lv.id for lv in graph.levels),
                 level_time=runner.occ, final_level=graph.levels[runner.state].id,
                 final_spectral=runner.spectral)


def simulate(
    protocol: Protocol | Iterable[Window],
    *,
    seed=None,
    graph: LevelGraph | None = None,
    params: RateParams | None = None,
    detection: DetectionModel | None = None,
    jumps: JumpModel | None = None,
    bin_width: float = 1e-3,
    initial_level: str = "g0",
    spectral: SpectralState | None = None,
    solver: str = "kmc",
) -> Trace:
    """Run a whole protocol with either solver.

    The KMC route needs a seed.  Spectral jumps only occur in the KMC route;
    the master-equation route keeps the initial spectral offsets.
    """
    graph, params, detection, jumps = _defaults(graph, params, detection, jumps)
    if isinstance(protocol, Protocol):
        duration = total_duration(protocol)
        windows = iter_schedule(protocol)
    else:
        windows = list(protocol)
        duration = windows[-1].stop if windows else 0.0
    n_bins = _n_bins(duration, bin_width)
    if solver == "ode":
        return _simulate_ode(windows, graph, params, detection, bin_width, n_bins, initial_level,
                             spectral or SpectralState())
    if solver != "kmc":
        raise ValueError(f"unknown solver {solver!r}")
    if seed is None:
        raise ValueError("a seed is required for KMC runs")
    ss = np.random.SeedSequence(seed)
    kmc_seq, diff_seq = ss.spawn(2)
    rng = np.random.default_rng(kmc_seq)
    if spectral is None:
        spectral = SpectralState(seed=int(diff_seq.generate_state(1)[0]))
    runner = _Runner(graph, params, detection, jumps, spectral, rng, bin_width, n_bins, initial_level)
    wins, wcounts = [], []
    for w in windows:
        wins.append(w)
        wcounts.append(runner.run_window(w.lasers, w.mw_on, w.start, w.stop, sweep_start=w.sweep_start,
                                         green_pulse=w.step_start and w.green_on))
    return Trace(bin_width, runner.counts[:n_bins], np.asarray(wcounts, dtype=np.int64), wins, runner.events,
                 tuple(lv.id for lv in graph.levels), level_time=runner.occ,
                 final_level=graph.levels[runner.state].id, final_spectral=runner.spectral)


def _propagators(G: np.ndarray, tau: float):
    """``expm(G tau)`` and its time integral, via one augmented exponential."""
    n = G.shape[0]
    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = G
    A[:n, n:] = np.eye(n)
    E = expm(A * tau)
    return E[:n, :n], E[:n, n:]


def _simulate_ode(windows, graph, params, detection, bin_width, n_bins, initial_level, spectral) -> Trace:
    n = graph.n_levels
    p = np.zeros(n)
    p[graph.index(initial_level)] = 1.0
    counts = np.zeros(max(n_bins, 0))
    occupancy = np.zeros((max(n_bins, 0), n))
    level_time = np.zeros(n)
    wins, wcounts = [], []
    cache: dict = {}
    for w in windows:
        wins.append(w)
        key = (w.lasers, w.mw_on)
        entry = cache.get(key)
        if entry is None:
            rm = build_rate_matrix(graph, w.lasers, spectral, w.mw_on, params)
            eff = detection.channel_efficiency(rm)
            r = np.zeros(n)
            np.add.at(r, rm.src, rm.rate * eff)
            entry = cache[key] = (rm.generator, r, {})
        G, r, props = entry
        # split the window at bin edges
        total = 0.0
        t = w.start
        while t < w.stop:
            b = min(int(t / bin_width + 1e-9), n_bins - 1)
            edge = min((b + 1) * bin_width, w.stop)
            tau = edge - t
            if tau <= 0:
                tau = w.stop - t
            tk = round(tau, 15)
            if tk not in props:
                props[tk] = _propagators(G, tau)
            E, Phi = props[tk]
            integral = Phi @ p
            c = float(r @ integral) + detection.dark_count_rate * tau
            counts[b] += c
            level_time += integral
            total += c
            p = E @ p
            occupancy[b] = p
            t = edge if edge > t else w.stop
        wcounts.append(total)
    return Trace(bin_width, counts, np.asarray(wcounts, dtype=float), wins, [], tuple(lv.id for lv in graph.levels),
                 level_time=level_time, occupancy=occupancy, final_level=None, final_spectral=spectral,
                 solver="ode")
