"""Spectral diffusion of the two zero-phonon lines.

Photo-events shift the NV- line by zero-mean Gaussian jumps.  Recombination
and ionization jumps accumulate (an unbounded random walk).  A green pulse
rearranges the whole charge environment, so by default it re-draws the NV-
line around its mean instead of adding to it; ``green_redraw=False`` makes
green jumps accumulate as well.  The NV0 line is re-drawn around its mean at
the start of every sweep.  Each jump is drawn from a stream keyed by ``(seed, event
kind, event count)`` so a trajectory is a pure function of its seed and
event sequence, and scaling one sigma rescales its jumps exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy import optimize

from .levels import ChargeState

__all__ = [
    "SpectralEvent",
    "JumpModel",
    "SpectralState",
    "LinewidthResult",
    "apply_event",
    "effective_linewidth",
    "lorentzian_sum",
]


class SpectralEvent(str, Enum):
    GREEN_PULSE = "GreenPulse"
    RECOMBINATION = "Recombination"
    IONIZATION = "Ionization"
    SWEEP_START = "SweepStart"


_EVENT_INDEX = {ev: i for i, ev in enumerate(SpectralEvent)}


@dataclass(frozen=True)
class JumpModel:
    sigma_green: float = 40e6
    sigma_yellow: float = 2e6
    sigma_ionization: float = 0.0
    nv0_jitter_sigma: float = 120e6
    green_redraw: bool = True

    def __post_init__(self):
        for name in ("sigma_green", "sigma_yellow", "sigma_ionization", "nv0_jitter_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")

    def sigma(self, event: SpectralEvent) -> float:
        return {
            SpectralEvent.GREEN_PULSE: self.sigma_green,
            SpectralEvent.RECOMBINATION: self.sigma_yellow,
            SpectralEvent.IONIZATION: self.sigma_ionization,
            SpectralEvent.SWEEP_START: self.nv0_jitter_sigma,
        }[event]

    @classmethod
    def frozen(cls) -> "JumpModel":
        """A model with every jump disabled."""
        return cls(0.0, 0.0, 0.0, 0.0, green_redraw=False)


@dataclass(frozen=True)
class SpectralState:
    nvm_zpl_offset: float = 0.0
    nv0_zpl_offset: float = 0.0
    seed: int = 0
    counts: tuple[int, int, int, int] = (0, 0, 0, 0)

    def offset(self, charge: ChargeState) -> float:
        return self.nvm_zpl_offset if charge == ChargeState.NEGATIVE else self.nv0_zpl_offset


def _draw(state: SpectralState, event: SpectralEvent) -> float:
    k = _EVENT_INDEX[event]
    rng = np.random.default_rng([state.seed, k, state.counts[k]])
    return float(rng.standard_normal())


def apply_event(s: SpectralState, event: SpectralEvent, model: JumpModel) -> SpectralState:
    """Return the spectral state after one photo-event."""
    event = SpectralEvent(event)
    k = _EVENT_INDEX[event]
    sigma = model.sigma(event)
    counts = tuple(c + 1 if i == k else c for i, c in enumerate(s.counts))
    if sigma == 0:
        return replace(s, counts=counts)
    z = _draw(s, event)
    if event is SpectralEvent.SWEEP_START:
        return replace(s, nv0_zpl_offset=sigma * z, counts=counts)
    if event is SpectralEvent.GREEN_PULSE and model.green_redraw:
        return replace(s, nvm_zpl_offset=sigma * z, counts=counts)
    return replace(s, nvm_zpl_offset=s.nvm_zpl_offset + sigma * z, counts=counts)


def lorentzian_sum(x, centers, fwhm):
    """Sum of unit-height Lorentzians of equal ``fwhm`` at ``centers``."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(centers, dtype=float)
    g2 = (0.5 * fwhm) ** 2
    d = x[..., None] - c
    return (g2 / (d * d + g2)).sum(axis=-1)


@dataclass(frozen=True)
class LinewidthResult:
    fwhm: float
    center: float
    multimodal: bool

    def __float__(self):
        return self.fwhm


def effective_linewidth(line_centers, homogeneous_fwhm: float, *, max_grid: int = 200_000) -> LinewidthResult:
    """FWHM of the accumulated spectrum built from per-sweep line centres.

    The accumulated profile is a superposition of identical Lorentzians.  The
    width is that of the lobe holding the global maximum, with both
    half-maximum crossings bracketed and refined by root finding.  With a
    finite number of centres the profile has shot noise, so a dip below half
    maximum that is narrower than the lobe it interrupts is absorbed into the
    lobe; a gap at least as wide as the lobe separates two lines.
    ``multimodal`` is set when a local maximum of at least half the global
    one lies outside the lobe.
    """
    c = np.asarray(line_centers, dtype=float)
    c = c[np.isfinite(c)]
    if c.size < 2:
        raise ValueError("effective_linewidth needs at least 2 line centres")
    if not (math.isfinite(homogeneous_fwhm) and homogeneous_fwhm > 0):
        raise ValueError("homogeneous_fwhm must be finite and > 0")
    h = homogeneous_fwhm
    lo, hi = c.min() - 10 * h, c.max() + 10 * h
    step = max(h / 20, (hi - lo) / max_grid)
    x = np.arange(lo, hi + step, step)
    y = np.empty_like(x)
    for i in range(0, x.size, 4096):
        y[i:i + 4096] = lorentzian_sum(x[i:i + 4096], c, h)

    i_max = int(np.argmax(y))
    f = lambda t: float(lorentzian_sum(np.array([t]), c, h)[0])
    a, b = x[max(i_max - 1, 0)], x[min(i_max + 1, x.size - 1)]
    res = optimize.minimize_scalar(lambda t: -f(t), bounds=(a, b), method="bounded",
                                   options={"xatol": step * 1e-6})
    x_peak = float(res.x) if -res.fun >= y[i_max] else float(x[i_max])
    half = 0.5 * max(-float(res.fun), float(y[i_max]))

    # runs of grid points at or above half maximum; the grid extends 10
    # widths past the outermost centres, so every run is bracketed
    above = np.concatenate([[0], (y >= half).astype(np.int8), [0]])
    d = np.diff(above)
    st = np.nonzero(d == 1)[0]
    en = np.nonzero(d == -1)[0] - 1
    lo_i = hi_i = int(np.nonzero((st <= i_max) & (en >= i_max))[0][0])
    while True:
        width = x[en[hi_i]] - x[st[lo_i]]
        gap_l = x[st[lo_i]] - x[en[lo_i - 1]] if lo_i > 0 else np.inf
        gap_r = x[st[hi_i + 1]] - x[en[hi_i]] if hi_i < st.size - 1 else np.inf
        if min(gap_l, gap_r) >= width:
            break
        if gap_l <= gap_r:
            lo_i -= 1
        else:
            hi_i += 1
    j, k = st[lo_i], en[hi_i]
    left = optimize.brentq(lambda t: f(t) - half, x[j - 1], x[j]) if y[j] > half else float(x[j])
    right = optimize.brentq(lambda t: f(t) - half, x[k], x[k + 1]) if y[k] > half else float(x[k])

    interior = (y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]) & (y[1:-1] >= half)
    peaks = np.nonzero(interior)[0] + 1
    multimodal = bool(np.any((peaks < j) | (peaks > k)))
    return LinewidthResult(fwhm=float(right - left), center=x_peak, multimodal=multimodal)
