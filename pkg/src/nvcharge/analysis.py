"""From traces to reported quantities.

Switching-event counting on fluorescence traces, log-log power-law fits,
accumulated PLE spectra with per-sweep line centres, the repump stability
ratio and the yellow band scan.  Everything here is a deterministic function
of its inputs; the band scan seeds its own simulations explicitly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .diffusion import JumpModel, effective_linewidth
from .engine import DetectionModel, Trace, simulate
from .levels import LevelGraph
from .optics import RateParams
from .protocol import parse_protocol
from ._units import format_quantity
from .validation import check_counts, check_positive, check_power_points, check_xy

__all__ = [
    "FitResult",
    "SwitchingStats",
    "SweepRecord",
    "Spectrum",
    "LorentzFit",
    "BandResult",
    "RepumpScanModel",
    "switching_statistics",
    "count_switching_events",
    "fit_power_law",
    "bootstrap_exponent",
    "fit_lorentzian",
    "half_max_width",
    "sweep_records",
    "accumulate_ple",
    "stability_ratio",
    "repump_band_scan",
    "PowerLawRegressor",
    "SwitchingEventDetector",
    "LorentzianLineFit",
]


# ------------------------------------------------------------ switching

@dataclass(frozen=True)
class SwitchingStats:
    events: int
    bright_bins: int
    threshold: float
    bin_width: float | None = None

    @property
    def bright_time(self) -> float:
        if self.bin_width is None:
            raise ValueError("bin width unknown")
        return self.bright_bins * self.bin_width

    @property
    def rate(self) -> float:
        """Switching events per unit bright time (Hz)."""
        t = self.bright_time
        return self.events / t if t > 0 else 0.0


def bright_level(counts: np.ndarray) -> float:
    """Mean of the bins clearly above the overall mean (the bright state)."""
    if counts.size == 0 or not np.any(counts > 0):
        return 0.0
    sel = counts > 0.5 * counts.mean()
    return float(counts[sel].mean())


def _dark_runs(dark: np.ndarray):
    """Start and length of each maximal run of ``True``."""
    d = np.concatenate([[False], dark, [False]]).astype(np.int8)
    edges = np.diff(d)
    starts = np.nonzero(edges == 1)[0]
    stops = np.nonzero(edges == -1)[0]
    return starts, stops - starts


def switching_statistics(trace, on_threshold: float | None = None, off_run_length: int = 5, *,
                         threshold_fraction: float = 0.3) -> SwitchingStats:
    """Bright-to-dark switching events with run-length hysteresis.

    An event is a bin above ``on_threshold`` followed by at least
    ``off_run_length`` consecutive bins at or below it; detection re-arms
    only after the next bright bin.  Without an explicit threshold it is
    ``threshold_fraction`` of the bright-state mean.  ``bright_bins`` counts
    the bins spent armed (dark blips shorter than the run length included).
    """
    bin_width = trace.bin_width if isinstance(trace, Trace) else None
    counts = check_counts(trace.counts if isinstance(trace, Trace) else trace)
    if off_run_length < 1 or int(off_run_length) != off_run_length:
        raise ValueError("off_run_length must be a positive integer")
    if on_threshold is None:
        on_threshold = threshold_fraction * bright_level(counts)
        if on_threshold <= 0:
            return SwitchingStats(0, 0, 0.0, bin_width)
    else:
        check_positive("on_threshold", on_threshold)
    if counts.size == 0:
        return SwitchingStats(0, 0, float(on_threshold), bin_width)
    dark = counts <= on_threshold
    starts, lengths = _dark_runs(dark)
    if not np.any(~dark):
        return SwitchingStats(0, 0, float(on_threshold), bin_width)
    long_ = lengths >= off_run_length
    # a run starting at bin 0 has no preceding bright bin
    events = int(np.count_nonzero(long_ & (starts > 0)))
    lead = int(lengths[0]) if starts.size and starts[0] == 0 else 0
    excluded = int(lengths[long_ & (starts > 0)].sum()) + lead
    return SwitchingStats(events, int(counts.size - excluded), float(on_threshold), bin_width)


def count_switching_events(trace, on_threshold: float | None = None, off_run_length: int = 5, *,
                           threshold_fraction: float = 0.3) -> int:
    """Number of bright-to-dark transitions in a binned trace."""
    return switching_statistics(trace, on_threshold, off_run_length, threshold_fraction=threshold_fraction).events


# ------------------------------------------------------------ power law

@dataclass(frozen=True)
class FitResult:
    exponent: float
    amplitude: float
    stderr_exponent: float
    r_squared: float
    stderr_log_amplitude: float = 0.0
    n_points: int = 0

    def predict(self, power):
        return self.amplitude * np.asarray(power, dtype=float) ** self.exponent


def _unpack_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be a sequence of (power, value) pairs")
    return pts[:, 0], pts[:, 1]


def fit_power_law(points) -> FitResult:
    """Fit ``y = A x**k`` by least squares on log-log coordinates.

    The exponent uncertainty is the 1-sigma error from the residual
    covariance of the linear fit.
    """
    x, y = check_power_points(*_unpack_points(points))
    lx, ly = np.log(x), np.log(y)
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    ssr = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ssr / ss_tot if ss_tot > 0 else 1.0
    # residual-based errors; linregress goes through 1 - r**2, which
    # cancels badly for near-exact fits
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    s2 = ssr / (x.size - 2) if x.size > 2 else float("nan")
    stderr = math.sqrt(s2 / sxx)
    stderr_a = math.sqrt(s2 * (1.0 / x.size + lx.mean() ** 2 / sxx))
    return FitResult(
        exponent=float(res.slope),
        amplitude=float(math.exp(res.intercept)),
        stderr_exponent=stderr,
        r_squared=min(max(r2, 0.0), 1.0),
        stderr_log_amplitude=stderr_a,
        n_points=int(x.size),
    )


def bootstrap_exponent(points, n_boot: int = 2000, seed: int = 0) -> tuple[float, float]:
    """Bootstrap mean and standard deviation of the fitted exponent.

    Resamples (power, value) pairs with replacement; resamples with fewer
    than two distinct powers are dropped.
    """
    x, y = check_power_points(*_unpack_points(points))
    lx, ly = np.log(x), np.log(y)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    bx, by = lx[idx], ly[idx]
    mx, my = bx.mean(axis=1, keepdims=True), by.mean(axis=1, keepdims=True)
    sxx = np.sum((bx - mx) ** 2, axis=1)
    ok = sxx > 0
    slopes = np.sum((bx - mx) * (by - my), axis=1)[ok] / sxx[ok]
    return float(slopes.mean()), float(slopes.std(ddof=1))


class PowerLawRegressor(BaseEstimator, RegressorMixin):
    """Estimator form of :func:`fit_power_law` (X: powers, y: event counts)."""

    def fit(self, X, y):
        X = np.asarray(X, dtype=float).reshape(-1)
        fit = fit_power_law(np.column_stack([X, np.asarray(y, dtype=float).reshape(-1)]))
        self.exponent_ = fit.exponent
        self.amplitude_ = fit.amplitude
        self.stderr_exponent_ = fit.stderr_exponent
        self.r_squared_ = fit.r_squared
        self.result_ = fit
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return self.result_.predict(np.asarray(X, dtype=float).reshape(-1))


class SwitchingEventDetector(BaseEstimator, TransformerMixin):
    """Learns a switching threshold from traces and counts events per trace.

    ``transform`` maps a stack of traces (n_traces, n_bins) to
    ``[events, bright_bins]`` per trace.
    """

    def __init__(self, threshold_fraction: float = 0.3, off_run_length: int = 5, on_threshold=None):
        self.threshold_fraction = threshold_fraction
        self.off_run_length = off_run_length
        self.on_threshold = on_threshold

    def fit(self, X, y=None):
        X = check_counts(np.atleast_2d(X), ndim=2)
        if self.on_threshold is not None:
            self.threshold_ = check_positive("on_threshold", self.on_threshold)
        else:
            self.threshold_ = self.threshold_fraction * bright_level(X.ravel())
        return self

    def transform(self, X):
        check_is_fitted(self, "threshold_")
        X = check_counts(np.atleast_2d(X), ndim=2)
        if self.threshold_ <= 0:
            return np.zeros((X.shape[0], 2), dtype=np.int64)
        out = [switching_statistics(row, self.threshold_, self.off_run_length) for row in X]
        return np.array([[s.events, s.bright_bins] for s in out], dtype=np.int64)


# ------------------------------------------------------------ spectra

def lorentzian(x, center, fwhm, amplitude, offset=0.0):
    g2 = (0.5 * fwhm) ** 2
    return amplitude * g2 / ((np.asarray(x) - center) ** 2 + g2) + offset


@dataclass(frozen=True)
class LorentzFit:
    center: float
    fwhm: float
    amplitude: float
    offset: float
    converged: bool


def fit_lorentzian(x, y, *, fwhm_guess: float | None = None, offset: bool = True) -> LorentzFit:
    """Least-squares Lorentzian started at the highest point.

    Falls back to the weighted centroid (``converged=False``) if the fit
    fails or lands outside the frequency grid.
    """
    x, y = check_xy(x, y, min_points=1)
    i = int(np.argmax(y))
    span = float(np.ptp(x)) if x.size > 1 else 0.0
    step = span / (x.size - 1) if x.size > 1 else 1.0
    w0 = fwhm_guess if fwhm_guess else max(3 * step, 1e-12)
    base = float(np.median(y)) if offset else 0.0
    p0 = [x[i], w0, max(y[i] - base, 1e-12)] + ([base] if offset else [])
    if x.size >= len(p0) + 1 and np.ptp(y) > 0:
        f = lorentzian if offset else (lambda t, c, w, a: lorentzian(t, c, w, a))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                popt, _ = optimize.curve_fit(f, x, y, p0=p0, maxfev=2000)
            c, w, a = popt[:3]
            if x.min() <= c <= x.max() and np.all(np.isfinite(popt)) and a > 0:
                return LorentzFit(float(c), float(abs(w)), float(a), float(popt[3]) if offset else 0.0, True)
        except (RuntimeError, ValueError, optimize.OptimizeWarning):
            pass
    wsum = y.sum()
    c = float(np.sum(x * y) / wsum) if wsum > 0 else float(x[i])
    return LorentzFit(c, float(w0), float(y[i]), 0.0, False)


def half_max_width(x, y, *, baseline: float = 0.0) -> float:
    """FWHM of the lobe around the global maximum by linear interpolation."""
    x, y = check_xy(x, y, min_points=3)
    i = int(np.argmax(y))
    half = baseline + 0.5 * (y[i] - baseline)
    left = np.nonzero(y[:i] < half)[0]
    right = np.nonzero(y[i + 1:] < half)[0]
    if left.size == 0 or right.size == 0:
        raise ValueError("half-maximum not bracketed by the frequency grid")
    j = left[-1]
    k = i + 1 + right[0]
    xl = x[j] + (half - y[j]) * (x[j + 1] - x[j]) / (y[j + 1] - y[j])
    xr = x[k - 1] + (half - y[k - 1]) * (x[k] - x[k - 1]) / (y[k] - y[k - 1])
    return float(xr - xl)


class LorentzianLineFit(BaseEstimator, RegressorMixin):
    """Estimator wrapper of :func:`fit_lorentzian` (X: frequencies, y: counts)."""

    def __init__(self, fwhm_guess=None, offset: bool = True):
        self.fwhm_guess = fwhm_guess
        self.offset = offset

    def fit(self, X, y):
        fit = fit_lorentzian(np.asarray(X, dtype=float).reshape(-1), y, fwhm_guess=self.fwhm_guess,
                             offset=self.offset)
        self.center_, self.fwhm_, self.amplitude_, self.offset_ = fit.center, fit.fwhm, fit.amplitude, fit.offset
        self.converged_ = fit.converged
        return self

    def predict(self, X):
        check_is_fitted(self, "center_")
        return lorentzian(np.asarray(X, dtype=float).reshape(-1), self.center_, self.fwhm_, self.amplitude_,
                          self.offset_)


@dataclass(frozen=True)
class SweepRecord:
    frequencies: np.ndarray
    counts: np.ndarray
    laser: str = ""
    step_id: int = 0
    iteration: int = 0


def sweep_records(trace: Trace, *, step_id: int | None = None, laser: str | None = None) -> list[SweepRecord]:
    """Split the recorded sweep windows of a trace into one record per sweep."""
    out = []
    cur = None
    for w, c in zip(trace.windows, trace.window_counts):
        if not w.record or w.point is None:
            continue
        if step_id is not None and w.step_id != step_id:
            continue
        swept = next((l for l in w.lasers if l.span > 0), None) or next(
            l for l in w.lasers if l.frequency_offset == w.offset)
        if laser is not None and swept.target.value != laser:
            continue
        if w.sweep_start or cur is None:
            cur = ([], [], swept.target.value, w.step_id, w.iteration)
            out.append(cur)
        cur[0].append(w.offset)
        cur[1].append(c)
    return [SweepRecord(np.asarray(f, dtype=float), np.asarray(c, dtype=float), lz, s, it)
            for f, c, lz, s, it in out]


@dataclass(frozen=True)
class Spectrum:
    """Accumulated PLE spectrum and per-sweep line-centre estimates."""

    frequencies: np.ndarray
    counts: np.ndarray
    n_sweeps: int
    centers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    valid: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    fit_ok: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def valid_centers(self) -> np.ndarray:
        return self.centers[self.valid]

    @property
    def peak(self) -> float:
        return float(self.counts.max()) if self.counts.size else 0.0

    def fwhm(self, *, method: str = "interp") -> float:
        if method == "interp":
            return half_max_width(self.frequencies, self.counts, baseline=float(self.counts.min()))
        if method == "lorentzian":
            return fit_lorentzian(self.frequencies, self.counts).fwhm
        raise ValueError(f"unknown method {method!r}")


def accumulate_ple(records: Sequence, *, min_peak_counts: float = 3.0, fwhm_guess: float | None = None) -> Spectrum:
    """Sum sweeps point by point and estimate each sweep's line centre.

    ``records`` are :class:`SweepRecord` objects or ``(frequencies, counts)``
    pairs on a shared grid.  A sweep whose highest point is below
    ``min_peak_counts`` gets an invalid centre.
    """
    recs = [r if isinstance(r, SweepRecord) else SweepRecord(np.asarray(r[0], float), np.asarray(r[1], float))
            for r in records]
    if not recs:
        raise ValueError("accumulate_ple needs at least one sweep")
    grid = recs[0].frequencies
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("sweep frequencies must be strictly increasing")
    counts = np.zeros(grid.size)
    centers = np.full(len(recs), np.nan)
    valid = np.zeros(len(recs), dtype=bool)
    fit_ok = np.zeros(len(recs), dtype=bool)
    for n, r in enumerate(recs):
        if r.frequencies.shape != grid.shape or not np.array_equal(r.frequencies, grid):
            raise ValueError(f"sweep {n} does not share the frequency grid")
        c = check_counts(r.counts)
        if c.shape != grid.shape:
            raise ValueError(f"sweep {n} has {c.size} counts for {grid.size} frequencies")
        counts += c
        if c.max(initial=0) >= min_peak_counts:
            fit = fit_lorentzian(grid, c, fwhm_guess=fwhm_guess, offset=False)
            centers[n], valid[n], fit_ok[n] = fit.center, True, fit.converged
    return Spectrum(grid.copy(), counts, len(recs), centers, valid, fit_ok)


def stability_ratio(green, yellow, *, homogeneous_fwhm: float | None = None, min_centers: int = 20) -> float:
    """Effective linewidth after green repumping over that after yellow.

    Inputs are spectra (their valid centres are used) or arrays of centres.
    """
    h = homogeneous_fwhm if homogeneous_fwhm is not None else RateParams().nvm_fwhm
    check_positive("homogeneous_fwhm", h)

    def centers(s):
        c = s.valid_centers if isinstance(s, Spectrum) else np.asarray(s, dtype=float)
        c = c[np.isfinite(c)]
        if c.size < min_centers:
            raise ValueError(f"stability ratio needs >= {min_centers} valid line centres, got {c.size}")
        return c

    cg, cy = centers(green), centers(yellow)
    return effective_linewidth(cg, h).fwhm / effective_linewidth(cy, h).fwhm


# ------------------------------------------------------------ band scan

@dataclass(frozen=True)
class BandResult:
    start: float
    stop: float
    recovered: bool
    bright_fraction: float
    reference_bright_fraction: float
    brightness: float
    reference: float
    diagnostic: str = ""


@dataclass(frozen=True)
class RepumpScanModel:
    """Settings for the yellow band scan.

    Each band is scanned ``repetitions`` times in a yellow-sweep/red-sweep
    cycle starting from NV0.  A red sweep is bright when its counts exceed
    ``floor_fraction`` of the mean counts of red sweeps started in NV-
    (and the dark-count expectation by 5 sigma).  Red-sweep counts are
    nearly exponentially distributed, since ionization ends the bright
    period at a random point, so the decision uses the fraction of bright
    sweeps rather than mean counts: a band recovers if its bright fraction
    reaches ``threshold_fraction`` of the reference bright fraction.
    """

    graph: LevelGraph | None = None
    params: RateParams | None = None
    detection: DetectionModel | None = None
    jumps: JumpModel | None = None
    yellow_power: float = 100e-9
    points_per_band: int = 1000
    yellow_dwell: float = 1e-3
    red_power: float = 10e-6
    red_span: float = 5e9
    red_points: int = 1001
    red_dwell: float = 1e-3
    repetitions: int = 5
    threshold_fraction: float = 0.5
    floor_fraction: float = 0.05
    seed: int = 0
    solver: str = "kmc"


def _red_sweep_text(m: RepumpScanModel) -> str:
    return (f"sweep red {format_quantity(-m.red_span, 'freq')} {format_quantity(m.red_span, 'freq')} "
            f"n={m.red_points} dwell={format_quantity(m.red_dwell, 'time')} "
            f"power={format_quantity(m.red_power, 'power')} record")


def _run(text, m, seed, initial):
    return simulate(parse_protocol(text), seed=seed if m.solver == "kmc" else None, graph=m.graph, params=m.params,
                    detection=m.detection, jumps=m.jumps, bin_width=max(m.red_dwell, m.yellow_dwell) * 100,
                    initial_level=initial, solver=m.solver)


def repump_band_scan(bands: Sequence[tuple[float, float]], model: RepumpScanModel | None = None) -> list[BandResult]:
    """Recovery flag per yellow band (offsets in Hz from the NV0 line).

    A zero-width band is not scanned: it reports ``recovered=False`` with a
    diagnostic.  With the master-equation solver, sweep counts are
    expectations and a sweep's "bright" weight is its expected counts
    relative to the reference, capped at 1.
    """
    m = model or RepumpScanModel()
    b = [(float(lo), float(hi)) for lo, hi in bands]
    for lo, hi in b:
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ValueError(f"invalid band ({lo}, {hi})")
    order = sorted(range(len(b)), key=lambda i: b[i])
    for i, j in zip(order, order[1:]):
        if b[j][0] < b[i][1]:
            raise ValueError(f"bands {b[i]} and {b[j]} overlap")

    red = _red_sweep_text(m)
    n_ref = m.repetitions if m.solver == "kmc" else 1
    ref_counts = np.array([_run(f"mw on\n{red}\n", m, [m.seed, 0, r], "g0").window_counts.sum()
                           for r in range(n_ref)], dtype=float)
    reference = float(ref_counts.mean())
    dark = (m.detection or DetectionModel()).dark_count_rate * m.red_points * m.red_dwell
    floor = max(m.floor_fraction * reference, dark + 5 * math.sqrt(dark))

    def bright(counts):
        counts = np.asarray(counts, dtype=float)
        if m.solver == "kmc":
            return float(np.mean(counts > floor)) if counts.size else 0.0
        return float(np.mean(np.minimum(counts / reference, 1.0))) if reference > 0 else 0.0

    ref_bright = bright(ref_counts)
    out = []
    for n, (lo, hi) in enumerate(b):
        if hi == lo:
            out.append(BandResult(lo, hi, False, 0.0, ref_bright, 0.0, reference,
                                  "zero-width band: nothing scanned"))
            continue
        yellow = (f"sweep yellow {format_quantity(lo, 'freq')} {format_quantity(hi, 'freq')} "
                  f"n={m.points_per_band} dwell={format_quantity(m.yellow_dwell, 'time')} "
                  f"power={format_quantity(m.yellow_power, 'power')}")
        text = f"mw on\nrepeat {m.repetitions} {{\n  {yellow}\n  {red}\n}}\n"
        tr = _run(text, m, [m.seed, n + 1], "g0p")
        per_sweep = [r.counts.sum() for r in sweep_records(tr, laser="red")]
        frac = bright(per_sweep)
        ok = ref_bright > 0 and frac >= m.threshold_fraction * ref_bright
        diag = "" if ref_bright > 0 else "reference red sweeps detected no NV- fluorescence"
        out.append(BandResult(lo, hi, bool(ok), frac, ref_bright, float(np.mean(per_sweep)), reference, diag))
    return out
