import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import voigt_profile
from sklearn.base import clone

from nvcharge.analysis import (BandResult, LorentzianLineFit, PowerLawRegressor, RepumpScanModel, SweepRecord,
                               SwitchingEventDetector, accumulate_ple, count_switching_events, fit_lorentzian,
                               fit_power_law, lorentzian, repump_band_scan, stability_ratio, switching_statistics)
from nvcharge.diffusion import JumpModel
from nvcharge.engine import EventKind, simulate
from nvcharge.levels import ChargeState, build_default_graph
from nvcharge.optics import RateParams
from nvcharge.protocol import power_series_switching

G = build_default_graph()
NEG = {lv.id: lv.charge is ChargeState.NEGATIVE for lv in G.levels}


# --------------------------------------------------------------- switching

def test_constant_bright_trace():
    assert count_switching_events(np.full(500, 40.0)) == 0


def test_constructed_trace_two_events():
    trace = np.concatenate([np.full(50, 40), np.zeros(50), np.full(50, 40), np.zeros(50)])
    assert count_switching_events(trace) == 2
    assert count_switching_events(trace, on_threshold=10.0, off_run_length=5) == 2


def test_empty_trace():
    assert count_switching_events(np.array([])) == 0


def test_short_dips_not_counted():
    trace = np.full(300, 40.0)
    trace[100:103] = 0  # shorter than the run length
    trace[200:210] = 0
    assert count_switching_events(trace, off_run_length=5) == 1


def test_threshold_relative_scale_invariance():
    rng = np.random.default_rng(1)
    trace = np.where(rng.random(3000) < 0.01, 0, 1).cumsum() % 2 * rng.poisson(30, 3000)
    for s in (0.5, 3.0, 10.0):
        assert count_switching_events(trace * s) == count_switching_events(trace)
        assert count_switching_events(trace * s, on_threshold=9.0 * s) == count_switching_events(
            trace, on_threshold=9.0)


def _dark_run_oracle(tr, run_length=5, fraction=0.3):
    """Switching events reconstructed from the engine's own charge log."""
    n, bw = tr.counts.size, tr.bin_width
    nvm = np.zeros(n)
    t0, state = 0.0, True
    charge = [e for e in tr.events
              if e.kind in (EventKind.IONIZATION, EventKind.RECOMBINATION, EventKind.GREEN_REPUMP)]
    segments = []
    for e in charge:
        segments.append((t0, e.time, state))
        t0, state = e.time, NEG[e.payload["to"]]
    segments.append((t0, n * bw, state))
    for a, b, bright in segments:
        if not bright or b <= a:
            continue
        for i in range(int(a // bw), min(int(b // bw), n - 1) + 1):
            nvm[i] += max(0.0, min(b, (i + 1) * bw) - max(a, i * bw))
    dark = nvm / bw < fraction
    events, i = 0, 0
    while i < n:
        if dark[i]:
            j = i
            while j < n and dark[j]:
                j += 1
            events += (j - i >= run_length) and i > 0
            i = j
        else:
            i += 1
    return events


def test_detector_matches_event_log():
    tr = simulate(power_series_switching(red_power=5e-6, scans=1, sweeps=300), seed=8, bin_width=40e-6,
                  jumps=JumpModel.frozen())
    detected = switching_statistics(tr, off_run_length=5).events
    oracle = _dark_run_oracle(tr)
    assert oracle > 300
    assert abs(detected - oracle) <= max(1, oracle / 100)


def test_switching_detector_estimator():
    X = np.vstack([np.concatenate([np.full(50, 40), np.zeros(50)] * 3),
                   np.full(300, 40.0)])
    det = SwitchingEventDetector().fit(X)
    out = det.transform(X)
    assert out[:, 0].tolist() == [3, 0]
    assert clone(det).get_params() == det.get_params()
    assert det.set_params(off_run_length=60).fit(X).transform(X)[0, 0] == 0


# --------------------------------------------------------------- power law

@pytest.mark.parametrize("k", [0.5, 1.0, 1.9, 2.0])
def test_power_law_noiseless(k):
    x = np.logspace(-6, -5, 5)
    r = fit_power_law(np.column_stack([x, 3.0 * x**k]))
    assert abs(r.exponent - k) < 1e-9
    assert r.stderr_exponent < 1e-9
    assert r.r_squared == pytest.approx(1.0)


def test_power_law_invariances():
    rng = np.random.default_rng(3)
    x = np.logspace(0, 1, 6)
    y = 2 * x**1.9 * rng.lognormal(0, 0.1, 6)
    base = fit_power_law(np.column_stack([x, y]))
    for a, b in ((7.0, 1.0), (1.0, 0.01), (1e-6, 1e3)):
        r = fit_power_law(np.column_stack([a * x, b * y]))
        assert r.exponent == pytest.approx(base.exponent, abs=1e-9)
        assert r.stderr_exponent == pytest.approx(base.stderr_exponent, rel=1e-6)


@pytest.mark.parametrize("pts", [[(1, 1), (2, 4)], [(1, 1), (2, 0), (3, 9)], [(0, 1), (2, 4), (3, 9)],
                                 [(-1, 1), (2, 4), (3, 9)]])
def test_power_law_rejects(pts):
    with pytest.raises(ValueError):
        fit_power_law(pts)


def test_power_law_regressor():
    x = np.logspace(-6, -5, 6)
    est = PowerLawRegressor().fit(x.reshape(-1, 1), 5 * x**2)
    assert est.exponent_ == pytest.approx(2.0, abs=1e-9)
    assert est.predict([2e-6]) == pytest.approx(5 * 4e-12)
    assert est.score(x.reshape(-1, 1), 5 * x**2) == pytest.approx(1.0)
    assert clone(est).get_params() == {}


# --------------------------------------------------------------- PLE

GRID = np.linspace(-1e9, 1e9, 801)


def _sweep(center, fwhm=30e6, height=20.0):
    return SweepRecord(GRID, lorentzian(GRID, center, fwhm, height))


def test_one_sweep_is_the_spectrum():
    rec = _sweep(1e7)
    s = accumulate_ple([rec])
    assert s.n_sweeps == 1 and np.array_equal(s.counts, rec.counts)


def test_identical_sweeps_scale():
    s = accumulate_ple([_sweep(0.0)] * 7)
    assert np.allclose(s.counts, 7 * _sweep(0.0).counts)
    assert np.all(np.diff(s.frequencies) > 0)


def test_permutation_invariance():
    recs = [_sweep(c) for c in np.linspace(-2e8, 2e8, 9)]
    a = accumulate_ple(recs)
    b = accumulate_ple(recs[::-1])
    assert np.allclose(a.counts, b.counts)
    assert sorted(a.centers) == pytest.approx(sorted(b.centers))


def test_grid_mismatch():
    with pytest.raises(ValueError):
        accumulate_ple([_sweep(0.0), SweepRecord(GRID[:-1], np.ones(GRID.size - 1))])


def test_centers_and_validity():
    recs = [_sweep(5e7), SweepRecord(GRID, np.zeros(GRID.size))]
    s = accumulate_ple(recs)
    assert s.valid.tolist() == [True, False]
    assert s.centers[0] == pytest.approx(5e7, abs=1e5)


def _voigt_fwhm(sigma, fwhm):
    f = lambda x: voigt_profile(x, sigma, fwhm / 2) - voigt_profile(0.0, sigma, fwhm / 2) / 2
    return 2 * brentq(f, 0.0, 20 * (sigma + fwhm))


def test_jittered_sweeps_match_convolution():
    sigma, h = 120e6, 30e6
    centers = np.random.default_rng(5).normal(0, sigma, 3000)
    spec = accumulate_ple([_sweep(c, h) for c in centers])
    assert spec.fwhm() == pytest.approx(_voigt_fwhm(sigma, h), rel=0.10)


def test_lorentzian_fit_recovers_line():
    y = lorentzian(GRID, -3e7, 40e6, 50.0, 2.0)
    r = fit_lorentzian(GRID, y)
    assert r.converged
    assert r.center == pytest.approx(-3e7, abs=1e3) and r.fwhm == pytest.approx(40e6, rel=1e-6)
    est = LorentzianLineFit().fit(GRID, y)
    assert est.fwhm_ == pytest.approx(40e6, rel=1e-6)
    assert est.predict(GRID) == pytest.approx(y, rel=1e-6)


def test_lorentzian_fit_fallback_flagged():
    y = np.zeros(GRID.size)
    y[400] = 1.0
    y[401] = 1.0
    r = fit_lorentzian(GRID[398:404], y[398:404])
    assert r.center == pytest.approx(GRID[400:402].mean())


# --------------------------------------------------------------- stability ratio

def _spectrum_with_centers(centers):
    return accumulate_ple([_sweep(c, 10e6, 50.0) for c in centers])


def test_stability_ratio_identical():
    c = np.random.default_rng(0).normal(0, 50e6, 40)
    s = _spectrum_with_centers(c)
    assert stability_ratio(s, s, homogeneous_fwhm=1e6) == pytest.approx(1.0)


def test_stability_ratio_gaussian_scaling():
    from scipy.stats import norm
    q = norm.ppf((np.arange(2000) + 0.5) / 2000)
    g = _spectrum_with_centers(4 * 40e6 * q)
    y = _spectrum_with_centers(40e6 * q)
    assert stability_ratio(g, y, homogeneous_fwhm=1e6) == pytest.approx(4.0, rel=0.10)


def test_stability_ratio_needs_centers():
    few = _spectrum_with_centers(np.zeros(5))
    many = _spectrum_with_centers(np.linspace(-1e7, 1e7, 30))
    with pytest.raises(ValueError):
        stability_ratio(few, many)


# --------------------------------------------------------------- band scan

FAST = dict(points_per_band=200, red_points=201, red_span=1e9, solver="ode")


def test_band_containing_zpl_recovers():
    w = RateParams().nv0_homogeneous_fwhm
    (r,) = repump_band_scan([(-2 * w, 2 * w)], RepumpScanModel(**FAST))
    assert r.recovered and r.diagnostic == ""


def test_band_far_from_zpl_does_not_recover():
    (r,) = repump_band_scan([(500e9, 502e9)], RepumpScanModel(**FAST))
    assert not r.recovered


def test_band_scan_kmc():
    w = RateParams().nv0_homogeneous_fwhm
    m = RepumpScanModel(points_per_band=200, red_points=201, red_span=1e9, repetitions=4, seed=3)
    near, far = repump_band_scan([(-2 * w, 2 * w), (500e9, 502e9)], m)
    assert near.recovered and near.bright_fraction == 1.0
    assert not far.recovered and far.bright_fraction == 0.0


def test_zero_width_band():
    (r,) = repump_band_scan([(1e9, 1e9)], RepumpScanModel(**FAST))
    assert isinstance(r, BandResult) and not r.recovered and "zero-width" in r.diagnostic


def test_overlapping_bands_rejected():
    with pytest.raises(ValueError):
        repump_band_scan([(0.0, 2e9), (1e9, 3e9)], RepumpScanModel(**FAST))


def test_estimators_are_deterministic():
    x = np.logspace(0, 1, 5)
    y = x**2 * np.array([1.0, 1.1, 0.9, 1.05, 0.95])
    assert fit_power_law(np.column_stack([x, y])) == fit_power_law(np.column_stack([x, y]))
    recs = [_sweep(c) for c in (0.0, 1e7, -2e7)]
    a, b = accumulate_ple(recs), accumulate_ple(recs)
    assert np.array_equal(a.centers, b.centers) and np.array_equal(a.counts, b.counts)
