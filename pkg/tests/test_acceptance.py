"""One test per acceptance criterion, at the stated tolerances."""
import dataclasses
import time

import numpy as np
import pytest
from hypothesis import given, settings

from nvcharge.analysis import effective_linewidth, fit_power_law
from nvcharge.config import load_config
from nvcharge.diffusion import SpectralState
from nvcharge.engine import DetectionModel, kmc_run, ode_solve, steady_state
from nvcharge.levels import build_default_graph
from nvcharge.optics import (EnergeticsConstants, LaserField, LaserTarget, RateParams, build_rate_matrix,
                             ionization_energetically_allowed)
from nvcharge.protocol import ProtocolSyntaxError, builtin_protocols, parse_protocol, print_protocol
from nvcharge.scenarios import fig3_spectra, run_scenario

from .strategies import protocols
from .test_engine import FROZEN, _batched_kmc, _random_config

G = build_default_graph()
IDS = [lv.id for lv in G.levels]
FIRST_RUN: dict = {}


def _run(name, tmp_path_factory, overrides=None):
    cfg = load_config()
    for (section, key), value in (overrides or {}).items():
        cfg.set(section, key, value)
    out = tmp_path_factory.mktemp(name)
    t0 = time.perf_counter()
    res = run_scenario(name, cfg, out)
    return res, out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Scenario runs shared by criteria 1-4 and 9, each timed on its own."""
    cache = {}

    def get(name, overrides=None):
        key = (name, tuple(sorted((overrides or {}).items())))
        if key not in cache:
            cache[key] = _run(name, tmp_path_factory, overrides)
        return cache[key]
    return get


def test_criterion_1_quadratic_ionization(runs, report):
    res, _, dt = runs("fig1c")
    h = res.headline
    ok = 1.75 <= h["exponent"] <= 2.25 and h["stderr_exponent"] < 0.15 and dt < 300
    report(1, ok, f"exponent={h['exponent']:.3f} stderr={h['stderr_exponent']:.3f} "
                  f"bootstrap_sd={h['bootstrap_stderr']:.3f} runtime={dt:.1f}s")
    assert len(res.summary["results"]["powers"]) == 6
    assert 1.75 <= h["exponent"] <= 2.25
    assert h["stderr_exponent"] < 0.15
    assert dt < 300


def test_criterion_2_ionization_gated_ple(runs, report):
    res, _, dt = runs("fig2a")
    h = res.headline
    ratio = np.inf if h["peak_ratio_infinite"] else h["peak_ratio"]
    ok = ratio >= 10 and dt < 120 and res.summary["results"]["n_sweeps"] == 200
    report(2, ok, f"peak on={h['peak_on_resonance']:.0f} detuned={h['peak_detuned']:.0f} ratio={ratio:.1f} "
                  f"fwhm={h['nv0_line_fwhm_Hz'] / 1e6:.0f}MHz runtime={dt:.1f}s")
    assert res.summary["results"]["n_sweeps"] == 200
    assert ratio >= 10
    assert dt < 120


def test_criterion_3_narrow_band_recovery(runs, report):
    res, _, dt = runs("fig2d")
    flags = res.headline["recovered"]
    ok = flags == [False, True, False] and dt < 120
    report(3, ok, f"recovered={flags} runtime={dt:.1f}s")
    assert flags == [False, True, False]
    assert dt < 120


def test_criterion_4_stability_ratio(runs, report):
    res, _, dt_base = runs("fig3")
    ratio = res.headline["stability_ratio"]
    cfg = load_config()
    h = cfg.rate_params().nvm_fwhm
    jm = cfg.jump_model()
    t0 = time.perf_counter()
    doubled = fig3_spectra(cfg, jumps=dataclasses.replace(jm, sigma_green=2 * jm.sigma_green),
                           methods=("green",))["green"][0]
    dt = dt_base + time.perf_counter() - t0
    yellow_width = res.summary["results"]["yellow"]["effective_linewidth_Hz"]
    ratio2 = effective_linewidth(doubled.valid_centers, h).fwhm / yellow_width
    scaling = ratio2 / ratio
    ok = ratio >= 4 and 2 * 0.85 <= scaling <= 2 * 1.15 and dt < 180
    report(4, ok, f"ratio={ratio:.2f} ratio(2 sigma_green)={ratio2:.2f} scaling={scaling:.3f} "
                  f"runtime={dt:.1f}s (calibrated reproduction)")
    assert res.summary["results"]["green"]["n_sweeps"] == 100
    assert ratio >= 4
    assert 1.7 <= scaling <= 2.3
    assert dt < 180


def test_criterion_5_energetics(report):
    c = EnergeticsConstants()
    t0 = time.perf_counter()
    at_637 = ionization_energetically_allowed(1.945, c)
    excess = 2 * 1.945 - c.two_photon_ionization_threshold
    at_170 = ionization_energetically_allowed(1.70, c)
    dt = time.perf_counter() - t0
    ok = at_637 and round(excess, 12) == 0.39 and not at_170
    report(5, ok, f"allowed(1.945)={at_637} excess={excess:.2f}eV allowed(1.70)={at_170}")
    assert at_637 is True and at_170 is False
    assert round(excess, 12) == 0.39
    assert dt < 0.01


def test_criterion_6_solver_equivalence(report):
    worst_z = 0.0
    for k in range(5):
        params, lasers, mw_on = _random_config(np.random.default_rng([7, k]))
        p = steady_state(build_rate_matrix(G, lasers, SpectralState(), mw_on, params))
        occ, _ = _batched_kmc(lasers, params, mw_on, seed=100 + k)
        se = occ.std(axis=0, ddof=1) / np.sqrt(len(occ))
        big = p > 1e-3
        worst_z = max(worst_z, float(np.max(np.abs(occ.mean(axis=0) - p)[big] / se[big])))

    params = dataclasses.replace(RateParams(), cycling_isc_rate=0.0, ionization_coeff=0.0)
    k_up = params.red_peak_rate * 5.0
    k_down = params.nvm_spontaneous_rate
    tr = kmc_run(G, [LaserField(LaserTarget.RED_NVM, 5e-5)], 0.02, "g0", None, params, None, 17, jumps=FROZEN)
    two_level = tr.level_time[IDS.index("ex")] / tr.level_time.sum() / (k_up / (k_up + k_down)) - 1

    rm = build_rate_matrix(G, [LaserField(LaserTarget.RED_NVM, 1e-5), LaserField(LaserTarget.YELLOW_NV0, 1e-7),
                               LaserField(LaserTarget.GREEN_OFF_RESONANT, 1e-6)], SpectralState(), True,
                           RateParams())
    p0 = np.eye(len(IDS))[0]
    sol = ode_solve(rm, p0, 0.01, t_eval=np.linspace(0, 0.01, 500))
    p = sol.p if sol.p.shape[0] == len(IDS) else sol.p.T
    drift = float(np.max(np.abs(p.sum(axis=0) - 1)))

    ok = worst_z < 3 and abs(two_level) < 0.02 and drift <= 1e-9
    report(6, ok, f"max |z| over 5 configs={worst_z:.2f} two-level error={100 * two_level:+.2f}% "
                  f"max |sum p - 1|={drift:.1e}")
    assert worst_z < 3
    assert abs(two_level) < 0.02
    assert drift <= 1e-9


def test_criterion_7_fit_oracle(report):
    x = np.logspace(-6, -5, 6)
    errs = {k: abs(fit_power_law(np.column_stack([x, 2.5 * x**k])).exponent - k) for k in (0.5, 1.0, 1.9, 2.0)}
    worst = max(errs.values())
    report(7, worst < 1e-9, f"max |dk|={worst:.1e}")
    assert worst < 1e-9


def _fuzz_inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    seeds = [print_protocol(p).encode() for p in builtin_protocols().values()]
    alphabet = np.frombuffer(b"pulse sweep repeat mw on off record red yellow green {}=@#\n\t "
                             b"0123456789.eE+-uWmsHzkMGnT\xc2\xb5", dtype=np.uint8)
    for i in range(n):
        r = i % 4
        if r == 0:
            yield rng.integers(0, 256, rng.integers(0, 64), dtype=np.uint8).tobytes()
        elif r == 1:
            yield alphabet[rng.integers(0, alphabet.size, rng.integers(0, 96))].tobytes()
        else:
            s = bytearray(seeds[i % len(seeds)])
            for _ in range(int(rng.integers(1, 4))):
                k = int(rng.integers(0, len(s)))
                if r == 2:
                    s[k] = int(rng.integers(0, 256))
                else:
                    s[k:k + 1] = alphabet[rng.integers(0, alphabet.size, rng.integers(0, 4))].tobytes()
            yield bytes(s)


def test_criterion_8_parser_robustness(report):
    n_round = [0]

    @settings(max_examples=1000, deadline=None, database=None)
    @given(protocols)
    def round_trip(p):
        n_round[0] += 1
        assert parse_protocol(print_protocol(p)) == p

    round_trip()
    crashes, accepted, rejected = [], 0, 0
    for data in _fuzz_inputs(1_000_000):
        try:
            parse_protocol(data)
            accepted += 1
        except ProtocolSyntaxError as e:
            rejected += 1
            if e.line < 1:
                crashes.append((data, "no line number"))
        except Exception as e:  # any other exception is a crash
            crashes.append((data, repr(e)))
    ok = n_round[0] >= 1000 and not crashes
    report(8, ok, f"round-trip examples={n_round[0]} fuzzed={accepted + rejected + len(crashes)} "
                  f"(accepted {accepted}, diagnosed {rejected}) crashes={len(crashes)}")
    assert n_round[0] >= 1000
    assert not crashes, crashes[:5]


def test_criterion_9_determinism(runs, tmp_path_factory, report, tmp_path):
    empty = tmp_path / "empty.proto"
    empty.write_text("")
    checked, differ = [], []
    for name, extra in (("fig1c", {}), ("fig2a", {}), ("fig2d", {}), ("fig3", {}),
                        ("custom", {("run", "protocol"): str(empty)}),
                        ("custom", {("run", "protocol"): "GREEN_REPUMP_PLE"})):
        _, out_a, _ = runs(name, extra)
        _, out_b, _ = _run(name, tmp_path_factory, extra)
        same = (out_a / "summary.json").read_bytes() == (out_b / "summary.json").read_bytes()
        checked.append(name)
        if not same:
            differ.append(name)
    report(9, not differ, f"byte-identical summaries for {', '.join(checked)}"
                          + (f"; differing: {differ}" if differ else ""))
    assert not differ
