import math

import numpy as np
import pytest
from scipy.special import voigt_profile

from nvcharge.diffusion import SpectralState
from nvcharge.levels import TransitionKind, build_default_graph
from nvcharge.optics import (ChannelCode, EnergeticsConstants, LaserField, LaserTarget, RateParams, build_rate_matrix,
                             excitation_rate, green_repump_rate, ionization_energetically_allowed,
                             ionization_rate_from_excited, lorentzian_excitation_rate, photon_energy_ev,
                             recombination_rate_from_excited, wavelength_span_to_offsets, wavelength_to_offset)

G = build_default_graph()
P = RateParams()


def _transition(src, dst):
    return next(t for t in G.transitions if t.source == src and t.target == dst
                and t.kind == TransitionKind.OPTICAL_EXCITATION)


def test_lorentzian_closed_form():
    assert lorentzian_excitation_rate(0.0, 10e6, 3.0) == 3.0
    assert lorentzian_excitation_rate(5e6, 10e6, 3.0) == pytest.approx(1.5, rel=1e-15)
    # independent scalar evaluation: (1/2)^2 / (3^2 + (1/2)^2) = 1/37
    assert lorentzian_excitation_rate(30e6, 10e6, 3.0) == pytest.approx(3.0 / 37.0, rel=1e-14)


def test_lorentzian_monotone():
    d = np.linspace(0, 1e9, 200)
    r = [lorentzian_excitation_rate(x, 20e6, 1.0) for x in d]
    assert np.all(np.diff(r) < 0)


@pytest.mark.parametrize("bad", [(math.nan, 1.0, 1.0), (0.0, math.inf, 1.0), (0.0, 0.0, 1.0), (0.0, 1.0, -1.0)])
def test_lorentzian_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        lorentzian_excitation_rate(*bad)


def test_excitation_on_resonance_scales_with_power():
    tr = _transition("g0", "ex")
    line = G.level("ex").energy_offset - G.level("g0").energy_offset - G.references[G.level("g0").charge]
    for power in (1e-6, 1e-5, 3e-5):
        laser = LaserField(LaserTarget.RED_NVM, power, frequency_offset=line)
        r = excitation_rate(laser, tr, G, SpectralState(), P)
        assert r == pytest.approx(P.red_peak_rate * power / P.red_reference_power, rel=1e-12)


def test_excitation_tail_and_zero_power():
    tr = _transition("g0", "ex")
    fwhm = P.nvm_fwhm
    line = G.level("ex").energy_offset - G.references[G.level("g0").charge]
    far = LaserField(LaserTarget.RED_NVM, 1e-5, frequency_offset=line + 10 * fwhm)
    assert excitation_rate(far, tr, G, SpectralState(), P) < 0.01 * P.red_peak_rate
    assert excitation_rate(LaserField(LaserTarget.RED_NVM, 0.0), tr, G, SpectralState(), P) == 0.0


def test_excitation_shift_invariance():
    tr = _transition("g0", "ex")
    base = excitation_rate(LaserField(LaserTarget.RED_NVM, 1e-5, 3e6), tr, G, SpectralState(), P)
    for shift in (-1e9, 7e6, 2.5e8):
        r = excitation_rate(LaserField(LaserTarget.RED_NVM, 1e-5, 3e6 + shift), tr, G,
                            SpectralState(nvm_zpl_offset=shift), P)
        assert r == pytest.approx(base, rel=1e-9)


def test_excitation_target_mismatch():
    with pytest.raises(ValueError):
        excitation_rate(LaserField(LaserTarget.YELLOW_NV0, 1e-7), _transition("g0", "ex"), G, SpectralState(), P)


def test_laser_linewidth_convolution_matches_voigt():
    # Gaussian laser lineshape (FWHM w) convolved with the Lorentzian line
    tr = _transition("g0p", "ep")
    w, gamma = 100e6, P.nv0_homogeneous_fwhm
    sigma = w / (2 * math.sqrt(2 * math.log(2)))
    for det in (0.0, 40e6, 150e6):
        laser = LaserField(LaserTarget.YELLOW_NV0, P.yellow_reference_power, frequency_offset=det, linewidth=w)
        r = excitation_rate(laser, tr, G, SpectralState(), P)
        oracle = P.yellow_peak_rate * voigt_profile(det, sigma, gamma / 2) * math.pi * gamma / 2
        assert r == pytest.approx(oracle, rel=1e-6)


def test_charge_step_rates_linear():
    for f, coeff in ((ionization_rate_from_excited, P.ionization_coeff),
                     (recombination_rate_from_excited, P.recombination_coeff),
                     (green_repump_rate, P.green_recovery_rate)):
        assert f(0.0, P) == 0.0
        assert f(2e-6, P) == pytest.approx(2 * f(1e-6, P), rel=1e-15)
        assert f(1e-6, P) == pytest.approx(coeff * 1e-6)


def test_energetics():
    c = EnergeticsConstants()
    assert ionization_energetically_allowed(1.945, c)
    assert round(2 * 1.945 - c.two_photon_ionization_threshold, 12) == 0.39
    assert not ionization_energetically_allowed(1.70, c)
    assert ionization_energetically_allowed(1.75, c)
    e = np.linspace(1.5, 2.0, 501)
    flags = [ionization_energetically_allowed(x, c) for x in e]
    assert flags == sorted(flags)
    assert 2 * c.nvm_zpl_energy >= c.two_photon_ionization_threshold
    assert photon_energy_ev(637e-9) == pytest.approx(1.946, abs=2e-3)


def test_generator_all_off():
    rm = build_rate_matrix(G, [], SpectralState(), False, P)
    allowed = {ChannelCode.EMISSION, ChannelCode.SILENT}
    assert {ChannelCode(c) for c in np.unique(rm.code)} <= allowed
    Gm = rm.generator
    off = Gm - np.diag(np.diag(Gm))
    assert np.all(off >= 0)
    assert np.allclose(Gm.sum(axis=0), 0, atol=1e-12 * np.abs(Gm).max())


def test_generator_columns_sum_zero_with_lasers():
    lasers = [LaserField(LaserTarget.RED_NVM, 1e-5), LaserField(LaserTarget.YELLOW_NV0, 1e-7),
              LaserField(LaserTarget.GREEN_OFF_RESONANT, 1e-3)]
    Gm = build_rate_matrix(G, lasers, SpectralState(), True, P).generator
    assert np.all(np.abs(Gm.sum(axis=0)) <= 1e-12 * np.abs(Gm).max())


def test_mw_toggle_changes_only_ground_mixing():
    a = build_rate_matrix(G, [], SpectralState(), False, P).generator
    b = build_rate_matrix(G, [], SpectralState(), True, P).generator
    ids = [lv.id for lv in G.levels]
    i0, i1 = ids.index("g0"), ids.index("g1")
    changed = {(int(r), int(c)) for r, c in zip(*np.nonzero(a != b))}
    assert changed == {(i0, i0), (i1, i1), (i0, i1), (i1, i0)}


def test_green_acts_only_on_nv0():
    rm = build_rate_matrix(G, [LaserField(LaserTarget.GREEN_OFF_RESONANT, 1e-3)], SpectralState(), False, P)
    green = rm.code == ChannelCode.GREEN_REPUMP
    assert green.any()
    assert not rm.charge_neg[green].any()


def test_wavelength_span():
    lo, hi = wavelength_span_to_offsets(574.015, 576.015, 575.015)
    c = 299792458.0
    assert lo == pytest.approx(c / 576.015e-9 - c / 575.015e-9, rel=1e-12)
    assert hi == pytest.approx(c / 574.015e-9 - c / 575.015e-9, rel=1e-12)
    assert lo == pytest.approx(-906e9, rel=5e-3) and hi == pytest.approx(906e9, rel=5e-3)
    assert lo < 0 < hi
    assert wavelength_to_offset(575.015, 575.015) == 0.0


# --------------------------------------------------------------- engine-level anchors

def _p_nvm(trace):
    neg = np.array([lv.charge.name == "NEGATIVE" for lv in G.levels])
    occ = trace.occupancy[-1] if trace.occupancy.shape[-1] == neg.size else trace.occupancy[:, -1]
    return float(occ[neg].sum())


def test_yellow_5nW_recovers_within_a_sweep():
    from nvcharge.engine import EventKind, simulate
    from nvcharge.protocol import parse_protocol
    sweep = "sweep yellow -1500MHz 1500MHz n=301 dwell=1ms power=5nW"
    duration = 0.301
    proto = parse_protocol(f"repeat 4 {{\n  {sweep}\n}}\n")
    times = []
    for seed in range(40):
        tr = simulate(proto, seed=[1, seed], initial_level="g0p", bin_width=0.1)
        rec = tr.events_of(EventKind.RECOMBINATION)
        times.append(rec[0].time if rec else tr.duration)
    assert np.mean(times) <= duration


def test_detuned_yellow_rarely_recovers():
    from nvcharge.engine import simulate
    from nvcharge.protocol import parse_protocol
    w = P.nv0_homogeneous_fwhm
    res = {}
    for name, det in (("on", 0.0), ("off", 10 * w)):
        txt = f"sweep yellow {det - 2 * w:.0f}Hz {det + 2 * w:.0f}Hz n=41 dwell=1ms power=5nW\n"
        res[name] = _p_nvm(simulate(parse_protocol(txt), solver="ode", initial_level="g0p", bin_width=1e-2))
    assert res["on"] > 0.99
    assert res["off"] < 0.05 * res["on"]


def test_green_pulse_restores_nvm():
    from nvcharge.engine import simulate
    from nvcharge.protocol import green_repump_ple, parse_protocol
    first = green_repump_ple().steps[0]
    txt = f"pulse {first.duration!r}s green=1mW\n"
    p = _p_nvm(simulate(parse_protocol(txt), solver="ode", initial_level="g0p", bin_width=first.duration))
    assert p >= 0.95


def test_unsaturated_ionization_quadratic():
    # ionization flux per unit NV- time over a decade of weak red power:
    # NV- occupancies without the ionizing channel, times the ionizing rates
    from nvcharge.engine import steady_state
    import dataclasses
    no_ion = dataclasses.replace(P, ionization_coeff=0.0)
    fluxes = []
    for power in (1e-7, 1e-6):
        red = [LaserField(LaserTarget.RED_NVM, power)]
        p = steady_state(build_rate_matrix(G, red, SpectralState(), True, no_ion))
        rm = build_rate_matrix(G, red, SpectralState(), True, P)
        ion = rm.code == ChannelCode.IONIZATION
        fluxes.append(float(p[rm.src[ion]] @ rm.rate[ion]))
    assert fluxes[1] / fluxes[0] == pytest.approx(100.0, rel=0.05)
