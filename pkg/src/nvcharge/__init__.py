"""Charge-state and optical dynamics of a single NV centre at low temperature.

Modules: ``levels`` (level graph), ``optics`` (laser-driven rates),
``diffusion`` (spectral jumps), ``engine`` (KMC and master-equation
solvers), ``protocol`` (experiment sequences), ``analysis`` (switching
events, power-law fits, PLE spectra), ``config``/``io``/``scenarios``/``cli``
(runs and outputs).
"""
from .analysis import (FitResult, PowerLawRegressor, Spectrum, SwitchingEventDetector, accumulate_ple,
                       count_switching_events, fit_power_law, repump_band_scan, stability_ratio)
from .diffusion import JumpModel, SpectralEvent, SpectralState, apply_event, effective_linewidth
from .engine import DetectionModel, Trace, expected_count_rate, kmc_run, ode_solve, simulate, steady_state
from .levels import LevelGraph, build_default_graph, validate_graph
from .optics import (EnergeticsConstants, LaserField, LaserTarget, RateParams, build_rate_matrix,
                     ionization_energetically_allowed)
from .protocol import Protocol, parse_protocol, print_protocol, schedule

__version__ = "0.1.0"
