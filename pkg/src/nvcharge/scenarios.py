"""Named scenarios: the data behind each reproduced figure.

Each scenario splits into independent simulation tasks (one per power,
band, repump method ...), each with its own seed derived from the run seed
and the task index, so results do not depend on the number of workers.
Tasks run in a process pool when ``workers > 1``; results are merged in
task order.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (RepumpScanModel, accumulate_ple, bootstrap_exponent, fit_lorentzian, fit_power_law,
                       repump_band_scan, stability_ratio, sweep_records, switching_statistics)
from .config import RunConfig
from .diffusion import JumpModel, effective_linewidth
from .engine import simulate
from .io import config_hash, write_events_jsonl, write_spectrum, write_summary, write_trace_csv
from .levels import NV0_ZPL_WAVELENGTH, ChargeState
from .optics import ChannelCode, build_rate_matrix, wavelength_span_to_offsets
from .protocol import (Protocol, builtin_protocols, green_repump_ple, ionize_then_nv0_ple, parse_protocol,
                       power_series_switching, total_duration, yellow_repump_ple)

__all__ = ["SCENARIOS", "ScenarioError", "ScenarioResult", "run_scenario", "load_protocol"]

log = logging.getLogger(__name__)

SCENARIOS = ("fig1c", "fig2a", "fig2d", "fig3", "custom")

_SCENARIO_INDEX = {name: i for i, name in enumerate(SCENARIOS)}


class ScenarioError(RuntimeError):
    pass


@dataclass
class ScenarioResult:
    name: str
    summary: dict
    files: list = field(default_factory=list)

    @property
    def headline(self) -> dict:
        return self.summary["headline"]


def _seed(cfg: RunConfig, name: str, task: int) -> list[int]:
    return [int(cfg.seed), _SCENARIO_INDEX[name], int(task)]


def _map(fn, tasks, workers: int):
    # pool.map yields in task order, whatever order the workers finish in
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _header(cfg: RunConfig, name: str) -> dict:
    return {"scenario": name, "seed": cfg.seed, "config_sha256": config_hash(cfg.canonical()),
            "solver": cfg.solver}


# --------------------------------------------------------------- fig1c

def _ionization_rate_ode(task):
    """Ionization events per unit NV- time over one sweep, from the master equation."""
    cfg, power = task
    m = cfg.model_objects()
    proto = power_series_switching(red_power=power, scans=1, sweeps=1, green_power=0.0)
    tr = simulate(proto, solver="ode", bin_width=total_duration(proto), **m)
    # the ionizing step depends on red power only, so any window's rates will do
    rm = build_rate_matrix(m["graph"], tr.windows[0].lasers, None, tr.windows[0].mw_on, m["params"])
    ion = rm.code == ChannelCode.IONIZATION
    k = np.zeros(m["graph"].n_levels)
    np.add.at(k, rm.src[ion], rm.rate[ion])
    neg = np.array([lv.charge == ChargeState.NEGATIVE for lv in m["graph"].levels])
    t_neg = float(tr.level_time[neg].sum())
    return float(tr.level_time @ k) / t_neg if t_neg > 0 else 0.0


def _fig1c_task(task):
    cfg, i, power, write_dir = task
    sc = cfg.values["scenario"]
    proto = power_series_switching(red_power=power, scans=1, sweeps=sc["fig1c_sweeps"],
                                   green_power=sc["fig1c_green_power"])
    # the red laser is held on the line, so spectral jumps are frozen
    model = {**cfg.model_objects(), "jumps": JumpModel.frozen()}
    tr = simulate(proto, seed=_seed(cfg, "fig1c", i), bin_width=sc["fig1c_bin_width"], **model)
    st = switching_statistics(tr, off_run_length=sc["fig1c_off_run_length"])
    files = []
    if write_dir is not None:
        hdr = {**_header(cfg, "fig1c"), "red_power_W": repr(power)}
        files.append(str(write_trace_csv(Path(write_dir) / f"trace_power{i}.csv", tr, hdr)))
        files.append(str(write_events_jsonl(Path(write_dir) / f"events_power{i}.jsonl", tr, hdr)))
    return {
        "power_W": power,
        "switching_events": st.events,
        "bright_time_s": st.bright_time,
        "switching_rate_Hz": st.rate,
        "events_per_1000_sweeps": 1000.0 * st.events / sc["fig1c_sweeps"],
        "ionization_events_logged": len(tr.events_of("Ionization")),
        "threshold_counts_per_bin": st.threshold,
    }, files


def _fig1c(cfg: RunConfig, out: Path | None):
    sc = cfg.values["scenario"]
    powers = np.logspace(math.log10(sc["fig1c_min_power"]), math.log10(sc["fig1c_max_power"]), sc["fig1c_n_powers"])
    if cfg.solver == "ode":
        rates = _map(_ionization_rate_ode, [(cfg, float(p)) for p in powers], cfg.workers)
        rows = [{"power_W": float(p), "ionization_rate_Hz": r} for p, r in zip(powers, rates)]
        points = [(r["power_W"], r["ionization_rate_Hz"]) for r in rows]
        files = []
    else:
        res = _map(_fig1c_task, [(cfg, i, float(p), str(out) if out else None) for i, p in enumerate(powers)],
                   cfg.workers)
        rows = [r for r, _ in res]
        files = [f for _, fs in res for f in fs]
        if any(r["switching_events"] == 0 for r in rows):
            raise ScenarioError("a power produced no switching events; increase fig1c_sweeps")
        points = [(r["power_W"], r["switching_rate_Hz"]) for r in rows]
    fit = fit_power_law(points)
    _, boot_sd = bootstrap_exponent(points, seed=cfg.seed)
    if out is not None:
        p = out / "switching.csv"
        with p.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in r.items()} for r in rows)
        files.append(str(p))
    headline = {"exponent": fit.exponent, "stderr_exponent": fit.stderr_exponent, "bootstrap_stderr": boot_sd,
                "r_squared": fit.r_squared}
    return headline, {"powers": rows, "fit": asdict(fit)}, files


# --------------------------------------------------------------- fig2a

def _fig2a_task(task):
    cfg, i, offset, write_dir = task
    sc = cfg.values["scenario"]
    proto = ionize_then_nv0_ple(repetitions=sc["fig2a_repetitions"], ionizing_power=sc["fig2a_ionizing_power"],
                                red_offset=offset, yellow_power=sc["fig2a_yellow_power"])
    kw = dict(solver=cfg.solver, bin_width=cfg.values["run"]["bin_width"], **cfg.model_objects())
    if cfg.solver == "kmc":
        kw["seed"] = _seed(cfg, "fig2a", i)
    tr = simulate(proto, **kw)
    spec = accumulate_ple(sweep_records(tr, laser="yellow"))
    files = []
    if write_dir is not None:
        hdr = {**_header(cfg, "fig2a"), "red_offset_Hz": repr(offset)}
        tag = "on_resonance" if i == 0 else "detuned"
        files.append(str(write_spectrum(Path(write_dir) / f"nv0_ple_{tag}.txt", spec, hdr)))
        files.append(str(write_trace_csv(Path(write_dir) / f"trace_{tag}.csv", tr, hdr)))
        files.append(str(write_events_jsonl(Path(write_dir) / f"events_{tag}.jsonl", tr, hdr)))
    return spec, len(tr.events_of("Ionization")), files


def _fig2a(cfg: RunConfig, out: Path | None):
    sc = cfg.values["scenario"]
    detuning = sc["fig2a_detuning_linewidths"] * cfg.rate_params().nvm_fwhm
    res = _map(_fig2a_task, [(cfg, 0, 0.0, str(out) if out else None), (cfg, 1, detuning, str(out) if out else None)],
               cfg.workers)
    (on, n_on, f_on), (off, n_off, f_off) = res
    fit = fit_lorentzian(on.frequencies, on.counts) if on.peak > 0 else None
    ratio = on.peak / off.peak if off.peak > 0 else math.inf
    headline = {
        "nv0_line_fwhm_Hz": fit.fwhm if fit else None,
        "peak_on_resonance": on.peak,
        "peak_detuned": off.peak,
        "peak_ratio": ratio if math.isfinite(ratio) else None,
        "peak_ratio_infinite": not math.isfinite(ratio),
    }
    results = {
        "red_detuning_Hz": detuning,
        "ionization_events": {"on_resonance": n_on, "detuned": n_off},
        "nv0_line_center_Hz": fit.center if fit else None,
        "nv0_line_fwhm_halfmax_Hz": on.fwhm() if on.peak > 0 else None,
        "n_sweeps": on.n_sweeps,
    }
    return headline, results, f_on + f_off


# --------------------------------------------------------------- fig2d

def fig2d_bands(width_nm: float, n_bands: int, centre_nm: float = NV0_ZPL_WAVELENGTH * 1e9):
    lo, hi = wavelength_span_to_offsets(centre_nm - width_nm / 2, centre_nm + width_nm / 2, centre_nm)
    edges = np.linspace(lo, hi, n_bands + 1)
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


def _fig2d(cfg: RunConfig, out: Path | None):
    sc = cfg.values["scenario"]
    bands = fig2d_bands(sc["fig2d_scan_width_nm"], sc["fig2d_n_bands"])
    model = RepumpScanModel(points_per_band=sc["fig2d_points_per_band"], repetitions=sc["fig2d_repetitions"],
                            seed=cfg.seed, solver=cfg.solver, **cfg.model_objects())
    res = repump_band_scan(bands, model)
    rows = [{"band_start_Hz": r.start, "band_stop_Hz": r.stop, "recovered": r.recovered,
             "bright_fraction": r.bright_fraction, "reference_bright_fraction": r.reference_bright_fraction,
             "brightness": r.brightness, "reference": r.reference, "diagnostic": r.diagnostic} for r in res]
    files = []
    if out is not None:
        p = out / "bands.csv"
        with p.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in r.items()} for r in rows)
        files.append(str(p))
    headline = {"recovered": [r.recovered for r in res]}
    return headline, {"bands": rows}, files


# --------------------------------------------------------------- fig3

def _fig3_task(task):
    cfg, i, method, jumps, write_dir = task
    sc = cfg.values["scenario"]
    n = sc["fig3_sweeps"]
    proto = green_repump_ple(repetitions=n) if method == "green" else yellow_repump_ple(repetitions=n)
    m = cfg.model_objects()
    if jumps is not None:
        m["jumps"] = jumps
    tr = simulate(proto, seed=_seed(cfg, "fig3", i), bin_width=cfg.values["run"]["bin_width"], **m)
    spec = accumulate_ple(sweep_records(tr, laser="red"))
    files = []
    if write_dir is not None:
        hdr = {**_header(cfg, "fig3"), "repump": method}
        files.append(str(write_spectrum(Path(write_dir) / f"nvm_ple_{method}.txt", spec, hdr)))
        files.append(str(write_events_jsonl(Path(write_dir) / f"events_{method}.jsonl", tr, hdr)))
        p = Path(write_dir) / f"centers_{method}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep", "center_Hz", "valid", "fit_converged"])
            for k, (c, v, ok) in enumerate(zip(spec.centers.tolist(), spec.valid.tolist(), spec.fit_ok.tolist())):
                w.writerow([k, repr(c), int(v), int(ok)])
        files.append(str(p))
    return spec, files


def fig3_spectra(cfg: RunConfig, out: Path | None = None, *, jumps: JumpModel | None = None,
                 methods=("green", "yellow")):
    """Accumulated NV- PLE after green and after yellow repumping."""
    idx = {"green": 0, "yellow": 1}
    res = _map(_fig3_task, [(cfg, idx[mth], mth, jumps, str(out) if out else None) for mth in methods], cfg.workers)
    return {mth: r for mth, r in zip(methods, res)}


def _fig3(cfg: RunConfig, out: Path | None):
    if cfg.solver != "kmc":
        raise ScenarioError("fig3 needs stochastic spectral jumps; run it with --solver kmc")
    res = fig3_spectra(cfg, out)
    (g, fg), (y, fy) = res["green"], res["yellow"]
    h = cfg.rate_params().nvm_fwhm
    lw_g = effective_linewidth(g.valid_centers, h)
    lw_y = effective_linewidth(y.valid_centers, h)
    ratio = stability_ratio(g, y, homogeneous_fwhm=h)
    headline = {"stability_ratio": ratio}
    results = {
        "green": {"effective_linewidth_Hz": lw_g.fwhm, "multimodal": lw_g.multimodal,
                  "valid_centers": int(g.valid.sum()), "n_sweeps": g.n_sweeps},
        "yellow": {"effective_linewidth_Hz": lw_y.fwhm, "multimodal": lw_y.multimodal,
                   "valid_centers": int(y.valid.sum()), "n_sweeps": y.n_sweeps},
        "homogeneous_fwhm_Hz": h,
        "note": "the stability ratio reproduces a calibrated jump model, not an independent prediction",
    }
    return headline, results, fg + fy


# --------------------------------------------------------------- custom

def load_protocol(source: str) -> Protocol:
    """A builtin protocol by name, or a protocol file."""
    builtins = builtin_protocols()
    if source in builtins:
        return builtins[source]
    p = Path(source)
    if not p.is_file():
        raise ScenarioError(f"protocol {source!r} is neither a builtin ({', '.join(builtins)}) nor a file")
    return parse_protocol(p.read_bytes())


def _custom(cfg: RunConfig, out: Path | None):
    source = cfg.values["run"]["protocol"]
    if not source:
        raise ScenarioError("custom scenario needs a protocol (--protocol or [run] protocol)")
    proto = load_protocol(source)
    kw = dict(solver=cfg.solver, bin_width=cfg.values["run"]["bin_width"], **cfg.model_objects())
    if cfg.solver == "kmc":
        kw["seed"] = _seed(cfg, "custom", 0)
    tr = simulate(proto, **kw)
    files = []
    if out is not None:
        hdr = {**_header(cfg, "custom"), "protocol": source}
        files.append(str(write_trace_csv(out / "trace.csv", tr, hdr)))
        files.append(str(write_events_jsonl(out / "events.jsonl", tr, hdr)))
    counts = {}
    for e in tr.events:
        counts[e.kind.value] = counts.get(e.kind.value, 0) + 1
    headline = {"duration_s": tr.duration, "total_counts": float(tr.counts.sum())}
    results = {"n_windows": len(tr.windows), "n_bins": int(tr.counts.size), "event_counts": counts,
               "final_level": tr.final_level}
    return headline, results, files


_RUNNERS = {"fig1c": _fig1c, "fig2a": _fig2a, "fig2d": _fig2d, "fig3": _fig3, "custom": _custom}


def run_scenario(name: str, cfg: RunConfig, out=None) -> ScenarioResult:
    """Run a named scenario and write its bundle (if ``out`` is given)."""
    if name not in _RUNNERS:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    out_dir = Path(out) if out is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log.info("running scenario %s (seed %s, solver %s, workers %s)", name, cfg.seed, cfg.solver, cfg.workers)
    headline, results, files = _RUNNERS[name](cfg, out_dir)
    summary = {**_header(cfg, name), "headline": headline, "results": results, "config": cfg.canonical()}
    if out_dir is not None:
        files.append(str(write_summary(out_dir / "summary.json", summary)))
    return ScenarioResult(name, summary, files)
