"""Versioned output files.

Every file starts with a provenance header (format version, config hash,
seed).  Formats:

``nvcharge.trace/1`` (CSV)
    ``#``-prefixed ``key: value`` header lines, then the columns
    ``time_bin,counts`` where ``time_bin`` is the bin start in seconds.
``nvcharge.events/1`` (JSON lines)
    first line is the header object, then one ``{"time", "kind", "payload"}``
    object per event in time order.
``nvcharge.spectrum/1`` (two-column text)
    ``#`` header lines, then ``frequency_hz counts`` rows.
``nvcharge.summary/1`` (JSON)
    one object with ``schema_version``, ``scenario``, ``seed``,
    ``config_sha256``, ``headline`` and ``results``; keys sorted, no
    timestamps, so equal inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .analysis import Spectrum
from .engine import Trace

__all__ = [
    "TRACE_FORMAT",
    "EVENTS_FORMAT",
    "SPECTRUM_FORMAT",
    "SUMMARY_SCHEMA",
    "config_hash",
    "write_trace_csv",
    "read_trace_csv",
    "write_events_jsonl",
    "read_events_jsonl",
    "write_spectrum",
    "read_spectrum",
    "write_summary",
    "to_jsonable",
]

TRACE_FORMAT = "nvcharge.trace/1"
EVENTS_FORMAT = "nvcharge.events/1"
SPECTRUM_FORMAT = "nvcharge.spectrum/1"
SUMMARY_SCHEMA = "nvcharge.summary/1"


def to_jsonable(obj):
    """Plain JSON types; numpy scalars/arrays and enums converted."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def config_hash(canonical: dict) -> str:
    blob = json.dumps(to_jsonable(canonical), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _header_lines(fmt: str, header: dict) -> list[str]:
    lines = [f"# format: {fmt}"]
    lines += [f"# {k}: {v}" for k, v in header.items()]
    return lines


def write_trace_csv(path, trace: Trace, header: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in _header_lines(TRACE_FORMAT, {"bin_width": repr(trace.bin_width), **(header or {})}):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_bin", "counts"])
        integral = np.issubdtype(trace.counts.dtype, np.integer)
        for i, c in enumerate(trace.counts.tolist()):
            w.writerow([repr(i * trace.bin_width), c if integral else repr(float(c))])
    return path


def read_trace_csv(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Return (header, bin start times, counts)."""
    header, rows = {}, []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition(": ")
                header[k] = v
            else:
                rows.append(line)
    reader = csv.reader(rows)
    cols = next(reader, None)
    if cols != ["time_bin", "counts"]:
        raise ValueError(f"{path}: not a {TRACE_FORMAT} file")
    data = [(float(t), float(c)) for t, c in reader]
    arr = np.array(data, dtype=float).reshape(-1, 2)
    return header, arr[:, 0], arr[:, 1]


def write_events_jsonl(path, trace: Trace, header: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": EVENTS_FORMAT, **to_jsonable(header or {})}, sort_keys=True) + "\n")
        for e in trace.events:
            fh.write(json.dumps({"time": e.time, "kind": e.kind.value, "payload": to_jsonable(e.payload)},
                                sort_keys=True) + "\n")
    return path


def read_events_jsonl(path) -> tuple[dict, list[dict]]:
    with Path(path).open(encoding="utf-8") as fh:
        lines = [json.loads(l) for l in fh if l.strip()]
    if not lines or lines[0].get("format") != EVENTS_FORMAT:
        raise ValueError(f"{path}: not a {EVENTS_FORMAT} file")
    return lines[0], lines[1:]


def write_spectrum(path, spectrum: Spectrum, header: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for line in _header_lines(SPECTRUM_FORMAT, {"n_sweeps": spectrum.n_sweeps, **(header or {})}):
            fh.write(line + "\n")
        fh.write("# frequency_hz counts\n")
        for f, c in zip(spectrum.frequencies.tolist(), spectrum.counts.tolist()):
            fh.write(f"{f!r} {c!r}\n")
    return path


def read_spectrum(path) -> tuple[dict, np.ndarray, np.ndarray]:
    header = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            k, sep, v = line[1:].strip().partition(": ")
            if sep:
                header[k] = v
    data = np.loadtxt(path, comments="#", ndmin=2)
    return header, data[:, 0], data[:, 1]


def write_summary(path, summary: dict) -> Path:
    path = Path(path)
    body = {"schema_version": SUMMARY_SCHEMA, **to_jsonable(summary)}
    path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path
